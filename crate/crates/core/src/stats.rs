//! Paired comparison of pipelines: Wilcoxon signed-rank test and
//! Holm–Bonferroni step-down correction.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest effective sample size for which the p-value is exact.
pub const EXACT_MAX_N: usize = 25;

/// Relative tolerance under which two magnitudes are treated as tied (and a
/// difference as zero), so that `0.3 - 0.1` and `0.4 - 0.2` share a rank.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value in (0, 1].
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub method: PValueMethod,
    /// Rejection after multiple-comparison correction, when applied.
    pub decision: Option<bool>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Average ranks (1-based) of `values`, tied values sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && close(values[order[start]], values[order[end]]) {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// `P(T+ <= w)` under the null, where `T+` is the sum of a random subset of
/// `ranks`. Ranks are averages, so doubling them makes every sum an integer.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let below: u64 = counts[..=limit.min(total)].iter().sum();
    below as f64 / 2f64.powi(ranks.len() as i32)
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; the p-value is exact for up to [`EXACT_MAX_N`] pairs and
/// otherwise uses the tie-corrected normal approximation.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("paired samples of lengths {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| !close(**x, **y))
        .map(|(x, y)| x - y)
        .collect();
    if diffs.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = diffs.len();
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_minus = (n * (n + 1)) as f64 / 2.0 - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p, method) = if n <= EXACT_MAX_N {
        (2.0 * exact_lower_tail(&ranks, statistic), PValueMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut ties = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            ties += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let z = (statistic - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.cdf(z), PValueMethod::Normal)
    };
    Ok(StatResult {
        statistic,
        w_plus,
        w_minus,
        p_value: p.min(1.0),
        n,
        method,
        decision: None,
    })
}

/// Holm's step-down rule: with p-values sorted ascending, reject the i-th
/// (1-based) while `p_(i) <= alpha / (m - i + 1)`, stopping at the first
/// failure. Decisions come back in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::OutOfRange(format!("p-value {p} outside (0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut decisions = vec![false; m];
    for (i, &idx) in order.iter().enumerate() {
        if p_values[idx] > alpha / (m - i) as f64 {
            break;
        }
        decisions[idx] = true;
    }
    Ok(decisions)
}

/// Aligns two per-subject score lists on their common subjects (ascending).
/// Subjects present in only one list are an error.
pub fn pair_by_subject(a: &[(u32, f64)], b: &[(u32, f64)]) -> Result<(Vec<u32>, Vec<f64>, Vec<f64>)> {
    let index = |scores: &[(u32, f64)]| -> Result<BTreeMap<u32, f64>> {
        let mut map = BTreeMap::new();
        for &(s, v) in scores {
            if map.insert(s, v).is_some() {
                return Err(Error::Precondition(format!("subject {s} listed twice")));
            }
        }
        Ok(map)
    };
    let (ma, mb) = (index(a)?, index(b)?);
    if let Some(s) = ma.keys().find(|s| !mb.contains_key(s)).or_else(|| mb.keys().find(|s| !ma.contains_key(s))) {
        return Err(Error::Precondition(format!("subject {s} is missing from one of the score sets")));
    }
    let subjects: Vec<u32> = ma.keys().copied().collect();
    let xs = subjects.iter().map(|s| ma[s]).collect();
    let ys = subjects.iter().map(|s| mb[s]).collect();
    Ok((subjects, xs, ys))
}

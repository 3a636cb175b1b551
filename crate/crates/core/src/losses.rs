//! Distances, similarity levels and the triplet / ladder / product-ladder losses.
//!
//! Two trials compared label by label produce a [`SimilarityLevel`], a
//! K-bit code whose bit k is set iff they agree on label k. A
//! [`LossConfig`] lists triplet components, each pulling one level (the
//! positives) closer to the anchor than another (the negatives) by a
//! margin, with a weight. The product-ladder loss sums all components over
//! all anchors of a batch.
//!
//! All distances and accumulations are carried out in `f64`. For a fixed
//! input the summation order is fixed: component, then anchor ascending,
//! then positive ascending, then negative ascending.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::dataio::LabelVector;
use crate::{Error, Result};

/// Conventional triplet margin used by every built-in configuration.
pub const DEFAULT_MARGIN: f64 = 0.2;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[inline]
fn dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn euclidean_distance(v1: &[f64], v2: &[f64]) -> Result<f64> {
    check_len(v1, v2)?;
    Ok(dist_unchecked(v1, v2))
}

fn check_embeddings(v: &[Vec<f64>]) -> Result<usize> {
    let d = v.first().map_or(0, Vec::len);
    if let Some(bad) = v.iter().find(|row| row.len() != d) {
        return Err(Error::ShapeMismatch(format!(
            "embedding rows of length {d} and {}",
            bad.len()
        )));
    }
    Ok(d)
}

/// Full symmetric distance matrix.
fn distance_matrix(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = v.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist_unchecked(&v[i], &v[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    out
}

/// A triplet of batch indices: (anchor, positive, negative).
pub type Triplet = (usize, usize, usize);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletSet {
    pub triples: Vec<Triplet>,
}

impl TripletSet {
    pub fn new(triples: Vec<Triplet>) -> Self {
        Self { triples }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for &(a, p, q) in &self.triples {
            for index in [a, p, q] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, len: n });
                }
            }
            if a == p || a == q || p == q {
                return Err(Error::Precondition(format!(
                    "triplet ({a}, {p}, {q}) repeats an index"
                )));
            }
        }
        Ok(())
    }
}

#[inline]
fn hinge(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Sum over `triplets` of `max(d(a,p) - d(a,n) + margin, 0)`.
pub fn triplet_loss(triplets: &TripletSet, v: &[Vec<f64>], margin: f64) -> Result<f64> {
    check_embeddings(v)?;
    triplets.validate(v.len())?;
    Ok(triplets
        .triples
        .iter()
        .map(|&(a, p, q)| hinge(dist_unchecked(&v[a], &v[p]), dist_unchecked(&v[a], &v[q]), margin))
        .sum())
}

/// A K-bit label agreement code, printed as `s1s2...sK`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimilarityLevel(Vec<bool>);

impl SimilarityLevel {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Bits packed most-significant first ("10" -> 2).
    pub fn code(&self) -> usize {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn from_code(code: usize, k: usize) -> Self {
        Self((0..k).map(|i| (code >> (k - 1 - i)) & 1 == 1).collect())
    }

    /// Product order: `self >= other` iff every bit of `self` is at least
    /// the matching bit of `other`. Returns `None` for incomparable levels.
    pub fn product_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        if self.k() != other.k() {
            return None;
        }
        let ge = self.0.iter().zip(&other.0).all(|(a, b)| a >= b);
        let le = self.0.iter().zip(&other.0).all(|(a, b)| a <= b);
        match (ge, le) {
            (true, true) => Some(Equal),
            (true, false) => Some(Greater),
            (false, true) => Some(Less),
            (false, false) => None,
        }
    }
}

impl fmt::Display for SimilarityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SimilarityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidConfig("empty similarity level".into()));
        }
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidConfig(format!(
                    "similarity level {s:?} must contain only 0 and 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(SimilarityLevel)
    }
}

/// Similarity level of a pair of label vectors.
pub fn similarity_level(a: &LabelVector, b: &LabelVector) -> Result<SimilarityLevel> {
    if a.k() != b.k() {
        return Err(Error::LabelCountMismatch {
            expected: a.k(),
            actual: b.k(),
        });
    }
    Ok(SimilarityLevel(
        a.0.iter().zip(&b.0).map(|(x, y)| x == y).collect(),
    ))
}

/// Partition of every batch index but the anchor by similarity level to
/// the anchor. Only non-empty sets appear; each set is ascending.
pub fn level_index_sets(
    anchor: usize,
    labels: &[LabelVector],
) -> Result<BTreeMap<SimilarityLevel, Vec<usize>>> {
    if anchor >= labels.len() {
        return Err(Error::IndexOutOfRange {
            index: anchor,
            len: labels.len(),
        });
    }
    let mut sets: BTreeMap<SimilarityLevel, Vec<usize>> = BTreeMap::new();
    for (j, label) in labels.iter().enumerate() {
        if j != anchor {
            sets.entry(similarity_level(&labels[anchor], label)?)
                .or_default()
                .push(j);
        }
    }
    Ok(sets)
}

/// A similarity level with optional wildcards (`*`), selecting the union
/// of all levels that agree on the fixed bits. A pattern without wildcards
/// selects exactly one level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LevelPattern(Vec<Option<bool>>);

impl LevelPattern {
    pub fn exact(level: &SimilarityLevel) -> Self {
        Self(level.0.iter().map(|&b| Some(b)).collect())
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// True if bit `label` is fixed rather than a wildcard.
    pub fn fixes(&self, label: usize) -> bool {
        self.0.get(label).is_some_and(Option::is_some)
    }

    pub fn matches(&self, level: &SimilarityLevel) -> bool {
        self.k() == level.k()
            && self
                .0
                .iter()
                .zip(&level.0)
                .all(|(p, &b)| p.is_none_or(|v| v == b))
    }

    /// Matches by packed level code (see [`SimilarityLevel::code`]).
    fn matches_code(&self, code: usize) -> bool {
        let k = self.k();
        self.0
            .iter()
            .enumerate()
            .all(|(i, p)| p.is_none_or(|v| ((code >> (k - 1 - i)) & 1 == 1) == v))
    }

    /// Every level this pattern selects, by packed code.
    pub fn levels(&self) -> Vec<SimilarityLevel> {
        (0..1usize << self.k())
            .filter(|&c| self.matches_code(c))
            .map(|c| SimilarityLevel::from_code(c, self.k()))
            .collect()
    }

    pub fn overlaps(&self, other: &LevelPattern) -> bool {
        self.k() == other.k()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.is_none() || b.is_none() || a == b)
    }
}

impl From<SimilarityLevel> for LevelPattern {
    fn from(level: SimilarityLevel) -> Self {
        LevelPattern::exact(&level)
    }
}

impl fmt::Display for LevelPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(match b {
                Some(true) => "1",
                Some(false) => "0",
                None => "*",
            })?;
        }
        Ok(())
    }
}

impl FromStr for LevelPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidConfig("empty similarity level".into()));
        }
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(Some(false)),
                '1' => Ok(Some(true)),
                '*' => Ok(None),
                _ => Err(Error::InvalidConfig(format!(
                    "similarity level {s:?} must contain only 0, 1 and *"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(LevelPattern)
    }
}

/// One triplet term of a product-ladder configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossComponent {
    pub margin: f64,
    pub weight: f64,
    pub positive: LevelPattern,
    pub negative: LevelPattern,
}

impl LossComponent {
    pub fn new(margin: f64, weight: f64, positive: &str, negative: &str) -> Result<Self> {
        let component = Self {
            margin,
            weight,
            positive: positive.parse()?,
            negative: negative.parse()?,
        };
        component.validate()?;
        Ok(component)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "margin must be a non-negative real, got {}",
                self.margin
            )));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight must be a non-negative real, got {}",
                self.weight
            )));
        }
        if self.positive.k() != self.negative.k() {
            return Err(Error::InvalidConfig(format!(
                "levels {} and {} have different lengths",
                self.positive, self.negative
            )));
        }
        if self.positive.overlaps(&self.negative) {
            return Err(Error::InvalidConfig(format!(
                "positive level {} and negative level {} overlap",
                self.positive, self.negative
            )));
        }
        Ok(())
    }
}

/// Serialized as `margin,weight,positive,negative`.
impl fmt::Display for LossComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.margin, self.weight, self.positive, self.negative)
    }
}

impl FromStr for LossComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "component {s:?} must have the form margin,weight,positive,negative"
            )));
        }
        let number = |field: &str, text: &str| {
            text.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("component {field} {text:?} is not a number")))
        };
        LossComponent::new(
            number("margin", parts[0])?,
            number("weight", parts[1])?,
            parts[2],
            parts[3],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sum over all triplets.
    #[default]
    Sum,
    /// Sum divided by the number of triplets with a positive hinge.
    MeanActive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    components: Vec<LossComponent>,
    k: usize,
    pub reduction: Reduction,
}

impl LossConfig {
    pub fn new(components: Vec<LossComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidConfig("a loss configuration needs at least one component".into()));
        };
        let k = first.positive.k();
        for c in &components {
            c.validate()?;
            if c.positive.k() != k {
                return Err(Error::InvalidConfig(format!(
                    "component levels of different lengths ({k} and {})",
                    c.positive.k()
                )));
            }
        }
        Ok(Self {
            components,
            k,
            reduction: Reduction::Sum,
        })
    }

    pub fn components(&self) -> &[LossComponent] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        for (c, &w) in out.components.iter_mut().zip(weights) {
            c.weight = w;
        }
        out.components.iter().try_for_each(LossComponent::validate)?;
        Ok(out)
    }

    pub fn with_margin(&self, margin: f64) -> Result<Self> {
        let mut out = self.clone();
        for c in &mut out.components {
            c.margin = margin;
        }
        out.components.iter().try_for_each(LossComponent::validate)?;
        Ok(out)
    }

    /// `component = "margin,weight,positive,negative"` lines.
    pub fn to_config_lines(&self) -> String {
        self.components
            .iter()
            .map(|c| format!("component = \"{c}\"\n"))
            .collect()
    }

    /// True if some component distinguishes levels by agreement on `label`,
    /// which needs at least two distinct values of that label in training.
    pub fn constrains_label(&self, label: usize) -> bool {
        self.components
            .iter()
            .any(|c| c.positive.fixes(label) || c.negative.fixes(label))
    }

    /// True if some component can still fire when every compared pair agrees on
    /// `label` (e.g. a single-subject batch and label 0).
    pub fn usable_with_constant_label(&self, label: usize) -> bool {
        self.components.iter().any(|c| {
            let pos = c.positive.levels().into_iter().any(|l| l.bits()[label]);
            let neg = c.negative.levels().into_iter().any(|l| l.bits()[label]);
            pos && neg
        })
    }
}

/// The four configurations compared in the cross-subject experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinConfig {
    /// Class-only triplet loss.
    A,
    /// Lexicographic order (class before subject), middle term weighted 3.
    B,
    /// Lexicographic order, equal weights.
    C,
    /// Product order, equal weights.
    D,
}

impl BuiltinConfig {
    pub const ALL: [BuiltinConfig; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn name(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::B => "b",
            Self::C => "c",
            Self::D => "d",
        }
    }
}

impl FromStr for BuiltinConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss configuration {other:?} (expected a, b, c or d)"
            ))),
        }
    }
}

/// Components enforcing a total order given as a chain of levels, highest first.
pub fn chain_components(chain: &[SimilarityLevel], margins: &[f64], weights: &[f64]) -> Result<Vec<LossComponent>> {
    if chain.len() < 2 || margins.len() != chain.len() - 1 || weights.len() != chain.len() - 1 {
        return Err(Error::InvalidConfig(format!(
            "a chain of {} levels needs {} margins and weights",
            chain.len(),
            chain.len().saturating_sub(1)
        )));
    }
    chain
        .windows(2)
        .zip(margins.iter().zip(weights))
        .map(|(pair, (&margin, &weight))| {
            let c = LossComponent {
                margin,
                weight,
                positive: LevelPattern::exact(&pair[0]),
                negative: LevelPattern::exact(&pair[1]),
            };
            c.validate().map(|_| c)
        })
        .collect()
}

/// Components for every covering pair of the product order on K-bit
/// levels (the edges of its Hasse diagram). Upper levels are visited in
/// descending code order, lower levels by clearing bits right to left;
/// for K=2 this yields (11,10), (11,01), (10,00), (01,00).
pub fn product_order_components(k: usize, margin: f64, weight: f64) -> Vec<LossComponent> {
    let mut out = Vec::new();
    for code in (0..1usize << k).rev() {
        for bit in 0..k {
            if code & (1 << bit) != 0 {
                out.push(LossComponent {
                    margin,
                    weight,
                    positive: LevelPattern::exact(&SimilarityLevel::from_code(code, k)),
                    negative: LevelPattern::exact(&SimilarityLevel::from_code(code & !(1 << bit), k)),
                });
            }
        }
    }
    out
}

fn lexicographic_chain() -> Vec<SimilarityLevel> {
    ["11", "01", "10", "00"]
        .iter()
        .map(|s| s.parse().expect("static level"))
        .collect()
}

/// Built-in configuration over the labels (subject, im_class) with margin [`DEFAULT_MARGIN`].
pub fn builtin_config(which: BuiltinConfig) -> LossConfig {
    let m = DEFAULT_MARGIN;
    let components = match which {
        BuiltinConfig::A => vec![LossComponent {
            margin: m,
            weight: 1.0,
            positive: "*1".parse().expect("static pattern"),
            negative: "*0".parse().expect("static pattern"),
        }],
        BuiltinConfig::B => chain_components(&lexicographic_chain(), &[m; 3], &[1.0, 3.0, 1.0])
            .expect("static chain"),
        BuiltinConfig::C => chain_components(&lexicographic_chain(), &[m; 3], &[1.0; 3])
            .expect("static chain"),
        BuiltinConfig::D => product_order_components(2, m, 1.0),
    };
    LossConfig::new(components).expect("built-in configurations are valid")
}

/// Packed similarity code of every ordered pair in a batch.
fn level_codes(labels: &[LabelVector], k: usize) -> Result<Vec<Vec<usize>>> {
    if let Some(bad) = labels.iter().find(|l| l.k() != k) {
        return Err(Error::LabelCountMismatch {
            expected: k,
            actual: bad.k(),
        });
    }
    let n = labels.len();
    let mut codes = vec![vec![0usize; n]; n];
    for a in 0..n {
        for j in 0..n {
            codes[a][j] = labels[a]
                .0
                .iter()
                .zip(&labels[j].0)
                .fold(0, |acc, (x, y)| (acc << 1) | (x == y) as usize);
        }
    }
    Ok(codes)
}

/// Per component, per anchor: (positives, negatives).
fn component_sets(
    codes: &[Vec<usize>],
    component: &LossComponent,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = codes.len();
    let k = component.positive.k();
    let pos_mask: Vec<bool> = (0..1usize << k).map(|c| component.positive.matches_code(c)).collect();
    let neg_mask: Vec<bool> = (0..1usize << k).map(|c| component.negative.matches_code(c)).collect();
    (0..n)
        .map(|a| {
            let pos = (0..n).filter(|&j| j != a && pos_mask[codes[a][j]]).collect();
            let neg = (0..n).filter(|&j| j != a && neg_mask[codes[a][j]]).collect();
            (pos, neg)
        })
        .collect()
}

/// Loss value, its gradient with respect to every embedding row, and the
/// number of triplets with a positive hinge.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    pub active: usize,
}

fn product_ladder_impl(
    v: &[Vec<f64>],
    labels: &[LabelVector],
    config: &LossConfig,
    want_grad: bool,
) -> Result<LossWithGrad> {
    let d = check_embeddings(v)?;
    if v.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings for {} label vectors",
            v.len(),
            labels.len()
        )));
    }
    let n = v.len();
    let codes = level_codes(labels, config.k())?;
    let dist = distance_matrix(v);
    // coeff[a][j]: accumulated weight of d(a, j) in the loss.
    let mut coeff = if want_grad { vec![vec![0.0; n]; n] } else { Vec::new() };
    let mut total = 0.0;
    let mut active = 0usize;

    for component in config.components() {
        let sets = component_sets(&codes, component);
        let mut component_sum = 0.0;
        for (a, (pos, neg)) in sets.iter().enumerate() {
            for &p in pos {
                for &q in neg {
                    let h = hinge(dist[a][p], dist[a][q], component.margin);
                    if h > 0.0 {
                        component_sum += h;
                        active += 1;
                        if want_grad {
                            coeff[a][p] += component.weight;
                            coeff[a][q] -= component.weight;
                        }
                    }
                }
            }
        }
        total += component.weight * component_sum;
    }

    let scale = match config.reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanActive => 1.0 / active.max(1) as f64,
    };
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![vec![0.0; d]; n];
        for a in 0..n {
            for j in 0..n {
                let c = coeff[a][j];
                if c == 0.0 || dist[a][j] == 0.0 {
                    continue;
                }
                let f = scale * c / dist[a][j];
                for t in 0..d {
                    let u = f * (v[a][t] - v[j][t]);
                    grad[a][t] += u;
                    grad[j][t] -= u;
                }
            }
        }
    }
    Ok(LossWithGrad {
        loss: total * scale,
        grad,
        active,
    })
}

/// Weighted sum over components and anchors of the triplet loss between
/// the component's positive and negative level sets. Empty sets contribute
/// nothing.
pub fn product_ladder_loss(v: &[Vec<f64>], labels: &[LabelVector], config: &LossConfig) -> Result<f64> {
    product_ladder_impl(v, labels, config, false).map(|r| r.loss)
}

/// [`product_ladder_loss`] together with its gradient with respect to the
/// embeddings. Where a distance is exactly zero the subgradient 0 is used.
pub fn product_ladder_loss_with_grad(
    v: &[Vec<f64>],
    labels: &[LabelVector],
    config: &LossConfig,
) -> Result<LossWithGrad> {
    product_ladder_impl(v, labels, config, true)
}

/// Margins and weights of an L-level ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSpec {
    pub margins: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LadderSpec {
    pub fn new(margins: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if margins.is_empty() || margins.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "ladder needs L-1 >= 1 margins and as many weights, got {} and {}",
                margins.len(),
                weights.len()
            )));
        }
        Ok(Self { margins, weights })
    }

    pub fn levels(&self) -> usize {
        self.margins.len() + 1
    }
}

/// `levels[a][j]` is the ladder level (1 = most similar) of example `j`
/// relative to anchor `a`, or `None` if `j` takes no part (including `j == a`).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAssignment {
    pub levels: Vec<Vec<Option<usize>>>,
}

impl LevelAssignment {
    /// Levels from a total order on similarity codes, highest first. Pairs
    /// whose similarity level is not in the chain are unassigned.
    pub fn from_chain(labels: &[LabelVector], chain: &[SimilarityLevel]) -> Result<Self> {
        let n = labels.len();
        let mut levels = vec![vec![None; n]; n];
        for a in 0..n {
            for j in 0..n {
                if j != a {
                    let s = similarity_level(&labels[a], &labels[j])?;
                    levels[a][j] = chain.iter().position(|l| *l == s).map(|p| p + 1);
                }
            }
        }
        Ok(Self { levels })
    }
}

/// Sum over consecutive levels l of `weight_l` times the triplet loss over
/// (anchor, level l, level l+1) for every anchor.
pub fn ladder_loss(v: &[Vec<f64>], assignment: &LevelAssignment, spec: &LadderSpec) -> Result<f64> {
    check_embeddings(v)?;
    let n = v.len();
    if assignment.levels.len() != n || assignment.levels.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "level assignment is not {n}x{n}"
        )));
    }
    let top = spec.levels();
    for (a, row) in assignment.levels.iter().enumerate() {
        if row[a].is_some() {
            return Err(Error::Precondition(format!("anchor {a} is assigned a level to itself")));
        }
        if let Some(&Some(bad)) = row.iter().find(|l| l.is_some_and(|x| x == 0 || x > top)) {
            return Err(Error::OutOfRange(format!("level {bad} outside 1..={top}")));
        }
    }
    let dist = distance_matrix(v);
    let mut total = 0.0;
    for l in 1..top {
        let (margin, weight) = (spec.margins[l - 1], spec.weights[l - 1]);
        let mut level_sum = 0.0;
        for (row, d) in assignment.levels.iter().zip(&dist) {
            for p in (0..n).filter(|&j| row[j] == Some(l)) {
                for q in (0..n).filter(|&j| row[j] == Some(l + 1)) {
                    level_sum += hinge(d[p], d[q], margin);
                }
            }
        }
        total += weight * level_sum;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn labels(pairs: &[(u32, u32)]) -> Vec<LabelVector> {
        pairs.iter().map(|&(s, c)| LabelVector(vec![s, c])).collect()
    }

    fn level(s: &str) -> SimilarityLevel {
        s.parse().unwrap()
    }

    /// Independent oracle: enumerate every (a, p, n) for each component,
    /// classifying pairs directly from the labels.
    fn brute_force(v: &[Vec<f64>], labels: &[LabelVector], config: &LossConfig) -> f64 {
        let n = v.len();
        let dist = |i: usize, j: usize| -> f64 {
            v[i].iter().zip(&v[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let lvl = |i: usize, j: usize| SimilarityLevel::new(
            labels[i].0.iter().zip(&labels[j].0).map(|(x, y)| x == y).collect(),
        );
        let mut total = 0.0;
        for c in config.components() {
            for a in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        if a == p || a == q || p == q {
                            continue;
                        }
                        if c.positive.matches(&lvl(a, p)) && c.negative.matches(&lvl(a, q)) {
                            total += c.weight * (dist(a, p) - dist(a, q) + c.margin).max(0.0);
                        }
                    }
                }
            }
        }
        total
    }

    fn random_batch(rng: &mut SplitMix64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<LabelVector>) {
        let v = (0..n).map(|_| (0..d).map(|_| rng.next_gaussian()).collect()).collect();
        let l = (0..n)
            .map(|_| LabelVector(vec![rng.next_index(3) as u32, rng.next_index(2) as u32]))
            .collect();
        (v, l)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(
            euclidean_distance(&[1.0, 2.0], &[4.0, -1.0]).unwrap(),
            euclidean_distance(&[4.0, -1.0], &[1.0, 2.0]).unwrap()
        );
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn triplet_loss_examples() {
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]];
        assert_eq!(triplet_loss(&TripletSet::default(), &v, 0.5).unwrap(), 0.0);
        let t = TripletSet::new(vec![(0, 1, 2)]);
        assert_eq!(triplet_loss(&t, &v, 0.5).unwrap(), 0.0);
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(triplet_loss(&t, &v, 0.5).unwrap(), 0.5);
        let bad = TripletSet::new(vec![(0, 1, 3)]);
        assert!(matches!(triplet_loss(&bad, &v, 0.5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn similarity_level_examples() {
        let l = labels(&[(3, 0), (3, 0), (7, 0), (7, 1)]);
        assert_eq!(similarity_level(&l[0], &l[1]).unwrap().to_string(), "11");
        assert_eq!(similarity_level(&l[0], &l[2]).unwrap().to_string(), "01");
        assert_eq!(similarity_level(&l[0], &l[3]).unwrap().to_string(), "00");
        assert!(similarity_level(&l[0], &LabelVector(vec![1])).is_err());
    }

    #[test]
    fn level_sets_example() {
        // (1,L),(1,L),(1,R),(2,L)
        let l = labels(&[(1, 0), (1, 0), (1, 1), (2, 0)]);
        let sets = level_index_sets(0, &l).unwrap();
        let expected: BTreeMap<SimilarityLevel, Vec<usize>> =
            [(level("11"), vec![1]), (level("10"), vec![2]), (level("01"), vec![3])]
                .into_iter()
                .collect();
        assert_eq!(sets, expected);
        assert!(level_index_sets(0, &l[..1]).unwrap().is_empty());
    }

    #[test]
    fn hasse_order() {
        use std::cmp::Ordering::*;
        assert_eq!(level("10").product_cmp(&level("01")), None);
        for s in ["11", "10", "01", "00"] {
            assert!(matches!(level("11").product_cmp(&level(s)), Some(Greater | Equal)));
            assert!(matches!(level("00").product_cmp(&level(s)), Some(Less | Equal)));
        }
        assert_eq!(level("10").product_cmp(&level("00")), Some(Greater));
    }

    #[test]
    fn builtin_configs() {
        let b = builtin_config(BuiltinConfig::B);
        assert_eq!(b.weights(), vec![1.0, 3.0, 1.0]);
        let pairs: Vec<String> = b
            .components()
            .iter()
            .map(|c| format!("{}>{}", c.positive, c.negative))
            .collect();
        assert_eq!(pairs, ["11>01", "01>10", "10>00"]);

        let d = builtin_config(BuiltinConfig::D);
        let pairs: Vec<String> = d
            .components()
            .iter()
            .map(|c| format!("{}>{}", c.positive, c.negative))
            .collect();
        assert_eq!(pairs, ["11>10", "11>01", "10>00", "01>00"]);
        assert_eq!(d.weights(), vec![1.0; 4]);

        let c = builtin_config(BuiltinConfig::C);
        assert_eq!(c, b.with_weights(&[1.0, 1.0, 1.0]).unwrap());

        let a = builtin_config(BuiltinConfig::A);
        assert_eq!(a.components().len(), 1);
        assert_eq!(a.components()[0].positive.levels(), vec![level("01"), level("11")]);
        assert_eq!(a.components()[0].negative.levels(), vec![level("00"), level("10")]);
        for cfg in BuiltinConfig::ALL {
            assert!(builtin_config(cfg).components().iter().all(|c| c.margin == DEFAULT_MARGIN));
        }
        assert!("e".parse::<BuiltinConfig>().is_err());
    }

    #[test]
    fn component_text_round_trip() {
        let c: LossComponent = "0.2,3,01,10".parse().unwrap();
        assert_eq!(c.to_string(), "0.2,3,01,10");
        assert!("0.2,3,01,01".parse::<LossComponent>().is_err());
        assert!("0.2,3,1*,10".parse::<LossComponent>().is_err());
        assert!("-1,3,01,10".parse::<LossComponent>().is_err());
        assert!("0.2,3,01".parse::<LossComponent>().is_err());
        let cfg = builtin_config(BuiltinConfig::B);
        assert_eq!(
            cfg.to_config_lines(),
            "component = \"0.2,1,11,01\"\ncomponent = \"0.2,3,01,10\"\ncomponent = \"0.2,1,10,00\"\n"
        );
    }

    #[test]
    fn single_component_reduces_to_triplet_loss() {
        let mut rng = SplitMix64::new(3);
        let v: Vec<Vec<f64>> = (0..7).map(|_| vec![rng.next_gaussian(), rng.next_gaussian()]).collect();
        let l: Vec<LabelVector> = [0, 1, 0, 1, 1, 0, 2].iter().map(|&c| LabelVector(vec![c])).collect();
        let cfg = LossConfig::new(vec![LossComponent::new(0.3, 1.0, "1", "0").unwrap()]).unwrap();
        let mut triples = Vec::new();
        for a in 0..7 {
            for p in 0..7 {
                for q in 0..7 {
                    if a != p && a != q && l[a] == l[p] && l[a] != l[q] {
                        triples.push((a, p, q));
                    }
                }
            }
        }
        let expected = triplet_loss(&TripletSet::new(triples), &v, 0.3).unwrap();
        let got = product_ladder_loss(&v, &l, &cfg).unwrap();
        assert!((expected - got).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn satisfied_margins_give_zero() {
        // Classes 10 apart on x, subjects 3 apart on y: 11 < 01 < 10 < 00 by
        // more than the margin for every anchor.
        let v = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 3.0],
            vec![10.0, 0.0],
            vec![10.0, 3.0],
        ];
        let l = labels(&[(0, 0), (0, 0), (1, 0), (0, 1), (1, 1)]);
        let cfg = builtin_config(BuiltinConfig::C);
        assert_eq!(product_ladder_loss(&v, &l, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_batches() {
        let mut rng = SplitMix64::new(99);
        for round in 0..50 {
            let n = 2 + rng.next_index(15);
            let d = 1 + rng.next_index(8);
            let (v, l) = random_batch(&mut rng, n, d);
            for which in BuiltinConfig::ALL {
                let cfg = builtin_config(which);
                let got = product_ladder_loss(&v, &l, &cfg).unwrap();
                let want = brute_force(&v, &l, &cfg);
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1e-12),
                    "round {round} config {which:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn ladder_matches_chain_product_ladder() {
        let mut rng = SplitMix64::new(5);
        let chain: Vec<SimilarityLevel> = ["11", "01", "10", "00"].iter().map(|s| level(s)).collect();
        for _ in 0..20 {
            let (v, l) = random_batch(&mut rng, 10, 3);
            let margins = [0.1, 0.5, 0.3];
            let weights = [1.0, 2.0, 0.5];
            let spec = LadderSpec::new(margins.to_vec(), weights.to_vec()).unwrap();
            let assign = LevelAssignment::from_chain(&l, &chain).unwrap();
            let lad = ladder_loss(&v, &assign, &spec).unwrap();
            let cfg = LossConfig::new(chain_components(&chain, &margins, &weights).unwrap()).unwrap();
            let prod = product_ladder_loss(&v, &l, &cfg).unwrap();
            assert!((lad - prod).abs() <= 1e-12 * lad.abs().max(1.0));
        }
    }

    #[test]
    fn ladder_rejects_bad_levels() {
        let v = vec![vec![0.0], vec![1.0]];
        let spec = LadderSpec::new(vec![0.1], vec![1.0]).unwrap();
        let bad = LevelAssignment { levels: vec![vec![None, Some(3)], vec![Some(1), None]] };
        assert!(ladder_loss(&v, &bad, &spec).is_err());
        let bad = LevelAssignment { levels: vec![vec![Some(1), Some(1)], vec![Some(1), None]] };
        assert!(ladder_loss(&v, &bad, &spec).is_err());
    }

    #[test]
    fn k_mismatch_is_rejected() {
        let v = vec![vec![0.0], vec![1.0]];
        let l = vec![LabelVector(vec![0]), LabelVector(vec![1])];
        assert!(matches!(
            product_ladder_loss(&v, &l, &builtin_config(BuiltinConfig::B)),
            Err(Error::LabelCountMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(17);
        let (v, l) = random_batch(&mut rng, 9, 3);
        let cfg = builtin_config(BuiltinConfig::D);
        let r = product_ladder_loss_with_grad(&v, &l, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..v.len() {
            for t in 0..3 {
                let mut plus = v.clone();
                plus[i][t] += h;
                let mut minus = v.clone();
                minus[i][t] -= h;
                let fd = (product_ladder_loss(&plus, &l, &cfg).unwrap()
                    - product_ladder_loss(&minus, &l, &cfg).unwrap())
                    / (2.0 * h);
                assert!((fd - r.grad[i][t]).abs() < 1e-5 * fd.abs().max(1.0), "{fd} vs {}", r.grad[i][t]);
            }
        }
    }

    #[test]
    fn mean_active_reduction() {
        let mut rng = SplitMix64::new(21);
        let (v, l) = random_batch(&mut rng, 8, 2);
        let mut cfg = builtin_config(BuiltinConfig::B);
        let sum = product_ladder_loss_with_grad(&v, &l, &cfg).unwrap();
        cfg.reduction = Reduction::MeanActive;
        let mean = product_ladder_loss(&v, &l, &cfg).unwrap();
        assert!(sum.active > 0);
        assert!((mean - sum.loss / sum.active as f64).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn losses_are_translation_invariant_and_non_negative(
            seed in any::<u64>(),
            shift in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let mut rng = SplitMix64::new(seed);
            let (v, l) = random_batch(&mut rng, 8, 3);
            let moved: Vec<Vec<f64>> = v.iter().map(|row| row.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
            for which in BuiltinConfig::ALL {
                let cfg = builtin_config(which);
                let a = product_ladder_loss(&v, &l, &cfg).unwrap();
                let b = product_ladder_loss(&moved, &l, &cfg).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn losses_are_permutation_invariant(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let (v, l) = random_batch(&mut rng, 9, 2);
            let mut perm: Vec<usize> = (0..9).collect();
            rng.shuffle(&mut perm);
            let pv: Vec<Vec<f64>> = perm.iter().map(|&i| v[i].clone()).collect();
            let pl: Vec<LabelVector> = perm.iter().map(|&i| l[i].clone()).collect();
            for which in BuiltinConfig::ALL {
                let cfg = builtin_config(which);
                let a = product_ladder_loss(&v, &l, &cfg).unwrap();
                let b = product_ladder_loss(&pv, &pl, &cfg).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn triplet_loss_is_monotone_in_margin(seed in any::<u64>(), m1 in 0.0f64..2.0, dm in 0.0f64..2.0) {
            let mut rng = SplitMix64::new(seed);
            let (v, _) = random_batch(&mut rng, 6, 2);
            let t = TripletSet::new(vec![(0, 1, 2), (3, 4, 5), (2, 0, 5), (1, 3, 4)]);
            prop_assert!(triplet_loss(&t, &v, m1).unwrap() <= triplet_loss(&t, &v, m1 + dm).unwrap());
        }
    }
}

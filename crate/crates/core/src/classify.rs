//! Classifiers on embedding vectors, classification metrics and PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::{Error, Result};

/// Default inverse regularization strength.
pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_MAX_ITER: usize = 100;

const LBFGS_MEMORY: usize = 10;
const GRAD_TOLERANCE: f64 = 1e-6;

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("rows of unequal length".into()));
    }
    Ok(d)
}

fn sorted_classes(y: &[u32]) -> Vec<u32> {
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Multinomial logistic regression with an L2 penalty on the weights
/// (not the bias).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRegModel {
    pub classes: Vec<u32>,
    /// `weights[k]` is the row for `classes[k]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
    pub max_iter: usize,
    pub iterations: usize,
    /// Objective value before the first and after every iteration.
    pub objective_trace: Vec<f64>,
    pub final_grad_norm: f64,
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    targets: Vec<usize>,
    n_classes: usize,
    dim: usize,
    inv_c: f64,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        self.n_classes * (self.dim + 1)
    }

    /// Objective `sum_i CE_i + ||W||^2 / (2C)` and its gradient.
    fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (k, d) = (self.n_classes, self.dim);
        let (w, b) = theta.split_at(k * d);
        let mut grad = vec![0.0; theta.len()];
        let mut value = 0.0;
        let mut logits = vec![0.0; k];
        for (xi, &yi) in self.x.iter().zip(&self.targets) {
            for c in 0..k {
                logits[c] = b[c] + w[c * d..(c + 1) * d].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            value += lse - logits[yi];
            for c in 0..k {
                let p = (logits[c] - lse).exp();
                let r = p - if c == yi { 1.0 } else { 0.0 };
                let gw = &mut grad[c * d..(c + 1) * d];
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g += r * v;
                }
                grad[k * d + c] += r;
            }
        }
        for i in 0..k * d {
            value += 0.5 * self.inv_c * theta[i] * theta[i];
            grad[i] += self.inv_c * theta[i];
        }
        (value, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Fits from a zero initialization with L-BFGS and a backtracking Armijo
/// line search, so the objective never increases between iterations.
pub fn fit_logistic_regression(x: &[Vec<f64>], y: &[u32], c: f64, max_iter: usize) -> Result<LogRegModel> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("regularization strength C must be positive, got {c}")));
    }
    let dim = check_rows(x)?;
    let classes = sorted_classes(y);
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let problem = Problem {
        x,
        targets: y.iter().map(|v| classes.binary_search(v).expect("class present")).collect(),
        n_classes: classes.len(),
        dim,
        inv_c: 1.0 / c,
    };

    let mut theta = vec![0.0; problem.n_params()];
    let (mut value, mut grad) = problem.evaluate(&theta);
    let mut trace = vec![value];
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;

    while iterations < max_iter && norm(&grad) > GRAD_TOLERANCE {
        // Two-loop recursion.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, yv, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(yv) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = history
            .last()
            .map(|(s, yv, _)| dot(s, yv) / dot(yv, yv))
            .unwrap_or_else(|| 1.0 / norm(&grad).max(1.0));
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            direction = grad.iter().map(|v| -v).collect();
            slope = -dot(&grad, &grad);
            history.clear();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            let (v, g) = problem.evaluate(&candidate);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = Some((candidate, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value, next_grad)) = accepted else {
            break;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if history.len() == LBFGS_MEMORY {
                history.remove(0);
            }
            history.push((s, yv, 1.0 / sy));
        }
        theta = next;
        value = next_value;
        grad = next_grad;
        trace.push(value);
        iterations += 1;
    }

    let (k, d) = (problem.n_classes, dim);
    Ok(LogRegModel {
        weights: (0..k).map(|c| theta[c * d..(c + 1) * d].to_vec()).collect(),
        bias: theta[k * d..].to_vec(),
        classes,
        c,
        max_iter,
        iterations,
        objective_trace: trace,
        final_grad_norm: norm(&grad),
    })
}

impl LogRegModel {
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.weights[0].len();
        if x.len() != d {
            return Err(Error::ShapeMismatch(format!("input of length {}, model expects {d}", x.len())));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + dot(w, x))
            .collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / s).collect())
    }

    /// Arg-max class; ties go to the lowest class id.
    pub fn predict_one(&self, x: &[f64]) -> Result<u32> {
        let z = self.logits(x)?;
        let mut best = 0;
        for (k, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }
}

pub fn predict_logistic_regression(model: &LogRegModel, x: &[Vec<f64>]) -> Result<Vec<u32>> {
    x.iter().map(|row| model.predict_one(row)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearestNeighborModel {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

pub fn fit_1nn(x: &[Vec<f64>], y: &[u32]) -> Result<NearestNeighborModel> {
    if x.is_empty() {
        return Err(Error::Precondition("nearest-neighbor store is empty".into()));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} labels", x.len(), y.len())));
    }
    check_rows(x)?;
    Ok(NearestNeighborModel {
        points: x.to_vec(),
        labels: y.to_vec(),
    })
}

impl NearestNeighborModel {
    /// Label of the Euclidean-nearest stored point; ties go to the lowest stored index.
    pub fn predict_one(&self, query: &[f64]) -> Result<u32> {
        if query.len() != self.points[0].len() {
            return Err(Error::ShapeMismatch(format!(
                "query of length {}, store has {}",
                query.len(),
                self.points[0].len()
            )));
        }
        let mut best = (f64::INFINITY, 0usize);
        for (i, p) in self.points.iter().enumerate() {
            let d2: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        Ok(self.labels[best.1])
    }
}

pub fn predict_1nn(model: &NearestNeighborModel, x: &[Vec<f64>]) -> Result<Vec<u32>> {
    x.iter().map(|q| model.predict_one(q)).collect()
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    classes: Vec<u32>,
    counts: Vec<Vec<u64>>,
    accuracy: f64,
    /// `None` where the class never occurs in `y_true`.
    recall: Vec<Option<f64>>,
    /// `None` where the class is never predicted.
    precision: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    fn position(&self, class: u32) -> Result<usize> {
        self.classes.iter().position(|&c| c == class).ok_or(Error::UnknownClass(class))
    }

    pub fn recall(&self, class: u32) -> Result<Option<f64>> {
        Ok(self.recall[self.position(class)?])
    }

    pub fn precision(&self, class: u32) -> Result<Option<f64>> {
        Ok(self.precision[self.position(class)?])
    }
}

pub fn confusion(y_true: &[u32], y_pred: &[u32], classes: &[u32]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = classes.len();
    let index = |c: u32| classes.iter().position(|&x| x == c).ok_or(Error::UnknownClass(c));
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        counts[index(t)?][index(p)?] += 1;
    }
    let total: u64 = counts.iter().flatten().sum();
    let correct: u64 = (0..k).map(|i| counts[i][i]).sum();
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let recall = (0..k).map(|i| ratio(counts[i][i], counts[i].iter().sum())).collect();
    let precision = (0..k)
        .map(|j| ratio(counts[j][j], (0..k).map(|i| counts[i][j]).sum()))
        .collect();
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        recall,
        precision,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// n x k projected coordinates (k <= requested dimension).
    pub scores: Vec<Vec<f64>>,
    /// k principal axes, each of length d.
    pub components: Vec<Vec<f64>>,
    /// Variance (n - 1 denominator) along each axis, descending.
    pub explained_variance: Vec<f64>,
}

/// Projects centered data onto its top principal axes. Each axis is signed
/// so its largest-magnitude loading is positive. Axes with (numerically)
/// zero variance are dropped with a warning.
pub fn pca_project(x: &[Vec<f64>], out_dim: usize) -> Result<PcaProjection> {
    let d = check_rows(x)?;
    let n = x.len();
    if out_dim == 0 || n < out_dim {
        return Err(Error::Precondition(format!("PCA to {out_dim} dimensions needs at least that many rows, got {n}")));
    }
    if out_dim > d {
        return Err(Error::Precondition(format!("cannot project {d}-dimensional data to {out_dim} dimensions")));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut components = Vec::new();
    let mut explained_variance = Vec::new();
    for &idx in order.iter().take(out_dim) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= tol {
            break;
        }
        let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
        let pivot = axis
            .iter()
            .cloned()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if pivot.1 < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        explained_variance.push(lambda);
    }
    if components.len() < out_dim {
        log::warn!(
            "data has rank {} below the requested {out_dim} PCA dimensions; returning {} columns",
            components.len(),
            components.len()
        );
    }
    let scores = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|axis| (0..d).map(|j| centered[(i, j)] * axis[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaProjection {
        scores,
        components,
        explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<u32>) {
        (
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![5.0, 0.0], vec![5.0, 1.0]],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn logreg_separable() {
        let (x, y) = separable();
        let model = fit_logistic_regression(&x, &y, DEFAULT_C, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(predict_logistic_regression(&model, &x).unwrap(), y);
        assert_eq!(model.predict_one(&[-1.0, 0.5]).unwrap(), 0);
        assert_eq!(model.predict_one(&[6.0, 0.5]).unwrap(), 1);
        for w in model.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(model.final_grad_norm.is_finite());
    }

    #[test]
    fn logreg_single_class() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_logistic_regression(&x, &[3, 3], 1.0, 100), Err(Error::SingleClass)));
    }

    #[test]
    fn zero_model_ties_to_lowest_class() {
        let model = LogRegModel {
            classes: vec![0, 1, 2],
            weights: vec![vec![0.0; 2]; 3],
            bias: vec![0.0; 3],
            c: 1.0,
            max_iter: 0,
            iterations: 0,
            objective_trace: vec![],
            final_grad_norm: 0.0,
        };
        for q in [[1.0, 2.0], [-3.0, 0.5]] {
            assert_eq!(model.predict_one(&q).unwrap(), 0);
        }
        assert!(model.predict_one(&[1.0]).is_err());
    }

    #[test]
    fn logreg_multiclass_probabilities() {
        let mut rng = SplitMix64::new(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..4u32 {
            for _ in 0..20 {
                x.push(vec![c as f64 * 3.0 + rng.next_gaussian(), (c % 2) as f64 * 3.0 + rng.next_gaussian()]);
                y.push(c * 2);
            }
        }
        let model = fit_logistic_regression(&x, &y, 1.0, 100).unwrap();
        for row in &x {
            let p = model.predict_proba(row).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for w in model.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let acc = predict_logistic_regression(&model, &x)
            .unwrap()
            .iter()
            .zip(&y)
            .filter(|(a, b)| a == b)
            .count() as f64
            / x.len() as f64;
        assert!(acc > 0.8);
    }

    #[test]
    fn logreg_matches_gradient_oracle() {
        // Objective gradient against central differences.
        let (x, y) = separable();
        let problem = Problem { x: &x, targets: y.iter().map(|&v| v as usize).collect(), n_classes: 2, dim: 2, inv_c: 1.0 };
        let theta = vec![0.3, -0.2, 0.1, 0.5, -0.4, 0.2];
        let (_, g) = problem.evaluate(&theta);
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut p = theta.clone();
            p[i] += h;
            let mut m = theta.clone();
            m[i] -= h;
            let fd = (problem.evaluate(&p).0 - problem.evaluate(&m).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_neighbor_rules() {
        let model = fit_1nn(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]], &[7, 8, 9]).unwrap();
        assert_eq!(model.predict_one(&[5.0, 5.0]).unwrap(), 9);
        // Equidistant to indices 0 and 1.
        assert_eq!(model.predict_one(&[1.0, 3.0]).unwrap(), 7);
        assert_eq!(predict_1nn(&model, &model.points.clone()).unwrap(), vec![7, 8, 9]);
        assert!(fit_1nn(&[], &[]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], &[0, 1]).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1], vec![0, 2]]);
        assert_eq!(cm.accuracy(), 0.75);
        assert_eq!(cm.recall(0).unwrap(), Some(0.5));
        assert_eq!(cm.precision(1).unwrap(), Some(2.0 / 3.0));

        let perfect = confusion(&[0, 1, 2], &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(perfect.accuracy(), 1.0);
        for c in 0..3 {
            assert_eq!(perfect.recall(c).unwrap(), Some(1.0));
            assert_eq!(perfect.precision(c).unwrap(), Some(1.0));
        }

        let never = confusion(&[0, 2], &[0, 0], &[0, 1, 2]).unwrap();
        assert_eq!(never.precision(2).unwrap(), None);
        assert_eq!(never.recall(1).unwrap(), None);
        assert!(matches!(confusion(&[5], &[0], &[0, 1]), Err(Error::UnknownClass(5))));
    }

    #[test]
    fn pca_of_centered_2d_is_rotation() {
        let x = vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![2.0, -1.0], vec![-2.0, 1.0]];
        let p = pca_project(&x, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let a = crate::losses::euclidean_distance(&x[i], &x[j]).unwrap();
                let b = crate::losses::euclidean_distance(&p.scores[i], &p.scores[j]).unwrap();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_line_drops_or_flattens_second_axis() {
        let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        assert_eq!(pca_project(&line, 2).unwrap().scores[0].len(), 1);

        let mut rng = SplitMix64::new(1);
        let near: Vec<Vec<f64>> = line.iter().map(|r| r.iter().map(|v| v + 1e-4 * rng.next_gaussian()).collect()).collect();
        let p = pca_project(&near, 2).unwrap();
        assert_eq!(p.scores[0].len(), 2);
        let var2 = p.scores.iter().map(|r| r[1] * r[1]).sum::<f64>() / 9.0;
        assert!(var2 < 1e-6 && var2 > 0.0);
    }

    #[test]
    fn pca_sign_convention() {
        let mut rng = SplitMix64::new(8);
        let x: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.next_gaussian()).collect()).collect();
        let p = pca_project(&x, 2).unwrap();
        for axis in &p.components {
            let max = axis.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
        assert!(pca_project(&x[..1], 2).is_err());
    }

    proptest! {
        #[test]
        fn pca_variances_descend(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let x: Vec<Vec<f64>> = (0..12).map(|_| vec![3.0 * rng.next_gaussian(), rng.next_gaussian(), 0.5 * rng.next_gaussian()]).collect();
            let p = pca_project(&x, 2).unwrap();
            let var = |k: usize| p.scores.iter().map(|r| r[k] * r[k]).sum::<f64>();
            prop_assert!(var(0) >= var(1) - 1e-9);
        }

        #[test]
        fn nn_translation_invariant(seed in any::<u64>(), shift in prop::collection::vec(-100.0f64..100.0, 3)) {
            let mut rng = SplitMix64::new(seed);
            let store: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.next_gaussian()).collect()).collect();
            let labels: Vec<u32> = (0..10).map(|i| i % 3).collect();
            let queries: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.next_gaussian()).collect()).collect();
            let mv = |r: &Vec<f64>| r.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<f64>>();
            let a = predict_1nn(&fit_1nn(&store, &labels).unwrap(), &queries).unwrap();
            let b = predict_1nn(
                &fit_1nn(&store.iter().map(mv).collect::<Vec<_>>(), &labels).unwrap(),
                &queries.iter().map(mv).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn confusion_totals(seed in any::<u64>(), n in 1usize..50) {
            let mut rng = SplitMix64::new(seed);
            let t: Vec<u32> = (0..n).map(|_| rng.next_index(4) as u32).collect();
            let p: Vec<u32> = (0..n).map(|_| rng.next_index(4) as u32).collect();
            let cm = confusion(&t, &p, &[0, 1, 2, 3]).unwrap();
            prop_assert_eq!(cm.total(), n as u64);
            let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / n as f64;
            prop_assert_eq!(cm.accuracy(), acc);
        }

        #[test]
        fn argmax_invariant_to_logit_shift(seed in any::<u64>(), shift in -10.0f64..10.0) {
            let mut rng = SplitMix64::new(seed);
            let mut model = LogRegModel {
                classes: vec![0, 1, 2],
                weights: (0..3).map(|_| vec![rng.next_gaussian(), rng.next_gaussian()]).collect(),
                bias: (0..3).map(|_| rng.next_gaussian()).collect(),
                c: 1.0, max_iter: 0, iterations: 0, objective_trace: vec![], final_grad_norm: 0.0,
            };
            let q = [rng.next_gaussian(), rng.next_gaussian()];
            let before = model.predict_one(&q).unwrap();
            model.bias.iter_mut().for_each(|b| *b += shift);
            prop_assert_eq!(before, model.predict_one(&q).unwrap());
        }
    }
}

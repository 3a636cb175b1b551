//! Evaluation protocols: within-subject, complete and partial
//! leave-one-subject-out (LOSO), and few-shot calibration curves.
//!
//! Each per-subject run preprocesses only its own training trials, trains
//! an embedder with a seed derived from `(seed, subject)`, embeds the trials
//! through the resulting [`Checkpoint`] and scores a classifier on the
//! target subject's TEST trials.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{confusion, fit_1nn, fit_logistic_regression, predict_1nn, predict_logistic_regression, ConfusionMatrix};
use crate::dataio::{apply_scale, baseline_correct_dataset, train_scale, BaselineMode, Dataset, Split, IM_CLASS, SUBJECT};
use crate::embedder::{train_embedder, Checkpoint, TrainSpec};
use crate::losses::{builtin_config, BuiltinConfig};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    WithinSubject,
    CompleteLoso,
    PartialLoso,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WithinSubject => "within_subject",
            Self::CompleteLoso => "complete_loso",
            Self::PartialLoso => "partial_loso",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "within_subject" => Ok(Self::WithinSubject),
            "complete_loso" => Ok(Self::CompleteLoso),
            "partial_loso" => Ok(Self::PartialLoso),
            _ => Err(Error::InvalidConfig(format!(
                "unknown scenario {s:?} (expected within_subject, complete_loso or partial_loso)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogReg,
    OneNn,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LogReg => "logreg",
            Self::OneNn => "one_nn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logreg" => Ok(Self::LogReg),
            "one_nn" | "1nn" => Ok(Self::OneNn),
            _ => Err(Error::InvalidConfig(format!("unknown classifier {s:?} (expected logreg or one_nn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Label written to result tables, e.g. `b` or `custom`.
    pub config_name: String,
    /// Its `seed` is replaced per subject by `derive_seed(seed, subject)`.
    pub train: TrainSpec,
    pub classifier: ClassifierKind,
    pub logreg_c: f64,
    pub logreg_max_iter: usize,
    pub baseline: BaselineMode,
    pub seed: u64,
    /// Worker threads for per-subject runs; 1 runs sequentially.
    pub jobs: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, config_name: impl Into<String>, train: TrainSpec, classifier: ClassifierKind, seed: u64) -> Self {
        Self {
            scenario,
            config_name: config_name.into(),
            train,
            classifier,
            logreg_c: crate::classify::DEFAULT_C,
            logreg_max_iter: crate::classify::DEFAULT_MAX_ITER,
            baseline: BaselineMode::Whole,
            seed,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectScore {
    pub subject: u32,
    pub scenario: Scenario,
    pub config: String,
    pub classifier: ClassifierKind,
    /// Calibration trials per class, when truncated.
    pub m: Option<usize>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Number of points the classifier was fitted on.
    pub n_train_calibration: usize,
    /// SHA-256 of the embedder parameters.
    pub embedder_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub m: usize,
    pub mean: f64,
    /// `sd / sqrt(n_subjects)` with the sample standard deviation.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotCurve {
    pub points: Vec<CurvePoint>,
    /// `scores[i]` holds one score per subject for `points[i].m`.
    pub scores: Vec<Vec<SubjectScore>>,
}

pub fn mean_accuracy(scores: &[SubjectScore]) -> f64 {
    scores.iter().map(|s| s.accuracy).sum::<f64>() / scores.len().max(1) as f64
}

/// Mean and standard error (sample sd over `sqrt(n)`; zero for one value).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trains an embedder on the TRAIN trials in `indices`, after baseline
/// correction and scaling by their own standard deviation. Returns the
/// checkpoint and the per-step loss.
pub fn train_on(dataset: &Dataset, indices: &[usize], spec: &ScenarioSpec, train: &TrainSpec) -> Result<(Checkpoint, Vec<f64>)> {
    let idx: Vec<usize> = indices.iter().copied().filter(|&i| dataset.split(i) == Split::Train).collect();
    let source = baseline_correct_dataset(&dataset.subset(&idx)?, spec.baseline)?;
    let all: Vec<usize> = (0..source.len()).collect();
    let scale = train_scale(&source, &all)?;
    let source = apply_scale(&source, scale)?;
    let subjects = source.subjects();
    if subjects.len() < 2 && train.loss.constrains_label(SUBJECT) {
        return Err(Error::InvalidConfig(format!(
            "loss configuration {:?} compares subjects but training data has {} subject(s)",
            spec.config_name,
            subjects.len()
        )));
    }
    let outcome = train_embedder(&source, train)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        scale,
        baseline: spec.baseline,
    };
    Ok((ckpt, outcome.loss_trace))
}

fn seeded_train(spec: &ScenarioSpec, subject: u32) -> TrainSpec {
    TrainSpec {
        seed: derive_seed(spec.seed, subject as u64),
        ..spec.train.clone()
    }
}

fn classes_of(dataset: &Dataset, indices: &[usize]) -> Vec<u32> {
    indices.iter().map(|&i| dataset.label(i).get(IM_CLASS)).collect()
}

/// Fits the classifier on `(fit_x, fit_y)` and scores the embedded `test` trials.
#[allow(clippy::too_many_arguments)]
fn score(
    dataset: &Dataset,
    spec: &ScenarioSpec,
    subject: u32,
    m: Option<usize>,
    ckpt_digest: &str,
    fit_x: &[Vec<f64>],
    fit_y: &[u32],
    test_x: &[Vec<f64>],
    test_y: &[u32],
) -> Result<SubjectScore> {
    let predictions = match spec.classifier {
        ClassifierKind::LogReg => {
            let model = fit_logistic_regression(fit_x, fit_y, spec.logreg_c, spec.logreg_max_iter)?;
            log::debug!(
                "subject {subject}: logistic regression stopped after {} iterations, gradient norm {:.3e}",
                model.iterations,
                model.final_grad_norm
            );
            predict_logistic_regression(&model, test_x)?
        }
        ClassifierKind::OneNn => predict_1nn(&fit_1nn(fit_x, fit_y)?, test_x)?,
    };
    let cm = confusion(test_y, &predictions, &dataset.classes())?;
    Ok(SubjectScore {
        subject,
        scenario: spec.scenario,
        config: spec.config_name.clone(),
        classifier: spec.classifier,
        m,
        accuracy: cm.accuracy(),
        confusion: cm,
        n_train_calibration: fit_x.len(),
        embedder_digest: ckpt_digest.to_owned(),
    })
}

/// Runs `job` per subject, in parallel when `jobs > 1`. Results keep the
/// subject order either way.
fn per_subject<T: Send>(subjects: &[u32], jobs: usize, job: impl Fn(u32) -> Result<T> + Sync) -> Result<Vec<T>> {
    if jobs <= 1 {
        return subjects.iter().map(|&s| job(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| subjects.par_iter().map(|&s| job(s)).collect())
}

fn check_loso(dataset: &Dataset) -> Result<Vec<u32>> {
    dataset.check_subject_splits()?;
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::Precondition(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    Ok(subjects)
}

/// The held-out subject's TRAIN trials: per class, the `m` with the lowest
/// `order_index`, or all of them for `None`. Ascending by dataset index.
pub fn calibration_indices(dataset: &Dataset, subject: u32, m: Option<usize>) -> Result<Vec<usize>> {
    let train = dataset.subject_indices(subject, Split::Train);
    let Some(m) = m else {
        return Ok(train);
    };
    if m == 0 {
        return Err(Error::InvalidConfig("samples per class must be at least 1".into()));
    }
    let mut chosen = Vec::new();
    for class in dataset.classes() {
        let mut of_class: Vec<usize> = train.iter().copied().filter(|&i| dataset.label(i).im_class() == class).collect();
        if of_class.len() < m {
            return Err(Error::InsufficientCalibration(format!(
                "subject {subject} has {} TRAIN trials of class {class}, {m} requested",
                of_class.len()
            )));
        }
        of_class.sort_by_key(|&i| (dataset.trial(i).order_index, i));
        chosen.extend_from_slice(&of_class[..m]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// One embedder per subject, trained on that subject's TRAIN trials with
/// the class-only configuration (a); the subject label is constant, so
/// components comparing subjects could never fire.
pub fn run_within_subject(dataset: &Dataset, spec: &ScenarioSpec) -> Result<Vec<SubjectScore>> {
    dataset.check_subject_splits()?;
    let spec = ScenarioSpec {
        scenario: Scenario::WithinSubject,
        config_name: BuiltinConfig::A.name().into(),
        train: TrainSpec {
            loss: builtin_config(BuiltinConfig::A),
            ..spec.train.clone()
        },
        ..spec.clone()
    };
    per_subject(&dataset.subjects(), spec.jobs, |s| {
        let train_idx = dataset.subject_indices(s, Split::Train);
        let test_idx = dataset.subject_indices(s, Split::Test);
        let (ckpt, _) = train_on(dataset, &train_idx, &spec, &seeded_train(&spec, s))?;
        let digest = ckpt.params.digest();
        score(
            dataset,
            &spec,
            s,
            None,
            &digest,
            &ckpt.embed_indices(dataset, &train_idx)?,
            &classes_of(dataset, &train_idx),
            &ckpt.embed_indices(dataset, &test_idx)?,
            &classes_of(dataset, &test_idx),
        )
    })
}

/// Embedder for held-out `subject`: trained on the TRAIN trials of every
/// other subject. Nothing of the held-out subject is read.
pub fn loso_checkpoint(dataset: &Dataset, spec: &ScenarioSpec, subject: u32) -> Result<Checkpoint> {
    let source = dataset.indices_where(|l, s| l.subject() != subject && s == Split::Train);
    Ok(train_on(dataset, &source, spec, &seeded_train(spec, subject))?.0)
}

/// Classifier fitted on the embedded TRAIN trials of the source subjects,
/// scored on the held-out subject's TEST trials.
pub fn run_complete_loso(dataset: &Dataset, spec: &ScenarioSpec) -> Result<Vec<SubjectScore>> {
    let subjects = check_loso(dataset)?;
    let spec = ScenarioSpec {
        scenario: Scenario::CompleteLoso,
        ..spec.clone()
    };
    per_subject(&subjects, spec.jobs, |s| {
        let ckpt = loso_checkpoint(dataset, &spec, s)?;
        let source = dataset.indices_where(|l, sp| l.subject() != s && sp == Split::Train);
        let test_idx = dataset.subject_indices(s, Split::Test);
        score(
            dataset,
            &spec,
            s,
            None,
            &ckpt.params.digest(),
            &ckpt.embed_indices(dataset, &source)?,
            &classes_of(dataset, &source),
            &ckpt.embed_indices(dataset, &test_idx)?,
            &classes_of(dataset, &test_idx),
        )
    })
}

/// Embedder as in complete LOSO; the classifier is calibrated on the
/// held-out subject's own TRAIN trials (optionally the first `m` per class).
pub fn run_partial_loso(dataset: &Dataset, spec: &ScenarioSpec, samples_per_class: Option<usize>) -> Result<Vec<SubjectScore>> {
    let curve = partial_loso_multi(dataset, spec, &[samples_per_class])?;
    Ok(curve.into_iter().next().expect("one calibration size"))
}

/// Partial LOSO for several calibration sizes, sharing one embedder per
/// held-out subject. Returns one score list per entry of `sizes`.
fn partial_loso_multi(dataset: &Dataset, spec: &ScenarioSpec, sizes: &[Option<usize>]) -> Result<Vec<Vec<SubjectScore>>> {
    let subjects = check_loso(dataset)?;
    let spec = ScenarioSpec {
        scenario: Scenario::PartialLoso,
        ..spec.clone()
    };
    // Validate every calibration size before any training.
    for &s in &subjects {
        for &m in sizes {
            calibration_indices(dataset, s, m)?;
        }
    }
    let per: Vec<Vec<SubjectScore>> = per_subject(&subjects, spec.jobs, |s| {
        let ckpt = loso_checkpoint(dataset, &spec, s)?;
        let digest = ckpt.params.digest();
        let all_train = dataset.subject_indices(s, Split::Train);
        let train_emb = ckpt.embed_indices(dataset, &all_train)?;
        let test_idx = dataset.subject_indices(s, Split::Test);
        let test_x = ckpt.embed_indices(dataset, &test_idx)?;
        let test_y = classes_of(dataset, &test_idx);
        sizes
            .iter()
            .map(|&m| {
                let idx = calibration_indices(dataset, s, m)?;
                let fit_x: Vec<Vec<f64>> = idx
                    .iter()
                    .map(|i| train_emb[all_train.binary_search(i).expect("calibration trial is TRAIN")].clone())
                    .collect();
                score(dataset, &spec, s, m, &digest, &fit_x, &classes_of(dataset, &idx), &test_x, &test_y)
            })
            .collect()
    })?;
    Ok((0..sizes.len()).map(|k| per.iter().map(|row| row[k].clone()).collect()).collect())
}

/// Partial-LOSO accuracy as a function of calibration trials per class.
/// The embedder of each held-out subject is trained once and reused for
/// every `m`.
pub fn few_shot_curve(dataset: &Dataset, spec: &ScenarioSpec, m_values: &[usize]) -> Result<FewShotCurve> {
    if m_values.is_empty() {
        return Err(Error::InvalidConfig("no calibration sizes given".into()));
    }
    if m_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!("calibration sizes must be strictly ascending, got {m_values:?}")));
    }
    let sizes: Vec<Option<usize>> = m_values.iter().map(|&m| Some(m)).collect();
    let scores = partial_loso_multi(dataset, spec, &sizes)?;
    let points = m_values
        .iter()
        .zip(&scores)
        .map(|(&m, row)| {
            let (mean, std_error) = mean_and_se(&row.iter().map(|s| s.accuracy).collect::<Vec<_>>());
            CurvePoint { m, mean, std_error }
        })
        .collect();
    Ok(FewShotCurve { points, scores })
}

/// Scores every subject with one fixed embedder instead of training per
/// subject. The classifier data follows `spec.scenario` as in the training
/// protocols; whether the checkpoint saw the target subject is up to the
/// caller.
pub fn run_with_checkpoint(
    dataset: &Dataset,
    spec: &ScenarioSpec,
    ckpt: &Checkpoint,
    samples_per_class: Option<usize>,
) -> Result<Vec<SubjectScore>> {
    let subjects = match spec.scenario {
        Scenario::WithinSubject => {
            dataset.check_subject_splits()?;
            dataset.subjects()
        }
        _ => check_loso(dataset)?,
    };
    let digest = ckpt.params.digest();
    let m = match spec.scenario {
        Scenario::PartialLoso => samples_per_class,
        _ => None,
    };
    per_subject(&subjects, spec.jobs, |s| {
        let fit_idx = match spec.scenario {
            Scenario::CompleteLoso => dataset.indices_where(|l, sp| l.subject() != s && sp == Split::Train),
            _ => calibration_indices(dataset, s, m)?,
        };
        let test_idx = dataset.subject_indices(s, Split::Test);
        score(
            dataset,
            spec,
            s,
            m,
            &digest,
            &ckpt.embed_indices(dataset, &fit_idx)?,
            &classes_of(dataset, &fit_idx),
            &ckpt.embed_indices(dataset, &test_idx)?,
            &classes_of(dataset, &test_idx),
        )
    })
}

/// Dispatches on `spec.scenario`; `samples_per_class` only affects partial LOSO.
pub fn run_scenario(dataset: &Dataset, spec: &ScenarioSpec, samples_per_class: Option<usize>) -> Result<Vec<SubjectScore>> {
    match spec.scenario {
        Scenario::WithinSubject => run_within_subject(dataset, spec),
        Scenario::CompleteLoso => run_complete_loso(dataset, spec),
        Scenario::PartialLoso => run_partial_loso(dataset, spec, samples_per_class),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};
    use crate::embedder::{AdamWConfig, ArchitectureSpec, LRSchedule};
    use crate::losses::builtin_config;
    use crate::mining::{BatchSize, BatchSpec};

    fn data(n_subjects: u32, noise: f64) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_subjects,
            n_classes: 2,
            trials_per_cell_train: 6,
            trials_per_cell_test: 3,
            time_steps: 16,
            channels: 2,
            class_separation: 3.0,
            subject_separation: 3.0,
            noise_sd: noise,
            seed: 9,
        })
        .unwrap()
    }

    fn spec(scenario: Scenario, config: BuiltinConfig) -> ScenarioSpec {
        let train = TrainSpec {
            loss: builtin_config(config),
            batch: BatchSpec { size: BatchSize::PerCombination(2), ..Default::default() },
            steps: 60,
            seed: 0,
            arch: ArchitectureSpec::linear(16, 2, 4),
            schedule: LRSchedule { max_lr: 1e-2, ..Default::default() },
            optimizer: AdamWConfig::default(),
        };
        ScenarioSpec::new(scenario, config.name(), train, ClassifierKind::LogReg, 5)
    }

    #[test]
    fn se_formula() {
        assert_eq!(mean_and_se(&[0.5]), (0.5, 0.0));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn within_subject_one_score_per_subject() {
        let ds = data(2, 1e-3);
        let scores = run_within_subject(&ds, &spec(Scenario::WithinSubject, BuiltinConfig::B)).unwrap();
        assert_eq!(scores.iter().map(|s| s.subject).collect::<Vec<_>>(), vec![0, 1]);
        for s in &scores {
            assert_eq!(s.config, "a");
            assert_eq!(s.accuracy, s.confusion.accuracy());
        }
    }

    #[test]
    fn within_subject_point_clusters_are_perfect() {
        let ds = data(1, 1e-6);
        let scores = run_within_subject(&ds, &spec(Scenario::WithinSubject, BuiltinConfig::A)).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].accuracy, 1.0);
    }

    #[test]
    fn missing_test_split_rejected() {
        let ds = data(2, 1e-3);
        let keep = ds.indices_where(|l, s| !(l.subject() == 1 && s == Split::Test));
        let ds = ds.subset(&keep).unwrap();
        assert!(matches!(
            run_within_subject(&ds, &spec(Scenario::WithinSubject, BuiltinConfig::A)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn complete_loso_shape() {
        let ds = data(2, 0.05);
        let scores = run_complete_loso(&ds, &spec(Scenario::CompleteLoso, BuiltinConfig::A)).unwrap();
        assert_eq!(scores.len(), 2);
        assert!(scores.iter().all(|s| s.n_train_calibration == 12 && s.scenario == Scenario::CompleteLoso));
    }

    #[test]
    fn subject_aware_config_needs_two_source_subjects() {
        let ds = data(2, 0.05);
        assert!(matches!(
            run_complete_loso(&ds, &spec(Scenario::CompleteLoso, BuiltinConfig::B)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(run_complete_loso(&data(1, 0.05), &spec(Scenario::CompleteLoso, BuiltinConfig::A)).is_err());
    }

    #[test]
    fn partial_loso_minimal_calibration() {
        let ds = data(3, 0.05);
        let scores = run_partial_loso(&ds, &spec(Scenario::PartialLoso, BuiltinConfig::D), Some(1)).unwrap();
        for s in &scores {
            assert_eq!(s.n_train_calibration, 2);
            assert!(s.accuracy.is_finite());
        }
        assert!(matches!(
            run_partial_loso(&ds, &spec(Scenario::PartialLoso, BuiltinConfig::D), Some(7)),
            Err(Error::InsufficientCalibration(_))
        ));
    }

    #[test]
    fn calibration_follows_order_index() {
        let ds = data(2, 0.05);
        let picked = calibration_indices(&ds, 1, Some(2)).unwrap();
        for &i in &picked {
            let class = ds.label(i).im_class();
            let earlier = ds
                .subject_indices(1, Split::Train)
                .into_iter()
                .filter(|&j| ds.label(j).im_class() == class && ds.trial(j).order_index < ds.trial(i).order_index)
                .count();
            assert!(earlier < 2);
        }
        assert_eq!(picked.len(), 4);
    }

    #[test]
    fn curve_consistency() {
        let ds = data(3, 0.05);
        let sp = spec(Scenario::PartialLoso, BuiltinConfig::B);
        let curve = few_shot_curve(&ds, &sp, &[1, 3, 6]).unwrap();
        let m1 = run_partial_loso(&ds, &sp, Some(1)).unwrap();
        let full = run_partial_loso(&ds, &sp, None).unwrap();
        assert_eq!(curve.scores[0], m1);
        for (a, b) in curve.scores[2].iter().zip(&full) {
            assert_eq!(a.accuracy, b.accuracy);
            assert_eq!(a.confusion, b.confusion);
        }
        for k in 1..3 {
            for (a, b) in curve.scores[0].iter().zip(&curve.scores[k]) {
                assert_eq!(a.embedder_digest, b.embedder_digest);
            }
        }
        assert!(few_shot_curve(&ds, &sp, &[3, 1]).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let ds = data(3, 0.05);
        let sp = spec(Scenario::CompleteLoso, BuiltinConfig::C);
        let seq = run_complete_loso(&ds, &sp).unwrap();
        let par = run_complete_loso(&ds, &ScenarioSpec { jobs: 3, ..sp }).unwrap();
        assert_eq!(seq, par);
    }
}

//! Trials, labels, datasets and the on-disk container.
//!
//! A dataset directory holds three files:
//!
//! - `meta.csv`: header `time_steps,channels,n_labels,label_names,label_cardinalities`
//!   and a single row; list fields are `;`-separated.
//! - `manifest.csv`: header `trial_id,subject,im_class,split,order_index,offset`,
//!   one row per trial, `split` in `{train,test}`, `offset` a byte offset into
//!   the blob.
//! - `samples.bin`: trials concatenated, each stored time-major
//!   (`x[t * channels + c]`) as little-endian IEEE-754 float32.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

/// Index of the subject label in every [`LabelVector`].
pub const SUBJECT: usize = 0;
/// Index of the task (imagery) class label.
pub const IM_CLASS: usize = 1;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const META_FILE: &str = "meta.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One multichannel recording segment, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    samples: Vec<f64>,
    time_steps: usize,
    channels: usize,
    pub trial_id: u64,
    pub order_index: u64,
}

impl Trial {
    pub fn new(
        samples: Vec<f64>,
        time_steps: usize,
        channels: usize,
        trial_id: u64,
        order_index: u64,
    ) -> Result<Self> {
        if time_steps == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "trial {trial_id}: shape {time_steps}x{channels} has an empty axis"
            )));
        }
        if samples.len() != time_steps * channels {
            return Err(Error::ShapeMismatch(format!(
                "trial {trial_id}: {} samples for shape {time_steps}x{channels}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!(
                "trial {trial_id} contains non-finite samples"
            )));
        }
        Ok(Self {
            samples,
            time_steps,
            channels,
            trial_id,
            order_index,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.time_steps, self.channels)
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.samples[t * self.channels + c]
    }

    fn map_samples(&self, f: impl Fn(usize, f64) -> f64) -> Trial {
        Trial {
            samples: self
                .samples
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i, v))
                .collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Trial {
        self.map_samples(|_, v| v * factor)
    }
}

/// Per-trial label tuple; entry [`SUBJECT`] is the subject, [`IM_CLASS`] the task class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelVector(pub Vec<u32>);

impl LabelVector {
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> u32 {
        self.0[k]
    }

    pub fn subject(&self) -> u32 {
        self.0[SUBJECT]
    }

    pub fn im_class(&self) -> u32 {
        self.0[IM_CLASS]
    }
}

impl From<Vec<u32>> for LabelVector {
    fn from(values: Vec<u32>) -> Self {
        LabelVector(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trials: Vec<Trial>,
    labels: Vec<LabelVector>,
    split: Vec<Split>,
    label_names: Vec<String>,
    label_cardinalities: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset, checking the per-trial invariants (parallel lengths,
    /// shared shape, unique ids, label ranges). The per-subject split
    /// coverage is checked separately by [`Dataset::check_subject_splits`]
    /// since subsets routinely drop one side.
    pub fn new(
        trials: Vec<Trial>,
        labels: Vec<LabelVector>,
        split: Vec<Split>,
        label_names: Vec<String>,
        label_cardinalities: Vec<u32>,
    ) -> Result<Self> {
        let n = trials.len();
        if n == 0 {
            return Err(Error::DegenerateData("dataset has no trials".into()));
        }
        if labels.len() != n || split.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} trials, {} label vectors, {} split markers",
                labels.len(),
                split.len()
            )));
        }
        let k = label_names.len();
        if k == 0 || label_cardinalities.len() != k {
            return Err(Error::InvalidConfig(format!(
                "{k} label names but {} cardinalities",
                label_cardinalities.len()
            )));
        }
        if label_cardinalities.contains(&0) {
            return Err(Error::InvalidConfig("label cardinalities must be positive".into()));
        }
        let shape = trials[0].shape();
        let mut ids = HashSet::with_capacity(n);
        for (trial, label) in trials.iter().zip(&labels) {
            if trial.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "trial {} has shape {:?}, expected {:?}",
                    trial.trial_id,
                    trial.shape(),
                    shape
                )));
            }
            if !ids.insert(trial.trial_id) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate trial_id {}",
                    trial.trial_id
                )));
            }
            if label.k() != k {
                return Err(Error::LabelCountMismatch {
                    expected: k,
                    actual: label.k(),
                });
            }
            for (value, &card) in label.0.iter().zip(&label_cardinalities) {
                if *value >= card {
                    return Err(Error::OutOfRange(format!(
                        "trial {}: label value {value} exceeds cardinality {card}",
                        trial.trial_id
                    )));
                }
            }
        }
        Ok(Self {
            trials,
            labels,
            split,
            label_names,
            label_cardinalities,
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn trial(&self, i: usize) -> &Trial {
        &self.trials[i]
    }

    pub fn labels(&self) -> &[LabelVector] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &LabelVector {
        &self.labels[i]
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn split(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_cardinalities(&self) -> &[u32] {
        &self.label_cardinalities
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    /// (time_steps, channels) shared by every trial.
    pub fn shape(&self) -> (usize, usize) {
        self.trials[0].shape()
    }

    /// Distinct subject ids, ascending.
    pub fn subjects(&self) -> Vec<u32> {
        self.labels
            .iter()
            .map(LabelVector::subject)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct class ids, ascending.
    pub fn classes(&self) -> Vec<u32> {
        self.labels
            .iter()
            .map(LabelVector::im_class)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Indices matching a predicate on (label, split), ascending.
    pub fn indices_where(&self, mut pred: impl FnMut(&LabelVector, Split) -> bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| pred(&self.labels[i], self.split[i]))
            .collect()
    }

    pub fn subject_indices(&self, subject: u32, split: Split) -> Vec<usize> {
        self.indices_where(|l, s| l.subject() == subject && s == split)
    }

    /// A dataset restricted to `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.trials[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i].clone()).collect(),
            indices.iter().map(|&i| self.split[i]).collect(),
            self.label_names.clone(),
            self.label_cardinalities.clone(),
        )
    }

    /// Replaces the trials while keeping labels and splits.
    pub fn with_trials(&self, trials: Vec<Trial>) -> Result<Dataset> {
        Dataset::new(
            trials,
            self.labels.clone(),
            self.split.clone(),
            self.label_names.clone(),
            self.label_cardinalities.clone(),
        )
    }

    /// Replaces the labels while keeping trials and splits.
    pub fn with_labels(&self, labels: Vec<LabelVector>) -> Result<Dataset> {
        Dataset::new(
            self.trials.clone(),
            labels,
            self.split.clone(),
            self.label_names.clone(),
            self.label_cardinalities.clone(),
        )
    }

    /// Every subject present must have both TRAIN and TEST trials.
    pub fn check_subject_splits(&self) -> Result<()> {
        let mut seen: BTreeMap<u32, (bool, bool)> = BTreeMap::new();
        for (label, split) in self.labels.iter().zip(&self.split) {
            let entry = seen.entry(label.subject()).or_default();
            match split {
                Split::Train => entry.0 = true,
                Split::Test => entry.1 = true,
            }
        }
        for (subject, (train, test)) in seen {
            if !train || !test {
                let missing = if train { "TEST" } else { "TRAIN" };
                return Err(Error::Precondition(format!(
                    "subject {subject} has no {missing} trials"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselineMode {
    /// Subtract the scalar mean of the whole time×channels matrix.
    #[default]
    Whole,
    /// Subtract each channel's own temporal mean.
    PerChannel,
}

/// Removes the trial's average (drift correction).
pub fn baseline_correct(trial: &Trial) -> Trial {
    baseline_correct_with(trial, BaselineMode::Whole)
}

pub fn baseline_correct_with(trial: &Trial, mode: BaselineMode) -> Trial {
    let (t_len, c_len) = trial.shape();
    match mode {
        BaselineMode::Whole => {
            let mean = trial.samples.iter().sum::<f64>() / trial.samples.len() as f64;
            trial.map_samples(|_, v| v - mean)
        }
        BaselineMode::PerChannel => {
            let mut means = vec![0.0; c_len];
            for t in 0..t_len {
                for (c, m) in means.iter_mut().enumerate() {
                    *m += trial.at(t, c);
                }
            }
            for m in &mut means {
                *m /= t_len as f64;
            }
            trial.map_samples(|i, v| v - means[i % c_len])
        }
    }
}

pub fn baseline_correct_dataset(dataset: &Dataset, mode: BaselineMode) -> Result<Dataset> {
    dataset.with_trials(
        dataset
            .trials()
            .iter()
            .map(|t| baseline_correct_with(t, mode))
            .collect(),
    )
}

/// Population standard deviation of all samples in the TRAIN trials of `indices`.
pub fn train_scale(dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let mut count = 0usize;
    let mut sum = 0.0;
    for &i in indices {
        if dataset.split(i) == Split::Train {
            sum += dataset.trial(i).samples.iter().sum::<f64>();
            count += dataset.trial(i).samples.len();
        }
    }
    if count == 0 {
        return Err(Error::DegenerateData("no TRAIN samples to standardize on".into()));
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    for &i in indices {
        if dataset.split(i) == Split::Train {
            ss += dataset
                .trial(i)
                .samples
                .iter()
                .map(|v| (v - mean).powi(2))
                .sum::<f64>();
        }
    }
    let sd = (ss / count as f64).sqrt();
    if sd < 1e-12 {
        return Err(Error::DegenerateData(format!(
            "TRAIN standard deviation {sd:e} is below 1e-12"
        )));
    }
    Ok(sd)
}

/// Divides every trial by the standard deviation of the TRAIN samples.
/// TEST trials reuse the TRAIN-derived scale.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, f64)> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let scale = train_scale(dataset, &all)?;
    Ok((apply_scale(dataset, scale)?, scale))
}

pub fn apply_scale(dataset: &Dataset, scale: f64) -> Result<Dataset> {
    let factor = 1.0 / scale;
    dataset.with_trials(dataset.trials().iter().map(|t| t.scaled(factor)).collect())
}

/// Parameters of the synthetic multi-subject generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: u32,
    pub n_classes: u32,
    pub trials_per_cell_train: u32,
    pub trials_per_cell_test: u32,
    pub time_steps: usize,
    pub channels: usize,
    pub class_separation: f64,
    pub subject_separation: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 2,
            n_classes: 2,
            trials_per_cell_train: 10,
            trials_per_cell_test: 5,
            time_steps: 64,
            channels: 4,
            class_separation: 4.0,
            subject_separation: 4.0,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects as usize),
            ("n_classes", self.n_classes as usize),
            ("trials_per_cell_train", self.trials_per_cell_train as usize),
            ("trials_per_cell_test", self.trials_per_cell_test as usize),
            ("time_steps", self.time_steps),
            ("channels", self.channels),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("class_separation", self.class_separation),
            ("subject_separation", self.subject_separation),
            ("noise_sd", self.noise_sd),
        ];
        for (name, value) in reals {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a positive real, got {value}"
                )));
            }
        }
        Ok(())
    }
}

const SUBJECT_TEMPLATE_TAG: u64 = 0x5355_424A;
const CLASS_TEMPLATE_TAG: u64 = 0x434C_4153;
const NOISE_TAG: u64 = 0x4E4F_4953;

/// A unit-Frobenius-norm spatiotemporal pattern: two sinusoids with random
/// integer frequencies and phases, each with a Gaussian spatial loading.
/// Independently seeded patterns are nearly orthogonal.
fn template(seed: u64, time_steps: usize, channels: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let max_freq = (time_steps / 4).max(1);
    let mut out = vec![0.0; time_steps * channels];
    for _ in 0..2 {
        let freq = 1 + rng.next_index(max_freq);
        let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
        let loading: Vec<f64> = (0..channels).map(|_| rng.next_gaussian()).collect();
        for t in 0..time_steps {
            let wave = (2.0 * std::f64::consts::PI * freq as f64 * t as f64 / time_steps as f64
                + phase)
                .sin();
            for c in 0..channels {
                out[t * channels + c] += wave * loading[c];
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

/// Generates a balanced multi-subject dataset.
///
/// Cell `(s, c)` has mean `subject_separation * u_s + class_separation * v_c`
/// where `u_s`, `v_c` are unit templates seeded from `(seed, index)`; each
/// trial adds i.i.d. Gaussian noise of sd `noise_sd`. Within a subject the
/// TRAIN trials come first (classes interleaved), then the TEST trials, and
/// `order_index` counts up in that order. Samples are rounded to float32 so
/// the container round-trips exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (t_len, c_len) = (spec.time_steps, spec.channels);
    let subject_templates: Vec<Vec<f64>> = (0..spec.n_subjects)
        .map(|s| {
            template(
                derive_seed(spec.seed, SUBJECT_TEMPLATE_TAG ^ ((s as u64) << 32)),
                t_len,
                c_len,
            )
        })
        .collect();
    let class_templates: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|c| {
            template(
                derive_seed(spec.seed, CLASS_TEMPLATE_TAG ^ ((c as u64) << 32)),
                t_len,
                c_len,
            )
        })
        .collect();
    let mut noise = SplitMix64::new(derive_seed(spec.seed, NOISE_TAG));

    let per_subject =
        spec.n_classes as usize * (spec.trials_per_cell_train + spec.trials_per_cell_test) as usize;
    let total = spec.n_subjects as usize * per_subject;
    let mut trials = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut next_id = 0u64;

    for s in 0..spec.n_subjects {
        let mut order = 0u64;
        for (split, per_cell) in [
            (Split::Train, spec.trials_per_cell_train),
            (Split::Test, spec.trials_per_cell_test),
        ] {
            for _ in 0..per_cell {
                for c in 0..spec.n_classes {
                    let u = &subject_templates[s as usize];
                    let v = &class_templates[c as usize];
                    let samples: Vec<f64> = (0..t_len * c_len)
                        .map(|i| {
                            let x = spec.subject_separation * u[i]
                                + spec.class_separation * v[i]
                                + spec.noise_sd * noise.next_gaussian();
                            x as f32 as f64
                        })
                        .collect();
                    trials.push(Trial::new(samples, t_len, c_len, next_id, order)?);
                    labels.push(LabelVector(vec![s, c]));
                    splits.push(split);
                    next_id += 1;
                    order += 1;
                }
            }
        }
    }
    Dataset::new(
        trials,
        labels,
        splits,
        vec!["subject".into(), "im_class".into()],
        vec![spec.n_subjects, spec.n_classes],
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    trial_id: u64,
    subject: u32,
    im_class: u32,
    split: Split,
    order_index: u64,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    time_steps: usize,
    channels: usize,
    n_labels: usize,
    label_names: String,
    label_cardinalities: String,
}

/// Writes the dataset container into `dir` (created if missing).
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    if dataset.n_labels() != 2 {
        return Err(Error::InvalidConfig(format!(
            "the container stores exactly two labels (subject, im_class), dataset has {}",
            dataset.n_labels()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t_len, c_len) = dataset.shape();
    let trial_bytes = (t_len * c_len * 4) as u64;

    let meta_path = dir.join(META_FILE);
    let mut meta = csv::Writer::from_path(&meta_path).map_err(|e| csv_error(&meta_path, e))?;
    meta.serialize(MetaRow {
        time_steps: t_len,
        channels: c_len,
        n_labels: dataset.n_labels(),
        label_names: dataset.label_names().join(";"),
        label_cardinalities: dataset
            .label_cardinalities()
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(";"),
    })
    .map_err(|e| csv_error(&meta_path, e))?;
    meta.flush().map_err(|e| Error::io(&meta_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest =
        csv::Writer::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
    let mut blob = Vec::with_capacity(dataset.len() * trial_bytes as usize);
    for (i, trial) in dataset.trials().iter().enumerate() {
        let label = dataset.label(i);
        manifest
            .serialize(ManifestRow {
                trial_id: trial.trial_id,
                subject: label.subject(),
                im_class: label.im_class(),
                split: dataset.split(i),
                order_index: trial.order_index,
                offset: i as u64 * trial_bytes,
            })
            .map_err(|e| csv_error(&manifest_path, e))?;
        for &v in trial.samples() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;

    let samples_path = dir.join(SAMPLES_FILE);
    fs::write(&samples_path, blob).map_err(|e| Error::io(&samples_path, e))?;
    Ok(())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let location = err
        .position()
        .map(|p| format!("line {}, byte {}", p.line(), p.byte()));
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        kind => Error::format(path, location, format!("{kind:?}")),
    }
}

fn parse_list<T: std::str::FromStr>(path: &Path, field: &str, text: &str) -> Result<Vec<T>> {
    text.split(';')
        .map(|item| {
            item.trim().parse::<T>().map_err(|_| {
                Error::format(
                    path,
                    Some("line 2".into()),
                    format!("cannot parse {field} entry {item:?}"),
                )
            })
        })
        .collect()
}

/// Reads a dataset container written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let mut meta_reader = csv::Reader::from_path(&meta_path).map_err(|e| csv_error(&meta_path, e))?;
    let mut rows = meta_reader.deserialize::<MetaRow>();
    let meta = match rows.next() {
        Some(row) => row.map_err(|e| csv_error(&meta_path, e))?,
        None => return Err(Error::format(&meta_path, None, "missing data row")),
    };
    if rows.next().is_some() {
        return Err(Error::format(&meta_path, Some("line 3".into()), "expected a single data row"));
    }
    let label_names: Vec<String> = meta.label_names.split(';').map(str::to_owned).collect();
    let label_cardinalities: Vec<u32> =
        parse_list(&meta_path, "label_cardinalities", &meta.label_cardinalities)?;
    if meta.n_labels != 2 || label_names.len() != 2 || label_cardinalities.len() != 2 {
        return Err(Error::format(
            &meta_path,
            Some("line 2".into()),
            format!(
                "expected two labels (subject, im_class); n_labels={}, {} names, {} cardinalities",
                meta.n_labels,
                label_names.len(),
                label_cardinalities.len()
            ),
        ));
    }
    if meta.time_steps == 0 || meta.channels == 0 {
        return Err(Error::format(&meta_path, Some("line 2".into()), "empty trial shape"));
    }

    let samples_path = dir.join(SAMPLES_FILE);
    let blob = fs::read(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
    let values_per_trial = meta.time_steps * meta.channels;
    let trial_bytes = values_per_trial as u64 * 4;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut reader =
        csv::Reader::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
    let expected_header = ["trial_id", "subject", "im_class", "split", "order_index", "offset"];
    let header = reader.headers().map_err(|e| csv_error(&manifest_path, e))?;
    if header.iter().ne(expected_header.iter().copied()) {
        return Err(Error::format(
            &manifest_path,
            Some("line 1".into()),
            format!("header must be {}", expected_header.join(",")),
        ));
    }

    let mut trials = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    let mut seen_ids = HashSet::new();
    for record in reader.deserialize::<ManifestRow>() {
        let row = record.map_err(|e| csv_error(&manifest_path, e))?;
        let line = trials.len() + 2;
        if !seen_ids.insert(row.trial_id) {
            return Err(Error::format(
                &manifest_path,
                Some(format!("line {line}")),
                format!("duplicate trial_id {}", row.trial_id),
            ));
        }
        if row.subject >= label_cardinalities[SUBJECT] || row.im_class >= label_cardinalities[IM_CLASS]
        {
            return Err(Error::format(
                &manifest_path,
                Some(format!("line {line}")),
                "label value exceeds declared cardinality",
            ));
        }
        let end = row.offset.checked_add(trial_bytes);
        let start = row.offset as usize;
        let bytes = match end {
            Some(end) if end <= blob.len() as u64 => &blob[start..end as usize],
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "{}: trial {} at offset {} needs {trial_bytes} bytes but blob has {}",
                    samples_path.display(),
                    row.trial_id,
                    row.offset,
                    blob.len()
                )))
            }
        };
        let samples = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let trial = Trial::new(samples, meta.time_steps, meta.channels, row.trial_id, row.order_index)
            .map_err(|e| Error::format(&samples_path, Some(format!("offset {}", row.offset)), e.to_string()))?;
        trials.push(trial);
        labels.push(LabelVector(vec![row.subject, row.im_class]));
        splits.push(row.split);
    }
    if trials.is_empty() {
        return Err(Error::format(&manifest_path, None, "manifest lists no trials"));
    }
    let expected_len = trials.len() as u64 * trial_bytes;
    if blob.len() as u64 != expected_len {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, but {} trials of {}x{} float32 need {expected_len}",
            samples_path.display(),
            blob.len(),
            trials.len(),
            meta.time_steps,
            meta.channels
        )));
    }
    let dataset = Dataset::new(trials, labels, splits, label_names, label_cardinalities)
        .map_err(|e| Error::format(&manifest_path, None, e.to_string()))?;
    dataset
        .check_subject_splits()
        .map_err(|e| Error::format(&manifest_path, None, e.to_string()))?;
    Ok(dataset)
}

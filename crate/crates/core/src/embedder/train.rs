use super::{adamw_step, init_params, loss_gradient, onecycle_lr, AdamWConfig, ArchitectureSpec, EmbedderParams, LRSchedule, OptimizerState};
use crate::dataio::{Dataset, Trial};
use crate::losses::LossConfig;
use crate::mining::{BatchSampler, BatchSpec};
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub loss: LossConfig,
    pub batch: BatchSpec,
    pub steps: usize,
    pub seed: u64,
    pub arch: ArchitectureSpec,
    /// `total_steps` is overridden by `steps` (at least 2).
    pub schedule: LRSchedule,
    pub optimizer: AdamWConfig,
}

impl TrainSpec {
    pub fn schedule_for_run(&self) -> LRSchedule {
        LRSchedule {
            total_steps: self.steps.max(2),
            ..self.schedule
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EmbedderParams,
    pub loss_trace: Vec<f64>,
}

/// Runs `steps` iterations of: balanced batch -> embeddings -> product
/// ladder loss -> gradient -> 1cycle learning rate -> AdamW update.
///
/// The dataset is used as given (preprocessing is the caller's job); only
/// its TRAIN split is sampled. Single-threaded and bit-reproducible for a
/// given seed.
pub fn train_embedder(dataset: &Dataset, spec: &TrainSpec) -> Result<TrainOutcome> {
    if spec.steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if dataset.shape() != (spec.arch.time_steps, spec.arch.channels) {
        return Err(Error::ShapeMismatch(format!(
            "dataset trials are {:?}, architecture expects ({}, {})",
            dataset.shape(),
            spec.arch.time_steps,
            spec.arch.channels
        )));
    }
    if dataset.n_labels() != spec.loss.k() {
        return Err(Error::LabelCountMismatch {
            expected: spec.loss.k(),
            actual: dataset.n_labels(),
        });
    }
    let schedule = spec.schedule_for_run();
    schedule.validate()?;
    let sampler = BatchSampler::new(dataset, &spec.batch)?;
    let mut params = init_params(&spec.arch, derive_seed(spec.seed, INIT_STREAM))?;
    let mut state = OptimizerState::new(&params, spec.optimizer);
    let mut rng = SplitMix64::new(derive_seed(spec.seed, BATCH_STREAM));
    let mut loss_trace = Vec::with_capacity(spec.steps);

    for step in 0..spec.steps {
        let batch = sampler.sample(dataset, &mut rng);
        let trials: Vec<&Trial> = batch.indices.iter().map(|&i| dataset.trial(i)).collect();
        let (loss, grads) = loss_gradient(&params, &trials, &batch.labels, &spec.loss)?;
        if !loss.is_finite() {
            return Err(Error::DegenerateData(format!("loss diverged at step {step}")));
        }
        let lr = onecycle_lr(&schedule, step)?;
        adamw_step(&mut params, &grads, &mut state, lr)?;
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { params, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, standardize, SyntheticSpec};
    use crate::losses::{builtin_config, BuiltinConfig};
    use crate::mining::BatchSize;

    fn dataset() -> Dataset {
        let ds = generate_synthetic(&SyntheticSpec {
            n_subjects: 2,
            n_classes: 2,
            trials_per_cell_train: 8,
            trials_per_cell_test: 2,
            time_steps: 16,
            channels: 2,
            class_separation: 3.0,
            subject_separation: 3.0,
            noise_sd: 1e-3,
            seed: 4,
        })
        .unwrap();
        standardize(&ds).unwrap().0
    }

    fn spec(steps: usize) -> TrainSpec {
        TrainSpec {
            loss: builtin_config(BuiltinConfig::A),
            batch: BatchSpec { size: BatchSize::Total(16), ..Default::default() },
            steps,
            seed: 12,
            arch: ArchitectureSpec::linear(16, 2, 4),
            schedule: LRSchedule { max_lr: 1e-2, ..Default::default() },
            optimizer: AdamWConfig::default(),
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(train_embedder(&dataset(), &spec(0)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn one_step_moves_params() {
        let ds = dataset();
        let s = spec(1);
        let out = train_embedder(&ds, &s).unwrap();
        assert!(out.loss_trace[0] > 0.0);
        let initial = init_params(&s.arch, derive_seed(s.seed, INIT_STREAM)).unwrap();
        assert_ne!(out.params, initial);
    }

    #[test]
    fn loss_decreases() {
        let out = train_embedder(&dataset(), &spec(200)).unwrap();
        let first: f64 = out.loss_trace[..50].iter().sum::<f64>() / 50.0;
        let last: f64 = out.loss_trace[150..].iter().sum::<f64>() / 50.0;
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn deterministic() {
        let ds = dataset();
        let a = train_embedder(&ds, &spec(20)).unwrap();
        let b = train_embedder(&ds, &spec(20)).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.params.digest(), b.params.digest());
    }
}

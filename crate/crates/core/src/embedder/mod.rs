//! The embedding function: trial -> R^d.
//!
//! Two architectures are provided:
//!
//! - `Linear`: the flattened (time-major) trial times a dense matrix, plus bias.
//! - `MiniConv`: a compact convolutional stack with the stage structure of
//!   EEGNet:
//!
//!   ```text
//!   temporal conv   f1 filters, kernel temporal_kernel, same padding, no bias
//!   spatial conv    depthwise over all channels, depth_mult per filter, bias
//!   ELU, average pool (pool1)
//!   separable conv  depthwise temporal (sep_kernel, same padding, no bias)
//!                   then pointwise to f2 maps, bias
//!   ELU, average pool (pool2)
//!   flatten, dense to d
//!   ```
//!
//!   Batch normalization and dropout are omitted; inputs are standardized
//!   instead. Same padding places `(k - 1) / 2` zeros before the signal and
//!   the rest after; pooling drops any incomplete trailing window.
//!
//! Outputs are not length-normalized. Gradients are exact reverse-mode
//! derivatives written out by hand.

mod checkpoint;
mod network;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_META, CHECKPOINT_PARAMS};
pub use optim::{adamw_step, onecycle_lr, AdamWConfig, LRSchedule, OptimizerState};
pub use train::{train_embedder, TrainOutcome, TrainSpec};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{LabelVector, Trial};
use crate::losses::{product_ladder_loss_with_grad, LossConfig};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    Linear,
    MiniConv,
}

impl ArchitectureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::MiniConv => "miniconv",
        }
    }
}

impl std::str::FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::Linear),
            "miniconv" => Ok(Self::MiniConv),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture {other:?} (expected linear or miniconv)"
            ))),
        }
    }
}

/// Hyperparameters of the convolutional stack (ignored by `Linear`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ConvSettings {
    pub f1: usize,
    pub depth_mult: usize,
    pub f2: usize,
    pub temporal_kernel: usize,
    pub sep_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
}

impl Default for ConvSettings {
    fn default() -> Self {
        Self {
            f1: 8,
            depth_mult: 2,
            f2: 16,
            temporal_kernel: 32,
            sep_kernel: 16,
            pool1: 4,
            pool2: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    pub time_steps: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub conv: ConvSettings,
}

impl ArchitectureSpec {
    pub fn linear(time_steps: usize, channels: usize, embed_dim: usize) -> Self {
        Self {
            kind: ArchitectureKind::Linear,
            time_steps,
            channels,
            embed_dim,
            conv: ConvSettings::default(),
        }
    }

    pub fn miniconv(time_steps: usize, channels: usize, embed_dim: usize, conv: ConvSettings) -> Self {
        Self {
            kind: ArchitectureKind::MiniConv,
            time_steps,
            channels,
            embed_dim,
            conv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.embed_dim == 0 {
            return invalid("embed_dim must be at least 1".into());
        }
        if self.time_steps == 0 || self.channels == 0 {
            return invalid("input shape has an empty axis".into());
        }
        if self.kind == ArchitectureKind::MiniConv {
            let c = &self.conv;
            for (name, v) in [
                ("f1", c.f1),
                ("depth_mult", c.depth_mult),
                ("f2", c.f2),
                ("temporal_kernel", c.temporal_kernel),
                ("sep_kernel", c.sep_kernel),
                ("pool1", c.pool1),
                ("pool2", c.pool2),
            ] {
                if v == 0 {
                    return invalid(format!("{name} must be at least 1"));
                }
            }
            if c.temporal_kernel > self.time_steps {
                return invalid(format!(
                    "temporal_kernel {} exceeds time_steps {}",
                    c.temporal_kernel, self.time_steps
                ));
            }
            let t1 = self.time_steps / c.pool1;
            if t1 == 0 {
                return invalid(format!("pool1 {} leaves no samples of {}", c.pool1, self.time_steps));
            }
            if c.sep_kernel > t1 {
                return invalid(format!("sep_kernel {} exceeds pooled length {t1}", c.sep_kernel));
            }
            if t1 / c.pool2 == 0 {
                return invalid(format!("pool2 {} leaves no samples of {t1}", c.pool2));
            }
        }
        Ok(())
    }

    /// Pooled lengths after the first and second pooling stages.
    pub fn pooled_lengths(&self) -> (usize, usize) {
        let t1 = self.time_steps / self.conv.pool1;
        (t1, t1 / self.conv.pool2)
    }

    /// Name, shape, fan-in and fan-out of every tensor, in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let d = self.embed_dim;
        match self.kind {
            ArchitectureKind::Linear => {
                let input = self.time_steps * self.channels;
                vec![
                    TensorSpec::weight("dense.weight", vec![d, input], input, d),
                    TensorSpec::bias("dense.bias", d),
                ]
            }
            ArchitectureKind::MiniConv => {
                let c = &self.conv;
                let g = c.f1 * c.depth_mult;
                let (_, t2) = self.pooled_lengths();
                let flat = c.f2 * t2;
                vec![
                    TensorSpec::weight("temporal.weight", vec![c.f1, c.temporal_kernel], c.temporal_kernel, c.f1 * c.temporal_kernel),
                    TensorSpec::weight("spatial.weight", vec![g, self.channels], self.channels, g * self.channels),
                    TensorSpec::bias("spatial.bias", g),
                    TensorSpec::weight("separable.depthwise", vec![g, c.sep_kernel], c.sep_kernel, g * c.sep_kernel),
                    TensorSpec::weight("separable.pointwise", vec![c.f2, g], g, c.f2),
                    TensorSpec::bias("separable.bias", c.f2),
                    TensorSpec::weight("dense.weight", vec![d, flat], flat, d),
                    TensorSpec::bias("dense.bias", d),
                ]
            }
        }
    }

    /// Total number of scalar parameters.
    ///
    /// `Linear`: `d*T*C + d`. `MiniConv` with `G = f1*depth_mult` and
    /// `T2 = (T / pool1) / pool2`:
    /// `f1*temporal_kernel + G*C + G + G*sep_kernel + f2*G + f2 + d*f2*T2 + d`.
    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

impl TensorSpec {
    fn weight(name: &'static str, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        Self { name, shape, fan_in, fan_out, is_bias: false }
    }

    fn bias(name: &'static str, len: usize) -> Self {
        Self { name, shape: vec![len], fan_in: 0, fan_out: 0, is_bias: true }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Per-tensor gradients, parallel to [`EmbedderParams::tensors`].
pub type Gradients = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    arch: ArchitectureSpec,
    tensors: Vec<Tensor>,
}

impl EmbedderParams {
    /// All-zero parameters of the given architecture.
    pub fn zeros(arch: &ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .layout()
            .into_iter()
            .map(|t| Tensor {
                name: t.name.to_owned(),
                data: vec![0.0; t.len()],
                shape: t.shape,
            })
            .collect();
        Ok(Self { arch: *arch, tensors })
    }

    /// Builds parameters from flat per-tensor data in storage order.
    pub fn from_data(arch: &ArchitectureSpec, data: Vec<Vec<f64>>) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        if data.len() != params.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors supplied, architecture has {}",
                data.len(),
                params.tensors.len()
            )));
        }
        for (tensor, values) in params.tensors.iter_mut().zip(data) {
            if values.len() != tensor.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} values for shape {:?}",
                    tensor.name,
                    values.len(),
                    tensor.shape
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateData(format!("{} has non-finite entries", tensor.name)));
            }
            tensor.data = values;
        }
        Ok(params)
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    /// SHA-256 over the architecture and every parameter's f64 bit pattern.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}", self.arch).as_bytes());
        for t in &self.tensors {
            hasher.update(t.name.as_bytes());
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases;
/// tensors are filled in storage order from one stream seeded with `seed`.
pub fn init_params(arch: &ArchitectureSpec, seed: u64) -> Result<EmbedderParams> {
    let mut params = EmbedderParams::zeros(arch)?;
    let mut rng = SplitMix64::new(seed);
    for (tensor, spec) in params.tensors.iter_mut().zip(arch.layout()) {
        if spec.is_bias {
            continue;
        }
        let limit = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
        for v in &mut tensor.data {
            *v = rng.uniform(-limit, limit);
        }
    }
    Ok(params)
}

fn check_trial(params: &EmbedderParams, trial: &Trial) -> Result<()> {
    let expected = (params.arch.time_steps, params.arch.channels);
    if trial.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "trial {} has shape {:?}, embedder expects {:?}",
            trial.trial_id,
            trial.shape(),
            expected
        )));
    }
    Ok(())
}

/// Embedding of one trial.
pub fn forward(params: &EmbedderParams, trial: &Trial) -> Result<Vec<f64>> {
    check_trial(params, trial)?;
    Ok(network::forward(params, trial.samples()).0)
}

/// Embeddings of many trials, one row per trial.
pub fn forward_batch(params: &EmbedderParams, trials: &[&Trial]) -> Result<Vec<Vec<f64>>> {
    trials.iter().map(|t| forward(params, t)).collect()
}

/// Product-ladder loss of the embedded batch and its exact gradient with
/// respect to every parameter.
pub fn loss_gradient(
    params: &EmbedderParams,
    trials: &[&Trial],
    labels: &[LabelVector],
    config: &LossConfig,
) -> Result<(f64, Gradients)> {
    if trials.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut embeddings = Vec::with_capacity(trials.len());
    let mut caches = Vec::with_capacity(trials.len());
    for trial in trials {
        check_trial(params, trial)?;
        let (out, cache) = network::forward(params, trial.samples());
        embeddings.push(out);
        caches.push(cache);
    }
    let result = product_ladder_loss_with_grad(&embeddings, labels, config)?;
    let mut grads = params.zero_grads();
    for ((trial, cache), g_out) in trials.iter().zip(&caches).zip(&result.grad) {
        if g_out.iter().any(|&g| g != 0.0) {
            network::backward(params, trial.samples(), cache, g_out, &mut grads);
        }
    }
    Ok((result.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{builtin_config, BuiltinConfig, LossComponent};

    fn random_trial(rng: &mut SplitMix64, t: usize, c: usize, id: u64) -> Trial {
        Trial::new((0..t * c).map(|_| rng.next_gaussian()).collect(), t, c, id, id).unwrap()
    }

    fn small_conv() -> ConvSettings {
        ConvSettings { f1: 3, depth_mult: 2, f2: 4, temporal_kernel: 5, sep_kernel: 3, pool1: 2, pool2: 2 }
    }

    #[test]
    fn linear_layout() {
        let params = init_params(&ArchitectureSpec::linear(4, 2, 8), 1).unwrap();
        assert_eq!(params.tensors().len(), 2);
        assert_eq!(params.tensors()[0].shape, vec![8, 8]);
        assert_eq!(params.tensors()[1].shape, vec![8]);
        assert!(params.tensors()[1].data.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn miniconv_default_param_count() {
        // Counted by hand for input 128x8, d=8, defaults: T1=32, T2=4, G=16.
        // temporal 8*32=256; spatial 16*8+16=144; depthwise 16*16=256;
        // pointwise 16*16+16=272; dense 8*(16*4)+8=520.
        let arch = ArchitectureSpec::miniconv(128, 8, 8, ConvSettings::default());
        assert_eq!(arch.param_count(), 1448);
        assert_eq!(init_params(&arch, 0).unwrap().param_count(), 1448);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = ArchitectureSpec::miniconv(64, 4, 8, small_conv());
        let a = init_params(&arch, 5).unwrap();
        assert_eq!(a, init_params(&arch, 5).unwrap());
        assert_ne!(a, init_params(&arch, 6).unwrap());
        for (t, spec) in a.tensors().iter().zip(arch.layout()) {
            let limit = (6.0 / (spec.fan_in + spec.fan_out).max(1) as f64).sqrt();
            assert!(t.data.iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn invalid_architectures() {
        assert!(ArchitectureSpec::linear(4, 2, 0).validate().is_err());
        let mut conv = small_conv();
        conv.temporal_kernel = 100;
        assert!(ArchitectureSpec::miniconv(64, 4, 8, conv).validate().is_err());
        let mut conv = small_conv();
        conv.pool1 = 128;
        assert!(ArchitectureSpec::miniconv(64, 4, 8, conv).validate().is_err());
    }

    #[test]
    fn linear_identity_rows() {
        let arch = ArchitectureSpec::linear(3, 2, 4);
        let mut w = vec![0.0; 4 * 6];
        for i in 0..4 {
            w[i * 6 + i] = 1.0;
        }
        let params = EmbedderParams::from_data(&arch, vec![w, vec![0.0; 4]]).unwrap();
        let trial = Trial::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, 0, 0).unwrap();
        assert_eq!(forward(&params, &trial).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let mut rng = SplitMix64::new(1);
        for arch in [ArchitectureSpec::linear(16, 3, 4), ArchitectureSpec::miniconv(16, 3, 4, small_conv())] {
            let params = EmbedderParams::zeros(&arch).unwrap();
            let trial = random_trial(&mut rng, 16, 3, 0);
            assert!(forward(&params, &trial).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_is_pure_and_finite() {
        let mut rng = SplitMix64::new(2);
        let arch = ArchitectureSpec::miniconv(32, 4, 6, small_conv());
        let params = init_params(&arch, 9).unwrap();
        let trial = random_trial(&mut rng, 32, 4, 0);
        let a = forward(&params, &trial).unwrap();
        let b = forward(&params, &trial).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let params = init_params(&ArchitectureSpec::linear(4, 2, 2), 0).unwrap();
        let trial = Trial::new(vec![0.0; 6], 3, 2, 0, 0).unwrap();
        assert!(matches!(forward(&params, &trial), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn linear_is_positively_homogeneous_without_bias() {
        let mut rng = SplitMix64::new(4);
        let params = init_params(&ArchitectureSpec::linear(5, 3, 4), 3).unwrap();
        let trial = random_trial(&mut rng, 5, 3, 0);
        let double = trial.scaled(2.0);
        let a = forward(&params, &trial).unwrap();
        let b = forward(&params, &double).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn batch_matches_single_calls_and_permutes() {
        let mut rng = SplitMix64::new(8);
        let arch = ArchitectureSpec::miniconv(32, 3, 4, small_conv());
        let params = init_params(&arch, 1).unwrap();
        let trials: Vec<Trial> = (0..16).map(|i| random_trial(&mut rng, 32, 3, i)).collect();
        let refs: Vec<&Trial> = trials.iter().collect();
        let batch = forward_batch(&params, &refs).unwrap();
        for (row, t) in batch.iter().zip(&trials) {
            assert_eq!(row, &forward(&params, t).unwrap());
        }
        let reversed: Vec<&Trial> = trials.iter().rev().collect();
        let rb = forward_batch(&params, &reversed).unwrap();
        assert_eq!(rb, batch.iter().rev().cloned().collect::<Vec<_>>());
        assert_eq!(forward_batch(&params, &refs[..1]).unwrap()[0], batch[0]);
    }

    #[test]
    fn satisfied_batch_has_zero_loss_and_gradient() {
        // Linear identity embedder on trials that already satisfy the margins.
        let arch = ArchitectureSpec::linear(1, 2, 2);
        let params = EmbedderParams::from_data(&arch, vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let points = [(0.0, 0.0), (0.0, 0.1), (5.0, 0.0), (5.0, 0.1)];
        let trials: Vec<Trial> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Trial::new(vec![x, y], 1, 2, i as u64, 0).unwrap())
            .collect();
        let refs: Vec<&Trial> = trials.iter().collect();
        let labels: Vec<LabelVector> = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().map(|&(s, c)| LabelVector(vec![s, c])).collect();
        let (loss, grads) = loss_gradient(&params, &refs, &labels, &builtin_config(BuiltinConfig::A)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_margin_loss_matches_hand_sum() {
        let mut rng = SplitMix64::new(10);
        let arch = ArchitectureSpec::linear(4, 2, 3);
        let params = init_params(&arch, 2).unwrap();
        let trials: Vec<Trial> = (0..6).map(|i| random_trial(&mut rng, 4, 2, i)).collect();
        let refs: Vec<&Trial> = trials.iter().collect();
        let labels: Vec<LabelVector> = [0, 0, 1, 1, 2, 2].iter().map(|&c| LabelVector(vec![c])).collect();
        let config = crate::losses::LossConfig::new(vec![LossComponent::new(0.0, 2.0, "1", "0").unwrap()]).unwrap();
        let (loss, _) = loss_gradient(&params, &refs, &labels, &config).unwrap();
        let emb = forward_batch(&params, &refs).unwrap();
        let d = |i: usize, j: usize| emb[i].iter().zip(&emb[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut hand = 0.0;
        for a in 0..6 {
            for p in 0..6 {
                for q in 0..6 {
                    if a != p && labels[a] == labels[p] && labels[a] != labels[q] {
                        hand += 2.0 * (d(a, p) - d(a, q)).max(0.0);
                    }
                }
            }
        }
        assert!(hand > 0.0);
        assert!((loss - hand).abs() < 1e-12 * hand);
    }
}

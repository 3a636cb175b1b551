//! Trained embedder plus the preprocessing it expects, and its on-disk form.
//!
//! A checkpoint directory holds `meta.csv` (architecture fields, the
//! standardization scale and the baseline mode, one row) and `params.bin`
//! (every tensor in storage order, little-endian float32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{forward, ArchitectureKind, ArchitectureSpec, ConvSettings, EmbedderParams};
use crate::dataio::{baseline_correct_with, BaselineMode, Dataset, Trial};
use crate::{Error, Result};

pub const CHECKPOINT_META: &str = "meta.csv";
pub const CHECKPOINT_PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EmbedderParams,
    /// Trials are divided by this after baseline correction.
    pub scale: f64,
    pub baseline: BaselineMode,
}

impl Checkpoint {
    pub fn preprocess(&self, trial: &Trial) -> Trial {
        baseline_correct_with(trial, self.baseline).scaled(1.0 / self.scale)
    }

    /// Embedding of a raw (unpreprocessed) trial.
    pub fn embed(&self, trial: &Trial) -> Result<Vec<f64>> {
        forward(&self.params, &self.preprocess(trial))
    }

    pub fn embed_indices(&self, dataset: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices.iter().map(|&i| self.embed(dataset.trial(i))).collect()
    }

    pub fn embed_all(&self, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
        dataset.trials().iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    kind: String,
    time_steps: usize,
    channels: usize,
    embed_dim: usize,
    f1: usize,
    depth_mult: usize,
    f2: usize,
    temporal_kernel: usize,
    sep_kernel: usize,
    pool1: usize,
    pool2: usize,
    scale: f64,
    baseline: String,
}

fn baseline_name(mode: BaselineMode) -> &'static str {
    match mode {
        BaselineMode::Whole => "whole",
        BaselineMode::PerChannel => "per_channel",
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arch = ckpt.params.arch();
    let meta_path = dir.join(CHECKPOINT_META);
    let mut writer = csv::Writer::from_path(&meta_path).map_err(|e| Error::format(&meta_path, None, e.to_string()))?;
    writer
        .serialize(MetaRow {
            kind: arch.kind.as_str().into(),
            time_steps: arch.time_steps,
            channels: arch.channels,
            embed_dim: arch.embed_dim,
            f1: arch.conv.f1,
            depth_mult: arch.conv.depth_mult,
            f2: arch.conv.f2,
            temporal_kernel: arch.conv.temporal_kernel,
            sep_kernel: arch.conv.sep_kernel,
            pool1: arch.conv.pool1,
            pool2: arch.conv.pool2,
            scale: ckpt.scale,
            baseline: baseline_name(ckpt.baseline).into(),
        })
        .map_err(|e| Error::format(&meta_path, None, e.to_string()))?;
    writer.flush().map_err(|e| Error::io(&meta_path, e))?;

    let mut blob = Vec::with_capacity(ckpt.params.param_count() * 4);
    for t in ckpt.params.tensors() {
        for &v in &t.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let params_path = dir.join(CHECKPOINT_PARAMS);
    fs::write(&params_path, blob).map_err(|e| Error::io(&params_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join(CHECKPOINT_META);
    let mut reader = csv::Reader::from_path(&meta_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&meta_path, io),
        kind => Error::format(&meta_path, None, format!("{kind:?}")),
    })?;
    let meta: MetaRow = match reader.deserialize().next() {
        Some(row) => row.map_err(|e: csv::Error| {
            let loc = e.position().map(|p| format!("line {}", p.line()));
            Error::format(&meta_path, loc, e.to_string())
        })?,
        None => return Err(Error::format(&meta_path, None, "missing data row")),
    };
    let bad = |msg: String| Error::format(&meta_path, Some("line 2".into()), msg);
    let kind: ArchitectureKind = meta.kind.parse().map_err(|e: Error| bad(e.to_string()))?;
    let baseline = match meta.baseline.as_str() {
        "whole" => BaselineMode::Whole,
        "per_channel" => BaselineMode::PerChannel,
        other => return Err(bad(format!("unknown baseline mode {other:?}"))),
    };
    if !(meta.scale.is_finite() && meta.scale > 0.0) {
        return Err(bad(format!("scale must be positive, got {}", meta.scale)));
    }
    let arch = ArchitectureSpec {
        kind,
        time_steps: meta.time_steps,
        channels: meta.channels,
        embed_dim: meta.embed_dim,
        conv: ConvSettings {
            f1: meta.f1,
            depth_mult: meta.depth_mult,
            f2: meta.f2,
            temporal_kernel: meta.temporal_kernel,
            sep_kernel: meta.sep_kernel,
            pool1: meta.pool1,
            pool2: meta.pool2,
        },
    };
    arch.validate().map_err(|e| bad(e.to_string()))?;

    let params_path = dir.join(CHECKPOINT_PARAMS);
    let blob = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let expected = arch.param_count() * 4;
    if blob.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes, architecture needs {expected}",
            params_path.display(),
            blob.len()
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let data = arch
        .layout()
        .iter()
        .map(|t| values.by_ref().take(t.len()).collect())
        .collect();
    Ok(Checkpoint {
        params: EmbedderParams::from_data(&arch, data)?,
        scale: meta.scale,
        baseline,
    })
}

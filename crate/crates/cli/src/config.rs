//! Flat `key = value` run configuration.
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! `--set key=value` flags. Repeated `component` lines build a custom loss;
//! any `--set component=...` replaces the file's components. Path values in
//! the file are relative to the file's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ladder_core::dataio::{BaselineMode, SyntheticSpec};
use ladder_core::embedder::{AdamWConfig, ArchitectureKind, ArchitectureSpec, ConvSettings, LRSchedule, TrainSpec};
use ladder_core::losses::{builtin_config, BuiltinConfig, LossComponent, LossConfig, Reduction};
use ladder_core::mining::{BatchSize, BatchSpec};
use ladder_core::scenarios::{ClassifierKind, Scenario, ScenarioSpec};

use crate::CliError;

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, default, help }
}

pub const KEYS: &[KeySpec] = &[
    key("seed", "0", "master seed for data generation and training"),
    key("data", "", "dataset directory"),
    key("out", "", "output directory (or file for embed)"),
    key("ckpt", "", "checkpoint directory"),
    key("n_subjects", "2", "synthetic: number of subjects"),
    key("n_classes", "2", "synthetic: number of classes"),
    key("trials_per_cell_train", "10", "synthetic: TRAIN trials per (subject, class)"),
    key("trials_per_cell_test", "5", "synthetic: TEST trials per (subject, class)"),
    key("time_steps", "64", "synthetic: samples per trial"),
    key("channels", "4", "synthetic: channels per trial"),
    key("class_separation", "4.0", "synthetic: class template amplitude"),
    key("subject_separation", "4.0", "synthetic: subject template amplitude"),
    key("noise_sd", "0.1", "synthetic: Gaussian noise sd"),
    key("arch", "miniconv", "embedder: linear | miniconv"),
    key("embed_dim", "8", "embedder: output dimension"),
    key("f1", "8", "miniconv: temporal filters"),
    key("depth_mult", "2", "miniconv: spatial depth multiplier"),
    key("f2", "16", "miniconv: pointwise filters"),
    key("temporal_kernel", "32", "miniconv: temporal kernel length"),
    key("sep_kernel", "16", "miniconv: separable kernel length"),
    key("pool1", "4", "miniconv: first pooling factor"),
    key("pool2", "8", "miniconv: second pooling factor"),
    key("loss_config", "a", "loss: a | b | c | d | custom (custom needs component lines)"),
    key("component", "", "loss: \"margin,weight,positive,negative\" e.g. \"0.2,1,11,01\"; repeatable"),
    key("margin", "", "loss: override every component's margin"),
    key("reduction", "sum", "loss: sum | mean_active"),
    key("steps", "200", "training: optimizer steps"),
    key("batch_size", "", "training: total batch size (divisible by the number of label combinations)"),
    key("batch_per_combination", "4", "training: trials per label combination (used when batch_size is empty)"),
    key("max_lr", "0.001", "training: 1cycle peak learning rate"),
    key("pct_start", "0.3", "training: fraction of steps spent warming up"),
    key("div", "25", "training: initial lr = max_lr / div"),
    key("final_div", "10000", "training: final lr = max_lr / final_div"),
    key("beta1", "0.9", "AdamW first-moment decay"),
    key("beta2", "0.999", "AdamW second-moment decay"),
    key("eps", "1e-8", "AdamW epsilon"),
    key("weight_decay", "0.01", "AdamW decoupled weight decay"),
    key("baseline", "whole", "preprocessing: whole | per_channel"),
    key("scenario", "within_subject", "evaluation: within_subject | complete_loso | partial_loso"),
    key("classifier", "logreg", "evaluation: logreg | one_nn"),
    key("logreg_c", "1.0", "logistic regression inverse regularization"),
    key("logreg_max_iter", "100", "logistic regression iteration cap"),
    key("samples_per_class", "all", "partial LOSO: calibration trials per class, or all"),
    key("m_values", "1,2,3,4,5", "curve: ascending calibration sizes"),
    key("jobs", "1", "per-subject worker threads for eval and curve"),
    key("alpha", "0.05", "stats: family-wise significance level"),
];

pub const PATH_KEYS: &[&str] = &["data", "out", "ckpt"];

pub fn keys_help() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key = value; default in brackets):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { String::new() } else { format!(" [{}]", k.default) };
        let _ = writeln!(out, "  {:width$}  {}{}", k.name, k.help, default);
    }
    out
}

fn known(name: &str) -> bool {
    KEYS.iter().any(|k| k.name == name)
}

fn unquote(value: &str) -> &str {
    let v = value.trim();
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    components: Vec<String>,
    /// Path overrides from `--set`, relative to the working directory.
    cwd_paths: BTreeMap<String, PathBuf>,
    /// Directory the file's relative paths are resolved against.
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg = RunConfig {
            base_dir: base_dir.to_path_buf(),
            ..Default::default()
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = || format!("{origin}, line {}", n + 1);
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("{}: expected `key = value`, got {line:?}", at())));
            };
            let k = k.trim();
            if !known(k) {
                return Err(CliError::Usage(format!("{}: unknown config key `{k}`", at())));
            }
            let v = unquote(v).to_owned();
            if k == "component" {
                cfg.components.push(v);
            } else if cfg.values.insert(k.to_owned(), v).is_some() {
                return Err(CliError::Usage(format!("{}: config key `{k}` given twice", at())));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    /// Applies `key=value` overrides. Path values given here are taken as is.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        let mut replaced_components = false;
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                return Err(CliError::Usage(format!("--set expects key=value, got {s:?}")));
            };
            let k = k.trim();
            if !known(k) {
                return Err(CliError::Usage(format!("unknown config key `{k}` in --set")));
            }
            let v = unquote(v).to_owned();
            if k == "component" {
                if !replaced_components {
                    self.components.clear();
                    replaced_components = true;
                }
                self.components.push(v);
            } else {
                if PATH_KEYS.contains(&k) {
                    self.cwd_paths.insert(k.to_owned(), PathBuf::from(v));
                } else {
                    self.values.insert(k.to_owned(), v);
                }
            }
        }
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        debug_assert!(known(name), "undeclared key {name}");
        self.values
            .get(name)
            .map(String::as_str)
            .or_else(|| KEYS.iter().find(|k| k.name == name).map(|k| k.default))
            .unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(name);
        raw.parse::<T>()
            .map_err(|e| CliError::Usage(format!("config key `{name}`: cannot parse {raw:?}: {e}")))
    }

    /// A path from the config (relative to its directory) unless a flag
    /// (relative to the working directory) overrides it.
    pub fn path(&self, name: &str, flag: Option<&Path>) -> Option<PathBuf> {
        if let Some(p) = flag.or(self.cwd_paths.get(name).map(PathBuf::as_path)) {
            return Some(p.to_path_buf());
        }
        let raw = self.raw(name);
        (!raw.is_empty()).then(|| self.base_dir.join(raw))
    }

    pub fn require_path(&self, name: &str, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        self.path(name, flag)
            .ok_or_else(|| CliError::Usage(format!("missing `{name}`: pass --{name} or set `{name}` in the config")))
    }

    pub fn synthetic(&self) -> Result<SyntheticSpec, CliError> {
        Ok(SyntheticSpec {
            n_subjects: self.get("n_subjects")?,
            n_classes: self.get("n_classes")?,
            trials_per_cell_train: self.get("trials_per_cell_train")?,
            trials_per_cell_test: self.get("trials_per_cell_test")?,
            time_steps: self.get("time_steps")?,
            channels: self.get("channels")?,
            class_separation: self.get("class_separation")?,
            subject_separation: self.get("subject_separation")?,
            noise_sd: self.get("noise_sd")?,
            seed: self.get("seed")?,
        })
    }

    /// Architecture for trials of the given shape.
    pub fn arch(&self, time_steps: usize, channels: usize) -> Result<ArchitectureSpec, CliError> {
        let kind: ArchitectureKind = self.get("arch")?;
        let conv = ConvSettings {
            f1: self.get("f1")?,
            depth_mult: self.get("depth_mult")?,
            f2: self.get("f2")?,
            temporal_kernel: self.get("temporal_kernel")?,
            sep_kernel: self.get("sep_kernel")?,
            pool1: self.get("pool1")?,
            pool2: self.get("pool2")?,
        };
        let arch = ArchitectureSpec {
            kind,
            time_steps,
            channels,
            embed_dim: self.get("embed_dim")?,
            conv,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Loss configuration and its name for result tables.
    pub fn loss(&self) -> Result<(String, LossConfig), CliError> {
        let name = self.raw("loss_config").to_ascii_lowercase();
        let mut config = match (name.as_str(), self.components.is_empty()) {
            ("custom", false) => {
                let parsed = self
                    .components
                    .iter()
                    .map(|c| c.parse::<LossComponent>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Usage(format!("config key `component`: {e}")))?;
                LossConfig::new(parsed)?
            }
            ("custom", true) => {
                return Err(CliError::Usage("loss_config = custom needs at least one `component` line".into()))
            }
            (_, false) => {
                return Err(CliError::Usage(format!(
                    "`component` lines need loss_config = custom (got loss_config = {name})"
                )))
            }
            (builtin, true) => builtin_config(
                builtin
                    .parse::<BuiltinConfig>()
                    .map_err(|e| CliError::Usage(format!("config key `loss_config`: {e}")))?,
            ),
        };
        if !self.raw("margin").is_empty() {
            config = config.with_margin(self.get("margin")?)?;
        }
        config.reduction = match self.raw("reduction") {
            "sum" => Reduction::Sum,
            "mean_active" => Reduction::MeanActive,
            other => return Err(CliError::Usage(format!("config key `reduction`: unknown value {other:?}"))),
        };
        Ok((name, config))
    }

    pub fn batch(&self) -> Result<BatchSpec, CliError> {
        let size = if self.raw("batch_size").is_empty() {
            BatchSize::PerCombination(self.get("batch_per_combination")?)
        } else {
            BatchSize::Total(self.get("batch_size")?)
        };
        Ok(BatchSpec {
            size,
            allowed_combinations: Vec::new(),
        })
    }

    pub fn train(&self, time_steps: usize, channels: usize) -> Result<TrainSpec, CliError> {
        Ok(TrainSpec {
            loss: self.loss()?.1,
            batch: self.batch()?,
            steps: self.get("steps")?,
            seed: self.get("seed")?,
            arch: self.arch(time_steps, channels)?,
            schedule: LRSchedule {
                max_lr: self.get("max_lr")?,
                total_steps: self.get("steps")?,
                pct_start: self.get("pct_start")?,
                div: self.get("div")?,
                final_div: self.get("final_div")?,
            },
            optimizer: AdamWConfig {
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("eps")?,
                weight_decay: self.get("weight_decay")?,
            },
        })
    }

    pub fn baseline(&self) -> Result<BaselineMode, CliError> {
        match self.raw("baseline") {
            "whole" => Ok(BaselineMode::Whole),
            "per_channel" => Ok(BaselineMode::PerChannel),
            other => Err(CliError::Usage(format!("config key `baseline`: unknown value {other:?}"))),
        }
    }

    pub fn scenario(&self, time_steps: usize, channels: usize) -> Result<ScenarioSpec, CliError> {
        let scenario: Scenario = self.get("scenario")?;
        let classifier: ClassifierKind = self.get("classifier")?;
        let mut spec = ScenarioSpec::new(scenario, self.loss()?.0, self.train(time_steps, channels)?, classifier, self.get("seed")?);
        spec.logreg_c = self.get("logreg_c")?;
        spec.logreg_max_iter = self.get("logreg_max_iter")?;
        spec.baseline = self.baseline()?;
        spec.jobs = self.get("jobs")?;
        if spec.jobs == 0 {
            return Err(CliError::Usage("config key `jobs` must be at least 1".into()));
        }
        Ok(spec)
    }

    pub fn samples_per_class(&self) -> Result<Option<usize>, CliError> {
        match self.raw("samples_per_class") {
            "all" | "" => Ok(None),
            _ => self.get("samples_per_class").map(Some),
        }
    }

    pub fn m_values(&self) -> Result<Vec<usize>, CliError> {
        self.raw("m_values")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::Usage(format!("config key `m_values`: {s:?}: {e}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_components() {
        let text = "# run\nseed = 7\nloss_config = custom\ncomponent = \"0.2,1,11,01\"\ncomponent = \"0.2,3,01,10\"\n\ndata = ds\n";
        let cfg = RunConfig::parse(text, "t.cfg", Path::new("/base")).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 7);
        let (name, loss) = cfg.loss().unwrap();
        assert_eq!(name, "custom");
        assert_eq!(loss.weights(), vec![1.0, 3.0]);
        assert_eq!(cfg.path("data", None).unwrap(), PathBuf::from("/base/ds"));
        assert_eq!(cfg.path("data", Some(Path::new("x"))).unwrap(), PathBuf::from("x"));
    }

    #[test]
    fn unknown_key_named() {
        let err = RunConfig::parse("bogus_key = 1\n", "t.cfg", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let mut cfg = RunConfig::default();
        let err = cfg.apply_overrides(&["nope=2".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse("steps = 5\nout = res\n", "t.cfg", Path::new("/cfg")).unwrap();
        cfg.apply_overrides(&["steps=9".into(), "out=here".into()]).unwrap();
        assert_eq!(cfg.get::<usize>("steps").unwrap(), 9);
        assert_eq!(cfg.path("out", None).unwrap(), PathBuf::from("here"));
    }

    #[test]
    fn defaults_build_every_spec() {
        let cfg = RunConfig::default();
        cfg.synthetic().unwrap().validate().unwrap();
        let spec = cfg.scenario(64, 4).unwrap();
        assert_eq!(spec.config_name, "a");
        assert_eq!(cfg.samples_per_class().unwrap(), None);
        assert_eq!(cfg.m_values().unwrap(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for k in KEYS {
            assert!(help.contains(k.name));
        }
    }
}

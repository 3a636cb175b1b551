//! `ladder`: synthetic data, embedder training, scenario evaluation,
//! few-shot curves, paired statistics and embedding export.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! format error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ladder_core::classify::pca_project;
use ladder_core::dataio::{generate_synthetic, load_dataset, save_dataset, Dataset};
use ladder_core::embedder::{load_checkpoint, save_checkpoint};
use ladder_core::scenarios::{few_shot_curve, mean_and_se, run_scenario, run_with_checkpoint, train_on, CurvePoint, Scenario, SubjectScore};
use ladder_core::stats::{holm_bonferroni, pair_by_subject, wilcoxon_signed_rank, PValueMethod};

use config::{keys_help, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ladder_core::Error),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(ladder_core::Error::InvalidConfig(_) | ladder_core::Error::OutOfRange(_)) => 1,
            CliError::Core(_) | CliError::Output { .. } => 2,
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "ladder", version, about = "Multi-label metric learning for multichannel trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable. Takes precedence over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Projection {
    Pca2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one embedder on the TRAIN trials of every subject.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a scenario per subject (trains embedders unless --ckpt is given).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Partial-LOSO accuracy against calibration trials per class.
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Paired Wilcoxon tests between score files with Holm correction.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Score CSV written by `eval`; give at least two.
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// JSON report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export embeddings of every trial as CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Output CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append projection columns.
        #[arg(long, value_enum)]
        project: Option<Projection>,
    },
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.set)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn m_label(m: Option<usize>) -> String {
    m.map_or_else(|| "all".to_owned(), |m| m.to_string())
}

const SCORE_HEADER: [&str; 6] = ["subject", "scenario", "config", "classifier", "m", "accuracy"];

fn score_rows(scores: &[SubjectScore]) -> Vec<Vec<String>> {
    scores
        .iter()
        .map(|s| {
            vec![
                s.subject.to_string(),
                s.scenario.to_string(),
                s.config.clone(),
                s.classifier.to_string(),
                m_label(s.m),
                s.accuracy.to_string(),
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct ScoreReport<'a> {
    scenario: Scenario,
    config: &'a str,
    classifier: &'a str,
    n_subjects: usize,
    mean_accuracy: f64,
    std_error: f64,
    subjects: &'a [SubjectScore],
}

fn report<'a>(scores: &'a [SubjectScore], scenario: Scenario, config: &'a str, classifier: &'a str) -> ScoreReport<'a> {
    let (mean, se) = mean_and_se(&scores.iter().map(|s| s.accuracy).collect::<Vec<_>>());
    ScoreReport {
        scenario,
        config,
        classifier,
        n_subjects: scores.len(),
        mean_accuracy: mean,
        std_error: se,
        subjects: scores,
    }
}

fn load_data(cfg: &RunConfig, flag: Option<&Path>) -> CliResult<Dataset> {
    let dir = cfg.require_path("data", flag)?;
    let ds = load_dataset(&dir)?;
    log::info!("loaded {} trials from {}", ds.len(), dir.display());
    Ok(ds)
}

fn cmd_synth(common: &Common, out: Option<&Path>) -> CliResult {
    let cfg = load_config(common)?;
    let out = cfg.require_path("out", out)?;
    let spec = cfg.synthetic()?;
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &out)?;
    log::info!("wrote {} trials to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_train(common: &Common, data: Option<&Path>, out: Option<&Path>) -> CliResult {
    let cfg = load_config(common)?;
    let ds = load_data(&cfg, data)?;
    let out = cfg.require_path("out", out)?;
    let (t, c) = ds.shape();
    let spec = cfg.scenario(t, c)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let (ckpt, trace) = train_on(&ds, &all, &spec, &spec.train)?;
    save_checkpoint(&ckpt, &out)?;
    let rows: Vec<Vec<String>> = trace
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.to_string()])
        .collect();
    write_csv(&out.join("loss_trace.csv"), &strings(&["step", "loss"]), &rows)?;
    log::info!("checkpoint {} written to {}", ckpt.params.digest(), out.display());
    Ok(())
}

fn cmd_eval(common: &Common, data: Option<&Path>, ckpt: Option<&Path>, out: Option<&Path>, jobs: Option<usize>) -> CliResult {
    let cfg = load_config(common)?;
    let ds = load_data(&cfg, data)?;
    let out = cfg.require_path("out", out)?;
    let (t, c) = ds.shape();
    let mut spec = cfg.scenario(t, c)?;
    if let Some(j) = jobs {
        spec.jobs = j.max(1);
    }
    let m = cfg.samples_per_class()?;
    let scores = match cfg.path("ckpt", ckpt) {
        Some(dir) => run_with_checkpoint(&ds, &spec, &load_checkpoint(&dir)?, m)?,
        None => run_scenario(&ds, &spec, m)?,
    };
    create_dir(&out)?;
    write_csv(&out.join("scores.csv"), &strings(&SCORE_HEADER), &score_rows(&scores))?;
    let config_name = scores.first().map_or(spec.config_name.as_str(), |s| s.config.as_str());
    write_json(
        &out.join("scores.json"),
        &report(&scores, spec.scenario, config_name, spec.classifier.as_str()),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CurveReport<'a> {
    config: &'a str,
    classifier: &'a str,
    points: &'a [CurvePoint],
    subjects: Vec<&'a SubjectScore>,
}

fn cmd_curve(common: &Common, data: Option<&Path>, out: Option<&Path>, jobs: Option<usize>) -> CliResult {
    let cfg = load_config(common)?;
    let ds = load_data(&cfg, data)?;
    let out = cfg.require_path("out", out)?;
    let (t, c) = ds.shape();
    let mut spec = cfg.scenario(t, c)?;
    spec.scenario = Scenario::PartialLoso;
    if let Some(j) = jobs {
        spec.jobs = j.max(1);
    }
    let curve = few_shot_curve(&ds, &spec, &cfg.m_values()?)?;
    create_dir(&out)?;
    let n_subjects = curve.scores.first().map_or(0, Vec::len);
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| vec![p.m.to_string(), p.mean.to_string(), p.std_error.to_string(), n_subjects.to_string()])
        .collect();
    write_csv(&out.join("curve.csv"), &strings(&["m", "mean", "std_error", "n_subjects"]), &rows)?;
    let flat: Vec<SubjectScore> = curve.scores.iter().flatten().cloned().collect();
    write_csv(&out.join("curve_scores.csv"), &strings(&SCORE_HEADER), &score_rows(&flat))?;
    write_json(
        &out.join("curve.json"),
        &CurveReport {
            config: &spec.config_name,
            classifier: spec.classifier.as_str(),
            points: &curve.points,
            subjects: curve.scores.iter().flatten().collect(),
        },
    )?;
    Ok(())
}

#[derive(Deserialize)]
struct ScoreRow {
    subject: u32,
    accuracy: f64,
}

fn read_scores(path: &Path) -> CliResult<Vec<(u32, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| score_error(path, e))?;
    reader
        .deserialize::<ScoreRow>()
        .map(|row| row.map(|r| (r.subject, r.accuracy)).map_err(|e| score_error(path, e)))
        .collect()
}

fn score_error(path: &Path, e: csv::Error) -> CliError {
    let location = e.position().map(|p| format!("line {}", p.line()));
    CliError::Core(ladder_core::Error::Format {
        path: path.to_path_buf(),
        location,
        message: e.to_string(),
    })
}

#[derive(Serialize)]
#[serde(untagged)]
enum PValue {
    Value(f64),
    NotApplicable(&'static str),
}

#[derive(Serialize)]
struct Comparison {
    a: String,
    b: String,
    n_subjects: usize,
    mean_a: f64,
    mean_b: f64,
    statistic: Option<f64>,
    w_plus: Option<f64>,
    w_minus: Option<f64>,
    n_nonzero: usize,
    method: Option<PValueMethod>,
    p_value: PValue,
    reject: Option<bool>,
    note: Option<String>,
}

#[derive(Serialize)]
struct StatsReport {
    alpha: f64,
    correction: &'static str,
    comparisons: Vec<Comparison>,
}

fn cmd_stats(common: &Common, files: &[PathBuf], alpha: Option<f64>, out: Option<&Path>) -> CliResult {
    let cfg = load_config(common)?;
    let alpha = match alpha {
        Some(a) => a,
        None => cfg.get("alpha")?,
    };
    if files.len() < 2 {
        return Err(CliError::Usage("stats needs at least two --scores files".into()));
    }
    let tables = files.iter().map(|f| read_scores(f)).collect::<CliResult<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    let mut p_values = Vec::new();
    for i in 0..files.len() {
        for j in i + 1..files.len() {
            let (subjects, xa, xb) = pair_by_subject(&tables[i], &tables[j])?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            let mut cmp = Comparison {
                a: files[i].display().to_string(),
                b: files[j].display().to_string(),
                n_subjects: subjects.len(),
                mean_a: mean(&xa),
                mean_b: mean(&xb),
                statistic: None,
                w_plus: None,
                w_minus: None,
                n_nonzero: 0,
                method: None,
                p_value: PValue::NotApplicable("not-applicable"),
                reject: None,
                note: None,
            };
            match wilcoxon_signed_rank(&xa, &xb) {
                Ok(r) => {
                    cmp.statistic = Some(r.statistic);
                    cmp.w_plus = Some(r.w_plus);
                    cmp.w_minus = Some(r.w_minus);
                    cmp.n_nonzero = r.n;
                    cmp.method = Some(r.method);
                    cmp.p_value = PValue::Value(r.p_value);
                    p_values.push((comparisons.len(), r.p_value));
                }
                Err(e @ ladder_core::Error::AllZeroDifferences) => {
                    eprintln!("note: {} vs {}: {e}; no test performed", cmp.a, cmp.b);
                    cmp.note = Some(e.to_string());
                }
                Err(e) => return Err(e.into()),
            }
            comparisons.push(cmp);
        }
    }
    let decisions = holm_bonferroni(&p_values.iter().map(|p| p.1).collect::<Vec<_>>(), alpha)?;
    for ((idx, _), d) in p_values.iter().zip(decisions) {
        comparisons[*idx].reject = Some(d);
    }
    let report = StatsReport {
        alpha,
        correction: "holm",
        comparisons,
    };
    match out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn cmd_embed(common: &Common, data: Option<&Path>, ckpt: Option<&Path>, out: Option<&Path>, project: Option<Projection>) -> CliResult {
    let cfg = load_config(common)?;
    let ds = load_data(&cfg, data)?;
    let ckpt = load_checkpoint(&cfg.require_path("ckpt", ckpt)?)?;
    let out = cfg.require_path("out", out)?;
    let emb = ckpt.embed_all(&ds)?;
    let projected = match project {
        Some(Projection::Pca2) => Some(pca_project(&emb, 2)?.scores),
        None => None,
    };
    let d = ckpt.params.arch().embed_dim;
    let mut header = vec!["trial_id".to_owned()];
    header.extend((0..d).map(|i| format!("e{i}")));
    header.extend(ds.label_names().iter().cloned());
    if let Some(p) = &projected {
        let cols = p.first().map_or(0, Vec::len);
        header.extend((1..=cols).map(|i| format!("pc{i}")));
    }
    let rows: Vec<Vec<String>> = (0..ds.len())
        .map(|i| {
            let mut row = vec![ds.trial(i).trial_id.to_string()];
            row.extend(emb[i].iter().map(f64::to_string));
            row.extend(ds.label(i).0.iter().map(u32::to_string));
            if let Some(p) = &projected {
                row.extend(p[i].iter().map(f64::to_string));
            }
            row
        })
        .collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(&out, &header, &rows)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth { common, out } => cmd_synth(&common, out.as_deref()),
        Command::Train { common, data, out } => cmd_train(&common, data.as_deref(), out.as_deref()),
        Command::Eval { common, data, ckpt, out, jobs } => cmd_eval(&common, data.as_deref(), ckpt.as_deref(), out.as_deref(), jobs),
        Command::Curve { common, data, out, jobs } => cmd_curve(&common, data.as_deref(), out.as_deref(), jobs),
        Command::Stats { common, scores, alpha, out } => cmd_stats(&common, &scores, alpha, out.as_deref()),
        Command::Embed { common, data, ckpt, out, project } => cmd_embed(&common, data.as_deref(), ckpt.as_deref(), out.as_deref(), project),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let help = keys_help();
    let mut command = Cli::command();
    for name in ["synth", "train", "eval", "curve", "stats", "embed"] {
        command = command.mut_subcommand(name, |sc| sc.after_help(help.clone()));
    }
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

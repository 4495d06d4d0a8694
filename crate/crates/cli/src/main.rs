mod overrides;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use survpfn::bench::{
    continuous_grid, load_dataset, prepare_split, rank_table_csv, run_bench, split, summary_csv,
    survival_csv, BenchManifest, ModelEntry, Predictor,
};
use survpfn::diagnostics::{bands_csv, diagnose_corpus, tasks_csv};
use survpfn::error::io_at;
use survpfn::io::{
    decode_tasks_binary, decode_tasks_jsonl, encode_tasks_binary, encode_tasks_jsonl,
};
use survpfn::metrics::{evaluate, MetricReport};
use survpfn::prior::{generate_corpus, FamilyWeights, PriorConfig, PriorFamily, TaskSample};
use survpfn::rng::{label, RngStream};
use survpfn::trainer::{load_checkpoint, run_training, TrainConfig, Trainer, ValidationSet};
use survpfn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "survpfn",
    version,
    about = "Prior-fitted survival prediction: priors, training, evaluation"
)]
struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true, env = "SURVPFN_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "SURVPFN_OUT", default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true, env = "SURVPFN_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "SURVPFN_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Fixed-order reductions and no wall-clock fields, for byte-identical reruns.
    #[arg(long, global = true, env = "SURVPFN_DETERMINISTIC")]
    deterministic: bool,
    /// More progress output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a task corpus from the prior.
    GenPrior,
    /// Train a model on prior draws.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write test-split survival curves for a dataset.
    Predict {
        #[command(flatten)]
        split: SplitArgs,
        /// Model checkpoint; omit with --km for the Kaplan-Meier baseline.
        #[arg(long, required_unless_present = "km")]
        checkpoint: Option<PathBuf>,
        /// Kaplan-Meier baseline fitted on the training split.
        #[arg(long, conflicts_with = "checkpoint")]
        km: bool,
    },
    /// Score a survival-matrix CSV against a dataset's test split.
    Eval {
        #[command(flatten)]
        split: SplitArgs,
        /// Survival matrix written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// IBS horizon; defaults to the 90th percentile of training times.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run a benchmark manifest and rank the models.
    Bench,
    /// Prior diagnostics for a task corpus.
    Diag {
        /// Corpus file (`.jsonl` or `.bin`); generated from --config otherwise.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Points on the normalized time grid of the curve bands.
        #[arg(long, default_value_t = 51)]
        band_points: usize,
    },
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset CSV with `time` and `event` columns.
    #[arg(long)]
    data: PathBuf,
    /// Split seed; falls back to --seed, then 0.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Fraction of rows in the training split.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CorpusFormat {
    #[default]
    Jsonl,
    Binary,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenPriorConfig {
    seed: u64,
    tasks: usize,
    context_size: usize,
    query_size: usize,
    format: CorpusFormat,
    /// Force a single prior family.
    family: Option<PriorFamily>,
    prior: PriorConfig,
}

impl Default for GenPriorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: 100,
            context_size: 1024,
            query_size: 16,
            format: CorpusFormat::Jsonl,
            family: None,
            prior: PriorConfig::default(),
        }
    }
}

impl GenPriorConfig {
    fn prior(&self) -> PriorConfig {
        let mut p = self.prior.clone();
        if let Some(f) = self.family {
            p.families = FamilyWeights::only(f);
        }
        p
    }

    fn generate(&self) -> Result<Vec<TaskSample>> {
        if self.tasks == 0 || self.context_size == 0 || self.query_size == 0 {
            return Err(Error::Config(
                "tasks, context_size and query_size must be at least 1".into(),
            ));
        }
        generate_corpus(
            &self.prior(),
            self.seed,
            self.tasks,
            self.context_size,
            self.query_size,
        )
    }
}

/// What every run records next to its outputs.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_path: Option<String>,
    config: serde_json::Value,
    env_overrides: Vec<String>,
    out: String,
    seed: Option<u64>,
    workers: usize,
    deterministic: bool,
    verbosity: u8,
    artifacts: BTreeMap<String, String>,
}

struct Run {
    out: PathBuf,
    artifacts: BTreeMap<String, String>,
    verbose: u8,
}

impl Run {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let bytes = bytes.as_ref();
        let path = self.out.join(name);
        fs::write(&path, bytes)?;
        self.artifacts
            .insert(name.to_owned(), hex(&Sha256::digest(bytes)));
        if self.verbose > 0 {
            eprintln!("wrote {}", path.display());
        }
        Ok(path)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let name = path
            .strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.artifacts.insert(name, hex(&Sha256::digest(&bytes)));
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Read `path` (or start from an empty table), apply `SURVPFN_CFG_*`
/// overrides, and deserialize.
fn load_config<T: DeserializeOwned>(path: Option<&Path>) -> Result<(T, Vec<String>)> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let applied = overrides::apply(&mut table, std::env::vars()).map_err(Error::Config)?;
    let name = path.map_or_else(|| "<defaults>".to_owned(), |p| p.display().to_string());
    let cfg = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{name}: {e}")))?;
    Ok((cfg, applied))
}

fn base_dir(path: Option<&Path>) -> PathBuf {
    path.and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn split_seed(args: &SplitArgs, cli: &Cli) -> u64 {
    args.split_seed.or(cli.seed).unwrap_or(0)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn metrics_csv(r: &MetricReport) -> String {
    let mut s = String::from("metric,value\n");
    for name in MetricReport::NAMES {
        s.push_str(&format!(
            "{name},{}\n",
            r.get(name).map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    s
}

fn read_survival_csv(path: &Path) -> Result<(Vec<f64>, Array2<f64>)> {
    let bad = |d: String| Error::Format {
        what: "survival CSV",
        detail: format!("{}: {d}", path.display()),
    };
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(format!("`{s}` is not a number")))
    };
    let grid: Vec<f64> = rd
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(num)
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for v in rec.iter() {
            values.push(num(v)?);
        }
        rows += 1;
    }
    let surv =
        Array2::from_shape_vec((rows, grid.len()), values).map_err(|e| bad(e.to_string()))?;
    Ok((grid, surv))
}

fn run(cli: &Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    fs::create_dir_all(&cli.out)?;
    let mut run = Run {
        out: cli.out.clone(),
        artifacts: BTreeMap::new(),
        verbose: cli.verbose,
    };
    let cfg_path = cli.config.as_deref();
    let (name, config, applied): (&str, serde_json::Value, Vec<String>) = match &cli.command {
        Command::GenPrior => {
            let (mut cfg, applied): (GenPriorConfig, _) = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let tasks = cfg.generate()?;
            if matches!(cfg.format, CorpusFormat::Jsonl | CorpusFormat::Both) {
                run.write("tasks.jsonl", encode_tasks_jsonl(&tasks))?;
            }
            if matches!(cfg.format, CorpusFormat::Binary | CorpusFormat::Both) {
                run.write("tasks.bin", encode_tasks_binary(&tasks)?)?;
            }
            let summaries: Vec<_> = tasks.iter().map(|t| &t.summary).collect();
            run.write("generation.json", to_json(&summaries))?;
            println!("generated {} tasks in {}", tasks.len(), cli.out.display());
            (
                "gen-prior",
                serde_json::to_value(&cfg).expect("config serializes"),
                applied,
            )
        }
        Command::Train { resume } => {
            let (mut cfg, applied): (TrainConfig, _) = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
                cfg.model.seed = s;
            }
            cfg.deterministic |= cli.deterministic;
            let base = base_dir(cfg_path);
            let validation = cfg
                .validation
                .iter()
                .map(|p| ValidationSet::load(&base.join(p)))
                .collect::<Result<Vec<_>>>()?;
            let mut trainer = match resume {
                Some(p) => Trainer::resume(cfg.clone(), load_checkpoint(p)?)?,
                None => Trainer::new(cfg.clone())?,
            };
            let outcome = run_training(&mut trainer, &cli.out, &validation)?;
            for p in &outcome.checkpoints {
                run.record(p)?;
            }
            run.record(&cli.out.join("train_log.jsonl"))?;
            if outcome.best.is_some() {
                run.record(&cli.out.join("best.spfn"))?;
            }
            run.write("train_summary.json", to_json(&outcome))?;
            println!(
                "trained to step {} (final loss {:.6}) in {}",
                outcome.final_step,
                outcome.final_loss,
                cli.out.display()
            );
            (
                "train",
                serde_json::to_value(&cfg).expect("config serializes"),
                applied,
            )
        }
        Command::Predict {
            split: sa,
            checkpoint,
            km,
        } => {
            let entry = match (checkpoint, km) {
                (Some(c), _) => ModelEntry::Pfn {
                    name: "pfn".into(),
                    checkpoint: c.clone(),
                },
                (None, _) => ModelEntry::Km { name: "km".into() },
            };
            let predictor = Predictor::load(&entry, cli.deterministic)?;
            let ds = load_dataset(&sa.data)?;
            let seed = split_seed(sa, cli);
            let prepared = prepare_split(&ds, &split(ds.len(), sa.train_fraction, seed)?)?;
            let grid = continuous_grid(&prepared.train.times)?;
            let surv = predictor.predict(&prepared.train, &prepared.test, &grid)?;
            run.write("survival.csv", survival_csv(&grid, &surv)?)?;
            println!("wrote {} x {} survival matrix", surv.nrows(), surv.ncols());
            let cfg = serde_json::json!({
                "data": sa.data, "split_seed": seed, "train_fraction": sa.train_fraction, "model": entry,
            });
            ("predict", cfg, Vec::new())
        }
        Command::Eval {
            split: sa,
            predictions,
            horizon,
        } => {
            let ds = load_dataset(&sa.data)?;
            let seed = split_seed(sa, cli);
            let prepared = prepare_split(&ds, &split(ds.len(), sa.train_fraction, seed)?)?;
            let (grid, surv) = read_survival_csv(predictions)?;
            let t = &prepared.train;
            let s = &prepared.test;
            let report = evaluate(
                &surv, &grid, &t.times, &t.events, &s.times, &s.events, *horizon,
            )?;
            run.write("metrics.json", to_json(&report))?;
            run.write("metrics.csv", metrics_csv(&report))?;
            println!(
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            );
            let cfg = serde_json::json!({
                "data": sa.data, "predictions": predictions, "split_seed": seed,
                "train_fraction": sa.train_fraction, "horizon": horizon,
            });
            ("eval", cfg, Vec::new())
        }
        Command::Bench => {
            let Some(path) = cfg_path else {
                return Err(Error::Config("bench needs --config <manifest.toml>".into()));
            };
            let (mut manifest, applied): (BenchManifest, _) = load_config(Some(path))?;
            if let Some(s) = cli.seed {
                manifest.seed = s;
            }
            manifest.resolve(&base_dir(Some(path)));
            let report = run_bench(&manifest, rayon::current_num_threads(), cli.deterministic)?;
            run.write("report.json", to_json(&report))?;
            run.write("ranks.csv", rank_table_csv(&report)?)?;
            run.write("summary.csv", summary_csv(&report)?)?;
            let failed = report.jobs.iter().filter(|j| j.error.is_some()).count();
            println!(
                "{} jobs ({failed} failed), {} rank rows",
                report.jobs.len(),
                report.ranks.len()
            );
            (
                "bench",
                serde_json::to_value(&manifest).expect("manifest serializes"),
                applied,
            )
        }
        Command::Diag { tasks, band_points } => {
            let (mut cfg, applied): (GenPriorConfig, _) = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let corpus = match tasks {
                Some(p) if p.extension().is_some_and(|e| e == "bin") => {
                    decode_tasks_binary(&fs::read(p).map_err(|e| io_at(p, e))?)?
                }
                Some(p) => decode_tasks_jsonl(&fs::read_to_string(p).map_err(|e| io_at(p, e))?)?,
                None => cfg.generate()?,
            };
            let d = diagnose_corpus(
                &corpus,
                &RngStream::new(cfg.seed, label::KMEANS),
                *band_points,
            )?;
            run.write("diagnostics.json", to_json(&d))?;
            run.write("tasks.csv", tasks_csv(&d)?)?;
            if let Some(b) = &d.bands {
                run.write("bands.csv", bands_csv(b)?)?;
            }
            println!(
                "{} tasks: CMI median {:.4}, p95 {:.4}",
                d.tasks.len(),
                d.cmi_median,
                d.cmi_p95
            );
            let mut v = serde_json::to_value(&cfg).expect("config serializes");
            v["tasks_file"] = serde_json::json!(tasks);
            ("diag", v, applied)
        }
    };
    let manifest = RunManifest {
        tool: "survpfn",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name,
        config_path: cfg_path.map(|p| p.display().to_string()),
        config,
        env_overrides: applied,
        out: cli.out.display().to_string(),
        seed: cli.seed,
        workers: cli.workers,
        deterministic: cli.deterministic,
        verbosity: cli.verbose,
        artifacts: run.artifacts,
    };
    fs::write(cli.out.join("manifest.json"), to_json(&manifest))?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Leakage(_) | Error::Io(_) => 3,
        Error::Numeric(_) | Error::NonFiniteLoss { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(
            exit_code(&Error::NonFiniteLoss {
                step: 1,
                task_seed: 2
            }),
            4
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

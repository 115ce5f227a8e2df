//! Command-line front end.
//!
//! Machine-readable results go to stdout as `key<TAB>value` lines; tables and
//! progress go to stderr. Exit codes: 0 success, 1 internal failure, 2 usage
//! or configuration error, 3 data or file error, 4 artifact integrity error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::blocks::BlockVariant;
use crate::cost::{cost_report, human};
use crate::error::{Error, Result};
use crate::io::artifact::{self, artifact_bytes, export_text, load_artifact, save_artifact};
use crate::io::bench::{self, measure_latency, measure_memory, reference_input, MIN_RUNS, MIN_WARMUPS};
use crate::io::config::RunConfig;
use crate::io::run::{evaluate, load_dataset, train_and_eval, Source};
use crate::io::synth;
use crate::models::{Representation, Task};
use crate::rng::Rng;
use crate::train::metrics::MetricResult;

#[derive(Parser, Debug)]
#[command(name = "liteconv", version, about = "Lightweight 1D convolutional NLP models: cost analysis, training, evaluation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter and op counts for every representation row of a config.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Row the ratios are taken against.
        #[arg(long, default_value = "conv_glu")]
        baseline: String,
        /// Sequence length for op counts; defaults to the task's reference length.
        #[arg(long)]
        input_len: Option<usize>,
    },
    /// Train a model and save it as an artifact.
    Train {
        #[arg(long, required_unless_present = "task")]
        config: Option<PathBuf>,
        /// Use the built-in desk configuration of this task.
        #[arg(long, conflicts_with = "config")]
        task: Option<String>,
        /// Train on generated data instead of the config's files.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an artifact on held-out data.
    Eval {
        artifact: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Regenerate the synthetic test split of `--seed`.
        #[arg(long, requires = "seed")]
        synthetic: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// File size, latency and memory of an artifact.
    Bench {
        artifact: PathBuf,
        #[arg(long, default_value_t = MIN_RUNS)]
        runs: usize,
        #[arg(long)]
        input_len: Option<usize>,
        /// Seed of the random benchmark input.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plain-text dump of an artifact's header and weights.
    Export {
        artifact: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare all representation rows on one or all tasks.
    Ladder {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        task: Option<String>,
        /// Updates per row.
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
}

/// Collects stdout lines so a command either prints everything or fails cleanly.
#[derive(Default)]
struct Out {
    text: String,
}

impl Out {
    fn put(&mut self, key: impl AsRef<str>, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{}\t{value}", key.as_ref());
    }

    fn metrics(&mut self, prefix: &str, metrics: &[MetricResult]) {
        for m in metrics {
            self.put(format!("{prefix}{}", m.name), format!("{:.4}", m.value));
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::Io { .. } => 3,
        e if e.is_integrity() => 4,
        _ => 1,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut out = Out::default();
    match dispatch(cli.command, &mut out) {
        Ok(()) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.text.as_bytes());
            let _ = stdout.flush();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut Out) -> Result<()> {
    match cmd {
        Command::Analyze { config, baseline, input_len } => analyze(&config, &baseline, input_len, out),
        Command::Train { config, task, synthetic, seed, out: path } => {
            train_cmd(config.as_deref(), task.as_deref(), synthetic, seed, path, out)
        }
        Command::Eval { artifact, config, synthetic, seed } => eval_cmd(&artifact, config.as_deref(), synthetic, seed, out),
        Command::Bench { artifact, runs, input_len, seed } => bench_cmd(&artifact, runs, input_len, seed, out),
        Command::Export { artifact, out: path } => export_cmd(&artifact, path.as_deref()),
        Command::Ladder { seed, config, task, steps } => ladder(seed, config.as_deref(), task.as_deref(), steps, out),
    }
}

fn analyze(config: &Path, baseline: &str, input_len: Option<usize>, out: &mut Out) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let task = cfg.model.task();
    let t = input_len.unwrap_or(task.reference_len());
    let base = cfg.model.with_repr(Representation::parse(baseline)?);
    out.put("task", task);
    out.put("input_len", t);
    let mut summary = format!("{:<28} {:>12} {:>10} {:>14} {:>10} {:>9}\n", "row", "params", "", "ops", "", "x params");
    for repr in Representation::ALL {
        let report = cost_report(&cfg.model.with_repr(repr), &base, t)?;
        for (k, v) in report.key_values(repr.name()) {
            out.put(k, v);
        }
        eprintln!("{}", report.table());
        let _ = writeln!(
            summary,
            "{:<28} {:>12} {:>10} {:>14} {:>10} {:>9.2}",
            repr.name(),
            report.total_params,
            human(report.total_params),
            report.total_ops,
            human(report.total_ops),
            report.param_ratio().unwrap_or(1.0)
        );
    }
    eprint!("{summary}");
    Ok(())
}

fn task_config(config: Option<&Path>, task: Option<&str>) -> Result<RunConfig> {
    match (config, task) {
        (Some(path), _) => RunConfig::load(path),
        (None, Some(t)) => Ok(RunConfig::desk(Task::parse(t)?)),
        (None, None) => Err(Error::Config("give --config or --task".into())),
    }
}

fn train_cmd(config: Option<&Path>, task: Option<&str>, synthetic: bool, seed: u64, path: Option<PathBuf>, out: &mut Out) -> Result<()> {
    let cfg = task_config(config, task)?;
    let source = if synthetic { Source::Synthetic { seed } } else { Source::Files };
    let data = load_dataset(&cfg, source)?;
    let task = cfg.model.task();
    eprintln!(
        "training {task}/{} on {} examples ({} held out)",
        cfg.model.repr,
        data.train.len(),
        data.test.len()
    );
    let outcome = train_and_eval(&cfg, &data, seed, |step, loss| {
        if step % 50 == 0 {
            log::info!("step {step}: loss {loss:.4}");
        }
    })?;
    let path = path.unwrap_or_else(|| artifact::default_path(task, cfg.model.repr.name()));
    let info = save_artifact(&path, &outcome.artifact.model, &outcome.artifact.tokenizer)?;
    let r = &outcome.report;
    out.put("task", task);
    out.put("representation", cfg.model.repr);
    out.put("params", outcome.artifact.model.param_count());
    out.put("train.steps", r.steps());
    out.put("train.epochs", r.epochs_run);
    out.put("train.loss.first", format!("{:.4}", r.head_loss(10)));
    out.put("train.loss.last", format!("{:.4}", r.tail_loss(10)));
    out.metrics("metric.", &outcome.metrics);
    if let Some(u) = &outcome.unigram {
        out.put("baseline.unigram_ppl", format!("{:.4}", u.value));
    }
    out.put("artifact.path", path.display());
    out.put("artifact.bytes", info.file_bytes);
    for m in &outcome.metrics {
        eprintln!("{m}");
    }
    Ok(())
}

fn eval_cmd(path: &Path, config: Option<&Path>, synthetic: bool, seed: Option<u64>, out: &mut Out) -> Result<()> {
    let artifact = load_artifact(path)?;
    let task = artifact.model.config.task();
    let cfg = match config {
        Some(c) => RunConfig::load(c)?,
        None => RunConfig::desk(task),
    };
    if cfg.model.task() != task {
        return Err(Error::Config(format!("config is for {}, artifact holds a {task} model", cfg.model.task())));
    }
    let test = match (synthetic, seed) {
        (true, Some(seed)) => synth::synth_dataset(task, seed, 0, cfg.data.test_size).test,
        _ if config.is_some() => load_dataset(&cfg, Source::Files)?.test,
        _ => return Err(Error::Config("eval needs --synthetic --seed or a --config with data.test".into())),
    };
    let metrics = evaluate(&artifact, &test)?;
    out.put("task", task);
    out.put("examples", test.len());
    out.metrics("metric.", &metrics);
    for m in &metrics {
        eprintln!("{m}");
    }
    Ok(())
}

fn bench_cmd(path: &Path, runs: usize, input_len: Option<usize>, seed: u64, out: &mut Out) -> Result<()> {
    let file_bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let artifact = load_artifact(path)?;
    let model = &artifact.model;
    let task = model.config.task();
    let len = input_len.unwrap_or(task.reference_len());
    let input = reference_input(model, len, &mut Rng::new(seed))?;
    let latency = measure_latency(|| bench::infer(model, &input), runs, MIN_WARMUPS)?;
    let memory = measure_memory(model, &input)?;
    out.put("task", task);
    out.put("representation", model.config.repr);
    out.put("input_len", len);
    out.put("file_size_bytes", file_bytes);
    out.put("latency.runs", latency.runs);
    out.put("latency.warmups", latency.warmups);
    out.put("latency.batch", latency.batch);
    out.put("latency.auto_batched", latency.auto_batched());
    out.put("latency.median_ms", format!("{:.4}", latency.median_ms));
    out.put("latency.p95_ms", format!("{:.4}", latency.p95_ms));
    out.put("memory.weight_bytes", memory.weight_bytes);
    out.put("memory.peak_forward_bytes", memory.peak_forward_bytes);
    out.put("memory.total_bytes", memory.total());
    if latency.auto_batched() {
        eprintln!("note: single inference under 1 ms; timed {} calls per sample", latency.batch);
    }
    Ok(())
}

fn export_cmd(path: &Path, dest: Option<&Path>) -> Result<()> {
    let text = export_text(&load_artifact(path)?)?;
    match dest {
        Some(d) => std::fs::write(d, text).map_err(|e| Error::io(d, e)),
        None => {
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            Ok(())
        }
    }
}

const LADDER_TEST_CAP: usize = 100;

fn ladder(seed: u64, config: Option<&Path>, task: Option<&str>, steps: usize, out: &mut Out) -> Result<()> {
    let configs = match (config, task) {
        (None, None) => Task::ALL.iter().map(|&t| RunConfig::desk(t)).collect(),
        (c, t) => vec![task_config(c, t)?],
    };
    for mut cfg in configs {
        let task = cfg.model.task();
        cfg.train.max_steps = Some(steps);
        let data = if cfg.data.train.is_some() {
            load_dataset(&cfg, Source::Files)?
        } else {
            cfg.data.train_size = cfg.data.train_size.min(steps.max(1) * cfg.train.batch_size);
            cfg.data.test_size = cfg.data.test_size.min(LADDER_TEST_CAP);
            load_dataset(&cfg, Source::Synthetic { seed })?
        };
        let t = task.reference_len();
        let mut table = format!(
            "# {task}: {} train / {} test examples, {steps} steps, seed {seed}\n{:<28} {:>10} {:>9} {:>12} {:>12} {:>10}  metrics\n",
            data.train.len(),
            data.test.len(),
            "row",
            "params",
            "x params",
            "ops",
            "file bytes",
            "loss"
        );
        for repr in Representation::ALL {
            let mut row = cfg.clone();
            row.model = cfg.model.with_repr(repr);
            let outcome = train_and_eval(&row, &data, seed, |_, _| {})?;
            let model = &outcome.artifact.model;
            let base = model.config.with_repr(Representation::Conv(BlockVariant::ConvGlu));
            let cost = cost_report(&model.config, &base, t)?;
            let file_bytes = artifact_bytes(model, &outcome.artifact.tokenizer)?.len();
            let key = format!("ladder.{task}.{}", repr.name());
            out.put(format!("{key}.params"), model.param_count());
            out.put(format!("{key}.ops"), cost.total_ops);
            out.put(format!("{key}.file_bytes"), file_bytes);
            out.put(format!("{key}.train_loss"), format!("{:.4}", outcome.report.tail_loss(5)));
            out.metrics(&format!("{key}.metric."), &outcome.metrics);
            let shown: Vec<String> = outcome.metrics.iter().map(|m| format!("{}={:.2}", m.name, m.display_value())).collect();
            let _ = writeln!(
                table,
                "{:<28} {:>10} {:>9.2} {:>12} {:>12} {:>10.4}  {}",
                repr.name(),
                model.param_count(),
                cost.param_ratio().unwrap_or(1.0),
                cost.total_ops,
                file_bytes,
                outcome.report.tail_loss(5),
                shown.join(" ")
            );
        }
        eprint!("{table}");
    }
    Ok(())
}

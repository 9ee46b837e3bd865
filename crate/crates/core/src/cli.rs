//! Command-line front end.
//!
//! Every subcommand also writes a `key=value` metadata record (version, seed,
//! effective configuration, wall time) next to its outputs, or to the path
//! given by `--meta`, or to stderr when there is no output file.

use std::ffi::OsString;
use std::fmt::Debug;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::benchmarks::{
    load_mnist, synthetic_digits, write_inputs_csv, write_targets_csv, BenchmarkKind, MnistDataset, PixelLayout,
    SampleSpec,
};
use crate::cells::CellKind;
use crate::dynamics::{
    bifurcation_sweep, check_pitchfork_conditions, find_fixed_points, simulate_scalar_cell, trace_layers,
    write_branches_csv, write_fixed_points_csv, write_layer_trace_csv, write_trajectory_csv, ScalarCellConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::{check_network, random_problem};
use crate::network::{load_checkpoint, parse_layers, save_checkpoint, CheckpointMeta, Network};
use crate::numerics::RngState;
use crate::training::{evaluate, streams, train_with, AdamConfig, Task, TrainConfig};

pub const VERSION: &str = env!("BRC_BUILD_VERSION");
/// Gradient checks above this relative error fail.
pub const GRAD_CHECK_LIMIT: f64 = 1e-5;
const MNIST_DIR_ENV: &str = "BRC_MNIST_DIR";
const SYNTH_TRAIN_STREAM: u64 = 3;
const SYNTH_TEST_STREAM: u64 = 4;

#[derive(Debug, Parser)]
#[command(name = "brc", version = VERSION, about = "Bistable recurrent cells: training, evaluation and dynamical analysis")]
pub struct Cli {
    /// Plain `key=value` file of flag defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Where to write the metadata record.
    #[arg(long, global = true, value_name = "FILE")]
    pub meta: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a benchmark; writes log.csv, model.ckpt and meta.txt.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on a seeded test set.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Write a seeded test set as CSV.
    #[command(name = "gen-data", args_override_self = true)]
    GenData(GenDataArgs),
    /// Fixed points of the scalar bistable update.
    #[command(name = "fixed-points", args_override_self = true)]
    FixedPoints(FixedPointsArgs),
    /// Fixed points across a range of feedback gains.
    #[command(args_override_self = true)]
    Bifurcation(BifurcationArgs),
    /// Pitchfork conditions at h=0, a=1: closed forms against finite differences.
    #[command(name = "pitchfork-check", args_override_self = true)]
    PitchforkCheck(PitchforkArgs),
    /// Iterate the scalar cell after an input pulse.
    #[command(name = "simulate-cell", args_override_self = true)]
    SimulateCell(SimulateArgs),
    /// Per-layer gate statistics of a trained bistable network on one sequence.
    #[command(args_override_self = true)]
    Trace(TraceArgs),
    /// Compare analytic gradients with central differences on a random problem.
    #[command(name = "grad-check", args_override_self = true)]
    GradCheck(GradCheckArgs),
}

/// `NxM` or comma-separated layer widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layers(pub Vec<usize>);

impl FromStr for Layers {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_layers(s).map(Layers)
    }
}

/// Clipping threshold or `none`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clip(pub Option<f64>);

impl FromStr for Clip {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("off") {
            return Ok(Clip(None));
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Clip(Some(v))),
            _ => Err(Error::InvalidArgument(format!("clip must be a positive number or 'none', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long, default_value = "copy_first")]
    pub benchmark: BenchmarkKind,
    /// Sequence length.
    #[arg(long = "T", default_value_t = 50)]
    pub t: usize,
    /// Denoising forgetting period.
    #[arg(long = "N", default_value_t = 0)]
    pub n: usize,
    /// Trailing black pixels for seq_mnist.
    #[arg(long, default_value_t = 0)]
    pub n_black: usize,
    /// seq_mnist pixel layout: native, pad32 or downK.
    #[arg(long, default_value = "native")]
    pub layout: PixelLayout,
    /// Directory with the four MNIST IDX files; falls back to $BRC_MNIST_DIR,
    /// then to synthetic digits.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Number of training images used for seq_mnist.
    #[arg(long, default_value_t = 60_000)]
    pub mnist_train: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "brc")]
    pub cell: CellKind,
    #[arg(long, default_value = "2x100")]
    pub layers: Layers,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 30_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "5.0")]
    pub clip: Clip,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 2000)]
    pub test_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional CSV with the metric and mean loss.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for inputs.csv and targets.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FixedPointsArgs {
    #[arg(long)]
    pub a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub drive: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BifurcationArgs {
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 0.2)]
    pub a_min: f64,
    #[arg(long, default_value_t = 1.8)]
    pub a_max: f64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub drive: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PitchforkArgs {
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1.5)]
    pub a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    /// Total number of steps.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Drive during the pulse.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub pulse: f64,
    #[arg(long, default_value_t = 5)]
    pub pulse_len: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub h0: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index of the test sequence to trace.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value = "brc")]
    pub cell: CellKind,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    /// Number of recurrent layers.
    #[arg(long = "num-layers", default_value_t = 1)]
    pub num_layers: usize,
    #[arg(long = "T", default_value_t = 10)]
    pub t: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Reads `key=value` lines into `--key value` arguments. Blank lines and
/// `#` comments are skipped; underscores in keys become dashes.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k == "config" || k == "meta" {
            return Err(Error::Config(format!("line {}: invalid key '{k}'", no + 1)));
        }
        let key = if k.len() == 1 { k.to_string() } else { k.replace('_', "-") };
        args.push(format!("--{key}"));
        args.push(v.to_string());
    }
    Ok(args)
}

const SUBCOMMANDS: [&str; 9] = [
    "train",
    "eval",
    "gen-data",
    "fixed-points",
    "bifurcation",
    "pitchfork-check",
    "simulate-cell",
    "trace",
    "grad-check",
];

/// Splices config-file arguments in right after the subcommand name, so the
/// explicit flags that follow override them.
fn expand_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config file {path}: {e}"))?;
    let extra = config_args(&text).map_err(|e| format!("{path}: {e}"))?;
    let Some(pos) = strs.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let mut out = argv;
    let at = pos + 2;
    out.splice(at..at, extra.into_iter().map(OsString::from));
    Ok(out)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 for bad flags, 1 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let shown: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &shown.join(" ")) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

struct MetaRecord<'a> {
    command: &'static str,
    argv: &'a str,
    seed: Option<u64>,
    config: String,
    started: Instant,
}

impl MetaRecord<'_> {
    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "version={VERSION}")?;
        writeln!(w, "command={}", self.command)?;
        writeln!(w, "argv={}", self.argv)?;
        match self.seed {
            Some(s) => writeln!(w, "seed={s}")?,
            None => writeln!(w, "seed=none")?,
        }
        writeln!(w, "config={}", self.config)?;
        writeln!(w, "wall_seconds={:.3}", self.started.elapsed().as_secs_f64())
    }
}

fn with_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

enum OutputKind<'a> {
    Dir(&'a Path),
    File(&'a Path),
    None,
}

fn emit_meta(cli: &Cli, out: OutputKind, record: &MetaRecord) -> Result<()> {
    let path = match (&cli.meta, out) {
        (Some(p), _) => p.clone(),
        (None, OutputKind::Dir(d)) => d.join("meta.txt"),
        (None, OutputKind::File(f)) => sidecar(f),
        (None, OutputKind::None) => {
            let mut buf = Vec::new();
            record.write(&mut buf).expect("writing to memory");
            for line in String::from_utf8_lossy(&buf).lines() {
                eprintln!("# {line}");
            }
            return Ok(());
        }
    };
    with_file(&path, |w| record.write(w))
}

fn config_line(args: &impl Debug) -> String {
    format!("{args:?}")
}

fn mnist_dir(task: &TaskArgs) -> Option<PathBuf> {
    task.mnist_dir
        .clone()
        .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
}

/// Builds the task for the flags; seq_mnist uses real IDX files when a
/// directory is known and synthetic digits otherwise.
pub fn build_task(task: &TaskArgs, seed: u64, test_size: usize) -> Result<Task> {
    if task.benchmark != BenchmarkKind::SeqMnist {
        let spec = SampleSpec {
            benchmark: task.benchmark,
            t: task.t,
            n: task.n,
            n_black: task.n_black,
        };
        spec.validate()?;
        return Ok(Task::Synthetic(spec));
    }
    let (train, test): (MnistDataset, MnistDataset) = match mnist_dir(task) {
        Some(dir) => (
            load_mnist(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?,
            load_mnist(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?,
        ),
        None => (
            synthetic_digits(task.mnist_train, &mut RngState::with_stream(seed, SYNTH_TRAIN_STREAM)),
            synthetic_digits(test_size, &mut RngState::with_stream(seed, SYNTH_TEST_STREAM)),
        ),
    };
    let task = Task::Mnist {
        train: train.take(task.mnist_train),
        test,
        layout: task.layout,
        n_black: task.n_black,
    };
    task.validate()?;
    Ok(task)
}

fn check_fits(net: &Network, task: &Task) -> Result<()> {
    let b = task.benchmark();
    let spec = net.spec();
    if spec.input_dim != b.input_dim() || spec.output_dim != b.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "model {}->{} does not fit benchmark {b} ({}->{})",
            spec.input_dim,
            spec.output_dim,
            b.input_dim(),
            b.output_dim()
        )));
    }
    Ok(())
}

fn metric_name(task: &Task) -> &'static str {
    if task.benchmark().is_classification() {
        "accuracy"
    } else {
        "mse"
    }
}

fn execute(cli: &Cli, argv: &str) -> std::result::Result<(), Failure> {
    let started = Instant::now();
    let record = |command, seed, config| MetaRecord {
        command,
        argv,
        seed,
        config,
        started,
    };
    match &cli.command {
        Command::Train(a) => {
            let config = TrainConfig {
                iterations: a.iters,
                batch_size: a.batch,
                eval_every: a.eval_every,
                seed: a.seed,
                test_size: a.test_size,
                adam: AdamConfig {
                    lr: a.lr,
                    ..AdamConfig::default()
                },
                clip_norm: a.clip.0,
                workers: a.workers,
            };
            usage(config.validate())?;
            let task = usage(build_task(&a.task, a.seed, a.test_size))?;
            let spec = task.network_spec(a.cell, a.layers.0.clone());
            usage(spec.validate())?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            let metric = metric_name(&task);
            let (net, log) = train_with(spec, &task, &config, |r| {
                eprintln!(
                    "iter {:>7}  train_loss {:.6}  test_{metric} {:.6}  {:.1}s",
                    r.iteration, r.train_loss, r.test_metric, r.seconds
                );
            })?;
            with_file(&a.out.join("log.csv"), |w| log.write_csv(w))?;
            save_checkpoint(
                &a.out.join("model.ckpt"),
                &net,
                CheckpointMeta {
                    seed: a.seed,
                    iteration: a.iters as u64,
                },
            )?;
            emit_meta(cli, OutputKind::Dir(&a.out), &record("train", Some(a.seed), config_line(a)))?;
            let last = log.last().expect("training logs at least one record");
            println!(
                "{} on {}: test_{metric}={:.6} after {} iterations ({:.1}s) -> {}",
                a.cell,
                task.benchmark(),
                last.test_metric,
                last.iteration,
                last.seconds,
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let (net, _) = load_checkpoint(&a.model)?;
            let task = usage(build_task(&a.task, a.seed, a.test_size))?;
            check_fits(&net, &task)?;
            let test = task.test_set(a.test_size, &mut RngState::with_stream(a.seed, streams::TEST))?;
            let (metric, loss) = evaluate(&net, &test, 256)?;
            let name = metric_name(&task);
            if let Some(out) = &a.out {
                with_file(out, |w| {
                    writeln!(w, "{name},loss,samples")?;
                    writeln!(w, "{metric:?},{loss:?},{}", test.len())
                })?;
            }
            let kind = a.out.as_deref().map_or(OutputKind::None, OutputKind::File);
            emit_meta(cli, kind, &record("eval", Some(a.seed), config_line(a)))?;
            println!("test_{name}={metric:.6} loss={loss:.6} on {} samples", test.len());
        }
        Command::GenData(a) => {
            let task = usage(build_task(&a.task, a.seed, a.count))?;
            if a.count == 0 {
                return Err(Failure::Usage("count must be >= 1".into()));
            }
            let samples = task.test_set(a.count, &mut RngState::with_stream(a.seed, streams::TEST))?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            with_file(&a.out.join("inputs.csv"), |w| write_inputs_csv(w, &samples))?;
            with_file(&a.out.join("targets.csv"), |w| write_targets_csv(w, &samples))?;
            emit_meta(cli, OutputKind::Dir(&a.out), &record("gen-data", Some(a.seed), config_line(a)))?;
            println!("wrote {} {} samples to {}", samples.len(), task.benchmark(), a.out.display());
        }
        Command::FixedPoints(a) => {
            let cfg = usage(ScalarCellConfig::new(a.a, a.c, a.drive))?;
            let report = find_fixed_points(&cfg);
            match &a.out {
                Some(out) => with_file(out, |w| write_fixed_points_csv(w, &report))?,
                None => {
                    let stdout = std::io::stdout();
                    write_fixed_points_csv(&mut stdout.lock(), &report).map_err(|e| Error::io("<stdout>", e))?;
                }
            }
            let kind = a.out.as_deref().map_or(OutputKind::None, OutputKind::File);
            emit_meta(cli, kind, &record("fixed-points", None, config_line(a)))?;
            let stable = report.stable().count();
            println!(
                "{} fixed point(s), {stable} stable, at a={} c={} drive={}",
                report.points.len(),
                a.a,
                a.c,
                a.drive
            );
        }
        Command::Bifurcation(a) => {
            usage(ScalarCellConfig::new(1.0, a.c, a.drive))?;
            let rows = usage(bifurcation_sweep(a.a_min, a.a_max, a.c, a.drive, a.steps))?;
            with_file(&a.out, |w| write_branches_csv(w, "a", &rows))?;
            emit_meta(cli, OutputKind::File(&a.out), &record("bifurcation", None, config_line(a)))?;
            println!("{} branch points over {} gains -> {}", rows.len(), a.steps, a.out.display());
        }
        Command::PitchforkCheck(a) => {
            let report = usage(check_pitchfork_conditions(a.c))?;
            for k in &report.conditions {
                println!(
                    "{:<10} closed_form={:+.12e} finite_difference={:+.12e}",
                    k.name, k.closed_form, k.finite_difference
                );
            }
            if let Some(out) = &a.out {
                with_file(out, |w| {
                    writeln!(w, "condition,closed_form,finite_difference")?;
                    for k in &report.conditions {
                        writeln!(w, "{},{:?},{:?}", k.name, k.closed_form, k.finite_difference)?;
                    }
                    Ok(())
                })?;
            }
            let kind = a.out.as_deref().map_or(OutputKind::None, OutputKind::File);
            emit_meta(cli, kind, &record("pitchfork-check", None, config_line(a)))?;
            if !report.holds(1e-9, 1e-6) {
                return Err(Failure::Runtime(Error::InvalidArgument(format!(
                    "pitchfork conditions do not hold at c={}",
                    a.c
                ))));
            }
            println!("pitchfork conditions hold at c={}", a.c);
        }
        Command::SimulateCell(a) => {
            usage(ScalarCellConfig::new(a.a, a.c, 0.0))?;
            let drive: Vec<f64> = (0..a.steps).map(|k| if k < a.pulse_len { a.pulse } else { 0.0 }).collect();
            let traj = simulate_scalar_cell(&vec![a.a; a.steps], &vec![a.c; a.steps], &drive, a.h0)?;
            if let Some(out) = &a.out {
                with_file(out, |w| write_trajectory_csv(w, &traj))?;
            }
            let kind = a.out.as_deref().map_or(OutputKind::None, OutputKind::File);
            emit_meta(cli, kind, &record("simulate-cell", None, config_line(a)))?;
            println!("h_final={:?} after {} steps", traj.last().copied().unwrap_or(a.h0), a.steps);
        }
        Command::Trace(a) => {
            let (net, _) = load_checkpoint(&a.model)?;
            let task = usage(build_task(&a.task, a.seed, a.sample + 1))?;
            check_fits(&net, &task)?;
            let samples = task.test_set(a.sample + 1, &mut RngState::with_stream(a.seed, streams::TEST))?;
            let seq = samples
                .get(a.sample)
                .ok_or_else(|| Failure::Usage(format!("test set has no sample {}", a.sample)))?;
            let trace = trace_layers(&net, &seq.inputs)?;
            with_file(&a.out, |w| write_layer_trace_csv(w, &trace))?;
            emit_meta(cli, OutputKind::File(&a.out), &record("trace", Some(a.seed), config_line(a)))?;
            println!(
                "traced {} steps x {} layers -> {}",
                seq.len(),
                net.spec().layer_sizes.len(),
                a.out.display()
            );
        }
        Command::GradCheck(a) => {
            if a.hidden == 0 || a.num_layers == 0 || a.t == 0 || a.batch == 0 {
                return Err(Failure::Usage("hidden, num-layers, T and batch must be >= 1".into()));
            }
            let (net, batch) = random_problem(a.cell, vec![a.hidden; a.num_layers], a.t, a.batch, a.seed)?;
            let report = check_network(&net, &batch)?;
            emit_meta(cli, OutputKind::None, &record("grad-check", Some(a.seed), config_line(a)))?;
            println!(
                "max relative error {:.3e} over {} parameters (worst {}[{}]: analytic {:+.6e}, numeric {:+.6e})",
                report.max_rel_error, report.checked, report.worst.0, report.worst.1, report.analytic, report.numeric
            );
            if report.max_rel_error > GRAD_CHECK_LIMIT {
                return Err(Failure::Runtime(Error::InvalidArgument(format!(
                    "gradient check failed: {:.3e} > {GRAD_CHECK_LIMIT:e}",
                    report.max_rel_error
                ))));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let args = config_args("# run\n iters = 200\nT=5\n\nclip=none\neval_every=10\n").unwrap();
        assert_eq!(args, ["--iters", "200", "--T", "5", "--clip", "none", "--eval-every", "10"]);
        assert!(config_args("iters 200").is_err());
        assert!(config_args("config=x").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "a=0.5\nc=0.3\n").unwrap();
        let argv: Vec<OsString> = ["brc", "--config", cfg.to_str().unwrap(), "fixed-points", "--a", "1.5"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = Cli::try_parse_from(expand_config(argv).unwrap()).unwrap();
        match cli.command {
            Command::FixedPoints(a) => assert_eq!((a.a, a.c), (1.5, 0.3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn layer_and_clip_values() {
        assert_eq!("2x50".parse::<Layers>().unwrap(), Layers(vec![50, 50]));
        assert_eq!("none".parse::<Clip>().unwrap(), Clip(None));
        assert_eq!("2.5".parse::<Clip>().unwrap(), Clip(Some(2.5)));
        assert!("-1".parse::<Clip>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["brc", "nonsense"]), 2);
        assert_eq!(run(["brc", "fixed-points"]), 2);
        assert_eq!(run(["brc", "fixed-points", "--a", "2.5"]), 2);
        assert_eq!(run(["brc", "fixed-points", "--a", "1.5"]), 0);
        assert_eq!(run(["brc", "eval", "--model", "/nonexistent/model.ckpt"]), 1);
    }
}

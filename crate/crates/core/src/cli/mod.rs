//! The `echoflow` command line.

mod checkpoint;
mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use checkpoint::{Checkpoint, FORMAT, VERSION};
pub use config::{prepare, DatasetSpec, ExperimentConfig, GroupOverrides, Prepared};

use crate::data::{load_csv, lorenz_generate, save_csv, sine_generate, LoadOptions, LorenzParams, Series};
use crate::error::{EchoError, Result};
use crate::models::{expected_param_count, ForecastModel, PARAM_GROUPS};
use crate::numerics::{Matrix, RngStream};
use crate::training::{evaluate, evaluate_persistence, train, Dataset, Split};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;
pub const EXIT_CHECKPOINT: u8 = 5;

/// Process exit code for an error.
pub fn exit_code(e: &EchoError) -> u8 {
    match e {
        EchoError::Config(_) => EXIT_CONFIG,
        EchoError::Load { .. } | EchoError::Data(_) | EchoError::Input(_) | EchoError::Shape { .. } => EXIT_DATA,
        EchoError::Divergence(_) | EchoError::Degenerate(_) => EXIT_DIVERGENCE,
        EchoError::Checkpoint(_) => EXIT_CHECKPOINT,
        EchoError::Io(_) | EchoError::Json(_) => EXIT_OTHER,
    }
}

#[derive(Parser, Debug)]
#[command(name = "echoflow", version, about = "Echo-state forecasting engine")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic series as CSV.
    Generate(GenerateArgs),
    /// Train a model from a configuration.
    Train,
    /// Score a checkpoint against its persistence baseline.
    Evaluate(EvaluateArgs),
    /// Forecast the next steps after a history.
    Forecast(ForecastArgs),
    /// Summarize a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    Lorenz,
    Sine,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generator; taken from the configured dataset when omitted.
    pub kind: Option<GeneratorKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Sine frequencies in cycles per step, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub freqs: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub file: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV to score as a whole; the checkpoint's dataset split otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Measure errors in original units.
    #[arg(long)]
    pub original_scale: bool,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// History CSV; the checkpoint's dataset otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Steps to emit, at most the trained horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Trailing rows held back as ground truth.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    /// Channel drawn in the plot; the first when omitted.
    #[arg(long)]
    pub plot_channel: Option<String>,
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

struct Ctx {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn experiment(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| EchoError::Config("this command needs --config PATH".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    fn out_dir(&self, fallback: Option<&Path>) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Generate(a) => cmd_generate(&ctx, &a),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate(a) => cmd_evaluate(&ctx, &a),
        Command::Forecast(a) => cmd_forecast(&ctx, &a),
        Command::Inspect(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            print!("{}", inspect_text(&ckpt)?);
            Ok(())
        }
    }
}

fn cmd_generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let (series, name, out) = match a.kind {
        Some(GeneratorKind::Lorenz) => (
            lorenz_generate(a.steps.unwrap_or(10_000), a.dt, [1.0, 1.0, 1.0], LorenzParams::default())?,
            "lorenz",
            ctx.out_dir(None)?,
        ),
        Some(GeneratorKind::Sine) => (
            sine_generate(a.steps.unwrap_or(1000), &a.freqs, a.noise, &mut RngStream::new(seed, 0x5117e))?,
            "sine",
            ctx.out_dir(None)?,
        ),
        None => {
            let (cfg, base) = ctx.experiment()?;
            let name = match cfg.dataset {
                DatasetSpec::Lorenz { .. } => "lorenz",
                DatasetSpec::Sine { .. } => "sine",
                DatasetSpec::Csv { .. } => "data",
            };
            (cfg.dataset.load(&base, cfg.seed)?, name, ctx.out_dir(Some(&cfg.out_dir))?)
        }
    };
    let path = out.join(a.file.clone().unwrap_or_else(|| format!("{name}.csv")));
    save_csv(&series, &path)?;
    ctx.say(format!("wrote {} ({}x{})", path.display(), series.len(), series.channels()));
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let (mut cfg, base) = ctx.experiment()?;
    if let DatasetSpec::Csv { path, .. } = &mut cfg.dataset {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
    let out = ctx.out_dir(Some(&cfg.out_dir))?;
    let prepared = prepare(&cfg, &base)?;
    let mut model = ForecastModel::new(cfg.effective_model(), prepared.dataset.channels(), cfg.seed)?;
    ctx.say(format!(
        "training {:?}: {} channel{}, {} trainable parameters",
        cfg.model.variant,
        model.channels(),
        if model.channels() == 1 { "" } else { "s" },
        model.num_params()
    ));
    let report = train(&mut model, &prepared.dataset, &cfg.effective_train())?;
    for e in &report.epochs {
        ctx.say(format!(
            "epoch {:>3}  loss {:.6}  val mse {:.6}  val mae {:.6}",
            e.epoch, e.train_loss, e.val_mse, e.val_mae
        ));
    }
    Checkpoint::new(cfg.clone(), prepared.names.clone(), prepared.normalizer.clone(), model)
        .save(&out.join("checkpoint.json"))?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut curve = String::from("epoch,train_loss,val_mse,val_mae\n");
    let _ = writeln!(curve, "0,,{},{}", report.initial_val.mse, report.initial_val.mae);
    for e in &report.epochs {
        let _ = writeln!(curve, "{},{},{},{}", e.epoch, e.train_loss, e.val_mse, e.val_mae);
    }
    fs::write(out.join("loss_curve.csv"), curve)?;
    #[derive(Serialize)]
    struct Timing<'a> {
        epoch_seconds: &'a [f64],
        total_seconds: f64,
    }
    let timing = Timing {
        epoch_seconds: &report.epoch_seconds,
        total_seconds: report.epoch_seconds.iter().sum(),
    };
    fs::write(out.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    ctx.say(format!(
        "best epoch {}  test mse {:.6}  test mae {:.6}\nartifacts in {}",
        report.best_epoch,
        report.test.mse,
        report.test.mae,
        out.display()
    ));
    Ok(())
}

/// Reads a CSV for a checkpoint, picking its channels by name when the file
/// carries extra columns.
fn load_for(ckpt: &Checkpoint, path: &Path) -> Result<Series> {
    let s = load_csv(path, LoadOptions::default())?;
    let idx: Option<Vec<usize>> = ckpt
        .channels
        .iter()
        .map(|c| s.names.iter().position(|n| n == c))
        .collect();
    match idx {
        Some(idx) => s.select(&idx),
        None if s.channels() == ckpt.channels.len() => Ok(s),
        None => Err(EchoError::Shape {
            context: "input channels",
            expected: ckpt.channels.len(),
            actual: s.channels(),
        }),
    }
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub windows: usize,
    pub mse: f64,
    pub mae: f64,
    pub baseline_mse: f64,
    pub baseline_mae: f64,
}

fn cmd_evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = &ckpt.model;
    let (dataset, split) = match &a.data {
        Some(path) => {
            let s = load_for(&ckpt, path)?;
            let t = s.len();
            let values = ckpt.normalizer.apply(&s.values)?;
            (
                Dataset {
                    series: values,
                    ranges: [0..0, 0..0, 0..t],
                },
                Split::Test,
            )
        }
        None => (prepare(&ckpt.experiment, Path::new("."))?.dataset, a.split.into()),
    };
    let denorm = a.original_scale.then_some(&ckpt.normalizer);
    let washout = ckpt.experiment.train.washout;
    let m = evaluate(model, &dataset, split, washout, denorm)?;
    let b = evaluate_persistence(&dataset, split, model.lookback(), model.horizon(), washout, denorm)?;
    let summary = EvalSummary {
        split: format!("{split:?}").to_lowercase(),
        windows: dataset.windows(split, model.lookback(), model.horizon(), washout)?.len(),
        mse: m.mse,
        mae: m.mae,
        baseline_mse: b.mse,
        baseline_mae: b.mae,
    };
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    if let Some(out) = &ctx.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.json"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn rows_of(m: &Matrix, r: std::ops::Range<usize>) -> Matrix {
    let c = m.cols();
    Matrix::from_vec(r.len(), c, m.as_slice()[r.start * c..r.end * c].to_vec()).expect("row range")
}

/// Streams `history` through a copy of the model and forecasts the next
/// `horizon` steps in original units.
pub fn forecast_after(ckpt: &Checkpoint, history: &Matrix, horizon: usize) -> Result<Matrix> {
    let mut model = ckpt.model.clone();
    let (k, tau) = (model.lookback(), model.horizon());
    if horizon > tau {
        return Err(EchoError::Config(format!(
            "horizon {horizon} exceeds the trained horizon {tau}"
        )));
    }
    if history.rows() < k {
        return Err(EchoError::Input(format!(
            "history has {} rows, lookback needs {k}",
            history.rows()
        )));
    }
    let z = ckpt.normalizer.apply(history)?;
    model.reset_streams();
    for t in 0..z.rows() {
        model.stream_advance(z.row(t))?;
    }
    let pred = model.forecast(&rows_of(&z, z.rows() - k..z.rows()), false, &mut RngStream::new(0, 0))?;
    Ok(rows_of(&ckpt.normalizer.invert(&pred)?, 0..horizon))
}

fn cmd_forecast(ctx: &Ctx, a: &ForecastArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let series = match &a.data {
        Some(path) => load_for(&ckpt, path)?,
        None => ckpt.experiment.dataset.load(Path::new("."), ckpt.experiment.seed)?,
    };
    let horizon = a.horizon.unwrap_or(ckpt.model.horizon());
    if a.holdout >= series.len() {
        return Err(EchoError::Input(format!(
            "holdout {} leaves no history in {} rows",
            a.holdout,
            series.len()
        )));
    }
    let cut = series.len() - a.holdout;
    let history = rows_of(&series.values, 0..cut);
    let pred = forecast_after(&ckpt, &history, horizon)?;
    let out = ctx.out_dir(None)?;
    let csv_path = out.join("forecast.csv");
    save_csv(&Series::new(pred.clone(), series.names.clone())?, &csv_path)?;
    ctx.say(format!("wrote {} ({} steps)", csv_path.display(), horizon));

    if !a.no_svg {
        let ch = match &a.plot_channel {
            Some(name) => series
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| EchoError::Config(format!("unknown plot channel {name:?}")))?,
            None => 0,
        };
        let k = ckpt.model.lookback();
        let tail = cut.saturating_sub(2 * k);
        let hist: Vec<(f64, f64)> = (tail..cut).map(|t| (t as f64, history.get(t, ch))).collect();
        let mut lines = vec![svg::Line {
            label: "history",
            color: "gray",
            points: hist,
        }];
        let truth_end = (cut + horizon).min(series.len());
        if truth_end > cut {
            let mut truth = vec![(cut as f64 - 1.0, history.get(cut - 1, ch))];
            truth.extend((cut..truth_end).map(|t| (t as f64, series.values.get(t, ch))));
            lines.push(svg::Line {
                label: "truth",
                color: "black",
                points: truth,
            });
        }
        let mut fc = vec![(cut as f64 - 1.0, history.get(cut - 1, ch))];
        fc.extend((0..horizon).map(|s| ((cut + s) as f64, pred.get(s, ch))));
        lines.push(svg::Line {
            label: "forecast",
            color: "red",
            points: fc,
        });
        let svg_path = out.join("forecast.svg");
        fs::write(&svg_path, svg::line_plot(&format!("forecast: {}", series.names[ch]), &lines))?;
        ctx.say(format!("wrote {}", svg_path.display()));
    }
    Ok(())
}

/// Human-readable checkpoint summary.
pub fn inspect_text(ckpt: &Checkpoint) -> Result<String> {
    let m = &ckpt.model;
    let mut s = String::new();
    let _ = writeln!(s, "{} version {}", ckpt.format, ckpt.version);
    let _ = writeln!(
        s,
        "variant {:?}  channels [{}]  lookback {}  horizon {}",
        m.config().variant,
        ckpt.channels.join(", "),
        m.lookback(),
        m.horizon()
    );
    let _ = writeln!(s, "\nreservoir group ({} units)", m.reservoirs().len());
    let _ = writeln!(
        s,
        "{:>4} {:>6} {:>9} {:>9} {:>8} {:>11} {:>11}",
        "unit", "size", "radius", "measured", "density", "inner", "outer"
    );
    for (i, u) in m.reservoirs().units().iter().enumerate() {
        let c = u.config();
        let _ = writeln!(
            s,
            "{:>4} {:>6} {:>9.4} {:>9.4} {:>8.3} {:>11} {:>11}",
            i,
            c.size,
            c.spectral_radius,
            u.measured_radius(),
            c.density,
            c.inner.name(),
            c.outer.name()
        );
    }
    let _ = writeln!(s, "\ntrainable parameters");
    let groups = m.params.groups();
    for ((name, tensors), expected) in groups.iter().zip(PARAM_GROUPS) {
        debug_assert_eq!(*name, expected);
        let n: usize = tensors.iter().map(|t| t.len()).sum();
        let _ = writeln!(s, "  {name:<9} {n:>10}");
    }
    let _ = writeln!(s, "  {:<9} {:>10}", "total", m.num_params());
    let _ = writeln!(
        s,
        "  {:<9} {:>10}",
        "formula",
        expected_param_count(m.config(), m.channels())
    );
    let _ = writeln!(s, "\nconfiguration\n{}", serde_json::to_string_pretty(&ckpt.experiment)?);
    Ok(s)
}

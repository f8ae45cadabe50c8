//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 emulator
//! non-convergence, 3 training aborted on a non-finite loss. Every command
//! resolves and validates all of its inputs before it creates its output
//! directory, so configuration errors leave nothing behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::emulator::{
    run_with, sensitivity_case, IterationStats, RunOptions, Simulation, StepParams, SENSITIVITY_CASES,
};
use crate::error::{Error, Result};
use crate::metrics::{compare, write_table_csv, ComparisonReport, TableRow};
use crate::scenario::{build_scenario, Scenario, Termination, TimeSeries};
use crate::trainer::{apply_overrides, build_training_config, preset, train_with, Mode, TrainOutput, TrainedModel};

/// Default output root when neither `--out` nor `--out-root` is given.
pub const OUT_ENV: &str = "NAPINN_OUT";

/// Peak pipe velocity and rise height reported externally for the run
/// without form and wall losses. Quoted next to our own numbers.
pub const REFERENCE_NO_LOSS_PEAK_VELOCITY: f64 = 417.65;
pub const REFERENCE_NO_LOSS_PEAK_HEIGHT: f64 = 0.977;

#[derive(Debug, Parser)]
#[command(name = "napinn", version, about = "Tank-cascade emulator and physics-informed network solvers")]
pub struct Cli {
    /// Root under which default output directories are created.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    pub out_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// March the emulator and write the trajectory.
    Simulate(SimulateArgs),
    /// Run the term-toggle matrix and summarize peak values.
    Sensitivity(SensitivityArgs),
    /// Train a vanilla or node-assigned network model.
    Train(TrainArgs),
    /// Compare a trained model against an emulator trajectory.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct EmulatorArgs {
    /// Scenario file (`key = value`); six default tanks when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Time step, s.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Maximum simulated time, s.
    #[arg(long, default_value_t = 5000.0)]
    pub t_end: f64,
    /// Keep every n-th step in the trajectory.
    #[arg(long, default_value_t = 1)]
    pub record_interval: usize,
    /// Keep marching after the last two tanks equalize.
    #[arg(long)]
    pub no_stop: bool,
    /// Iteration limit of the per-pipe velocity solve.
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Let transfers overdraw the donor or overfill the receiver.
    #[arg(long)]
    pub uncapped: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub emulator: EmulatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub emulator: EmulatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Runs to execute concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `vanilla-N` or `napinn-N`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Training config file; its keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario file; defaults to the preset's tank count.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of collocation points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Print a loss line every n epochs (0 disables).
    #[arg(long, default_value_t = 1000)]
    pub log_every: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Training output directory or the `model` directory inside it.
    #[arg(long)]
    pub model: PathBuf,
    /// Reference trajectory CSV. When omitted the emulator is run on the
    /// model's scenario over the training window.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Emulator step for the generated reference, s.
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// SHA-256 over the command and the resolved contents of every input.
    pub input_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub version: String,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let printable: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &printable) {
        Ok(out) => {
            println!("{}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

/// Runs a parsed command and returns its output directory.
pub fn execute(cli: &Cli, args: &[String]) -> Result<PathBuf> {
    let started = now();
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a, args, started),
        Command::Sensitivity(a) => sensitivity(cli, a, args, started),
        Command::Train(a) => train(cli, a, args, started),
        Command::Compare(a) => compare_cmd(cli, a, args, started),
    }
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Inputs {
    hasher: Sha256,
    paths: Vec<PathBuf>,
}

impl Inputs {
    fn new(command: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        Self {
            hasher,
            paths: Vec::new(),
        }
    }

    fn add(&mut self, label: &str, content: &str) {
        self.hasher.update([0u8]);
        self.hasher.update(label.as_bytes());
        self.hasher.update([0u8]);
        self.hasher.update(content.as_bytes());
    }

    fn read_config(&mut self, path: &Path) -> Result<KvConfig> {
        let cfg = KvConfig::from_file(path)?;
        self.paths.push(path.to_path_buf());
        Ok(cfg)
    }

    fn digest(self) -> (String, Vec<PathBuf>) {
        let d = self.hasher.finalize();
        (d.iter().map(|b| format!("{b:02x}")).collect(), self.paths)
    }
}

fn resolve_out(cli: &Cli, explicit: &Option<PathBuf>, command: &str, hash: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cli.out_root.join(format!("{command}-{}", &hash[..12])))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    dir: &Path,
    command: &str,
    args: &[String],
    paths: Vec<PathBuf>,
    seed: Option<u64>,
    hash: String,
    started: f64,
) -> Result<()> {
    write_json(
        &dir.join("manifest.json"),
        &RunManifest {
            command: command.into(),
            args: args.to_vec(),
            config_paths: paths,
            seed,
            out_dir: dir.to_path_buf(),
            input_hash: hash,
            started_unix: started,
            finished_unix: now(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

fn resolve_emulator(a: &EmulatorArgs, inputs: &mut Inputs) -> Result<(Scenario, StepParams, RunOptions)> {
    let s = match &a.scenario {
        Some(p) => build_scenario(&inputs.read_config(p)?)?,
        None => Scenario::default(),
    };
    let p = StepParams {
        dt: a.dt,
        max_iterations: a.max_iterations,
        cap_transfer: !a.uncapped,
        ..StepParams::default()
    };
    p.validate()?;
    let opts = RunOptions {
        t_end: a.t_end,
        record_interval: a.record_interval,
        stop_on_equalization: !a.no_stop,
        ..RunOptions::default()
    };
    if !(opts.t_end.is_finite() && opts.t_end > 0.0) {
        return Err(Error::config(None, format!("t_end must be positive, got {}", opts.t_end)));
    }
    if opts.record_interval == 0 {
        return Err(Error::config(None, "record_interval must be at least 1"));
    }
    inputs.add("scenario", &s.to_config().to_text());
    inputs.add("step", &serde_json::to_string(&p)?);
    inputs.add("run", &serde_json::to_string(&opts)?);
    Ok((s, p, opts))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    scenario_hash: &'a str,
    termination: Termination,
    final_time: f64,
    records: usize,
    mean_iterations: f64,
    stats: &'a IterationStats,
    step: &'a StepParams,
    run: &'a RunOptions,
}

fn write_simulation(dir: &Path, sim: &Simulation) -> Result<()> {
    create_dir(dir)?;
    sim.series.save_csv(&dir.join("trajectory.csv"))?;
    write_json(
        &dir.join("meta.json"),
        &RunMeta {
            scenario_hash: &sim.series.meta.scenario_hash,
            termination: sim.series.meta.termination,
            final_time: sim.series.last().map_or(0.0, |s| s.time),
            records: sim.series.len(),
            mean_iterations: sim.stats.mean_iterations(),
            stats: &sim.stats,
            step: &sim.params,
            run: &sim.options,
        },
    )
}

fn simulate(cli: &Cli, a: &SimulateArgs, args: &[String], started: f64) -> Result<PathBuf> {
    let mut inputs = Inputs::new("simulate");
    let (s, p, opts) = resolve_emulator(&a.emulator, &mut inputs)?;
    let sim = run_with(&s, &p, &opts)?;
    let (hash, paths) = inputs.digest();
    let dir = resolve_out(cli, &a.out, "simulate", &hash);
    write_simulation(&dir, &sim)?;
    write_text(&dir.join("scenario.cfg"), &s.to_config().to_text())?;
    write_manifest(&dir, "simulate", args, paths, None, hash, started)?;
    Ok(dir)
}

#[derive(Serialize)]
struct CaseSummary {
    name: String,
    termination: Termination,
    final_time: f64,
    peak_velocity: f64,
    peak_velocity_per_pipe: Vec<f64>,
    peak_height: f64,
    peak_height_per_tank: Vec<f64>,
    /// Highest depth reached by each tank other than the first, which
    /// starts full.
    peak_rise: f64,
}

#[derive(Serialize)]
struct SensitivitySummary {
    cases: Vec<CaseSummary>,
    /// Peak velocity without form/wall loss over peak velocity with all terms.
    no_form_wall_loss_velocity_ratio: f64,
    /// Whether disabling interphase exchange left the trajectory unchanged
    /// bit for bit.
    interphase_exchange_identical: bool,
    reference_no_loss_peak_velocity: f64,
    reference_no_loss_peak_height: f64,
}

fn summarize(name: &str, sim: &Simulation) -> CaseSummary {
    let mut peak_depth = vec![0.0f64; sim.series.n_tanks];
    let mut peak_velocity = vec![0.0f64; sim.series.n_tanks - 1];
    for st in &sim.series.states {
        for (p, &d) in peak_depth.iter_mut().zip(&st.depths) {
            *p = p.max(d);
        }
        for (p, &v) in peak_velocity.iter_mut().zip(&st.velocities) {
            *p = p.max(v);
        }
    }
    // the stats also see unrecorded steps
    for (p, &v) in peak_velocity.iter_mut().zip(&sim.stats.peak_velocity) {
        *p = p.max(v);
    }
    for (p, &d) in peak_depth.iter_mut().zip(&sim.stats.peak_depth) {
        *p = p.max(d);
    }
    CaseSummary {
        name: name.into(),
        termination: sim.series.meta.termination,
        final_time: sim.series.last().map_or(0.0, |s| s.time),
        peak_velocity: peak_velocity.iter().copied().fold(0.0, f64::max),
        peak_height: peak_depth.iter().copied().fold(0.0, f64::max),
        peak_rise: peak_depth[1..].iter().copied().fold(0.0, f64::max),
        peak_velocity_per_pipe: peak_velocity,
        peak_height_per_tank: peak_depth,
    }
}

fn sensitivity(cli: &Cli, a: &SensitivityArgs, args: &[String], started: f64) -> Result<PathBuf> {
    let mut inputs = Inputs::new("sensitivity");
    let (s, p, opts) = resolve_emulator(&a.emulator, &mut inputs)?;
    if a.jobs == 0 {
        return Err(Error::config(None, "jobs must be at least 1"));
    }
    let cases: Vec<Scenario> = SENSITIVITY_CASES.iter().map(|n| sensitivity_case(&s, n)).collect();
    let mut sims: Vec<Option<Result<Simulation>>> = (0..cases.len()).map(|_| None).collect();
    for chunk in (0..cases.len()).collect::<Vec<_>>().chunks(a.jobs) {
        let results: Vec<(usize, Result<Simulation>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let case = &cases[i];
                    scope.spawn(move || (i, run_with(case, &p, &opts)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sensitivity worker panicked")).collect()
        });
        for (i, r) in results {
            sims[i] = Some(r);
        }
    }
    let sims: Vec<Simulation> = sims.into_iter().map(|r| r.expect("every case ran")).collect::<Result<_>>()?;

    let (hash, paths) = inputs.digest();
    let dir = resolve_out(cli, &a.out, "sensitivity", &hash);
    let mut summaries = Vec::new();
    for (name, sim) in SENSITIVITY_CASES.iter().zip(&sims) {
        write_simulation(&dir.join(name), sim)?;
        summaries.push(summarize(name, sim));
    }
    let identical = sims[0].series.states == sims[2].series.states;
    let summary = SensitivitySummary {
        no_form_wall_loss_velocity_ratio: summaries[1].peak_velocity / summaries[0].peak_velocity,
        interphase_exchange_identical: identical,
        cases: summaries,
        reference_no_loss_peak_velocity: REFERENCE_NO_LOSS_PEAK_VELOCITY,
        reference_no_loss_peak_height: REFERENCE_NO_LOSS_PEAK_HEIGHT,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_text(&dir.join("scenario.cfg"), &s.to_config().to_text())?;
    write_manifest(&dir, "sensitivity", args, paths, None, hash, started)?;
    Ok(dir)
}

fn train(cli: &Cli, a: &TrainArgs, args: &[String], started: f64) -> Result<PathBuf> {
    let mut inputs = Inputs::new("train");
    let scenario = match &a.scenario {
        Some(p) => Some(build_scenario(&inputs.read_config(p)?)?),
        None => None,
    };
    let file_cfg = match &a.config {
        Some(p) => Some(inputs.read_config(p)?),
        None => None,
    };
    let from_preset = match &a.preset {
        Some(name) => Some(preset(name).map_err(|e| Error::config(None, e.to_string()))?),
        None => None,
    };
    let s = match (&scenario, &from_preset) {
        (Some(s), Some((n, _))) if s.n_tanks != *n => {
            return Err(Error::config(
                None,
                format!("scenario has {} tanks but the preset is for {n}", s.n_tanks),
            ))
        }
        (Some(s), _) => s.clone(),
        (None, Some((n, _))) => Scenario::with_tanks(*n),
        (None, None) => Scenario::default(),
    };
    let empty = KvConfig::new();
    let file_cfg = file_cfg.as_ref().unwrap_or(&empty);
    let mut cfg = match &from_preset {
        Some((_, base)) => apply_overrides(file_cfg, base)?,
        None => build_training_config(file_cfg, s.n_tanks)?,
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(p) = a.points {
        cfg.n_collocation = p;
    }
    cfg.validate()?;
    let cfg_text = cfg.to_config().to_text();
    inputs.add("scenario", &s.to_config().to_text());
    inputs.add("training", &cfg_text);
    let (hash, paths) = inputs.digest();
    let dir = resolve_out(cli, &a.out, "train", &hash);
    create_dir(&dir)?;
    write_text(&dir.join("training.cfg"), &cfg_text)?;
    write_text(&dir.join("scenario.cfg"), &s.to_config().to_text())?;

    let label = match cfg.mode {
        Mode::Vanilla => "vanilla",
        Mode::NodeAssigned => "node-assigned",
    };
    eprintln!(
        "training {label} model: {} networks, {} parameters, {} points, {} epochs",
        cfg.specs(s.n_tanks).len(),
        cfg.total_params(s.n_tanks),
        cfg.n_collocation,
        cfg.epochs
    );
    let log_every = a.log_every;
    let result = train_with(&cfg, &s, &TrainOutput { dir: Some(dir.clone()) }, |r| {
        if log_every > 0 && r.epoch % log_every == 0 {
            eprintln!(
                "epoch {:>6}  loss {:.6e}  momentum {:.6e}  continuity {:.6e}  lr {:.3e}",
                r.epoch, r.total, r.momentum, r.continuity, r.lr
            );
        }
    });
    let outcome = result.and_then(|model| model.save(&dir.join("model")));
    write_manifest(&dir, "train", args, paths, Some(cfg.seed), hash, started)?;
    outcome?;
    Ok(dir)
}

fn model_dir(path: &Path) -> PathBuf {
    let nested = path.join("model");
    if nested.join("model.json").exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn compare_cmd(cli: &Cli, a: &CompareArgs, args: &[String], started: f64) -> Result<PathBuf> {
    let mut inputs = Inputs::new("compare");
    let model = TrainedModel::load(&model_dir(&a.model)).map_err(|e| Error::config(None, e.to_string()))?;
    let grid = model.grid()?;
    let reference = match &a.reference {
        Some(p) => {
            let series = TimeSeries::load_csv(p).map_err(|e| Error::config(None, e.to_string()))?;
            inputs.paths.push(p.clone());
            series
        }
        None => {
            let p = StepParams {
                dt: a.dt,
                ..StepParams::default()
            };
            p.validate()?;
            let opts = RunOptions {
                stop_on_equalization: false,
                ..RunOptions::until(model.t_max)
            };
            run_with(&model.scenario, &p, &opts)?.series
        }
    };
    let mut csv = Vec::new();
    reference.write_csv(&mut csv).map_err(|e| Error::io("<memory>", e))?;
    inputs.add("reference", &String::from_utf8_lossy(&csv));
    for net in &model.nets {
        let bytes: Vec<u8> = net.values.iter().flat_map(|x| x.to_le_bytes()).collect();
        inputs.hasher.update(&bytes);
    }
    let prediction = model.predict(&grid.points)?;
    let report: ComparisonReport = compare(&prediction.series, &reference, &grid.points)
        .map_err(|e| Error::config(None, format!("reference does not cover the model window: {e}")))?;

    let (hash, paths) = inputs.digest();
    let dir = resolve_out(cli, &a.out, "compare", &hash);
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    let label = match model.mode {
        Mode::Vanilla => "vanilla",
        Mode::NodeAssigned => "node_assigned",
    };
    let mut table = Vec::new();
    write_table_csv(
        &mut table,
        &[TableRow {
            model: label,
            parameters: model.total_params(),
            report: &report,
        }],
    )
    .map_err(|e| Error::io(dir.join("table.csv"), e))?;
    write_text(&dir.join("table.csv"), &String::from_utf8_lossy(&table))?;
    prediction.series.save_csv(&dir.join("prediction.csv"))?;
    write_manifest(&dir, "compare", args, paths, Some(model.seed), hash, started)?;
    eprintln!(
        "height MAE {:.6e}  velocity MAE {:.6e}  height MSE {:.6e}  velocity MSE {:.6e}",
        report.height_mae, report.velocity_mae, report.height_mse, report.velocity_mse
    );
    Ok(dir)
}

//! Vanilla and node-assigned PINN training.
//!
//! Both modes share the collocation grid, the hard-constraint shift and the
//! loss; they differ only in how network outputs map onto the `2N − 1` state
//! variables. A vanilla model is one network with `2N − 1` outputs; a
//! node-assigned model has one single-output network per variable, with
//! network `k` initialized on ChaCha stream `k`.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{fmt_f64, KvConfig};
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, forward_batch_with_rates, he_init, he_init_stream, load_checkpoint, loss_gradient, param_count,
    save_checkpoint, Batch, NetworkParams, NetworkSpec, OptimizerState,
};
use crate::physics::{scale_time, total_loss, total_loss_with_adjoint, CollocationGrid, LossWeights, ResidualReport};
use crate::scenario::{initial_state, Scenario, SeriesMeta, SystemState, Termination, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    NodeAssigned,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vanilla => "vanilla",
            Mode::NodeAssigned => "node_assigned",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "node_assigned" | "napinn" => Ok(Mode::NodeAssigned),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected vanilla or node_assigned)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub end_time: f64,
    pub n_collocation: usize,
    pub epochs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Convert network time derivatives from scaled to physical time.
    pub chain_rule: bool,
    /// Epochs between checkpoints when writing to an output directory.
    pub checkpoint_interval: usize,
}

fn round_up_to(x: f64, step: f64) -> f64 {
    (x / step).ceil() * step
}

/// Preset hyperparameters. `N = 2, 3, 6` reproduce the published case
/// matrix; other sizes extrapolate linearly through the `N = 3` and `N = 6`
/// rows.
pub fn default_config(n_tanks: usize, mode: Mode) -> TrainingConfig {
    let (end_time, n_collocation, epochs, vanilla_width) = match n_tanks {
        0..=2 => (1000.0, 2500, 30_000, 192),
        3 => (1400.0, 3000, 40_000, 256),
        6 => (2800.0, 6000, 50_000, 368),
        n => {
            let end = round_up_to(1400.0 + (n as f64 - 3.0) * 1400.0 / 3.0, 100.0);
            let width = (256.0 + (n as f64 - 3.0) * 112.0 / 3.0) / 8.0;
            (end, (end * 3000.0 / 1400.0).ceil() as usize, 50_000, 8 * width.round() as usize)
        }
    };
    let (hidden_layers, hidden_width) = match mode {
        Mode::Vanilla => (10, vanilla_width),
        Mode::NodeAssigned => (8, 128),
    };
    TrainingConfig {
        mode,
        end_time,
        n_collocation,
        epochs,
        hidden_layers,
        hidden_width,
        base_lr: 1e-4,
        lr_decay: 0.9999,
        weights: LossWeights::default(),
        seed: 0,
        chain_rule: true,
        checkpoint_interval: 1000,
    }
}

/// Resolves a preset name such as `vanilla-2` or `napinn-6`.
pub fn preset(name: &str) -> Result<(usize, TrainingConfig)> {
    let (kind, n) = name
        .rsplit_once('-')
        .ok_or_else(|| Error::InvalidArgument(format!("bad preset `{name}`")))?;
    let mode = match kind {
        "vanilla" => Mode::Vanilla,
        "napinn" => Mode::NodeAssigned,
        _ => return Err(Error::InvalidArgument(format!("bad preset `{name}`"))),
    };
    let n: usize = n
        .parse()
        .ok()
        .filter(|&n| n >= 2)
        .ok_or_else(|| Error::InvalidArgument(format!("bad preset `{name}`")))?;
    Ok((n, default_config(n, mode)))
}

const KEYS: &[&str] = &[
    "mode",
    "end_time",
    "n_collocation",
    "epochs",
    "hidden_layers",
    "hidden_width",
    "base_lr",
    "lr_decay",
    "momentum_weight",
    "continuity_weight",
    "seed",
    "chain_rule",
    "checkpoint_interval",
];

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(None, msg));
        if !(self.end_time > 0.0 && self.end_time.is_finite()) {
            return bad(format!("end_time must be positive, got {}", self.end_time));
        }
        if self.n_collocation < 2 {
            return bad(format!("n_collocation must be at least 2, got {}", self.n_collocation));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return bad("hidden_layers and hidden_width must be at least 1".into());
        }
        if !(self.base_lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("need base_lr > 0 and 0 < lr_decay <= 1, got {} and {}", self.base_lr, self.lr_decay));
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be at least 1".into());
        }
        self.weights
            .validate()
            .map_err(|e| Error::config(None, e.to_string()))
    }

    /// Network shapes for a cascade of `n_tanks`.
    pub fn specs(&self, n_tanks: usize) -> Vec<NetworkSpec> {
        let nvar = 2 * n_tanks - 1;
        match self.mode {
            Mode::Vanilla => vec![NetworkSpec::new(self.hidden_layers, self.hidden_width, nvar)],
            Mode::NodeAssigned => vec![NetworkSpec::new(self.hidden_layers, self.hidden_width, 1); nvar],
        }
    }

    pub fn total_params(&self, n_tanks: usize) -> usize {
        self.specs(n_tanks).iter().map(param_count).sum()
    }

    pub fn grid(&self) -> Result<CollocationGrid> {
        CollocationGrid::new(0.0, self.end_time, self.n_collocation)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.set("mode", self.mode);
        c.set("end_time", fmt_f64(self.end_time));
        c.set("n_collocation", self.n_collocation);
        c.set("epochs", self.epochs);
        c.set("hidden_layers", self.hidden_layers);
        c.set("hidden_width", self.hidden_width);
        c.set("base_lr", fmt_f64(self.base_lr));
        c.set("lr_decay", fmt_f64(self.lr_decay));
        c.set("momentum_weight", fmt_f64(self.weights.momentum));
        c.set("continuity_weight", fmt_f64(self.weights.continuity));
        c.set("seed", self.seed);
        c.set("chain_rule", if self.chain_rule { "on" } else { "off" });
        c.set("checkpoint_interval", self.checkpoint_interval);
        c
    }
}

/// Builds a training config from key-value pairs. Omitted keys take the
/// preset for `n_tanks` and the configured `mode` (node-assigned by default).
pub fn build_training_config(cfg: &KvConfig, n_tanks: usize) -> Result<TrainingConfig> {
    let mode = match cfg.raw("mode") {
        None => Mode::NodeAssigned,
        Some(m) => m.parse().map_err(|e: Error| Error::config(cfg.line_of("mode"), e.to_string()))?,
    };
    apply_overrides(cfg, &default_config(n_tanks, mode))
}

/// Overrides fields of `base` with the keys present in `cfg`. A `mode` key
/// must agree with `base.mode`.
pub fn apply_overrides(cfg: &KvConfig, base: &TrainingConfig) -> Result<TrainingConfig> {
    cfg.check_known(KEYS)?;
    if let Some(m) = cfg.raw("mode") {
        let mode: Mode = m.parse().map_err(|e: Error| Error::config(cfg.line_of("mode"), e.to_string()))?;
        if mode != base.mode {
            return Err(Error::config(
                cfg.line_of("mode"),
                format!("mode `{mode}` conflicts with the selected `{}` preset", base.mode),
            ));
        }
    }
    let d = base;
    let c = TrainingConfig {
        mode: d.mode,
        end_time: cfg.get_or("end_time", d.end_time)?,
        n_collocation: cfg.get_or("n_collocation", d.n_collocation)?,
        epochs: cfg.get_or("epochs", d.epochs)?,
        hidden_layers: cfg.get_or("hidden_layers", d.hidden_layers)?,
        hidden_width: cfg.get_or("hidden_width", d.hidden_width)?,
        base_lr: cfg.get_or("base_lr", d.base_lr)?,
        lr_decay: cfg.get_or("lr_decay", d.lr_decay)?,
        weights: LossWeights {
            momentum: cfg.get_or("momentum_weight", d.weights.momentum)?,
            continuity: cfg.get_or("continuity_weight", d.weights.continuity)?,
        },
        seed: cfg.get_or("seed", d.seed)?,
        chain_rule: cfg.get_bool_or("chain_rule", d.chain_rule)?,
        checkpoint_interval: cfg.get_or("checkpoint_interval", d.checkpoint_interval)?,
    };
    c.validate().map_err(|e| match e {
        Error::Config { line: None, message } => {
            let line = KEYS
                .iter()
                .find(|k| message.starts_with(*k))
                .and_then(|k| cfg.line_of(k));
            Error::Config { line, message }
        }
        other => other,
    })?;
    Ok(c)
}

/// One row of `loss_history.csv`, measured before that epoch's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub momentum: f64,
    pub continuity: f64,
    pub lr: f64,
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,total,momentum,continuity,lr";

pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{LOSS_HISTORY_HEADER}").map_err(io)?;
    for r in history {
        writeln!(w, "{},{:.16e},{:.16e},{:.16e},{:.16e}", r.epoch, r.total, r.momentum, r.continuity, r.lr).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_loss_history(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HISTORY_HEADER) {
        return Err(Error::Checkpoint(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Checkpoint(format!("{}: malformed row {}", path.display(), i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                total: num(f[1])?,
                momentum: num(f[2])?,
                continuity: num(f[3])?,
                lr: num(f[4])?,
            })
        })
        .collect()
}

/// Trained networks plus everything needed to evaluate them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mode: Mode,
    pub scenario: Scenario,
    pub t_min: f64,
    pub t_max: f64,
    /// Size of the training grid on `[t_min, t_max]`.
    pub n_collocation: usize,
    /// Initial condition `[h_1..h_N, v_1..v_{N-1}]` imposed by the shift.
    pub u0: Vec<f64>,
    pub nets: Vec<NetworkParams>,
    pub chain_rule: bool,
    pub seed: u64,
    pub epochs: usize,
    pub history: Vec<LossRecord>,
}

/// Output of [`TrainedModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub series: TimeSeries,
    /// Some requested time lay outside the training window.
    pub extrapolated: bool,
}

/// Shifted physical-time state and rates at `inputs[1..]`, given raw network
/// outputs on `inputs` with `inputs[0] = 0`.
fn assemble(mode: Mode, raw: &[Batch], u0: &[f64], rate_factor: f64) -> Batch {
    let rows = raw[0].values.rows() - 1;
    let nvar = u0.len();
    let mut out = Batch::zeros(rows, nvar);
    for c in 0..nvar {
        let (net, col) = match mode {
            Mode::Vanilla => (0, c),
            Mode::NodeAssigned => (c, 0),
        };
        let b = &raw[net];
        let origin = b.values.get(0, col);
        for k in 0..rows {
            out.values.set(k, c, b.values.get(k + 1, col) - origin + u0[c]);
            out.rates.set(k, c, b.rates.get(k + 1, col) * rate_factor);
        }
    }
    out
}

/// Adjoint of [`assemble`]: maps adjoints of the assembled state back onto the
/// raw outputs of each network.
fn disassemble(mode: Mode, adj: &Batch, nets: &[NetworkParams], rate_factor: f64) -> Vec<Batch> {
    let rows = adj.values.rows();
    let mut raw: Vec<Batch> = nets.iter().map(|n| Batch::zeros(rows + 1, n.spec.output_dim)).collect();
    for c in 0..adj.values.cols() {
        let (net, col) = match mode {
            Mode::Vanilla => (0, c),
            Mode::NodeAssigned => (c, 0),
        };
        let b = &mut raw[net];
        let mut origin = 0.0;
        for k in 0..rows {
            let g = adj.values.get(k, c);
            b.values.set(k + 1, col, g);
            origin -= g;
            b.rates.set(k + 1, col, adj.rates.get(k, c) * rate_factor);
        }
        b.values.set(0, col, origin);
    }
    raw
}

fn network_inputs(scaled: &[f64]) -> Vec<f64> {
    let mut inputs = Vec::with_capacity(scaled.len() + 1);
    inputs.push(0.0);
    inputs.extend_from_slice(scaled);
    inputs
}

impl TrainedModel {
    fn rate_factor(&self) -> f64 {
        if self.chain_rule {
            1.0 / (self.t_max - self.t_min)
        } else {
            1.0
        }
    }

    pub fn n_tanks(&self) -> usize {
        self.scenario.n_tanks
    }

    pub fn total_params(&self) -> usize {
        self.nets.iter().map(NetworkParams::len).sum()
    }

    /// The collocation grid the model was trained on.
    pub fn grid(&self) -> Result<CollocationGrid> {
        CollocationGrid::new(self.t_min, self.t_max, self.n_collocation)
    }

    /// Shifted states and physical-time rates at `times`, one row per time.
    pub fn evaluate(&self, times: &[f64]) -> Result<Batch> {
        let scaled = times
            .iter()
            .map(|&t| scale_time(t, self.t_min, self.t_max))
            .collect::<Result<Vec<_>>>()?;
        let inputs = network_inputs(&scaled);
        let raw: Vec<Batch> = self.nets.iter().map(|n| forward_batch_with_rates(n, &inputs)).collect();
        Ok(assemble(self.mode, &raw, &self.u0, self.rate_factor()))
    }

    /// Residual report of the model on `grid`.
    pub fn residuals(&self, grid: &CollocationGrid, weights: &LossWeights) -> Result<ResidualReport> {
        total_loss(&self.evaluate(&grid.points)?, &grid.points, weights, &self.scenario)
    }

    /// Samples the model at strictly increasing `times`.
    pub fn predict(&self, times: &[f64]) -> Result<Prediction> {
        let b = self.evaluate(times)?;
        let mut series = TimeSeries::new(
            self.n_tanks(),
            SeriesMeta {
                scenario_hash: self.scenario.content_hash(),
                dt: 0.0,
                termination: Termination::Sampled,
            },
        );
        for (k, &t) in times.iter().enumerate() {
            series.push(SystemState::from_vector(t, self.n_tanks(), b.values.row(k)))?;
        }
        let extrapolated = times.iter().any(|&t| t < self.t_min || t > self.t_max);
        Ok(Prediction { series, extrapolated })
    }

    /// Writes `model.json`, `net_<k>.bin` and `loss_history.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files: Vec<String> = (0..self.nets.len()).map(|k| format!("net_{k}.bin")).collect();
        for (net, file) in self.nets.iter().zip(&files) {
            save_checkpoint(&dir.join(file), net, self.seed, self.epochs as u64)?;
        }
        write_loss_history(&dir.join("loss_history.csv"), &self.history)?;
        let header = ModelFile {
            mode: self.mode,
            scenario: self.scenario.clone(),
            t_min: self.t_min,
            t_max: self.t_max,
            n_collocation: self.n_collocation,
            u0: self.u0.clone(),
            chain_rule: self.chain_rule,
            seed: self.seed,
            epochs: self.epochs,
            networks: files,
            total_params: self.total_params(),
        };
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let header: ModelFile = serde_json::from_str(&text)?;
        header.scenario.validate()?;
        let nets = header
            .networks
            .iter()
            .map(|f| load_checkpoint(&dir.join(f)).map(|c| c.params))
            .collect::<Result<Vec<_>>>()?;
        let history_path = dir.join("loss_history.csv");
        let history = if history_path.exists() {
            read_loss_history(&history_path)?
        } else {
            Vec::new()
        };
        let model = Self {
            mode: header.mode,
            scenario: header.scenario,
            t_min: header.t_min,
            t_max: header.t_max,
            n_collocation: header.n_collocation,
            u0: header.u0,
            nets,
            chain_rule: header.chain_rule,
            seed: header.seed,
            epochs: header.epochs,
            history,
        };
        model.check_wiring()?;
        Ok(model)
    }

    fn check_wiring(&self) -> Result<()> {
        let nvar = self.scenario.n_variables();
        let ok = self.u0.len() == nvar
            && match self.mode {
                Mode::Vanilla => self.nets.len() == 1 && self.nets[0].spec.output_dim == nvar,
                Mode::NodeAssigned => self.nets.len() == nvar && self.nets.iter().all(|n| n.spec.output_dim == 1),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{} model with {} networks does not fit {} variables",
                self.mode,
                self.nets.len(),
                nvar
            )))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    mode: Mode,
    scenario: Scenario,
    t_min: f64,
    t_max: f64,
    n_collocation: usize,
    u0: Vec<f64>,
    chain_rule: bool,
    seed: u64,
    epochs: usize,
    networks: Vec<String>,
    total_params: usize,
}

/// Freshly initialized networks for `cfg` on `s`.
pub fn init_networks(cfg: &TrainingConfig, s: &Scenario) -> Result<Vec<NetworkParams>> {
    let specs = cfg.specs(s.n_tanks);
    match cfg.mode {
        Mode::Vanilla => Ok(vec![he_init(&specs[0], cfg.seed)?]),
        Mode::NodeAssigned => specs
            .iter()
            .enumerate()
            .map(|(k, spec)| he_init_stream(spec, cfg.seed, k as u64))
            .collect(),
    }
}

/// Loss and per-network gradients at the current parameters.
pub fn loss_and_gradients(
    mode: Mode,
    nets: &[NetworkParams],
    grid: &CollocationGrid,
    u0: &[f64],
    rate_factor: f64,
    weights: &LossWeights,
    s: &Scenario,
) -> Result<(ResidualReport, Vec<Vec<f64>>)> {
    let inputs = network_inputs(&grid.scaled());
    let mut report = None;
    let (_, grads) = loss_gradient(nets, &inputs, |raw| {
        let pred = assemble(mode, raw, u0, rate_factor);
        let (r, adj) = total_loss_with_adjoint(&pred, &grid.points, weights, s)?;
        let total = r.total;
        report = Some(r);
        Ok((total, disassemble(mode, &adj, nets, rate_factor)))
    })?;
    Ok((report.expect("loss closure ran"), grads))
}

/// Where and how often [`train_with`] writes progress.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    /// Receives `checkpoints/` and `loss_history.csv` during training.
    pub dir: Option<PathBuf>,
}

fn write_checkpoints(dir: &Path, nets: &[NetworkParams], seed: u64, epoch: usize, history: &[LossRecord]) -> Result<()> {
    let ck = dir.join("checkpoints");
    std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
    for (k, net) in nets.iter().enumerate() {
        save_checkpoint(&ck.join(format!("net_{k}.bin")), net, seed, epoch as u64)?;
    }
    write_loss_history(&dir.join("loss_history.csv"), history)
}

pub fn train(cfg: &TrainingConfig, s: &Scenario) -> Result<TrainedModel> {
    train_with(cfg, s, &TrainOutput::default(), |_| {})
}

/// Full-batch training on a fixed grid. `observer` sees every loss record.
///
/// On a non-finite loss the run stops with [`Error::NonFinite`] carrying the
/// epoch; when an output directory is set, the last finite parameters are
/// checkpointed first.
pub fn train_with<F: FnMut(&LossRecord)>(
    cfg: &TrainingConfig,
    s: &Scenario,
    out: &TrainOutput,
    mut observer: F,
) -> Result<TrainedModel> {
    cfg.validate()?;
    s.validate()?;
    let grid = cfg.grid()?;
    let u0 = initial_state(s).to_vector();
    let rate_factor = if cfg.chain_rule { grid.chain_factor() } else { 1.0 };
    let mut nets = init_networks(cfg, s)?;
    let mut optimizers: Vec<OptimizerState> = nets
        .iter()
        .map(|n| OptimizerState::new(n.len(), cfg.base_lr, cfg.lr_decay))
        .collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (report, grads) = match loss_and_gradients(cfg.mode, &nets, &grid, &u0, rate_factor, &cfg.weights, s) {
            Ok(x) => x,
            Err(Error::NonFinite { what, point, .. }) => {
                if let Some(dir) = &out.dir {
                    write_checkpoints(dir, &nets, cfg.seed, epoch, &history)?;
                }
                return Err(Error::NonFinite { what, epoch, point });
            }
            Err(e) => return Err(e),
        };
        let record = LossRecord {
            epoch,
            total: report.total,
            momentum: report.momentum_loss,
            continuity: report.continuity_loss,
            lr: optimizers[0].current_lr(),
        };
        observer(&record);
        history.push(record);
        for ((net, g), opt) in nets.iter_mut().zip(&grads).zip(&mut optimizers) {
            adam_step(&mut net.values, g, opt)?;
        }
        if let Some(dir) = &out.dir {
            if (epoch + 1) % cfg.checkpoint_interval == 0 {
                write_checkpoints(dir, &nets, cfg.seed, epoch + 1, &history)?;
            }
        }
    }

    let model = TrainedModel {
        mode: cfg.mode,
        scenario: s.clone(),
        t_min: grid.t_min,
        t_max: grid.t_max,
        n_collocation: grid.len(),
        u0,
        nets,
        chain_rule: cfg.chain_rule,
        seed: cfg.seed,
        epochs: cfg.epochs,
        history,
    };
    if let Some(dir) = &out.dir {
        write_checkpoints(dir, &model.nets, cfg.seed, cfg.epochs, &model.history)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mode: Mode) -> TrainingConfig {
        TrainingConfig {
            end_time: 50.0,
            n_collocation: 11,
            epochs: 5,
            hidden_layers: 2,
            hidden_width: 6,
            seed: 3,
            ..default_config(2, mode)
        }
    }

    #[test]
    fn presets() {
        let v6 = default_config(6, Mode::Vanilla);
        assert_eq!((v6.end_time, v6.n_collocation, v6.epochs), (2800.0, 6000, 50_000));
        assert_eq!((v6.hidden_layers, v6.hidden_width), (10, 368));
        let n2 = default_config(2, Mode::NodeAssigned);
        assert_eq!(n2.specs(2), vec![NetworkSpec::new(8, 128, 1); 3]);
        assert_eq!(n2.total_params(2), 347_907);
        assert!((n2.grid().unwrap().spacing() - 0.4).abs() < 1e-3);
        assert_eq!(default_config(3, Mode::Vanilla).total_params(3), 593_925);
        assert_eq!(default_config(6, Mode::NodeAssigned).total_params(6), 1_275_659);
        let (n, c) = preset("vanilla-2").unwrap();
        assert_eq!((n, c.total_params(2)), (2, 334_467));
        assert!(preset("napinn-1").is_err());
        assert!(preset("foo-2").is_err());
        let x = default_config(4, Mode::Vanilla);
        assert!(x.end_time > 1400.0 && x.end_time < 2800.0);
        assert!(x.hidden_width > 256 && x.hidden_width < 368);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = TrainingConfig {
            seed: 17,
            chain_rule: false,
            ..default_config(3, Mode::Vanilla)
        };
        let back = build_training_config(&c.to_config(), 3).unwrap();
        assert_eq!(back, c);
        let bad = KvConfig::parse("mode = vanilla\nepochs = -3\n").unwrap();
        match build_training_config(&bad, 2) {
            Err(Error::Config { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad = KvConfig::parse("mode = sideways\n").unwrap();
        assert!(matches!(build_training_config(&bad, 2), Err(Error::Config { line: Some(1), .. })));
        let bad = KvConfig::parse("end_time = 0\n").unwrap();
        assert!(matches!(build_training_config(&bad, 2), Err(Error::Config { line: Some(1), .. })));
    }

    #[test]
    fn zero_epochs_returns_initial_condition_at_origin() {
        for mode in [Mode::Vanilla, Mode::NodeAssigned] {
            let s = Scenario::with_tanks(3);
            let cfg = TrainingConfig { epochs: 0, ..tiny(mode) };
            let m = train(&cfg, &s).unwrap();
            let b = m.evaluate(&[0.0]).unwrap();
            assert_eq!(b.values.row(0), initial_state(&s).to_vector().as_slice());
            assert!(m.history.is_empty());
        }
    }

    #[test]
    fn adjoint_of_wiring_matches_differences() {
        // assemble is linear, so <adj, assemble(x)> = <disassemble(adj), x>
        for mode in [Mode::Vanilla, Mode::NodeAssigned] {
            let s = Scenario::with_tanks(2);
            let cfg = tiny(mode);
            let nets = init_networks(&cfg, &s).unwrap();
            let mut raw: Vec<Batch> = nets.iter().map(|n| Batch::zeros(4, n.spec.output_dim)).collect();
            let mut x = 0.3;
            for b in &mut raw {
                for v in b.values.as_mut_slice().iter_mut().chain(b.rates.as_mut_slice()) {
                    x = (x * 7.1f64).fract();
                    *v = x - 0.5;
                }
            }
            let zero_u0 = vec![0.0; 3];
            let a = assemble(mode, &raw, &zero_u0, 0.25);
            let mut adj = Batch::zeros(3, 3);
            for (i, v) in adj.values.as_mut_slice().iter_mut().chain(adj.rates.as_mut_slice()).enumerate() {
                *v = (i as f64 * 0.37).sin();
            }
            let lhs: f64 = dot(&adj, &a);
            let back = disassemble(mode, &adj, &nets, 0.25);
            let rhs: f64 = back.iter().zip(&raw).map(|(g, r)| dot(g, r)).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    fn dot(a: &Batch, b: &Batch) -> f64 {
        let v: f64 = a.values.as_slice().iter().zip(b.values.as_slice()).map(|(x, y)| x * y).sum();
        let r: f64 = a.rates.as_slice().iter().zip(b.rates.as_slice()).map(|(x, y)| x * y).sum();
        v + r
    }

    #[test]
    fn training_is_deterministic() {
        let s = Scenario::with_tanks(2);
        let cfg = tiny(Mode::NodeAssigned);
        let a = train(&cfg, &s).unwrap();
        let b = train(&cfg, &s).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.nets, b.nets);
        assert_eq!(a.history.len(), 5);
    }

    #[test]
    fn predict_on_grid_matches_loss_evaluation() {
        let s = Scenario::with_tanks(2);
        let cfg = tiny(Mode::Vanilla);
        let m = train(&cfg, &s).unwrap();
        let grid = cfg.grid().unwrap();
        let r = m.residuals(&grid, &cfg.weights).unwrap();
        let (r2, _) = loss_and_gradients(m.mode, &m.nets, &grid, &m.u0, grid.chain_factor(), &cfg.weights, &s).unwrap();
        assert_eq!(r.total.to_bits(), r2.total.to_bits());
        let p = m.predict(&grid.points).unwrap();
        assert!(!p.extrapolated);
        assert_eq!(p.series.states[0].to_vector(), m.u0);
        assert!(m.predict(&[0.0, 60.0]).unwrap().extrapolated);
    }
}

//! Physical problem definition for a linear cascade of open tanks.
//!
//! Tank `i` drains into tank `i + 1` through a short pipe that leaves the
//! bottom of the donor and enters the top of the receiver. Every tank floor
//! sits `elevation_step` above the next one. Depths are always measured from a
//! tank's own floor.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{fmt_f64, KvConfig};
use crate::error::{Error, Result};

/// Momentum-equation terms that can be switched off for sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermToggles {
    /// Explicit momentum advection through the `A_p / A_t` coupling.
    pub advection: bool,
    /// Form and wall loss (the `K*` friction term).
    pub form_wall_loss: bool,
    /// Interphase momentum exchange (`f_2 L_2`).
    pub interphase_exchange: bool,
}

impl Default for TermToggles {
    fn default() -> Self {
        Self {
            advection: true,
            form_wall_loss: true,
            interphase_exchange: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_tanks: usize,
    /// Tank cross-section, m².
    pub tank_area: f64,
    /// Tank height, m.
    pub tank_height: f64,
    /// Pipe diameter, m. Also the donor depth below which the pipe inlet
    /// is partially uncovered.
    pub pipe_diameter: f64,
    /// Derived: `π (d/2)²`.
    pub pipe_area: f64,
    /// Inertial length of each pipe, m.
    pub pipe_length: f64,
    /// Drop between consecutive tank floors, m.
    pub elevation_step: f64,
    pub density: f64,
    pub gravity: f64,
    /// Net form and wall loss coefficient `K*`.
    pub loss_coefficient: f64,
    /// Open fraction `F` of every pipe.
    pub open_fraction: f64,
    pub exchange_coefficient: f64,
    pub exchange_length: f64,
    pub toggles: TermToggles,
}

const KEYS: &[&str] = &[
    "n_tanks",
    "tank_area",
    "tank_height",
    "pipe_diameter",
    "pipe_length",
    "elevation_step",
    "density",
    "gravity",
    "loss_coefficient",
    "open_fraction",
    "exchange_coefficient",
    "exchange_length",
    "advection",
    "form_wall_loss",
    "interphase_exchange",
];

impl Default for Scenario {
    fn default() -> Self {
        Self::with_tanks(6)
    }
}

impl Scenario {
    /// Default geometry with `n_tanks` tanks. Not validated.
    pub fn with_tanks(n_tanks: usize) -> Self {
        let pipe_diameter = 0.2;
        Self {
            n_tanks,
            tank_area: 50.0,
            tank_height: 2.0,
            pipe_diameter,
            pipe_area: circle_area(pipe_diameter),
            pipe_length: 0.1,
            elevation_step: 1.8,
            density: 1000.0,
            gravity: 9.81,
            loss_coefficient: 1.0,
            open_fraction: 1.0,
            exchange_coefficient: 0.0,
            exchange_length: 0.0,
            toggles: TermToggles::default(),
        }
    }

    pub fn n_pipes(&self) -> usize {
        self.n_tanks - 1
    }

    /// Number of state variables: `N` depths plus `N - 1` velocities.
    pub fn n_variables(&self) -> usize {
        2 * self.n_tanks - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tanks < 2 {
            return Err(Error::config(None, format!("n_tanks must be at least 2, got {}", self.n_tanks)));
        }
        let positive = [
            ("tank_area", self.tank_area),
            ("tank_height", self.tank_height),
            ("pipe_diameter", self.pipe_diameter),
            ("pipe_length", self.pipe_length),
            ("elevation_step", self.elevation_step),
            ("density", self.density),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(None, format!("{name} must be positive and finite, got {value}")));
            }
        }
        let non_negative = [
            ("loss_coefficient", self.loss_coefficient),
            ("exchange_coefficient", self.exchange_coefficient),
            ("exchange_length", self.exchange_length),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(None, format!("{name} must be non-negative, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.open_fraction) {
            return Err(Error::config(
                None,
                format!("open_fraction must lie in [0, 1], got {}", self.open_fraction),
            ));
        }
        if self.pipe_area != circle_area(self.pipe_diameter) {
            return Err(Error::config(None, "pipe_area is inconsistent with pipe_diameter"));
        }
        Ok(())
    }

    /// Serializes to the key-value format accepted by [`build_scenario`].
    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("n_tanks", self.n_tanks);
        cfg.set("tank_area", fmt_f64(self.tank_area));
        cfg.set("tank_height", fmt_f64(self.tank_height));
        cfg.set("pipe_diameter", fmt_f64(self.pipe_diameter));
        cfg.set("pipe_length", fmt_f64(self.pipe_length));
        cfg.set("elevation_step", fmt_f64(self.elevation_step));
        cfg.set("density", fmt_f64(self.density));
        cfg.set("gravity", fmt_f64(self.gravity));
        cfg.set("loss_coefficient", fmt_f64(self.loss_coefficient));
        cfg.set("open_fraction", fmt_f64(self.open_fraction));
        cfg.set("exchange_coefficient", fmt_f64(self.exchange_coefficient));
        cfg.set("exchange_length", fmt_f64(self.exchange_length));
        cfg.set("advection", self.toggles.advection);
        cfg.set("form_wall_loss", self.toggles.form_wall_loss);
        cfg.set("interphase_exchange", self.toggles.interphase_exchange);
        cfg
    }

    /// SHA-256 of the canonical config text, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_config().to_text().as_bytes())
    }

    /// Total liquid mass held by `depths`, kg.
    pub fn total_mass(&self, depths: &[f64]) -> f64 {
        self.density * self.tank_area * depths.iter().sum::<f64>()
    }
}

pub(crate) fn circle_area(diameter: f64) -> f64 {
    PI * (diameter / 2.0) * (diameter / 2.0)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Builds and validates a scenario from a key-value config. Omitted keys take
/// the six-tank defaults.
pub fn build_scenario(cfg: &KvConfig) -> Result<Scenario> {
    cfg.check_known(KEYS)?;
    let d = Scenario::default();
    let n_tanks: i64 = cfg.get_or("n_tanks", d.n_tanks as i64)?;
    if n_tanks < 2 {
        return Err(Error::config(
            cfg.line_of("n_tanks"),
            format!("n_tanks must be at least 2, got {n_tanks}"),
        ));
    }
    let pipe_diameter = cfg.get_or("pipe_diameter", d.pipe_diameter)?;
    let s = Scenario {
        n_tanks: n_tanks as usize,
        tank_area: cfg.get_or("tank_area", d.tank_area)?,
        tank_height: cfg.get_or("tank_height", d.tank_height)?,
        pipe_diameter,
        pipe_area: circle_area(pipe_diameter),
        pipe_length: cfg.get_or("pipe_length", d.pipe_length)?,
        elevation_step: cfg.get_or("elevation_step", d.elevation_step)?,
        density: cfg.get_or("density", d.density)?,
        gravity: cfg.get_or("gravity", d.gravity)?,
        loss_coefficient: cfg.get_or("loss_coefficient", d.loss_coefficient)?,
        open_fraction: cfg.get_or("open_fraction", d.open_fraction)?,
        exchange_coefficient: cfg.get_or("exchange_coefficient", d.exchange_coefficient)?,
        exchange_length: cfg.get_or("exchange_length", d.exchange_length)?,
        toggles: TermToggles {
            advection: cfg.get_bool_or("advection", true)?,
            form_wall_loss: cfg.get_bool_or("form_wall_loss", true)?,
            interphase_exchange: cfg.get_bool_or("interphase_exchange", true)?,
        },
    };
    s.validate().map_err(|e| match e {
        // attach the line of the offending key when we can find it
        Error::Config { line: None, message } => {
            let line = KEYS
                .iter()
                .find(|k| message.starts_with(*k))
                .and_then(|k| cfg.line_of(k));
            Error::Config { line, message }
        }
        other => other,
    })?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    build_scenario(&KvConfig::from_file(path)?)
}

/// Depths and pipe velocities at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub depths: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl SystemState {
    /// Flattened `[h_1..h_N, v_1..v_{N-1}]`, the variable order used by the
    /// neural solvers.
    pub fn to_vector(&self) -> Vec<f64> {
        self.depths.iter().chain(&self.velocities).copied().collect()
    }

    pub fn from_vector(time: f64, n_tanks: usize, values: &[f64]) -> Self {
        Self {
            time,
            depths: values[..n_tanks].to_vec(),
            velocities: values[n_tanks..].to_vec(),
        }
    }
}

/// Upstream tank full, everything else empty and at rest.
pub fn initial_state(s: &Scenario) -> SystemState {
    let mut depths = vec![0.0; s.n_tanks];
    depths[0] = s.tank_height;
    SystemState {
        time: 0.0,
        depths,
        velocities: vec![0.0; s.n_pipes()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Surface levels of the last two tanks met.
    LevelsEqualized,
    /// Reached the requested end time.
    EndTime,
    /// Produced by sampling a trained model, not by time marching.
    Sampled,
    /// Read back from a CSV file without a sidecar.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub scenario_hash: String,
    /// Time step of the producing integrator (0 when not applicable).
    pub dt: f64,
    pub termination: Termination,
}

/// Time-ordered trajectory of [`SystemState`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub n_tanks: usize,
    pub states: Vec<SystemState>,
    pub meta: SeriesMeta,
}

impl TimeSeries {
    pub fn new(n_tanks: usize, meta: SeriesMeta) -> Self {
        Self {
            n_tanks,
            states: Vec::new(),
            meta,
        }
    }

    /// Appends a state; times must be strictly increasing.
    pub fn push(&mut self, state: SystemState) -> Result<()> {
        if state.depths.len() != self.n_tanks || state.velocities.len() + 1 != self.n_tanks {
            return Err(Error::Shape(format!(
                "state has {} depths and {} velocities, series expects {} tanks",
                state.depths.len(),
                state.velocities.len(),
                self.n_tanks
            )));
        }
        if let Some(last) = self.states.last() {
            if !(state.time > last.time) {
                return Err(Error::InvalidArgument(format!(
                    "time {} does not follow {}",
                    state.time, last.time
                )));
            }
        }
        self.states.push(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn first(&self) -> Option<&SystemState> {
        self.states.first()
    }

    pub fn last(&self) -> Option<&SystemState> {
        self.states.last()
    }

    pub fn csv_header(n_tanks: usize) -> String {
        let mut cols = vec!["time".to_string()];
        cols.extend((1..=n_tanks).map(|i| format!("h{i}")));
        cols.extend((1..n_tanks).map(|j| format!("v{j}")));
        cols.join(",")
    }

    /// Writes `time,h1..hN,v1..vN-1` with 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::csv_header(self.n_tanks))?;
        let mut line = String::new();
        for s in &self.states {
            line.clear();
            let _ = write!(line, "{:.16e}", s.time);
            for x in s.depths.iter().chain(&s.velocities) {
                let _ = write!(line, ",{x:.16e}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            Some((_, Err(e))) => return Err(Error::io("<csv>", e)),
            None => return Err(Error::config(Some(1), "empty CSV")),
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        let n_cols = cols.len();
        if n_cols < 4 || n_cols % 2 != 0 || cols[0] != "time" {
            return Err(Error::config(Some(1), format!("unexpected CSV header `{header}`")));
        }
        let n_tanks = n_cols / 2;
        if header.trim() != Self::csv_header(n_tanks) {
            return Err(Error::config(Some(1), format!("unexpected CSV header `{header}`")));
        }
        let mut series = TimeSeries::new(
            n_tanks,
            SeriesMeta {
                scenario_hash: String::new(),
                dt: 0.0,
                termination: Termination::Imported,
            },
        );
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io("<csv>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(Some(idx + 1), format!("bad number: {e}")))?;
            if values.len() != n_cols {
                return Err(Error::config(
                    Some(idx + 1),
                    format!("expected {n_cols} columns, found {}", values.len()),
                ));
            }
            series
                .push(SystemState::from_vector(values[0], n_tanks, &values[1..]))
                .map_err(|e| Error::config(Some(idx + 1), e.to_string()))?;
        }
        Ok(series)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

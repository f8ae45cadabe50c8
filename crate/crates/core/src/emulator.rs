//! Semi-implicit finite-difference emulator for the tank cascade.
//!
//! Each step sweeps the pipes in index order. For every pipe the donor void
//! fraction and static head are taken from the current depths, the new pipe
//! velocity is found by fixed-point iteration on the linearized momentum
//! equation, and the resulting mass is moved from donor to receiver. Later
//! pipes see depths already updated by earlier pipes in the same step
//! (Gauss-Seidel order).
//!
//! Two quirks of the scheme are kept on purpose:
//! - the friction denominator uses `v_old + v_prev`, so at `v_old = 0` the
//!   within-step friction vanishes at the fixed point;
//! - the static head falls back to the donor depth whenever the receiver
//!   depth is below the elevation step, even if the receiver already holds
//!   some water.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{initial_state, Scenario, SeriesMeta, SystemState, Termination, TimeSeries};

/// Numerical controls for one emulator step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    /// Time step, s.
    pub dt: f64,
    /// Donor depth at or below which a pipe carries no flow, m.
    pub epsilon_dry: f64,
    /// Relative change accepted by the velocity iteration.
    pub convergence_ratio: f64,
    pub max_iterations: usize,
    /// Limit each transfer to what the donor holds and the receiver can take.
    pub cap_transfer: bool,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            epsilon_dry: 1e-6,
            convergence_ratio: 0.09,
            max_iterations: 100,
            cap_transfer: true,
        }
    }
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(None, format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.convergence_ratio > 0.0 && self.convergence_ratio < 1.0) {
            return Err(Error::config(
                None,
                format!("convergence_ratio must lie in (0, 1), got {}", self.convergence_ratio),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::config(None, "max_iterations must be at least 1"));
        }
        if !(self.epsilon_dry >= 0.0) {
            return Err(Error::config(None, "epsilon_dry must be non-negative"));
        }
        Ok(())
    }
}

/// Options for a full run on top of [`StepParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    /// Level difference (common datum) at which the last two tanks count as
    /// equalized, m.
    pub termination_epsilon: f64,
    /// Keep every `record_interval`-th state (the initial and final states
    /// are always kept).
    pub record_interval: usize,
    /// Stop as soon as the last two tanks equalize. Comparisons against a
    /// fixed time window turn this off.
    pub stop_on_equalization: bool,
}

impl RunOptions {
    pub fn until(t_end: f64) -> Self {
        Self {
            t_end,
            ..Self::default()
        }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            t_end: 5000.0,
            termination_epsilon: 1e-3,
            record_interval: 1,
            stop_on_equalization: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeFlowResult {
    pub velocity: f64,
    pub void_fraction: f64,
    pub delta_z: f64,
    pub mass_transferred: f64,
    pub iterations_used: usize,
}

/// Fraction of the pipe inlet not covered by liquid. Zero once the donor
/// depth reaches `full_depth`, rising linearly to one at an empty donor.
pub fn void_fraction(donor_depth: f64, full_depth: f64) -> f64 {
    if donor_depth >= full_depth {
        0.0
    } else {
        (1.0 - donor_depth / full_depth).clamp(0.0, 1.0)
    }
}

/// Effective head driving a pipe, from depths measured on each tank's own
/// floor. While the receiver is still below the donor floor the head is the
/// donor depth; afterwards it is the surface-level difference.
pub fn static_head(donor_depth: f64, receiver_depth: f64, elevation_step: f64) -> f64 {
    let head = if receiver_depth < elevation_step {
        donor_depth
    } else {
        donor_depth + elevation_step - receiver_depth
    };
    head.max(0.0)
}

/// Solves the linearized momentum update for one pipe by fixed-point
/// iteration. Returns the new velocity and the number of passes.
///
/// The loop stops once `|v⁺ - v⁻| < ratio·|v⁻|`, or when two successive
/// iterates are identical (which covers the all-zero case).
pub fn velocity_fixed_point(
    v_old: f64,
    alpha: f64,
    alpha_old: f64,
    delta_z: f64,
    s: &Scenario,
    p: &StepParams,
) -> Result<(f64, usize)> {
    let dt_over_l = p.dt / s.pipe_length;
    let area_ratio = s.pipe_area / s.tank_area;
    let v_o2 = v_old + (alpha_old - alpha) * (-v_old);

    let friction = if s.toggles.form_wall_loss {
        s.loss_coefficient * p.dt / (2.0 * s.pipe_length)
    } else {
        0.0
    };
    let exchange = if s.toggles.interphase_exchange {
        alpha * s.exchange_coefficient * s.exchange_length * p.dt / (s.density * s.pipe_length)
    } else {
        0.0
    };
    let (advect_num, advect_den) = if s.toggles.advection {
        (v_o2 * v_o2 * area_ratio, dt_over_l * v_o2 * area_ratio)
    } else {
        (0.0, 0.0)
    };
    let numerator_base = v_o2 + dt_over_l * (s.gravity * delta_z + advect_num);

    let mut v_minus = v_old;
    for iteration in 1..=p.max_iterations {
        let numerator = numerator_base + friction * v_minus * v_minus;
        let denominator = 1.0 + friction * (v_old + v_minus) + exchange + advect_den;
        let v_plus = numerator / denominator;
        let change = (v_plus - v_minus).abs();
        if change < p.convergence_ratio * v_minus.abs() || v_plus == v_minus {
            return Ok((v_plus, iteration));
        }
        if iteration == p.max_iterations {
            return Err(Error::NonConvergence {
                pipe: None,
                time: None,
                iterations: iteration,
                previous: v_minus,
                latest: v_plus,
            });
        }
        v_minus = v_plus;
    }
    unreachable!("max_iterations is at least 1")
}

/// Mass moved through a pipe in one step, kg, before any capping.
pub fn transfer_mass(velocity: f64, alpha: f64, s: &Scenario, p: &StepParams) -> f64 {
    s.density * velocity * p.dt * s.pipe_area * (1.0 - alpha) * s.open_fraction
}

/// Updates one donor/receiver pair. Returns the pipe result and the new
/// `(donor_depth, receiver_depth)`.
pub fn mass_update(
    donor_depth: f64,
    receiver_depth: f64,
    v_old: f64,
    alpha_old: f64,
    s: &Scenario,
    p: &StepParams,
) -> Result<(PipeFlowResult, f64, f64)> {
    if donor_depth <= p.epsilon_dry {
        let dry = PipeFlowResult {
            velocity: 0.0,
            void_fraction: 1.0,
            delta_z: 0.0,
            mass_transferred: 0.0,
            iterations_used: 0,
        };
        return Ok((dry, donor_depth, receiver_depth));
    }
    let delta_z = static_head(donor_depth, receiver_depth, s.elevation_step);
    let alpha = void_fraction(donor_depth, s.pipe_diameter);
    let (velocity, iterations) = velocity_fixed_point(v_old, alpha, alpha_old, delta_z, s, p)?;

    let column = s.density * s.tank_area;
    let mut mass = transfer_mass(velocity, alpha, s, p);
    let mut dh = mass / column;
    if p.cap_transfer {
        let room = (s.tank_height - receiver_depth).max(0.0);
        let capped = dh.min(donor_depth).min(room).max(0.0);
        if capped != dh {
            dh = capped;
            mass = dh * column;
        }
    }
    let result = PipeFlowResult {
        velocity,
        void_fraction: alpha,
        delta_z,
        mass_transferred: mass,
        iterations_used: iterations,
    };
    Ok((result, donor_depth - dh, receiver_depth + dh))
}

/// Iteration statistics accumulated over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub steps: usize,
    /// Pipe updates that went through the velocity iteration.
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    /// Largest velocity seen on each pipe over all steps.
    pub peak_velocity: Vec<f64>,
    /// Largest depth seen in each tank over all steps.
    pub peak_depth: Vec<f64>,
}

impl IterationStats {
    fn new(n_tanks: usize) -> Self {
        Self {
            steps: 0,
            solves: 0,
            total_iterations: 0,
            max_iterations: 0,
            peak_velocity: vec![0.0; n_tanks - 1],
            peak_depth: vec![0.0; n_tanks],
        }
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.solves as f64
        }
    }

    pub fn overall_peak_velocity(&self) -> f64 {
        self.peak_velocity.iter().copied().fold(0.0, f64::max)
    }
}

/// Time-marching state: the physical state plus each pipe's void fraction
/// from the previous step.
#[derive(Debug, Clone)]
pub struct Emulator {
    scenario: Scenario,
    params: StepParams,
    state: SystemState,
    alpha_old: Vec<f64>,
    steps_taken: usize,
    stats: IterationStats,
}

impl Emulator {
    pub fn new(scenario: &Scenario, params: StepParams) -> Result<Self> {
        Self::from_state(scenario, params, initial_state(scenario))
    }

    pub fn from_state(scenario: &Scenario, params: StepParams, state: SystemState) -> Result<Self> {
        scenario.validate()?;
        params.validate()?;
        if state.depths.len() != scenario.n_tanks || state.velocities.len() != scenario.n_pipes() {
            return Err(Error::Shape(format!(
                "state does not match a {}-tank scenario",
                scenario.n_tanks
            )));
        }
        let alpha_old = state.depths[..scenario.n_pipes()]
            .iter()
            .map(|&h| {
                if h <= params.epsilon_dry {
                    1.0
                } else {
                    void_fraction(h, scenario.pipe_diameter)
                }
            })
            .collect();
        let mut stats = IterationStats::new(scenario.n_tanks);
        stats.peak_depth.clone_from(&state.depths);
        stats.peak_velocity.clone_from(&state.velocities);
        Ok(Self {
            scenario: scenario.clone(),
            params,
            alpha_old,
            steps_taken: 0,
            stats,
            state,
        })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn alpha_old(&self) -> &[f64] {
        &self.alpha_old
    }

    pub fn stats(&self) -> &IterationStats {
        &self.stats
    }

    /// Advances one time step and returns the per-pipe results.
    pub fn step(&mut self) -> Result<Vec<PipeFlowResult>> {
        let s = &self.scenario;
        let p = &self.params;
        let time = self.state.time;
        let mut results = Vec::with_capacity(s.n_pipes());
        for j in 0..s.n_pipes() {
            let (result, donor, receiver) = mass_update(
                self.state.depths[j],
                self.state.depths[j + 1],
                self.state.velocities[j],
                self.alpha_old[j],
                s,
                p,
            )
            .map_err(|e| match e {
                Error::NonConvergence {
                    iterations,
                    previous,
                    latest,
                    ..
                } => Error::NonConvergence {
                    pipe: Some(j + 1),
                    time: Some(time),
                    iterations,
                    previous,
                    latest,
                },
                other => other,
            })?;
            self.state.depths[j] = donor;
            self.state.depths[j + 1] = receiver;
            self.state.velocities[j] = result.velocity;
            self.alpha_old[j] = result.void_fraction;
            if result.iterations_used > 0 {
                self.stats.solves += 1;
                self.stats.total_iterations += result.iterations_used;
                self.stats.max_iterations = self.stats.max_iterations.max(result.iterations_used);
            }
            results.push(result);
        }
        self.steps_taken += 1;
        self.stats.steps = self.steps_taken;
        self.state.time = self.steps_taken as f64 * p.dt;
        for (peak, &v) in self.stats.peak_velocity.iter_mut().zip(&self.state.velocities) {
            *peak = peak.max(v);
        }
        for (peak, &h) in self.stats.peak_depth.iter_mut().zip(&self.state.depths) {
            *peak = peak.max(h);
        }
        Ok(results)
    }

    /// Level difference between the last two tanks in a common datum.
    pub fn terminal_level_gap(&self) -> f64 {
        let n = self.scenario.n_tanks;
        (self.state.depths[n - 2] + self.scenario.elevation_step - self.state.depths[n - 1]).abs()
    }
}

/// One step from `state` for callers that do not keep an [`Emulator`].
/// `alpha_old` is read and overwritten with this step's void fractions.
pub fn step(state: &SystemState, alpha_old: &mut [f64], s: &Scenario, p: &StepParams) -> Result<SystemState> {
    let mut emu = Emulator::from_state(s, *p, state.clone())?;
    emu.alpha_old.copy_from_slice(alpha_old);
    emu.steps_taken = (state.time / p.dt).round() as usize;
    emu.step()?;
    alpha_old.copy_from_slice(&emu.alpha_old);
    let mut next = emu.state;
    next.time = state.time + p.dt;
    Ok(next)
}

/// Output of a full emulator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub series: TimeSeries,
    pub stats: IterationStats,
    pub params: StepParams,
    pub options: RunOptions,
}

pub fn run(s: &Scenario, p: &StepParams, t_end: f64) -> Result<Simulation> {
    run_with(s, p, &RunOptions::until(t_end))
}

pub fn run_with(s: &Scenario, p: &StepParams, opts: &RunOptions) -> Result<Simulation> {
    if !(opts.t_end.is_finite() && opts.t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {}", opts.t_end)));
    }
    if opts.record_interval == 0 {
        return Err(Error::InvalidArgument("record_interval must be at least 1".into()));
    }
    let mut emu = Emulator::new(s, *p)?;
    let n_steps = ((opts.t_end / p.dt) - 1e-9).ceil().max(1.0) as usize;
    let mut series = TimeSeries::new(
        s.n_tanks,
        SeriesMeta {
            scenario_hash: s.content_hash(),
            dt: p.dt,
            termination: Termination::EndTime,
        },
    );
    series.push(emu.state().clone())?;
    for k in 1..=n_steps {
        emu.step()?;
        let equalized = opts.stop_on_equalization && emu.terminal_level_gap() < opts.termination_epsilon;
        if equalized || k % opts.record_interval == 0 || k == n_steps {
            series.push(emu.state().clone())?;
        }
        if equalized {
            series.meta.termination = Termination::LevelsEqualized;
            break;
        }
    }
    Ok(Simulation {
        series,
        stats: emu.stats().clone(),
        params: *p,
        options: *opts,
    })
}

/// The three term-toggle cases of the sensitivity study.
pub const SENSITIVITY_CASES: [&str; 3] = ["all_terms", "no_form_wall_loss", "no_interphase_exchange"];

/// `s` with the terms named by a [`SENSITIVITY_CASES`] label switched off.
pub fn sensitivity_case(s: &Scenario, label: &str) -> Scenario {
    let mut case = s.clone();
    match label {
        "no_form_wall_loss" => case.toggles.form_wall_loss = false,
        "no_interphase_exchange" => case.toggles.interphase_exchange = false,
        _ => {}
    }
    case
}

/// Runs the scenario with all terms, without the form/wall loss and
/// without interphase exchange.
pub fn sensitivity_matrix(s: &Scenario, p: &StepParams, opts: &RunOptions) -> Result<Vec<(&'static str, Simulation)>> {
    SENSITIVITY_CASES
        .iter()
        .map(|&label| run_with(&sensitivity_case(s, label), p, opts).map(|sim| (label, sim)))
        .collect()
}

//! Data-free residual loss for the tank cascade.
//!
//! Predicted trajectories are carried as a [`Batch`] with one row per
//! collocation point and columns ordered `h1..hN, v1..vN-1`; `rates` hold the
//! derivatives with respect to physical time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Batch, Matrix};
use crate::scenario::Scenario;

/// Equally spaced collocation times including both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: Vec<f64>,
}

impl CollocationGrid {
    pub fn new(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        if !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidArgument(format!("degenerate time window [{t_min}, {t_max}]")));
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 collocation points, got {count}")));
        }
        let span = t_max - t_min;
        let last = (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|k| t_min + span * (k as f64 / last)).collect();
        points[count - 1] = t_max;
        Ok(Self { t_min, t_max, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.t_max - self.t_min) / (self.len() - 1) as f64
    }

    /// Points mapped to `[0, 1]` by [`scale_time`].
    pub fn scaled(&self) -> Vec<f64> {
        let span = self.t_max - self.t_min;
        self.points.iter().map(|&t| (t - self.t_min) / span).collect()
    }

    /// `dt′/dt`.
    pub fn chain_factor(&self) -> f64 {
        1.0 / (self.t_max - self.t_min)
    }
}

/// `t′ = (t − t_min)/(t_max − t_min)`.
pub fn scale_time(t: f64, t_min: f64, t_max: f64) -> Result<f64> {
    if !(t_max > t_min) {
        return Err(Error::InvalidArgument(format!("degenerate time window [{t_min}, {t_max}]")));
    }
    Ok((t - t_min) / (t_max - t_min))
}

/// `u(t) = u_NN(t) − u_NN(0) + u₀`, elementwise.
pub fn apply_shift(raw_at_t: &[f64], raw_at_0: &[f64], u0: &[f64]) -> Vec<f64> {
    assert_eq!(raw_at_t.len(), raw_at_0.len());
    assert_eq!(raw_at_t.len(), u0.len());
    raw_at_t
        .iter()
        .zip(raw_at_0)
        .zip(u0)
        .map(|((&r, &r0), &u)| r - r0 + u)
        .collect()
}

/// Inlet void fraction seen by the loss: `1 − h/d` below the pipe diameter,
/// zero above, clamped to 1 for negative depths.
pub fn pinn_void_fraction(h: f64, s: &Scenario) -> f64 {
    let d = s.pipe_diameter;
    if h >= d {
        0.0
    } else {
        (1.0 - h / d).min(1.0)
    }
}

fn pinn_void_fraction_slope(h: f64, s: &Scenario) -> f64 {
    if (0.0..s.pipe_diameter).contains(&h) {
        -1.0 / s.pipe_diameter
    } else {
        0.0
    }
}

fn back_pressure_branch(h: f64, h_next: f64, s: &Scenario) -> bool {
    h < s.pipe_diameter && h_next >= s.elevation_step
}

/// Driving head of the pipe leaving a tank at depth `h` into one at `h_next`.
pub fn pinn_delta_z(h: f64, h_next: f64, s: &Scenario) -> f64 {
    if back_pressure_branch(h, h_next, s) {
        h - h_next + s.elevation_step
    } else {
        h
    }
}

/// `L·dv/dt − g·Δz + ½·K·|v|·v`.
pub fn momentum_residual(v: f64, dv_dt: f64, delta_z: f64, s: &Scenario) -> f64 {
    s.pipe_length * dv_dt - s.gravity * delta_z + 0.5 * s.loss_coefficient * v.abs() * v
}

/// Mass balance of tank `i` (0-based). `inflow` is `(v, α)` of the pipe
/// entering the tank and is ignored for the first tank; `outflow` belongs to
/// the leaving pipe and is ignored for the last tank.
pub fn continuity_residual(
    i: usize,
    dh_dt: f64,
    inflow: (f64, f64),
    outflow: (f64, f64),
    s: &Scenario,
) -> Result<f64> {
    if i >= s.n_tanks {
        return Err(Error::InvalidArgument(format!("tank {i} out of range for {} tanks", s.n_tanks)));
    }
    let mut net = 0.0;
    if i + 1 < s.n_tanks {
        net += outflow.0 * (1.0 - outflow.1);
    }
    if i > 0 {
        net -= inflow.0 * (1.0 - inflow.1);
    }
    Ok(s.density * s.tank_area * dh_dt + s.density * s.pipe_area * s.open_fraction * net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub momentum: f64,
    pub continuity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            momentum: 1.0,
            continuity: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.momentum > 0.0 && self.continuity > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("loss weights must be positive: {self:?}")))
        }
    }
}

/// Residuals at every collocation point and the weighted loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `N_t × (N − 1)`.
    pub momentum: Matrix,
    /// `N_t × N`.
    pub continuity: Matrix,
    /// `λ₁` times the mean over points of `Σ_j R_mom²`.
    pub momentum_loss: f64,
    /// `λ₂` times the mean over points of `Σ_i R_cont²`.
    pub continuity_loss: f64,
    pub total: f64,
}

/// Aggregate diagnostics of a [`ResidualReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub points: usize,
    pub total: f64,
    pub momentum_loss: f64,
    pub continuity_loss: f64,
    pub momentum_mean_square: Vec<f64>,
    pub momentum_max_abs: Vec<f64>,
    pub continuity_mean_square: Vec<f64>,
    pub continuity_max_abs: Vec<f64>,
}

impl ResidualReport {
    pub fn summary(&self) -> ResidualSummary {
        let stats = |m: &Matrix| -> (Vec<f64>, Vec<f64>) {
            (0..m.cols())
                .map(|c| {
                    let col = m.column(c);
                    let ms = col.iter().map(|r| r * r).sum::<f64>() / col.len() as f64;
                    let max = col.iter().fold(0.0f64, |a, r| a.max(r.abs()));
                    (ms, max)
                })
                .unzip()
        };
        let (momentum_mean_square, momentum_max_abs) = stats(&self.momentum);
        let (continuity_mean_square, continuity_max_abs) = stats(&self.continuity);
        ResidualSummary {
            points: self.momentum.rows(),
            total: self.total,
            momentum_loss: self.momentum_loss,
            continuity_loss: self.continuity_loss,
            momentum_mean_square,
            momentum_max_abs,
            continuity_mean_square,
            continuity_max_abs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}

/// Pairwise sum over `values` visited in ascending order of `keys`, so the
/// result does not depend on the order the points were supplied in.
fn ordered_sum(values: &[f64], keys: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(values[a].total_cmp(&values[b])));
    let sorted: Vec<f64> = idx.into_iter().map(|i| values[i]).collect();
    pairwise(&sorted)
}

fn pairwise(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise(&v[..mid]) + pairwise(&v[mid..])
}

fn check_shape(pred: &Batch, times: &[f64], s: &Scenario) -> Result<()> {
    let nvar = s.n_variables();
    for m in [&pred.values, &pred.rates] {
        if m.rows() != times.len() || m.cols() != nvar {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, expected {}x{nvar}",
                m.rows(),
                m.cols(),
                times.len()
            )));
        }
    }
    if times.is_empty() {
        return Err(Error::Shape("no collocation points".into()));
    }
    Ok(())
}

fn non_finite(what: String, point: usize) -> Error {
    Error::NonFinite {
        what,
        epoch: 0,
        point: Some(point),
    }
}

/// Residuals and weighted loss of predicted trajectories at `times`.
pub fn total_loss(pred: &Batch, times: &[f64], weights: &LossWeights, s: &Scenario) -> Result<ResidualReport> {
    check_shape(pred, times, s)?;
    let n = s.n_tanks;
    let nt = times.len();
    let mut momentum = Matrix::zeros(nt, n - 1);
    let mut continuity = Matrix::zeros(nt, n);
    let mut mom_sq = vec![0.0; nt];
    let mut cont_sq = vec![0.0; nt];
    for k in 0..nt {
        let u = pred.values.row(k);
        let du = pred.rates.row(k);
        let (h, v) = u.split_at(n);
        let (dh, dv) = du.split_at(n);
        for j in 0..n - 1 {
            let r = momentum_residual(v[j], dv[j], pinn_delta_z(h[j], h[j + 1], s), s);
            if !r.is_finite() {
                return Err(non_finite(format!("momentum residual of pipe {}", j + 1), k));
            }
            momentum.set(k, j, r);
            mom_sq[k] += r * r;
        }
        for i in 0..n {
            let inflow = if i > 0 { (v[i - 1], pinn_void_fraction(h[i - 1], s)) } else { (0.0, 0.0) };
            let outflow = if i + 1 < n { (v[i], pinn_void_fraction(h[i], s)) } else { (0.0, 0.0) };
            let r = continuity_residual(i, dh[i], inflow, outflow, s)?;
            if !r.is_finite() {
                return Err(non_finite(format!("continuity residual of tank {}", i + 1), k));
            }
            continuity.set(k, i, r);
            cont_sq[k] += r * r;
        }
    }
    let momentum_loss = weights.momentum * ordered_sum(&mom_sq, times) / nt as f64;
    let continuity_loss = weights.continuity * ordered_sum(&cont_sq, times) / nt as f64;
    Ok(ResidualReport {
        momentum,
        continuity,
        momentum_loss,
        continuity_loss,
        total: momentum_loss + continuity_loss,
    })
}

/// [`total_loss`] together with the adjoint of the total with respect to
/// every predicted value and rate.
pub fn total_loss_with_adjoint(
    pred: &Batch,
    times: &[f64],
    weights: &LossWeights,
    s: &Scenario,
) -> Result<(ResidualReport, Batch)> {
    let report = total_loss(pred, times, weights, s)?;
    let n = s.n_tanks;
    let nt = times.len();
    let mut adj = Batch::zeros(nt, s.n_variables());
    let cm = 2.0 * weights.momentum / nt as f64;
    let cc = 2.0 * weights.continuity / nt as f64;
    let flux_scale = s.density * s.pipe_area * s.open_fraction;
    for k in 0..nt {
        let u = pred.values.row(k);
        let (h, v) = u.split_at(n);
        let mut gu = vec![0.0; n + n - 1];
        let mut gdu = vec![0.0; n + n - 1];
        for j in 0..n - 1 {
            let g = cm * report.momentum.get(k, j);
            gdu[n + j] += g * s.pipe_length;
            gu[n + j] += g * s.loss_coefficient * v[j].abs();
            gu[j] -= g * s.gravity;
            if back_pressure_branch(h[j], h[j + 1], s) {
                gu[j + 1] += g * s.gravity;
            }
        }
        for i in 0..n {
            gdu[i] += cc * report.continuity.get(k, i) * s.density * s.tank_area;
        }
        for j in 0..n - 1 {
            // flux of pipe j leaves tank j and enters tank j + 1
            let g_flux = flux_scale * cc * (report.continuity.get(k, j) - report.continuity.get(k, j + 1));
            let alpha = pinn_void_fraction(h[j], s);
            gu[n + j] += g_flux * (1.0 - alpha);
            gu[j] -= g_flux * v[j] * pinn_void_fraction_slope(h[j], s);
        }
        adj.values.row_mut(k).copy_from_slice(&gu);
        adj.rates.row_mut(k).copy_from_slice(&gdu);
    }
    Ok((report, adj))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Scenario {
        Scenario::with_tanks(2)
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = CollocationGrid::new(0.0, 1000.0, 2500).unwrap();
        assert_eq!(g.points[0], 0.0);
        assert_eq!(*g.points.last().unwrap(), 1000.0);
        assert!((g.spacing() - 0.40016).abs() < 1e-5);
        let sc = g.scaled();
        assert_eq!((sc[0], sc[2499]), (0.0, 1.0));
        assert!(CollocationGrid::new(5.0, 5.0, 10).is_err());
        assert!(CollocationGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn time_scaling() {
        assert_eq!(scale_time(0.0, 0.0, 1000.0).unwrap(), 0.0);
        assert_eq!(scale_time(1000.0, 0.0, 1000.0).unwrap(), 1.0);
        assert_eq!(scale_time(500.0, 0.0, 1000.0).unwrap(), 0.5);
        assert!(scale_time(1.0, 3.0, 3.0).is_err());
    }

    #[test]
    fn shift() {
        let u = apply_shift(&[0.37], &[0.30], &[2.0]);
        assert!((u[0] - 2.07).abs() < 1e-15);
        assert_eq!(apply_shift(&[0.3, -1.0], &[0.3, -1.0], &[2.0, 0.0]), vec![2.0, 0.0]);
    }

    #[test]
    fn void_fraction_and_head() {
        let s = two();
        assert_eq!(pinn_void_fraction(0.1, &s), 0.5);
        assert_eq!(pinn_void_fraction(0.25, &s), 0.0);
        assert_eq!(pinn_void_fraction(-0.3, &s), 1.0);
        assert_eq!(pinn_void_fraction(0.0, &s), 1.0);
        assert!((pinn_delta_z(0.15, 1.9, &s) - 0.05).abs() < 1e-15);
        assert_eq!(pinn_delta_z(1.0, 0.3, &s), 1.0);
        // receiver above the floor but donor still deep: plain donor depth
        assert_eq!(pinn_delta_z(0.5, 1.9, &s), 0.5);
    }

    #[test]
    fn momentum_balance() {
        let s = two();
        let v = (2.0 * 9.81 * 1.0f64).sqrt();
        assert!((v - 4.4294469180700204).abs() < 1e-12);
        assert!(momentum_residual(v, 0.0, 1.0, &s).abs() < 1e-12);
        assert_eq!(momentum_residual(0.0, 0.0, 0.0, &s), 0.0);
    }

    #[test]
    fn continuity_cases() {
        let s = Scenario::with_tanks(3);
        let (v, a) = (1.3, 0.2);
        let dh = -s.pipe_area * v * (1.0 - a) / s.tank_area;
        assert!(continuity_residual(0, dh, (9.0, 0.0), (v, a), &s).unwrap().abs() < 1e-12);
        assert_eq!(continuity_residual(1, 0.0, (v, a), (v, a), &s).unwrap(), 0.0);
        assert!(continuity_residual(2, -dh, (v, a), (9.0, 0.0), &s).unwrap().abs() < 1e-12);
        assert!(continuity_residual(3, 0.0, (v, a), (v, a), &s).is_err());
    }

    fn sample_prediction(s: &Scenario, nt: usize) -> (Batch, Vec<f64>) {
        let nvar = s.n_variables();
        let mut b = Batch::zeros(nt, nvar);
        let times: Vec<f64> = (0..nt).map(|k| k as f64 * 3.0).collect();
        for k in 0..nt {
            for c in 0..nvar {
                let x = (k * nvar + c) as f64;
                b.values.set(k, c, 0.9 * (0.7 * x).sin() + if c < s.n_tanks { 0.9 } else { 1.0 });
                b.rates.set(k, c, 0.05 * (1.3 * x).cos());
            }
        }
        (b, times)
    }

    #[test]
    fn zero_residuals_give_zero_loss() {
        let s = two();
        let b = Batch::zeros(4, 3);
        let r = total_loss(&b, &[0.0, 1.0, 2.0, 3.0], &LossWeights::default(), &s).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn weights_scale_components() {
        let s = Scenario::with_tanks(3);
        let (b, t) = sample_prediction(&s, 7);
        let w = LossWeights::default();
        let a = total_loss(&b, &t, &w, &s).unwrap();
        let w2 = LossWeights {
            continuity: 2.0 * w.continuity,
            ..w
        };
        let c = total_loss(&b, &t, &w2, &s).unwrap();
        assert_eq!(c.momentum_loss, a.momentum_loss);
        assert_eq!(c.continuity_loss, 2.0 * a.continuity_loss);
        assert!((a.total - a.momentum_loss - a.continuity_loss).abs() == 0.0);
    }

    #[test]
    fn reordering_points_is_bitwise_invariant() {
        let s = Scenario::with_tanks(3);
        let (b, t) = sample_prediction(&s, 37);
        let w = LossWeights::default();
        let a = total_loss(&b, &t, &w, &s).unwrap();
        let perm: Vec<usize> = (0..37).map(|k| (k * 14) % 37).collect();
        let mut pb = Batch::zeros(37, s.n_variables());
        let mut pt = vec![0.0; 37];
        for (dst, &src) in perm.iter().enumerate() {
            pb.values.row_mut(dst).copy_from_slice(b.values.row(src));
            pb.rates.row_mut(dst).copy_from_slice(b.rates.row(src));
            pt[dst] = t[src];
        }
        let c = total_loss(&pb, &pt, &w, &s).unwrap();
        assert_eq!(a.total.to_bits(), c.total.to_bits());
    }

    #[test]
    fn adjoint_matches_central_differences() {
        for n in [2, 3, 4] {
            let s = Scenario::with_tanks(n);
            let (b, t) = sample_prediction(&s, 5);
            let w = LossWeights::default();
            let (_, adj) = total_loss_with_adjoint(&b, &t, &w, &s).unwrap();
            let h = 1e-6;
            for which in 0..2 {
                for idx in 0..b.values.as_slice().len() {
                    let bump = |d: f64| {
                        let mut p = b.clone();
                        let m = if which == 0 { &mut p.values } else { &mut p.rates };
                        m.as_mut_slice()[idx] += d;
                        total_loss(&p, &t, &w, &s).unwrap().total
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = if which == 0 { adj.values.as_slice()[idx] } else { adj.rates.as_slice()[idx] };
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "n={n} which={which} idx={idx}: {an} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn non_finite_reports_point() {
        let s = two();
        let mut b = Batch::zeros(3, 3);
        b.rates.set(2, 2, f64::NAN);
        match total_loss(&b, &[0.0, 1.0, 2.0], &LossWeights::default(), &s) {
            Err(Error::NonFinite { point: Some(2), what, .. }) => assert!(what.contains("pipe 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summary_json() {
        let s = two();
        let (b, t) = sample_prediction(&s, 4);
        let r = total_loss(&b, &t, &LossWeights::default(), &s).unwrap();
        let json = r.to_json().unwrap();
        let back: ResidualSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.points, 4);
        assert_eq!(back.momentum_max_abs.len(), 1);
        assert_eq!(back.continuity_mean_square.len(), 2);
    }
}

//! Trajectory comparison: MAE/MSE, linear resampling, and pooled reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Matrix;
use crate::scenario::{SeriesMeta, TimeSeries};

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "error metrics need equal non-empty lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Linear interpolation of every variable of `series` onto `grid`; one row
/// per grid time, columns `h1..hN, v1..vN-1`.
pub fn resample(series: &TimeSeries, grid: &[f64]) -> Result<Matrix> {
    let times = series.times();
    let (first, last) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::InvalidArgument("cannot resample an empty series".into())),
    };
    let nvar = 2 * series.n_tanks - 1;
    let mut out = Matrix::zeros(grid.len(), nvar);
    for (r, &t) in grid.iter().enumerate() {
        if !(t >= first && t <= last) {
            return Err(Error::InvalidArgument(format!(
                "grid time {t} outside the series span [{first}, {last}]"
            )));
        }
        // first record with time >= t
        let hi = times.partition_point(|&x| x < t);
        let row = out.row_mut(r);
        if times[hi] == t {
            row.copy_from_slice(&series.states[hi].to_vector());
            continue;
        }
        let lo = hi - 1;
        let w = (t - times[lo]) / (times[hi] - times[lo]);
        let a = series.states[lo].to_vector();
        let b = series.states[hi].to_vector();
        for ((x, &p), &q) in row.iter_mut().zip(&a).zip(&b) {
            *x = p + w * (q - p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableError {
    pub name: String,
    pub mae: f64,
    pub mse: f64,
}

/// Errors of a model trajectory against a reference on a common grid.
/// Group figures pool every height (or velocity) variable at every grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_tanks: usize,
    pub grid: Vec<f64>,
    pub variables: Vec<VariableError>,
    pub height_mae: f64,
    pub height_mse: f64,
    pub velocity_mae: f64,
    pub velocity_mse: f64,
    pub model: SeriesMeta,
    pub reference: SeriesMeta,
}

pub fn variable_names(n_tanks: usize) -> Vec<String> {
    (1..=n_tanks)
        .map(|i| format!("h{i}"))
        .chain((1..n_tanks).map(|j| format!("v{j}")))
        .collect()
}

pub fn compare(model: &TimeSeries, reference: &TimeSeries, grid: &[f64]) -> Result<ComparisonReport> {
    if model.n_tanks != reference.n_tanks {
        return Err(Error::Shape(format!(
            "model has {} tanks, reference has {}",
            model.n_tanks, reference.n_tanks
        )));
    }
    let n = model.n_tanks;
    let a = resample(model, grid)?;
    let b = resample(reference, grid)?;
    let names = variable_names(n);
    let mut variables = Vec::with_capacity(names.len());
    for (c, name) in names.into_iter().enumerate() {
        let (y, y_hat) = (b.column(c), a.column(c));
        variables.push(VariableError {
            name,
            mae: mae(&y, &y_hat)?,
            mse: mse(&y, &y_hat)?,
        });
    }
    let pooled = |cols: std::ops::Range<usize>| -> Result<(f64, f64)> {
        let (mut y, mut y_hat) = (Vec::new(), Vec::new());
        for c in cols {
            y.extend(b.column(c));
            y_hat.extend(a.column(c));
        }
        Ok((mae(&y, &y_hat)?, mse(&y, &y_hat)?))
    };
    let (height_mae, height_mse) = pooled(0..n)?;
    let (velocity_mae, velocity_mse) = pooled(n..2 * n - 1)?;
    Ok(ComparisonReport {
        n_tanks: n,
        grid: grid.to_vec(),
        variables,
        height_mae,
        height_mse,
        velocity_mae,
        velocity_mse,
        model: model.meta.clone(),
        reference: reference.meta.clone(),
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow<'a> {
    pub model: &'a str,
    pub parameters: usize,
    pub report: &'a ComparisonReport,
}

pub const TABLE_HEADER: &str = "model,n_tanks,parameters,mae_h,mae_v,mse_h,mse_v";

pub fn write_table_csv<W: Write>(mut w: W, rows: &[TableRow<'_>]) -> std::io::Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in rows {
        let c = r.report;
        writeln!(
            w,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.model, c.n_tanks, r.parameters, c.height_mae, c.velocity_mae, c.height_mse, c.velocity_mse
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{SystemState, Termination};

    fn meta() -> SeriesMeta {
        SeriesMeta {
            scenario_hash: String::new(),
            dt: 0.0,
            termination: Termination::Imported,
        }
    }

    fn series(points: &[(f64, [f64; 3])]) -> TimeSeries {
        let mut s = TimeSeries::new(2, meta());
        for (t, v) in points {
            s.push(SystemState::from_vector(*t, 2, v)).unwrap();
        }
        s
    }

    #[test]
    fn basic_metrics() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mae(&[1.0, -4.0, 2.5], &[1.3, -3.7, 2.8]).unwrap() - 0.3).abs() < 1e-12);
        assert!((mse(&[1.0, -4.0, 2.5], &[1.3, -3.7, 2.8]).unwrap() - 0.09).abs() < 1e-12);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn resample_is_exact_at_records_and_linear_between() {
        let s = series(&[(0.0, [2.0, 0.0, 0.0]), (1.0, [1.0, 1.0, 4.0]), (3.0, [0.0, 2.0, 2.0])]);
        let m = resample(&s, &[0.0, 0.5, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.row(0), &[2.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[1.5, 0.5, 2.0]);
        assert_eq!(m.row(2), &[1.0, 1.0, 4.0]);
        assert_eq!(m.row(3), &[0.5, 1.5, 3.0]);
        assert_eq!(m.row(4), &[0.0, 2.0, 2.0]);
        assert!(resample(&s, &[3.5]).is_err());
        assert!(resample(&s, &[-0.1]).is_err());
    }

    #[test]
    fn compare_pools_groups() {
        let r = series(&[(0.0, [2.0, 0.0, 0.0]), (1.0, [1.0, 1.0, 4.0])]);
        let m = series(&[(0.0, [2.0, 0.5, 0.0]), (1.0, [1.0, 1.0, 3.0])]);
        let self_report = compare(&r, &r, &[0.0, 1.0]).unwrap();
        assert_eq!((self_report.height_mae, self_report.velocity_mse), (0.0, 0.0));
        let c = compare(&m, &r, &[0.0, 1.0]).unwrap();
        // heights: deviations 0, 0.5, 0, 0 over 4 samples
        assert_eq!(c.height_mae, 0.125);
        assert_eq!(c.height_mse, 0.0625);
        assert_eq!(c.velocity_mae, 0.5);
        assert_eq!(c.velocity_mse, 0.5);
        assert_eq!(c.variables[1].name, "h2");
        assert_eq!(c.variables[1].mae, 0.25);
        let mut buf = Vec::new();
        write_table_csv(
            &mut buf,
            &[TableRow {
                model: "x",
                parameters: 7,
                report: &c,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(TABLE_HEADER));
        assert!(text.contains("x,2,7,1.25"));
    }
}

//! Closed-loop tracking metrics.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::mpc::ClosedLoopLog;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Sum of the per-step normalized RMSE over the run.
    pub overall_error: f64,
    /// Mean normalized RMSE over the trailing window.
    pub static_error: f64,
    pub max_rmse: f64,
    pub final_rmse: f64,
    /// Applied input entries outside the box bounds.
    pub bound_violations: usize,
    /// Control steps in which some QP stopped at its iteration limit.
    pub qp_max_iter_steps: usize,
    pub qp_iterations: usize,
}

/// `(overall, static)` from an RMSE series.
pub fn tracking_errors(rmse: &[f64], window: usize) -> (f64, f64) {
    let overall = rmse.iter().sum();
    let window = window.clamp(1, rmse.len().max(1));
    let tail = &rmse[rmse.len().saturating_sub(window)..];
    let static_error = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    (overall, static_error)
}

pub fn bound_violations(inputs: &[Vector], lower: &Vector, upper: &Vector) -> usize {
    inputs
        .iter()
        .flat_map(|u| (0..u.len()).map(move |i| (u[i], i)))
        .filter(|&(v, i)| !(lower[i] <= v && v <= upper[i]))
        .count()
}

pub fn run_metrics(log: &ClosedLoopLog, lower: &Vector, upper: &Vector, window: usize) -> RunMetrics {
    let (overall_error, static_error) = tracking_errors(&log.rmse, window);
    RunMetrics {
        overall_error,
        static_error,
        max_rmse: log.rmse.iter().copied().fold(0.0, f64::max),
        final_rmse: *log.rmse.last().unwrap_or(&0.0),
        bound_violations: bound_violations(&log.inputs, lower, upper),
        qp_max_iter_steps: log.traces.iter().filter(|t| t.hit_max_iter()).count(),
        qp_iterations: log.qp_iterations.iter().sum(),
    }
}

/// Normalized RMSE series recomputed from the state columns of a
/// closed-loop CSV, with set-point `x_s` and per-channel `std`.
pub fn rmse_from_log<R: Read>(reader: R, x_s: &[f64], std: &[f64]) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = r.headers()?.clone();
    let columns: Vec<usize> = (1..=x_s.len())
        .map(|i| {
            let name = format!("x{i}");
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("closed-loop log has no column {name}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let x = columns
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number `{}`: {e}", &record[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let sum: f64 = (0..x.len()).map(|i| ((x[i] - x_s[i]) / std[i]).powi(2)).sum();
        out.push((sum / x.len() as f64).sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracking_errors_by_hand() {
        let (overall, stat) = tracking_errors(&[4.0, 2.0, 1.0, 3.0], 2);
        assert_eq!(overall, 10.0);
        assert_eq!(stat, 2.0);
        let (_, all) = tracking_errors(&[1.0, 3.0], 10);
        assert_eq!(all, 2.0);
    }

    #[test]
    fn violations_are_counted_per_entry() {
        let lo = Vector::from_vec(vec![0.0, 0.0]);
        let hi = Vector::from_vec(vec![1.0, 1.0]);
        let inputs = vec![
            Vector::from_vec(vec![0.0, 1.0]),
            Vector::from_vec(vec![-1e-12, 2.0]),
            Vector::from_vec(vec![f64::NAN, 0.5]),
        ];
        assert_eq!(bound_violations(&inputs, &lo, &hi), 3);
    }

    #[test]
    fn rmse_recomputed_from_csv() {
        let text = "# comment\nk,t,x1,x2,u1\n0,0.0,1.0,2.0,5\n1,0.1,0.0,0.0,\n";
        let rmse = rmse_from_log(text.as_bytes(), &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(rmse, vec![1.0, 0.0]);
    }
}

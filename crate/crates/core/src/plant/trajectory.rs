//! CSV export of sampled trajectories: header `t,x1..xn,u1..um,p1..pp`.

use std::io::{Read, Write};

use crate::linalg::Vector;
use crate::{Error, Result};

/// Time-aligned samples `(x_k, u_k, p_k)` at sampling period `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// Time of the first sample.
    pub t0: f64,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub disturbances: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.states.first().map_or(0, |v| v.len()),
            self.inputs.first().map_or(0, |v| v.len()),
            self.disturbances.first().map_or(0, |v| v.len()),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.states.len();
        if self.inputs.len() != len || self.disturbances.len() != len {
            return Err(Error::shape(
                "trajectory sample counts",
                len,
                format!(
                    "inputs {} / disturbances {}",
                    self.inputs.len(),
                    self.disturbances.len()
                ),
            ));
        }
        let (n, m, p) = self.dims();
        for k in 0..len {
            if self.states[k].len() != n || self.inputs[k].len() != m || self.disturbances[k].len() != p {
                return Err(Error::shape(
                    "trajectory sample",
                    format!("({n},{m},{p})"),
                    format!("row {k}"),
                ));
            }
        }
        Ok(())
    }
}

pub fn trajectory_header(n: usize, m: usize, p: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .chain((1..=m).map(|i| format!("u{i}")))
        .chain((1..=p).map(|i| format!("p{i}")))
        .collect()
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    traj.validate()?;
    let (n, m, p) = traj.dims();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trajectory_header(n, m, p))?;
    for k in 0..traj.len() {
        let t = traj.t0 + k as f64 * traj.dt;
        let row = std::iter::once(t)
            .chain(traj.states[k].iter().copied())
            .chain(traj.inputs[k].iter().copied())
            .chain(traj.disturbances[k].iter().copied())
            .map(|v| v.to_string());
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Read a trajectory written by [`write_trajectory_csv`]. The sampling period
/// is recovered from the first two rows, or `dt_hint` for a single row.
/// Lines starting with `#` are skipped.
pub fn read_trajectory_csv<R: Read>(reader: R, dt_hint: f64) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = r.headers()?.clone();
    let count = |prefix: char| {
        header
            .iter()
            .filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
            .count()
    };
    let (n, m, p) = (count('x'), count('u'), count('p'));
    if header.get(0) != Some("t") || header.len() != 1 + n + m + p {
        return Err(Error::Config(format!("unrecognized trajectory header: {header:?}")));
    }
    let expected = trajectory_header(n, m, p);
    if header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Config(format!("unexpected column order: {header:?}")));
    }

    let mut times = Vec::new();
    let mut traj = Trajectory {
        dt: dt_hint,
        t0: 0.0,
        states: Vec::new(),
        inputs: Vec::new(),
        disturbances: Vec::new(),
    };
    for record in r.records() {
        let record = record?;
        let values = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Config(format!("bad number in trajectory CSV: {e}")))?;
        times.push(values[0]);
        traj.states.push(Vector::from_column_slice(&values[1..1 + n]));
        traj.inputs.push(Vector::from_column_slice(&values[1 + n..1 + n + m]));
        traj.disturbances.push(Vector::from_column_slice(&values[1 + n + m..]));
    }
    if let Some(&t0) = times.first() {
        traj.t0 = t0;
    }
    if times.len() >= 2 {
        traj.dt = times[1] - times[0];
    }
    Ok(traj)
}

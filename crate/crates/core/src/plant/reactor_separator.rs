//! Two CSTRs in series followed by a flash separator with recycle.
//!
//! Reactions `A → B` (desired) and `B → C` (side product) run in both
//! reactors; the separator overhead is recycled to the first reactor. Each
//! vessel has a heat input `Q_i`, which are the three manipulated inputs.
//!
//! State order: `[x_A1, x_B1, T1, x_A2, x_B2, T2, x_A3, x_B3, T3]` (mass
//! fractions and kelvin). Inputs `[Q1, Q2, Q3]` in kJ/h. No disturbances.

use std::path::Path;

use super::{ParameterSet, PlantModel};
use crate::linalg::Vector;
use crate::Result;

pub const STATE_NAMES: [&str; 9] = ["xA1", "xB1", "T1", "xA2", "xB2", "T2", "xA3", "xB3", "T3"];
pub const INPUT_NAMES: [&str; 3] = ["Q1", "Q2", "Q3"];

const BUILTIN_PARAMS: &str = include_str!("../../data/reactor_separator.params");

/// Nominal heat inputs [kJ/h].
pub const NOMINAL_INPUT: [f64; 3] = [2.9e6, 1.0e6, 2.9e6];

/// Steady state of the built-in parameter set under [`NOMINAL_INPUT`],
/// located by long-horizon relaxation (per-period change below 1e-13).
pub const NOMINAL_STEADY_STATE: [f64; 9] = [
    0.18066449630956422,
    0.6723668786087003,
    480.50967890766503,
    0.20365335252319278,
    0.6523344363458121,
    472.97879616076136,
    0.06323212915722981,
    0.6658300161636077,
    475.0759553948263,
];

/// Initial state used for open-loop data generation.
pub const DATA_INITIAL_STATE: [f64; 9] = [0.1155, 0.6235, 497.3, 0.1367, 0.6053, 489.8, 0.0396, 0.5504, 491.8];

/// Typical off-nominal start for closed-loop runs.
pub const CONTROL_INITIAL_STATE: [f64; 9] = [0.33, 0.62, 454.98, 0.34, 0.605, 447.76, 0.14, 0.75, 453.09];

#[derive(Debug, Clone, PartialEq)]
pub struct ReactorSeparatorParams {
    pub name: String,
    pub f10: f64,
    pub f20: f64,
    pub fr: f64,
    pub fp: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub k1: f64,
    pub k2: f64,
    pub e1: f64,
    pub e2: f64,
    pub r: f64,
    pub dh1: f64,
    pub dh2: f64,
    pub hvap: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_c: f64,
    pub cp: f64,
    pub rho: f64,
    pub t10: f64,
    pub t20: f64,
    pub xa10: f64,
    pub xb10: f64,
    pub xa20: f64,
    pub xb20: f64,
    pub q_max: [f64; 3],
}

impl ReactorSeparatorParams {
    pub fn from_set(set: &ParameterSet) -> Result<Self> {
        Ok(Self {
            name: set.name.clone(),
            f10: set.get("F10")?,
            f20: set.get("F20")?,
            fr: set.get("Fr")?,
            fp: set.get("Fp")?,
            v1: set.get("V1")?,
            v2: set.get("V2")?,
            v3: set.get("V3")?,
            k1: set.get("k1")?,
            k2: set.get("k2")?,
            e1: set.get("E1")?,
            e2: set.get("E2")?,
            r: set.get("R")?,
            dh1: set.get("dH1")?,
            dh2: set.get("dH2")?,
            hvap: set.get("Hvap")?,
            alpha_a: set.get("alpha_A")?,
            alpha_b: set.get("alpha_B")?,
            alpha_c: set.get("alpha_C")?,
            cp: set.get("Cp")?,
            rho: set.get("rho")?,
            t10: set.get("T10")?,
            t20: set.get("T20")?,
            xa10: set.get("xA10")?,
            xb10: set.get("xB10")?,
            xa20: set.get("xA20")?,
            xb20: set.get("xB20")?,
            q_max: [set.get("Q1_max")?, set.get("Q2_max")?, set.get("Q3_max")?],
        })
    }

    /// The parameter set shipped in `data/reactor_separator.params`.
    pub fn builtin() -> Self {
        let set = ParameterSet::parse(BUILTIN_PARAMS).expect("built-in parameter file parses");
        Self::from_set(&set).expect("built-in parameter file is complete")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_set(&ParameterSet::from_file(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct ReactorSeparator {
    params: ReactorSeparatorParams,
}

impl ReactorSeparator {
    pub fn new(params: ReactorSeparatorParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ReactorSeparatorParams {
        &self.params
    }

    pub fn into_plant(self) -> PlantModel {
        let upper = Vector::from_column_slice(&self.params.q_max);
        let name = self.params.name.clone();
        PlantModel::new(9, 3, 0, self, Vector::zeros(3), upper, name)
            .expect("reactor-separator dimensions are consistent")
    }

    /// The built-in plant.
    pub fn nominal_plant() -> PlantModel {
        Self::new(ReactorSeparatorParams::builtin()).into_plant()
    }

    fn rhs_inner(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let p = &self.params;
        let [xa1, xb1, t1, xa2, xb2, t2, xa3, xb3, t3] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]];

        let f1 = p.f10 + p.fr;
        let f2 = f1 + p.f20;
        let f3 = p.fr + p.fp;

        // Overhead composition from relative volatilities.
        let xc3 = 1.0 - xa3 - xb3;
        let k = p.alpha_a * xa3 + p.alpha_b * xb3 + p.alpha_c * xc3;
        let xar = p.alpha_a * xa3 / k;
        let xbr = p.alpha_b * xb3 / k;
        let xcr = p.alpha_c * xc3 / k;

        let r1 = |t: f64| p.k1 * (-p.e1 / (p.r * t)).exp();
        let r2 = |t: f64| p.k2 * (-p.e2 / (p.r * t)).exp();
        let rho_cp = p.rho * p.cp;

        let (ra1, rb1) = (r1(t1) * xa1, r2(t1) * xb1);
        dx[0] = p.f10 / p.v1 * (p.xa10 - xa1) + p.fr / p.v1 * (xar - xa1) - ra1;
        dx[1] = p.f10 / p.v1 * (p.xb10 - xb1) + p.fr / p.v1 * (xbr - xb1) + ra1 - rb1;
        dx[2] = p.f10 / p.v1 * (p.t10 - t1) + p.fr / p.v1 * (t3 - t1) - p.dh1 / p.cp * ra1 - p.dh2 / p.cp * rb1
            + u[0] / (rho_cp * p.v1);

        let (ra2, rb2) = (r1(t2) * xa2, r2(t2) * xb2);
        dx[3] = f1 / p.v2 * (xa1 - xa2) + p.f20 / p.v2 * (p.xa20 - xa2) - ra2;
        dx[4] = f1 / p.v2 * (xb1 - xb2) + p.f20 / p.v2 * (p.xb20 - xb2) + ra2 - rb2;
        dx[5] = f1 / p.v2 * (t1 - t2) + p.f20 / p.v2 * (p.t20 - t2) - p.dh1 / p.cp * ra2 - p.dh2 / p.cp * rb2
            + u[1] / (rho_cp * p.v2);

        dx[6] = f2 / p.v3 * (xa2 - xa3) - f3 / p.v3 * (xar - xa3);
        dx[7] = f2 / p.v3 * (xb2 - xb3) - f3 / p.v3 * (xbr - xb3);
        dx[8] = f2 / p.v3 * (t2 - t3) + u[2] / (rho_cp * p.v3) - f3 / (rho_cp * p.v3) * p.hvap * (xar + xbr + xcr);
    }
}

impl super::Dynamics for ReactorSeparator {
    fn rhs(&self, x: &[f64], u: &[f64], _p: &[f64], dx: &mut [f64]) {
        self.rhs_inner(x, u, dx)
    }
}

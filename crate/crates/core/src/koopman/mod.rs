//! Lifted linear predictors with input augmentation.
//!
//! The model evolves a lifted state `z = ψ(x)` as
//!
//! ```text
//! z⁺ = A z + B_u u + B_p p + B_φ φ(x̂, u, p),    x̂ = C z
//! ```
//!
//! where `ψ` and `φ` are [`LiftingNetwork`]s. The [`Variant::Dko`] baseline has
//! no `φ` network (`M = 0`) and is linear in the inputs. All arithmetic runs on
//! normalized data; the raw-unit entry points go through the embedded
//! [`Normalizer`].

mod io;
mod objective;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::linalg::{first_non_finite, Matrix, Vector};
use crate::neuralnet::{LiftingNetwork, ParamLayout};
use crate::{Error, Result};

pub use io::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use objective::{BatchRollout, LossOutput};
pub use train::{evaluate, train, train_from, EpochRecord, TrainingConfig, TrainingOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Input-augmented model with a learned `φ(x, u, p)` term.
    Dkoia,
    /// Baseline with inputs entering linearly.
    Dko,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dkoia => "dkoia",
            Variant::Dko => "dko",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dkoia" => Ok(Variant::Dkoia),
            "dko" => Ok(Variant::Dko),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected dkoia or dko)"
            ))),
        }
    }
}

/// Network shapes. Hidden layer lists exclude the input and output layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub lifted_dim: usize,
    pub phi_dim: usize,
    pub psi_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
}

impl Architecture {
    /// ψ: 9 → (32, 64, 32) → 13, φ: 12 → (16, 32, 16) → 6.
    pub fn reactor_separator() -> Self {
        Self {
            lifted_dim: 13,
            phi_dim: 6,
            psi_hidden: vec![32, 64, 32],
            phi_hidden: vec![16, 32, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub variant: Variant,
    /// `N × N`
    pub a: Matrix,
    /// `N × m`
    pub b_u: Matrix,
    /// `N × p`
    pub b_p: Matrix,
    /// `N × M`
    pub b_phi: Matrix,
    /// `n × N`
    pub c: Matrix,
    pub psi: LiftingNetwork,
    pub phi: Option<LiftingNetwork>,
    pub normalizer: Normalizer,
}

impl KoopmanModel {
    /// Fresh model: `A = I`, small random `B`, `C`, He-initialized networks.
    pub fn initialize(
        variant: Variant,
        arch: &Architecture,
        normalizer: Normalizer,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (n, m, p) = normalizer.dims();
        let lifted = arch.lifted_dim;
        if lifted == 0 {
            return Err(Error::Config("lifted dimension must be positive".into()));
        }
        let phi_dim = match variant {
            Variant::Dkoia => arch.phi_dim,
            Variant::Dko => 0,
        };
        if variant == Variant::Dkoia && phi_dim == 0 {
            return Err(Error::Config("DKOIA needs a positive phi dimension".into()));
        }

        let psi_sizes: Vec<usize> = std::iter::once(n)
            .chain(arch.psi_hidden.iter().copied())
            .chain(std::iter::once(lifted))
            .collect();
        let psi = LiftingNetwork::he_uniform(&psi_sizes, rng)?;
        let phi = if phi_dim > 0 {
            let sizes: Vec<usize> = std::iter::once(n + m + p)
                .chain(arch.phi_hidden.iter().copied())
                .chain(std::iter::once(phi_dim))
                .collect();
            Some(LiftingNetwork::he_uniform(&sizes, rng)?)
        } else {
            None
        };

        let mut small = |rows: usize, cols: usize, scale: f64| {
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    out[(i, j)] = rng.random_range(-scale..scale);
                }
            }
            out
        };
        let b_scale = 0.1;
        let c_scale = 1.0 / (lifted as f64).sqrt();
        let b_u = small(lifted, m, b_scale);
        let b_p = small(lifted, p, b_scale);
        let b_phi = small(lifted, phi_dim, b_scale);
        let c = small(n, lifted, c_scale);

        let model = Self {
            variant,
            a: Matrix::identity(lifted, lifted),
            b_u,
            b_p,
            b_phi,
            c,
            psi,
            phi,
            normalizer,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn phi_dim(&self) -> usize {
        self.b_phi.ncols()
    }

    /// Full shape audit of every product used in prediction.
    pub fn validate(&self) -> Result<()> {
        let (n, m, p) = self.normalizer.dims();
        let lifted = self.a.nrows();
        let check = |what: &str, mat: &Matrix, rows: usize, cols: usize| {
            if mat.nrows() != rows || mat.ncols() != cols {
                Err(Error::shape(
                    what,
                    format!("{rows}x{cols}"),
                    format!("{}x{}", mat.nrows(), mat.ncols()),
                ))
            } else if first_non_finite(mat.as_slice()).is_some() {
                Err(Error::Config(format!("{what} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        check("A", &self.a, lifted, lifted)?;
        check("B_u", &self.b_u, lifted, m)?;
        check("B_p", &self.b_p, lifted, p)?;
        check("C", &self.c, n, lifted)?;
        let phi_dim = self.b_phi.ncols();
        check("B_phi", &self.b_phi, lifted, phi_dim)?;
        if self.psi.input_dim() != n || self.psi.output_dim() != lifted {
            return Err(Error::shape(
                "psi network",
                format!("{n} -> {lifted}"),
                format!("{} -> {}", self.psi.input_dim(), self.psi.output_dim()),
            ));
        }
        match (&self.phi, self.variant) {
            (None, Variant::Dko) if phi_dim == 0 => {}
            (Some(phi), Variant::Dkoia) => {
                if phi.input_dim() != n + m + p || phi.output_dim() != phi_dim || phi_dim == 0 {
                    return Err(Error::shape(
                        "phi network",
                        format!("{} -> {phi_dim}", n + m + p),
                        format!("{} -> {}", phi.input_dim(), phi.output_dim()),
                    ));
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "{} model must {} a phi network with matching B_phi",
                    self.variant,
                    if self.variant == Variant::Dko {
                        "not have"
                    } else {
                        "have"
                    }
                )))
            }
        }
        self.normalizer.validate(n, m, p)
    }

    // --- normalized-unit primitives ---------------------------------------

    pub fn lift_normalized(&self, x: &Vector) -> Result<Vector> {
        self.psi.forward(x)
    }

    pub fn decode_normalized(&self, z: &Vector) -> Vector {
        &self.c * z
    }

    /// `φ(x̂, u, p)`; empty for the DKO variant.
    pub fn phi_normalized(&self, x_hat: &Vector, u: &Vector, p: &Vector) -> Result<Vector> {
        match &self.phi {
            Some(phi) => {
                let input = Vector::from_iterator(
                    x_hat.len() + u.len() + p.len(),
                    x_hat.iter().chain(u.iter()).chain(p.iter()).copied(),
                );
                phi.forward(&input)
            }
            None => Ok(Vector::zeros(0)),
        }
    }

    /// `z⁺ = A z + B_u u + B_p p + B_φ φ(x̂, u, p)` in normalized units.
    pub fn predict_one_normalized(&self, z: &Vector, x_hat: &Vector, u: &Vector, p: &Vector) -> Result<Vector> {
        self.check_vec("lifted state", z, self.lifted_dim())?;
        self.check_vec("decoded state", x_hat, self.state_dim())?;
        self.check_vec("input", u, self.input_dim())?;
        self.check_vec("disturbance", p, self.disturbance_dim())?;
        let phi = self.phi_normalized(x_hat, u, p)?;
        Ok(&self.a * z + &self.b_u * u + &self.b_p * p + &self.b_phi * phi)
    }

    /// One model step using its own decoded prediction `x̂ = C z` for `φ`.
    pub fn step_normalized(&self, z: &Vector, u: &Vector, p: &Vector) -> Result<Vector> {
        let x_hat = self.decode_normalized(z);
        self.predict_one_normalized(z, &x_hat, u, p)
    }

    fn check_vec(&self, what: &str, v: &Vector, dim: usize) -> Result<()> {
        if v.len() != dim {
            return Err(Error::shape(what, dim, v.len()));
        }
        Ok(())
    }

    // --- raw-unit API -----------------------------------------------------

    /// `z = ψ(normalize(x))`.
    pub fn lift(&self, x: &Vector) -> Result<Vector> {
        self.check_vec("state", x, self.state_dim())?;
        self.lift_normalized(&self.normalizer.normalize_state(x))
    }

    /// `[u; p; φ(x, u, p)]` in normalized units; `[u; p]` for DKO.
    pub fn lift_input(&self, x: &Vector, u: &Vector, p: &Vector) -> Result<Vector> {
        self.check_vec("state", x, self.state_dim())?;
        self.check_vec("input", u, self.input_dim())?;
        self.check_vec("disturbance", p, self.disturbance_dim())?;
        let norm = &self.normalizer;
        let (xn, un, pn) = (
            norm.normalize_state(x),
            norm.normalize_input(u),
            norm.normalize_disturbance(p),
        );
        let phi = self.phi_normalized(&xn, &un, &pn)?;
        Ok(Vector::from_iterator(
            un.len() + pn.len() + phi.len(),
            un.iter().chain(pn.iter()).chain(phi.iter()).copied(),
        ))
    }

    /// Next lifted state from lifted state `z`, raw decoded state `x̂` and raw
    /// inputs.
    pub fn predict_one(&self, z: &Vector, x_hat: &Vector, u: &Vector, p: &Vector) -> Result<Vector> {
        self.check_vec("decoded state", x_hat, self.state_dim())?;
        self.check_vec("input", u, self.input_dim())?;
        self.check_vec("disturbance", p, self.disturbance_dim())?;
        let norm = &self.normalizer;
        self.predict_one_normalized(
            z,
            &norm.normalize_state(x_hat),
            &norm.normalize_input(u),
            &norm.normalize_disturbance(p),
        )
    }

    /// Decode a lifted state to raw units.
    pub fn decode(&self, z: &Vector) -> Vector {
        self.normalizer.denormalize_state(&self.decode_normalized(z))
    }

    /// Predicted raw states `x̂_{k..k+H}` for `H = inputs.len()` steps.
    /// The first element is the autoencoded `C ψ(x_k)`, not `x_k` itself.
    pub fn rollout(&self, x: &Vector, inputs: &[Vector], disturbances: &[Vector]) -> Result<Vec<Vector>> {
        if inputs.len() != disturbances.len() {
            return Err(Error::shape(
                "rollout inputs/disturbances",
                inputs.len(),
                disturbances.len(),
            ));
        }
        let norm = &self.normalizer;
        let mut z = self.lift(x)?;
        let mut out = Vec::with_capacity(inputs.len() + 1);
        for (j, (u, p)) in inputs.iter().zip(disturbances).enumerate() {
            self.check_vec("input", u, self.input_dim())?;
            self.check_vec("disturbance", p, self.disturbance_dim())?;
            let x_hat = self.decode_normalized(&z);
            out.push(norm.denormalize_state(&x_hat));
            z = self.predict_one_normalized(&z, &x_hat, &norm.normalize_input(u), &norm.normalize_disturbance(p))?;
            if first_non_finite(z.as_slice()).is_some() {
                return Err(Error::RolloutDiverged { step: j + 1 });
            }
        }
        out.push(self.decode(&z));
        if out.iter().any(|x| first_non_finite(x.as_slice()).is_some()) {
            return Err(Error::RolloutDiverged { step: 0 });
        }
        Ok(out)
    }

    // --- flat parameter view ----------------------------------------------

    /// Layout of the trainable parameters: `A, B_u, B_p, B_φ, C, ψ, φ`.
    /// `A` and all `B` blocks and network weights are regularized; `C` and
    /// biases are not.
    pub fn param_layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::default();
        layout.push("A", self.a.len(), true);
        layout.push("B_u", self.b_u.len(), true);
        layout.push("B_p", self.b_p.len(), true);
        layout.push("B_phi", self.b_phi.len(), true);
        layout.push("C", self.c.len(), false);
        self.psi.extend_layout("psi", &mut layout);
        if let Some(phi) = &self.phi {
            phi.extend_layout("phi", &mut layout);
        }
        layout
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_layout().len());
        for m in [&self.a, &self.b_u, &self.b_p, &self.b_phi, &self.c] {
            out.extend_from_slice(m.as_slice());
        }
        self.psi.write_params(&mut out);
        if let Some(phi) = &self.phi {
            phi.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_layout().len();
        if values.len() != expected {
            return Err(Error::shape("model parameter vector", expected, values.len()));
        }
        let mut offset = 0;
        for m in [&mut self.a, &mut self.b_u, &mut self.b_p, &mut self.b_phi, &mut self.c] {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        offset += self.psi.read_params(&values[offset..]);
        if let Some(phi) = &mut self.phi {
            offset += phi.read_params(&values[offset..]);
        }
        debug_assert_eq!(offset, expected);
        Ok(())
    }

    /// Drop the `φ` network, giving the DKO model with the same `A, B_u, B_p, C, ψ`.
    pub fn without_phi(&self) -> Self {
        Self {
            variant: Variant::Dko,
            b_phi: Matrix::zeros(self.lifted_dim(), 0),
            phi: None,
            ..self.clone()
        }
    }
}

//! Multi-step prediction loss and its gradient by backpropagation through
//! the rollout.

use crate::dataset::{NormalizedData, RolloutWindow};
use crate::linalg::{first_non_finite, Matrix};
use crate::neuralnet::ForwardCache;
use crate::{Error, Result};

use super::KoopmanModel;

/// Normalized data for a batch of equal-horizon windows, one window per
/// column.
#[derive(Debug, Clone)]
pub struct BatchRollout {
    /// `H + 1` matrices of `n × B`.
    pub states: Vec<Matrix>,
    /// `H` matrices of `m × B`.
    pub inputs: Vec<Matrix>,
    /// `H` matrices of `p × B`.
    pub disturbances: Vec<Matrix>,
}

impl BatchRollout {
    pub fn gather(data: &NormalizedData, windows: &[&RolloutWindow]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
        let horizon = first.horizon;
        if let Some(w) = windows.iter().find(|w| w.horizon != horizon) {
            return Err(Error::shape("batch window horizon", horizon, w.horizon));
        }
        if let Some(w) = windows.iter().find(|w| w.start + horizon >= data.len()) {
            return Err(Error::shape("window end", data.len(), w.start + horizon + 1));
        }
        let b = windows.len();
        let take = |src: &Matrix, j: usize| {
            let mut out = Matrix::zeros(src.nrows(), b);
            for (col, w) in windows.iter().enumerate() {
                out.set_column(col, &src.column(w.start + j));
            }
            out
        };
        Ok(Self {
            states: (0..=horizon).map(|j| take(&data.states, j)).collect(),
            inputs: (0..horizon).map(|j| take(&data.inputs, j)).collect(),
            disturbances: (0..horizon).map(|j| take(&data.disturbances, j)).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.states[0].ncols()
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `data + penalty`
    pub total: f64,
    /// Prediction error summed over the horizon (see [`KoopmanModel::data_loss`]).
    pub data: f64,
    pub penalty: f64,
    /// Gradient of `total` in [`KoopmanModel::param_layout`] order.
    pub gradient: Vec<f64>,
}

struct Forward {
    lifted: Vec<Matrix>,
    decoded: Vec<Matrix>,
    phi_out: Vec<Matrix>,
    phi_caches: Vec<ForwardCache>,
    psi_cache: ForwardCache,
}

impl KoopmanModel {
    fn forward_batch(&self, batch: &BatchRollout) -> Result<Forward> {
        let horizon = batch.horizon();
        let (n, m, p) = (self.state_dim(), self.input_dim(), self.disturbance_dim());
        if batch.states[0].nrows() != n || batch.inputs.iter().any(|u| u.nrows() != m) {
            return Err(Error::shape(
                "batch channels",
                format!("{n}/{m}"),
                batch.states[0].nrows(),
            ));
        }
        if batch.disturbances.iter().any(|d| d.nrows() != p) {
            return Err(Error::shape(
                "batch disturbance channels",
                p,
                batch.disturbances[0].nrows(),
            ));
        }
        let b = batch.batch_size();
        let (z0, psi_cache) = self.psi.forward_batch(&batch.states[0])?;
        let mut lifted = Vec::with_capacity(horizon + 1);
        let mut decoded = Vec::with_capacity(horizon + 1);
        let mut phi_out = Vec::with_capacity(horizon);
        let mut phi_caches = Vec::with_capacity(horizon);
        lifted.push(z0);
        for j in 0..horizon {
            let z = &lifted[j];
            let x_hat = &self.c * z;
            let mut next = &self.a * z + &self.b_u * &batch.inputs[j] + &self.b_p * &batch.disturbances[j];
            if let Some(phi) = &self.phi {
                let mut input = Matrix::zeros(n + m + p, b);
                input.rows_mut(0, n).copy_from(&x_hat);
                input.rows_mut(n, m).copy_from(&batch.inputs[j]);
                input.rows_mut(n + m, p).copy_from(&batch.disturbances[j]);
                let (out, cache) = phi.forward_batch(&input)?;
                next += &self.b_phi * &out;
                phi_out.push(out);
                phi_caches.push(cache);
            }
            if first_non_finite(next.as_slice()).is_some() {
                return Err(Error::RolloutDiverged { step: j + 1 });
            }
            decoded.push(x_hat);
            lifted.push(next);
        }
        decoded.push(&self.c * &lifted[horizon]);
        Ok(Forward {
            lifted,
            decoded,
            phi_out,
            phi_caches,
            psi_cache,
        })
    }

    /// `(1 / B) Σ_{j=0..H} ‖C ẑ_j − x_j‖²_F`: squared error summed over the
    /// horizon and channels, averaged over the batch.
    pub fn data_loss(&self, batch: &BatchRollout) -> Result<f64> {
        let fwd = self.forward_batch(batch)?;
        Ok(squared_error(&fwd.decoded, &batch.states) / self.loss_scale(batch))
    }

    /// Per-step normalized squared errors `Σ_i (x̂_ij − x_ij)²` summed over
    /// the batch, for `j = 0..H`.
    pub fn step_errors(&self, batch: &BatchRollout) -> Result<Vec<f64>> {
        let fwd = self.forward_batch(batch)?;
        Ok(fwd
            .decoded
            .iter()
            .zip(&batch.states)
            .map(|(a, b)| (a - b).norm_squared())
            .collect())
    }

    fn loss_scale(&self, batch: &BatchRollout) -> f64 {
        batch.batch_size() as f64
    }

    /// Data loss plus `l2 · Σ θ²` over the regularized parameters, and the
    /// gradient of the sum.
    pub fn loss_and_gradient(&self, batch: &BatchRollout, l2: f64) -> Result<LossOutput> {
        let fwd = self.forward_batch(batch)?;
        let horizon = batch.horizon();
        let n = self.state_dim();
        let scale = self.loss_scale(batch);
        let data = squared_error(&fwd.decoded, &batch.states) / scale;

        let residual = |j: usize| (&fwd.decoded[j] - &batch.states[j]) * (2.0 / scale);

        let mut g_a = Matrix::zeros(self.a.nrows(), self.a.ncols());
        let mut g_bu = Matrix::zeros(self.b_u.nrows(), self.b_u.ncols());
        let mut g_bp = Matrix::zeros(self.b_p.nrows(), self.b_p.ncols());
        let mut g_bphi = Matrix::zeros(self.b_phi.nrows(), self.b_phi.ncols());
        let mut g_phi_params: Option<Vec<f64>> = None;

        let g_top = residual(horizon);
        let mut g_c = &g_top * fwd.lifted[horizon].transpose();
        let mut g_z = self.c.transpose() * &g_top;

        for j in (0..horizon).rev() {
            // g_z holds ∂L/∂z_{j+1}
            let z_t = fwd.lifted[j].transpose();
            g_a += &g_z * &z_t;
            g_bu += &g_z * batch.inputs[j].transpose();
            g_bp += &g_z * batch.disturbances[j].transpose();
            let mut g_x = residual(j);
            if let Some(phi) = &self.phi {
                g_bphi += &g_z * fwd.phi_out[j].transpose();
                let upstream = self.b_phi.transpose() * &g_z;
                let (grad, g_in) = phi.backward(&fwd.phi_caches[j], &upstream)?;
                let mut flat = Vec::new();
                grad.write_params(&mut flat);
                match &mut g_phi_params {
                    Some(acc) => acc.iter_mut().zip(&flat).for_each(|(a, g)| *a += g),
                    None => g_phi_params = Some(flat),
                }
                g_x += g_in.rows(0, n);
            }
            g_c += &g_x * &z_t;
            g_z = self.a.transpose() * &g_z + self.c.transpose() * &g_x;
        }
        let (g_psi, _) = self.psi.backward(&fwd.psi_cache, &g_z)?;

        let layout = self.param_layout();
        let mut gradient = Vec::with_capacity(layout.len());
        for g in [&g_a, &g_bu, &g_bp, &g_bphi, &g_c] {
            gradient.extend_from_slice(g.as_slice());
        }
        g_psi.write_params(&mut gradient);
        if let Some(phi) = &self.phi {
            match g_phi_params {
                Some(acc) => gradient.extend(acc),
                None => gradient.extend(std::iter::repeat_n(0.0, phi.param_count())),
            }
        }
        debug_assert_eq!(gradient.len(), layout.len());
        let penalty = layout.l2_penalty(&self.params(), l2, &mut gradient);
        Ok(LossOutput {
            total: data + penalty,
            data,
            penalty,
            gradient,
        })
    }
}

fn squared_error(pred: &[Matrix], target: &[Matrix]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).norm_squared()).sum()
}

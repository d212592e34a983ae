use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::model::SystemModel;
use crate::rng::{self, stream};

use super::{check_step_inputs, ensure_finite, StateObserver, StepReport};

/// Observer with a fixed diagonal innovation gain:
/// `x̂ = x̄ − Cᵀ D (C x̄ − y)`.
pub struct Luenberger {
    name: String,
    model: Arc<SystemModel>,
    gain: Vec<f64>,
    x_hat: Vec<f64>,
}

impl Luenberger {
    pub fn new(name: impl Into<String>, model: Arc<SystemModel>, gain: Vec<f64>) -> Result<Self> {
        if gain.len() != model.n_y() {
            return Err(Error::shape("Luenberger gain", model.n_y(), gain.len()));
        }
        let x_hat = vec![0.0; model.n_x()];
        Ok(Self {
            name: name.into(),
            model,
            gain,
            x_hat,
        })
    }

    pub fn with_initial(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.x_hat.len() {
            return Err(Error::shape("initial estimate", self.x_hat.len(), x0.len()));
        }
        self.x_hat = x0;
        Ok(self)
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }
}

impl StateObserver for Luenberger {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport> {
        let m = &self.model;
        check_step_inputs(m.n_u(), m.n_y(), u_prev, y)?;
        let x_bar = m.predict(&self.x_hat, u_prev)?;
        let residual: Vec<f64> = m
            .c
            .apply(&x_bar)?
            .iter()
            .zip(y)
            .zip(&self.gain)
            .map(|((cx, yi), d)| d * (cx - yi))
            .collect();
        let correction = m.c.apply_adjoint(&residual)?;
        let x_hat: Vec<f64> = x_bar.iter().zip(&correction).map(|(a, b)| a - b).collect();
        ensure_finite(&self.name, &x_hat)?;
        self.x_hat = x_hat;
        Ok(StepReport::default())
    }

    fn current_estimate(&self) -> Vec<f64> {
        self.x_hat.clone()
    }
}

/// `D_i = d / (d + r_i)`.
pub fn luenberger_gain_from_variance(d: f64, r_diag: &[f64]) -> Vec<f64> {
    r_diag
        .iter()
        .map(|&r| if d == 0.0 { 0.0 } else { d / (d + r) })
        .collect()
}

/// Diagonal gain from the mean per-state process-noise variance
/// `d = (1/n_x) · mean_i ‖L_Q v⁽ⁱ⁾‖²`, `v⁽ⁱ⁾ ∼ N(0, I)`.
///
/// Returns the gain and the estimated `d`.
pub fn design_luenberger_gain(
    r_diag: &[f64],
    l_q: &LinearOperator,
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if n_samples < 2 {
        return Err(Error::Construction(format!(
            "Luenberger design needs at least 2 samples, got {n_samples}"
        )));
    }
    let n = l_q.cols();
    let mut rng = rng::seeded(seed, stream::LUENBERGER_DESIGN);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let v = rng::standard_normal_vec(&mut rng, n);
        let w = l_q.apply(&v)?;
        total += w.iter().map(|x| x * x).sum::<f64>();
    }
    let d = total / (n_samples as f64 * l_q.rows() as f64);
    Ok((luenberger_gain_from_variance(d, r_diag), d))
}

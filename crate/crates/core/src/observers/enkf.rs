use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::rng::{self, stream, Rng};
use crate::solver::woodbury_apply;

use super::{check_step_inputs, ensure_finite, StateObserver, StepFlag, StepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnkfMode {
    /// Each member is corrected with its own perturbed innovation
    /// `y + η⁽ʲ⁾ − C x⁽ʲ⁾`, `η⁽ʲ⁾ ∼ N(0, R)`.
    Stochastic,
    /// Residual columns `y − Ȳ⁽ʲ⁾` built from the scaled output anomalies,
    /// kept for comparison with the stochastic form.
    Literal,
}

pub struct EnKf {
    name: String,
    model: Arc<SystemModel>,
    mode: EnkfMode,
    members: Vec<Vec<f64>>,
    rng: Rng,
    r_std: Vec<f64>,
}

impl EnKf {
    /// Ensemble of `size` members all starting at `x0`.
    pub fn new(
        name: impl Into<String>,
        model: Arc<SystemModel>,
        size: usize,
        mode: EnkfMode,
        seed: u64,
        x0: Vec<f64>,
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::Construction(format!(
                "ensemble needs at least 2 members, got {size}"
            )));
        }
        if x0.len() != model.n_x() {
            return Err(Error::shape("initial estimate", model.n_x(), x0.len()));
        }
        Self::from_members(name, model, vec![x0; size], mode, seed)
    }

    pub fn from_members(
        name: impl Into<String>,
        model: Arc<SystemModel>,
        members: Vec<Vec<f64>>,
        mode: EnkfMode,
        seed: u64,
    ) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Construction("ensemble needs at least 2 members".into()));
        }
        for m in &members {
            if m.len() != model.n_x() {
                return Err(Error::shape("ensemble member", model.n_x(), m.len()));
            }
        }
        let r_std = model.r_diag.iter().map(|r| r.sqrt()).collect();
        Ok(Self {
            name: name.into(),
            model,
            mode,
            members,
            rng: rng::seeded(seed, stream::ENKF),
            r_std,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    /// Propagate every member through the model with its own noise draw.
    fn forecast(&mut self, u_prev: &[f64]) -> Result<()> {
        let n = self.model.n_x();
        let draws: Vec<Vec<f64>> = (0..self.members.len())
            .map(|_| rng::standard_normal_vec(&mut self.rng, n))
            .collect();
        let model = &self.model;
        let next: Result<Vec<Vec<f64>>> = self
            .members
            .par_iter()
            .zip(draws.par_iter())
            .map(|(x, v)| {
                let mut next = model.predict(x, u_prev)?;
                let w = model.l_q.apply(v)?;
                next.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
                Ok(next)
            })
            .collect();
        self.members = next?;
        Ok(())
    }

    /// Apply the ensemble update; returns false if the spread is zero.
    fn analysis(&mut self, y: &[f64]) -> Result<bool> {
        let m = &self.model;
        let n = m.n_x();
        let size = self.members.len();
        let mean = self.current_estimate();
        let scale = 1.0 / ((size - 1) as f64).sqrt();
        let xbar = DMatrix::from_fn(n, size, |i, j| (self.members[j][i] - mean[i]) * scale);
        // Rounding in the mean leaves anomalies of a few ulps on identical members.
        let magnitude = self
            .members
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        if xbar.amax() <= 64.0 * f64::EPSILON * magnitude {
            return Ok(false);
        }
        let ny = m.n_y();
        let mut ybar = DMatrix::zeros(ny, size);
        let mut outputs = DMatrix::zeros(ny, size);
        for j in 0..size {
            let col: Vec<f64> = xbar.column(j).iter().copied().collect();
            ybar.set_column(j, &nalgebra::DVector::from_vec(m.c.apply(&col)?));
            outputs.set_column(j, &nalgebra::DVector::from_vec(m.c.apply(&self.members[j])?));
        }
        let residuals = match self.mode {
            EnkfMode::Stochastic => {
                let mut d = DMatrix::zeros(ny, size);
                for j in 0..size {
                    let eta = rng::standard_normal_vec(&mut self.rng, ny);
                    for i in 0..ny {
                        d[(i, j)] = y[i] + self.r_std[i] * eta[i] - outputs[(i, j)];
                    }
                }
                d
            }
            EnkfMode::Literal => DMatrix::from_fn(ny, size, |i, j| y[i] - ybar[(i, j)]),
        };
        let weights = woodbury_apply(&m.r_inv_diag(), &ybar, &residuals)?;
        let mixing = ybar.tr_mul(&weights);
        let correction = xbar * mixing;
        for (j, member) in self.members.iter_mut().enumerate() {
            for (x, c) in member.iter_mut().zip(correction.column(j).iter()) {
                *x += c;
            }
        }
        Ok(true)
    }
}

impl StateObserver for EnKf {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport> {
        check_step_inputs(self.model.n_u(), self.model.n_y(), u_prev, y)?;
        self.forecast(u_prev)?;
        let updated = self.analysis(y)?;
        for member in &self.members {
            ensure_finite(&self.name, member)?;
        }
        let mut report = StepReport::default();
        if !updated {
            report.flags.push(StepFlag::EnsembleCollapsed);
        }
        Ok(report)
    }

    fn current_estimate(&self) -> Vec<f64> {
        let n = self.model.n_x();
        let mut mean = vec![0.0; n];
        for member in &self.members {
            mean.iter_mut().zip(member).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / self.members.len() as f64;
        mean.iter_mut().for_each(|a| *a *= inv);
        mean
    }
}

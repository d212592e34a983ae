use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::model::SystemModel;
use crate::solver::{
    cg_solve_from, lsk_normal_operator, CgReport, NormalEquations, DEFAULT_CG_MAX_ITER,
    DEFAULT_CG_TOL,
};

use super::{check_step_inputs, ensure_finite, StateObserver, StepFlag, StepReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LskKfOptions {
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Start CG from the previous step's `f` instead of zero.
    pub warm_start: bool,
}

impl Default for LskKfOptions {
    fn default() -> Self {
        Self {
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: DEFAULT_CG_MAX_ITER,
            warm_start: false,
        }
    }
}

/// Least-squares kernel Kalman filter with a fixed covariance factor `L`.
///
/// Each update solves `(I + Lᵀ Cᵀ R⁻¹ C L) f = Lᵀ Cᵀ R⁻¹ (y − C x̄)` by CG and
/// sets `x̂ = x̄ + L f`.
pub struct LskKf {
    name: String,
    model: Arc<SystemModel>,
    l: LinearOperator,
    normal: NormalEquations,
    options: LskKfOptions,
    x_hat: Vec<f64>,
    last_f: Option<Vec<f64>>,
    last_report: Option<CgReport>,
}

impl LskKf {
    pub fn new(
        name: impl Into<String>,
        model: Arc<SystemModel>,
        l: LinearOperator,
        options: LskKfOptions,
    ) -> Result<Self> {
        let normal = lsk_normal_operator(&l, &model.c, &model.r_inv_diag())?;
        let x_hat = vec![0.0; model.n_x()];
        Ok(Self {
            name: name.into(),
            model,
            l,
            normal,
            options,
            x_hat,
            last_f: None,
            last_report: None,
        })
    }

    pub fn with_initial(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.x_hat.len() {
            return Err(Error::shape("initial estimate", self.x_hat.len(), x0.len()));
        }
        self.x_hat = x0;
        Ok(self)
    }

    pub fn kernel(&self) -> &LinearOperator {
        &self.l
    }

    pub fn last_report(&self) -> Option<CgReport> {
        self.last_report
    }
}

impl StateObserver for LskKf {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport> {
        let m = &self.model;
        check_step_inputs(m.n_u(), m.n_y(), u_prev, y)?;
        let x_bar = m.predict(&self.x_hat, u_prev)?;
        let predicted = m.c.apply(&x_bar)?;
        let innovation: Vec<f64> = y.iter().zip(&predicted).map(|(a, b)| a - b).collect();
        let rhs = self.normal.rhs(&innovation)?;
        let init = if self.options.warm_start {
            self.last_f.as_deref()
        } else {
            None
        };
        let (f, report) = cg_solve_from(
            &self.normal.operator,
            &rhs,
            init,
            self.options.cg_tol,
            self.options.cg_max_iter,
        )?;
        let correction = self.l.apply(&f)?;
        let x_hat: Vec<f64> = x_bar.iter().zip(&correction).map(|(a, b)| a + b).collect();
        ensure_finite(&self.name, &x_hat)?;
        self.x_hat = x_hat;
        self.last_f = Some(f);
        self.last_report = Some(report);
        let mut flags = Vec::new();
        if !report.converged {
            flags.push(StepFlag::CgNotConverged);
        }
        Ok(StepReport {
            cg: Some(report),
            flags,
        })
    }

    fn current_estimate(&self) -> Vec<f64> {
        self.x_hat.clone()
    }
}

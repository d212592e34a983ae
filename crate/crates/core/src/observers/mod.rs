//! Online state estimators sharing one predict/update interface.

mod enkf;
mod lskkf;
mod luenberger;
mod romkf;

pub use enkf::{EnKf, EnkfMode};
pub use lskkf::{LskKf, LskKfOptions};
pub use luenberger::{design_luenberger_gain, luenberger_gain_from_variance, Luenberger};
pub use romkf::RomKf;

use crate::error::{Error, Result};
use crate::solver::CgReport;

/// Non-fatal conditions raised during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFlag {
    CgNotConverged,
    EnsembleCollapsed,
}

impl StepFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            StepFlag::CgNotConverged => "cg_not_converged",
            StepFlag::EnsembleCollapsed => "ensemble_collapsed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub cg: Option<CgReport>,
    pub flags: Vec<StepFlag>,
}

pub trait StateObserver: Send {
    fn name(&self) -> &str;

    /// Predict with the previous input `u_prev`, then correct with `y`.
    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport>;

    /// Full-length state estimate.
    fn current_estimate(&self) -> Vec<f64>;
}

/// Any of the four estimators.
pub enum ObserverState {
    LskKf(LskKf),
    EnKf(EnKf),
    RomKf(RomKf),
    Luenberger(Luenberger),
}

impl ObserverState {
    fn inner(&self) -> &dyn StateObserver {
        match self {
            ObserverState::LskKf(o) => o,
            ObserverState::EnKf(o) => o,
            ObserverState::RomKf(o) => o,
            ObserverState::Luenberger(o) => o,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn StateObserver {
        match self {
            ObserverState::LskKf(o) => o,
            ObserverState::EnKf(o) => o,
            ObserverState::RomKf(o) => o,
            ObserverState::Luenberger(o) => o,
        }
    }
}

impl StateObserver for ObserverState {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport> {
        self.inner_mut().step(u_prev, y)
    }

    fn current_estimate(&self) -> Vec<f64> {
        self.inner().current_estimate()
    }
}

pub(crate) fn ensure_finite(observer: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!(
            "{observer}: non-finite estimate at state {i}"
        ))),
        None => Ok(()),
    }
}

pub(crate) fn check_step_inputs(n_u: usize, n_y: usize, u: &[f64], y: &[f64]) -> Result<()> {
    if u.len() != n_u {
        return Err(Error::shape("input vector", n_u, u.len()));
    }
    if y.len() != n_y {
        return Err(Error::shape("measurement vector", n_y, y.len()));
    }
    Ok(())
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::RomMatrices;

use super::{check_step_inputs, ensure_finite, StateObserver, StepReport};

/// Kalman filter in reduced coordinates `x ≈ V z`.
///
/// The gain is evaluated in information form so only `n_r x n_r` systems
/// are solved: `K = (C_rᵀ R⁻¹ C_r + P̄⁻¹)⁻¹ C_rᵀ R⁻¹`, and the posterior
/// covariance is the same `n_r x n_r` matrix.
pub struct RomKf {
    name: String,
    rom: RomMatrices,
    r_inv: Vec<f64>,
    /// `C_rᵀ R⁻¹ C_r`, fixed over time.
    information: DMatrix<f64>,
    z: DVector<f64>,
    p: DMatrix<f64>,
}

impl RomKf {
    /// Starts from `ẑ = 0`, `P = 0`.
    pub fn new(name: impl Into<String>, rom: RomMatrices, r_diag: &[f64]) -> Result<Self> {
        let n_r = rom.a_r.nrows();
        if rom.c_r.nrows() != r_diag.len() {
            return Err(Error::shape("R diagonal", rom.c_r.nrows(), r_diag.len()));
        }
        let r_inv: Vec<f64> = r_diag.iter().map(|r| 1.0 / r).collect();
        let mut weighted = rom.c_r.clone();
        for (i, &w) in r_inv.iter().enumerate() {
            weighted.row_mut(i).scale_mut(w);
        }
        let information = rom.c_r.tr_mul(&weighted);
        Ok(Self {
            name: name.into(),
            information: (&information + information.transpose()) * 0.5,
            rom,
            r_inv,
            z: DVector::zeros(n_r),
            p: DMatrix::zeros(n_r, n_r),
        })
    }

    pub fn with_initial(mut self, z0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n_r = self.z.len();
        if z0.len() != n_r || p0.shape() != (n_r, n_r) {
            return Err(Error::shape("initial reduced state", n_r, z0.len()));
        }
        self.z = z0;
        self.p = p0;
        Ok(self)
    }

    pub fn reduced_state(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn order(&self) -> usize {
        self.z.len()
    }
}

impl StateObserver for RomKf {
    fn name(&self) -> &str {
        &self.name
    }

    fn step(&mut self, u_prev: &[f64], y: &[f64]) -> Result<StepReport> {
        check_step_inputs(self.rom.b_r.ncols(), self.rom.c_r.nrows(), u_prev, y)?;
        let rom = &self.rom;
        let u = DVector::from_column_slice(u_prev);
        let z_bar = &rom.a_r * &self.z + &rom.b_r * u;
        let p_bar = &rom.a_r * &self.p * rom.a_r.transpose() + &rom.q_r;
        let p_bar = (&p_bar + p_bar.transpose()) * 0.5;

        // (C_rᵀR⁻¹C_r + P̄⁻¹)⁻¹ = (I + P̄ C_rᵀR⁻¹C_r)⁻¹ P̄, valid for singular P̄.
        let n_r = p_bar.nrows();
        let system = DMatrix::identity(n_r, n_r) + &p_bar * &self.information;
        let posterior = system
            .lu()
            .solve(&p_bar)
            .ok_or_else(|| Error::Numeric("reduced update system is singular".into()))?;
        let posterior = (&posterior + posterior.transpose()) * 0.5;

        let predicted = &rom.c_r * &z_bar;
        let weighted = DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(predicted.iter())
                .zip(&self.r_inv)
                .map(|((yi, pi), w)| w * (yi - pi)),
        );
        let z = &z_bar + &posterior * rom.c_r.tr_mul(&weighted);
        ensure_finite(&self.name, z.as_slice())?;
        ensure_finite(&self.name, posterior.as_slice())?;
        self.z = z;
        self.p = posterior;
        Ok(StepReport::default())
    }

    fn current_estimate(&self) -> Vec<f64> {
        (&self.rom.v * &self.z).as_slice().to_vec()
    }
}

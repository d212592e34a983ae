//! Linear solvers: plain conjugate gradients for the kernel-filter normal
//! equations, the Woodbury-form inverse used by the ensemble filter, and a
//! small dense SPD solve for oracles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::{dot, norm, LinearOperator};

/// Largest dimension accepted by the dense solvers.
pub const DENSE_CAP: usize = 2000;

pub const DEFAULT_CG_TOL: f64 = 1e-8;
pub const DEFAULT_CG_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

/// Solve `op f = rhs` for SPD `op`, starting from zero.
///
/// Non-convergence is not an error: the lowest-residual iterate is returned
/// with `converged = false`. A NaN or infinite iterate is a hard error.
pub fn cg_solve(
    op: &LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    cg_solve_from(op, rhs, None, tol, max_iter)
}

pub fn cg_solve_from(
    op: &LinearOperator,
    rhs: &[f64],
    initial: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    if !op.is_square() {
        return Err(Error::shape(
            "cg_solve operator",
            "square",
            format!("{}x{}", op.rows(), op.cols()),
        ));
    }
    if rhs.len() != op.rows() {
        return Err(Error::shape("cg_solve rhs", op.rows(), rhs.len()));
    }
    let n = rhs.len();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                final_relative_residual: 0.0,
                converged: true,
            },
        ));
    }
    if !b_norm.is_finite() {
        return Err(Error::Numeric("cg_solve: non-finite right-hand side".into()));
    }

    let mut x = match initial {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::shape("cg_solve initial guess", n, x0.len()));
            }
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = match initial {
        Some(_) => {
            let ax = op.apply(&x)?;
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        }
        None => rhs.to_vec(),
    };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut rel = rr.sqrt() / b_norm;
    let mut best = (rel, x.clone());
    let mut iterations = 0;

    while rel > tol && iterations < max_iter {
        let ap = op.apply(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::Numeric(format!(
                "cg_solve: non-finite curvature at iteration {iterations}"
            )));
        }
        if pap <= 0.0 {
            // Breakdown: operator not positive definite along p.
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::Numeric(format!(
                "cg_solve: non-finite residual at iteration {iterations}"
            )));
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        rel = rr.sqrt() / b_norm;
        iterations += 1;
        if rel < best.0 {
            best.0 = rel;
            best.1.copy_from_slice(&x);
        }
    }

    let converged = rel <= tol;
    let (final_rel, sol) = if converged { (rel, x) } else { best };
    Ok((
        sol,
        CgReport {
            iterations,
            final_relative_residual: final_rel,
            converged,
        },
    ))
}

/// Operators of the first-order conditions `f + Lᵀ Cᵀ R⁻¹ C L f = Lᵀ Cᵀ R⁻¹ z`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    /// `I + Lᵀ Cᵀ R⁻¹ C L`, symmetric positive definite.
    pub operator: LinearOperator,
    /// `z -> Lᵀ Cᵀ R⁻¹ z`, mapping an innovation to the right-hand side.
    pub rhs_map: LinearOperator,
}

impl NormalEquations {
    pub fn rhs(&self, innovation: &[f64]) -> Result<Vec<f64>> {
        self.rhs_map.apply(innovation)
    }
}

pub fn lsk_normal_operator(
    l: &LinearOperator,
    c: &LinearOperator,
    r_inv_diag: &[f64],
) -> Result<NormalEquations> {
    if !l.is_square() {
        return Err(Error::shape(
            "kernel factor L",
            "square",
            format!("{}x{}", l.rows(), l.cols()),
        ));
    }
    if c.cols() != l.rows() {
        return Err(Error::shape("C columns vs L rows", l.rows(), c.cols()));
    }
    if r_inv_diag.len() != c.rows() {
        return Err(Error::shape("R⁻¹ diagonal", c.rows(), r_inv_diag.len()));
    }
    if let Some(v) = r_inv_diag.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Construction(format!(
            "R⁻¹ entries must be positive and finite, found {v}"
        )));
    }
    let r_inv = LinearOperator::diagonal(r_inv_diag.to_vec());
    let rhs_map = LinearOperator::chain(&[l.adjoint(), c.adjoint(), r_inv])?;
    let data_term = LinearOperator::chain(&[rhs_map.clone(), c.clone(), l.clone()])?;
    let operator = LinearOperator::sum(vec![LinearOperator::identity(l.cols()), data_term])?;
    Ok(NormalEquations { operator, rhs_map })
}

/// `(R + Ȳ Ȳᵀ)⁻¹ · residuals`.
///
/// With more members than measurements the `n_y x n_y` system is factored
/// directly; otherwise the Woodbury identity
/// `R⁻¹ (I − Ȳ (I + Ȳᵀ R⁻¹ Ȳ)⁻¹ Ȳᵀ R⁻¹)` reduces it to an `N x N` solve.
pub fn woodbury_apply(
    r_inv_diag: &[f64],
    ybar: &DMatrix<f64>,
    residuals: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let ny = r_inv_diag.len();
    if ybar.nrows() != ny {
        return Err(Error::shape("woodbury Ȳ rows", ny, ybar.nrows()));
    }
    if residuals.nrows() != ny {
        return Err(Error::shape("woodbury residual rows", ny, residuals.nrows()));
    }
    if ny < ybar.ncols() {
        let mut s = ybar * ybar.transpose();
        for (i, &w) in r_inv_diag.iter().enumerate() {
            s[(i, i)] += 1.0 / w;
        }
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numeric("innovation covariance is not SPD (NaN input?)".into()))?;
        return Ok(chol.solve(residuals));
    }
    let mut weighted = residuals.clone();
    let mut r_inv_y = ybar.clone();
    for (i, &w) in r_inv_diag.iter().enumerate() {
        weighted.row_mut(i).scale_mut(w);
        r_inv_y.row_mut(i).scale_mut(w);
    }
    let n = ybar.ncols();
    let mut core = ybar.tr_mul(&r_inv_y);
    for i in 0..n {
        core[(i, i)] += 1.0;
    }
    let projected = ybar.tr_mul(&weighted);
    let chol = core
        .cholesky()
        .ok_or_else(|| Error::Numeric("woodbury core matrix is not SPD (NaN input?)".into()))?;
    let inner = chol.solve(&projected);
    Ok(weighted - r_inv_y * inner)
}

fn check_spd_input(m: &DMatrix<f64>, rhs_rows: usize) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(
            "dense SPD matrix",
            "square",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.nrows() > DENSE_CAP {
        return Err(Error::Construction(format!(
            "dense solve of dimension {} exceeds the cap of {DENSE_CAP}",
            m.nrows()
        )));
    }
    if rhs_rows != m.nrows() {
        return Err(Error::shape("dense solve rhs", m.nrows(), rhs_rows));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::NotSpd(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Cholesky-based solve of `M X = rhs` for a small SPD `M`.
pub fn dense_solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd_input(m, rhs.nrows())?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("non-positive pivot in Cholesky".into()))?;
    Ok(chol.solve(rhs))
}

pub fn dense_solve_spd_vec(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    check_spd_input(m, rhs.len())?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("non-positive pivot in Cholesky".into()))?;
    Ok(chol.solve(rhs))
}

//! Dense small-scale references: the exact Kalman filter, its least-squares
//! form, the steady-state Riccati solution, and kernel design by conditional
//! expectation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linop::{Grid, LinearOperator, MaskSet, ScalarField};
use crate::model::SystemModel;
use crate::solver::{dense_solve_spd, dense_solve_spd_vec, DENSE_CAP};

fn check_cap(context: &str, n: usize) -> Result<()> {
    if n > DENSE_CAP {
        return Err(Error::Construction(format!(
            "{context}: dimension {n} exceeds the dense cap of {DENSE_CAP}"
        )));
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// One predict/update step of the time-varying Kalman filter. `p` is the
/// posterior covariance of `x_hat`; the returned covariance is the posterior
/// of the new estimate.
#[allow(clippy::too_many_arguments)]
pub fn kf_step_dense(
    x_hat: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_cap("kf_step_dense", a.nrows())?;
    let x_bar = a * x_hat + b * u;
    let p_bar = symmetrize(&(a * p * a.transpose() + q));
    let (x, p) = kf_update_dense(&x_bar, &p_bar, c, r, y)?;
    Ok((x, p))
}

/// Measurement update given the prior `x_bar`, `p_bar`.
pub fn kf_update_dense(
    x_bar: &DVector<f64>,
    p_bar: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = symmetrize(&(c * p_bar * c.transpose() + r));
    let innovation = y - c * x_bar;
    // K = P̄ Cᵀ S⁻¹, formed through Kᵀ = S⁻¹ C P̄.
    let kt = dense_solve_spd(&s, &(c * p_bar))
        .map_err(|e| Error::Numeric(format!("singular innovation covariance: {e}")))?;
    let k = kt.transpose();
    let x = x_bar + &k * innovation;
    let n = p_bar.nrows();
    let p = (DMatrix::identity(n, n) - &k * c) * p_bar;
    Ok((x, symmetrize(&p)))
}

/// State update from the regularized least-squares problem
/// `min ‖d‖²_{P_k⁻¹} + ‖y − C x̄ − C d‖²_{R⁻¹}` with prior covariance `p_k`.
#[allow(clippy::too_many_arguments)]
pub fn lsq_kf_step_dense(
    x_hat: &DVector<f64>,
    p_k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_cap("lsq_kf_step_dense", a.nrows())?;
    let n = a.nrows();
    let x_bar = a * x_hat + b * u;
    let p_inv = p_k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("prior covariance P_k is singular".into()))?
        .solve(&DMatrix::identity(n, n));
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("measurement covariance R".into()))?
        .solve(&DMatrix::identity(r.nrows(), r.nrows()));
    let ct_rinv = c.transpose() * &r_inv;
    let normal = symmetrize(&(p_inv + &ct_rinv * c));
    let rhs = &ct_rinv * (y - c * &x_bar);
    let d = dense_solve_spd_vec(&normal, &rhs)?;
    Ok(x_bar + d)
}

/// The same update through the coordinates `d = L f`:
/// `(I + Lᵀ Cᵀ R⁻¹ C L) f = Lᵀ Cᵀ R⁻¹ (y − C x̄)`.
#[allow(clippy::too_many_arguments)]
pub fn lsq_kf_step_factored(
    x_hat: &DVector<f64>,
    l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_cap("lsq_kf_step_factored", a.nrows())?;
    let x_bar = a * x_hat + b * u;
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("measurement covariance R".into()))?
        .solve(&DMatrix::identity(r.nrows(), r.nrows()));
    let cl = c * l;
    let m = cl.ncols();
    let normal = symmetrize(&(DMatrix::identity(m, m) + cl.transpose() * &r_inv * &cl));
    let rhs = cl.transpose() * &r_inv * (y - c * &x_bar);
    let f = dense_solve_spd_vec(&normal, &rhs)?;
    Ok(x_bar + l * f)
}

#[derive(Debug, Clone)]
pub struct SteadyStateSolution {
    /// Steady prediction (prior) covariance.
    pub p_inf: DMatrix<f64>,
    /// Steady gain `P∞ Cᵀ (C P∞ Cᵀ + R)⁻¹`.
    pub k_inf: DMatrix<f64>,
    pub iterations: usize,
    /// Relative Frobenius change of the last iteration.
    pub residual: f64,
}

pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 100_000;

/// One Riccati map `P ↦ A (P − P Cᵀ (C P Cᵀ + R)⁻¹ C P) Aᵀ + Q`.
pub fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let s = symmetrize(&(c * p * c.transpose() + r));
    let cp = c * p;
    let gain_t = dense_solve_spd(&s, &cp)?;
    let posterior = p - cp.transpose() * gain_t;
    Ok(symmetrize(&(a * posterior * a.transpose() + q)))
}

/// Fixed-point iteration of the Riccati map from `P_0 = Q`.
pub fn riccati_steady_state(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyStateSolution> {
    riccati_steady_state_from(q.clone(), a, c, q, r, tol, max_iter)
}

pub fn riccati_steady_state_from(
    p0: DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyStateSolution> {
    let n = a.nrows();
    check_cap("riccati_steady_state", n)?;
    if a.ncols() != n || q.shape() != (n, n) || c.ncols() != n || r.shape() != (c.nrows(), c.nrows())
    {
        return Err(Error::shape(
            "Riccati inputs",
            format!("A {n}x{n}, Q {n}x{n}, C ?x{n}, R matching C rows"),
            format!(
                "A {:?}, Q {:?}, C {:?}, R {:?}",
                a.shape(),
                q.shape(),
                c.shape(),
                r.shape()
            ),
        ));
    }
    let mut p = p0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = riccati_map(&p, a, c, q, r)?;
        let diff = (&next - &p).norm();
        let scale = next.norm().max(f64::MIN_POSITIVE);
        residual = diff / scale;
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            let s = symmetrize(&(c * &p * c.transpose() + r));
            let k_inf = dense_solve_spd(&s, &(c * &p))?.transpose();
            return Ok(SteadyStateSolution {
                p_inf: p,
                k_inf,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// `E(v | v_b)`: the field `(L Lᵀ e_b) · v_b / (L Lᵀ)_bb`, from two
/// matrix-free applications.
pub fn conditional_expectation(
    l: &LinearOperator,
    grid: &Grid,
    b: usize,
    v_b: f64,
) -> Result<ScalarField> {
    let n = l.rows();
    grid.check_len("conditional expectation operator", n)?;
    if b >= n {
        return Err(Error::shape("conditioning index", format!("< {n}"), b));
    }
    let mut e = vec![0.0; l.rows()];
    e[b] = 1.0;
    let column = l.apply(&l.apply_adjoint(&e)?)?;
    let pivot = column[b];
    if !(pivot > 0.0) {
        return Err(Error::Numeric(format!(
            "degenerate conditioning: (L Lᵀ) at index {b} is {pivot}"
        )));
    }
    let scale = v_b / pivot;
    let mut values: Vec<f64> = column.iter().map(|c| c * scale).collect();
    values[b] = v_b;
    ScalarField::new(grid.clone(), values)
}

/// Deterministic stratified probe indices: `per_mask` evenly spread points of
/// each mask, in flat-index order.
pub fn stratified_probes(masks: &MaskSet, per_mask: usize) -> Vec<usize> {
    let mut probes = Vec::new();
    for i in 0..masks.len() {
        let idx = masks.indices(i);
        if idx.is_empty() {
            continue;
        }
        let count = per_mask.min(idx.len());
        let mut picked: Vec<usize> = (0..count)
            .map(|j| idx[((2 * j + 1) * idx.len()) / (2 * count)])
            .collect();
        picked.dedup();
        probes.extend(picked);
    }
    probes
}

pub const PROBES_PER_MASK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCandidates {
    pub gammas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelFit {
    pub gamma: f64,
    pub sigma: f64,
    /// Conditional-expectation mismatch of the chosen `σ`.
    pub shape_score: f64,
    /// Squared mismatch of the probe variances for the chosen `γ`.
    pub variance_score: f64,
    pub probes: Vec<usize>,
    /// `(σ, score)` for every candidate width.
    pub sigma_scores: Vec<(f64, f64)>,
}

/// Conditional-expectation mismatch `Σ_b ‖E_K(·|e_b) − E_P(·|e_b)‖²` of a
/// unit-amplitude masked Gaussian of width `sigma`, plus `(K Kᵀ)_bb`.
pub fn kernel_shape_score(
    p_inf: &DMatrix<f64>,
    masks: &MaskSet,
    probes: &[usize],
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    let k = LinearOperator::masked_kernel(masks, 1.0, sigma)?;
    let mut score = 0.0;
    let mut diag = Vec::with_capacity(probes.len());
    for &b in probes {
        let mut e = vec![0.0; k.rows()];
        e[b] = 1.0;
        let col = k.apply(&k.apply(&e)?)?;
        let kb = col[b];
        let pb = p_inf[(b, b)];
        if !(kb > 0.0 && pb > 0.0) {
            return Err(Error::Numeric(format!("degenerate conditioning at index {b}")));
        }
        for (i, ci) in col.iter().enumerate() {
            let d = ci / kb - p_inf[(i, b)] / pb;
            score += d * d;
        }
        diag.push(kb);
    }
    Ok((score, diag))
}

fn relative_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Choose `(γ, σ)` so the masked Gaussian reproduces the steady-state
/// Kalman correlations of a small model.
///
/// The conditional-expectation score does not depend on `γ`, so `σ` is
/// chosen first (ties go to the smallest `σ`), then `γ` minimizes
/// `Σ_b (γ² (K Kᵀ)_bb − P∞_bb)²` over the candidate amplitudes.
pub fn fit_kernel_params_with(
    p_inf: &DMatrix<f64>,
    masks: &MaskSet,
    candidates: &KernelCandidates,
) -> Result<KernelFit> {
    let n = masks.grid().len();
    if p_inf.shape() != (n, n) {
        return Err(Error::shape("P∞", format!("{n}x{n}"), format!("{:?}", p_inf.shape())));
    }
    if candidates.gammas.is_empty() || candidates.sigmas.is_empty() {
        return Err(Error::Construction("empty kernel candidate grid".into()));
    }
    if candidates
        .gammas
        .iter()
        .chain(&candidates.sigmas)
        .any(|&v| !(v > 0.0 && v.is_finite()))
    {
        return Err(Error::Construction("kernel candidates must be positive".into()));
    }
    let probes = stratified_probes(masks, PROBES_PER_MASK);
    let mut sigmas = candidates.sigmas.clone();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let scored: Vec<(f64, f64, Vec<f64>)> = sigmas
        .par_iter()
        .map(|&s| kernel_shape_score(p_inf, masks, &probes, s).map(|(sc, d)| (s, sc, d)))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, cand) in scored.iter().enumerate().skip(1) {
        if cand.1 < scored[best].1 && !relative_tie(cand.1, scored[best].1) {
            best = i;
        }
    }
    let (sigma, shape_score, kdiag) = scored[best].clone();

    let mut gammas = candidates.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let variance_score = |g: f64| -> f64 {
        probes
            .iter()
            .zip(&kdiag)
            .map(|(&b, kb)| {
                let d = g * g * kb - p_inf[(b, b)];
                d * d
            })
            .sum()
    };
    let mut gamma = gammas[0];
    let mut gamma_score = variance_score(gamma);
    for &g in &gammas[1..] {
        let s = variance_score(g);
        if s < gamma_score && !relative_tie(s, gamma_score) {
            gamma = g;
            gamma_score = s;
        }
    }
    Ok(KernelFit {
        gamma,
        sigma,
        shape_score,
        variance_score: gamma_score,
        probes,
        sigma_scores: scored.iter().map(|(s, sc, _)| (*s, *sc)).collect(),
    })
}

/// Solve the small model's Riccati equation, then fit the kernel to `P∞`.
pub fn fit_kernel_params(
    small_model: &SystemModel,
    candidates: &KernelCandidates,
) -> Result<(KernelFit, SteadyStateSolution)> {
    check_cap("fit_kernel_params", small_model.n_x())?;
    let steady = riccati_steady_state(
        &small_model.dense_a(),
        &small_model.dense_c(),
        &small_model.dense_q(),
        &small_model.dense_r(),
        RICCATI_TOL,
        RICCATI_MAX_ITER,
    )?;
    let fit = fit_kernel_params_with(&steady.p_inf, &small_model.masks, candidates)?;
    Ok((fit, steady))
}

//! Finite-volume heat conduction with implicit Euler time stepping.
//!
//! With capacity `M = diag(ρ c V)` and the symmetric positive semi-definite
//! conductance `G` (interior faces, harmonic-mean conductivity) plus the
//! diagonal Robin loss `H`, one step solves
//! `(M + dt (G + H)) x_{k+1} = M x_k + dt q`. The step matrix
//! `A = (M + dt (G + H))⁻¹ M` is never formed; a sparse Cholesky factor of
//! the left-hand side is computed once.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::linop::{Grid, MatrixFree};

/// Per-cell physical coefficients on a grid.
pub(crate) struct Coefficients<'a> {
    pub grid: &'a Grid,
    /// Out-of-plane extent: m² for 1-D grids, m for 2-D, 1 for 3-D.
    pub extrude: f64,
    pub conductivity: &'a [f64],
    pub volumetric_capacity: &'a [f64],
    pub h: f64,
}

pub(crate) struct Discretization {
    /// `ρ c V` per cell (J/K).
    pub capacity: Vec<f64>,
    /// Lower and upper triangle entries of `G + H` (W/K).
    pub conductance: Vec<(usize, usize, f64)>,
}

pub(crate) fn cell_volume(grid: &Grid, extrude: f64) -> f64 {
    grid.spacing().iter().product::<f64>() * extrude
}

/// Conductance across the face between two cells of conductivities `ki`, `kj`.
fn face_conductance(area: f64, dx: f64, ki: f64, kj: f64) -> f64 {
    if ki + kj == 0.0 {
        0.0
    } else {
        area * 2.0 * ki * kj / ((ki + kj) * dx)
    }
}

/// Boundary face loss coefficient: cell-center-to-face conduction in series
/// with the convective film (ghost cell eliminated).
fn boundary_conductance(area: f64, dx: f64, k: f64, h: f64) -> f64 {
    if h == 0.0 || k == 0.0 {
        0.0
    } else {
        area * h * k / (k + h * dx / 2.0)
    }
}

pub(crate) fn discretize(c: &Coefficients<'_>) -> Discretization {
    let grid = c.grid;
    let n = grid.len();
    let vol = cell_volume(grid, c.extrude);
    let capacity: Vec<f64> = c.volumetric_capacity.iter().map(|&rc| rc * vol).collect();
    let strides = grid.strides();
    let mut diag = vec![0.0; n];
    let mut conductance = Vec::with_capacity(n * (1 + 2 * grid.ndim()));
    for i in 0..n {
        let idx = grid.unravel(i);
        for d in 0..grid.ndim() {
            let dx = grid.spacing()[d];
            let area = vol / dx;
            if idx[d] + 1 < grid.shape()[d] {
                let j = i + strides[d];
                let g = face_conductance(area, dx, c.conductivity[i], c.conductivity[j]);
                if g != 0.0 {
                    diag[i] += g;
                    diag[j] += g;
                    conductance.push((i, j, -g));
                    conductance.push((j, i, -g));
                }
            }
            let faces = (idx[d] == 0) as usize + (idx[d] + 1 == grid.shape()[d]) as usize;
            if faces > 0 {
                diag[i] += faces as f64 * boundary_conductance(area, dx, c.conductivity[i], c.h);
            }
        }
    }
    conductance.extend(diag.iter().enumerate().map(|(i, &g)| (i, i, g)));
    Discretization {
        capacity,
        conductance,
    }
}

/// `v -> (M + dt K)⁻¹ M v` with a cached sparse Cholesky factorization.
pub(crate) struct ImplicitStep {
    capacity: Vec<f64>,
    factor: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl ImplicitStep {
    pub(crate) fn new(disc: &Discretization, dt: f64) -> Result<Arc<Self>> {
        let n = disc.capacity.len();
        // Deterministic, single-threaded factorization and solves.
        faer::set_global_parallelism(faer::Par::Seq);
        let mut triplets: Vec<Triplet<usize, usize, f64>> = disc
            .conductance
            .iter()
            .filter(|&&(i, j, _)| i >= j)
            .map(|&(i, j, g)| Triplet::new(i, j, dt * g))
            .collect();
        triplets.extend(
            disc.capacity
                .iter()
                .enumerate()
                .map(|(i, &m)| Triplet::new(i, i, m)),
        );
        let lhs = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Construction(format!("step matrix assembly failed: {e:?}")))?;
        let factor = lhs
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::NotSpd(format!("implicit step matrix: {e:?}")))?;
        Ok(Arc::new(Self {
            capacity: disc.capacity.clone(),
            factor,
        }))
    }

    /// Solve `(M + dt K) x = rhs` in place.
    pub(crate) fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.factor.solve_in_place(mat);
    }
}

impl MatrixFree for ImplicitStep {
    fn name(&self) -> &str {
        "implicit-euler-step"
    }

    fn rows(&self) -> usize {
        self.capacity.len()
    }

    fn cols(&self) -> usize {
        self.capacity.len()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for ((o, &x), &m) in out.iter_mut().zip(v).zip(&self.capacity) {
            *o = m * x;
        }
        self.solve_in_place(out);
    }

    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        self.solve_in_place(out);
        for (o, &m) in out.iter_mut().zip(&self.capacity) {
            *o *= m;
        }
    }
}

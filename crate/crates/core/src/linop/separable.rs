//! Kronecker-product operators `L = L_1 ⊗ ... ⊗ L_D` applied by mode products.

use nalgebra::DMatrix;

use super::field::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Separable {
    shape: Vec<usize>,
    factors: Vec<DMatrix<f64>>,
}

impl Separable {
    pub fn new(grid: &Grid, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.len() != grid.ndim() {
            return Err(Error::Construction(format!(
                "separable operator needs one factor per axis ({}), got {}",
                grid.ndim(),
                factors.len()
            )));
        }
        for (d, (f, &n)) in factors.iter().zip(grid.shape()).enumerate() {
            if f.nrows() != n || f.ncols() != n {
                return Err(Error::shape(
                    format!("separable factor {d}"),
                    format!("{n}x{n}"),
                    format!("{}x{}", f.nrows(), f.ncols()),
                ));
            }
        }
        Ok(Self {
            shape: grid.shape().to_vec(),
            factors,
        })
    }

    /// Cost is `O(n * sum_d n_d)`: one small dense product per axis line.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64], adjoint: bool) {
        let total = v.len();
        let mut cur = v.to_vec();
        let mut next = vec![0.0; total];
        let mut stride = 1;
        for d in (0..self.shape.len()).rev() {
            let n = self.shape[d];
            let f = &self.factors[d];
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in 0..n {
                            let a = if adjoint { f[(j, i)] } else { f[(i, j)] };
                            acc += a * cur[outer + j * stride + inner];
                        }
                        next[outer + i * stride + inner] = acc;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            stride *= n;
        }
        out.copy_from_slice(&cur);
    }
}

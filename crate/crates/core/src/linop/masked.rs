//! Material-masked Gaussian kernel: `d = sum_i phi_i * (k * (phi_i * v))`.
//!
//! Each mask gets its own convolution so that points in different masks are
//! decoupled exactly (the matrix entry between them is a hard zero, not a
//! rounding residue).

use super::convolution::{gaussian_kernel, FftConvolution};
use super::field::MaskSet;
use crate::error::Result;

#[derive(Debug)]
pub struct MaskedKernel {
    masks: Vec<Vec<f64>>,
    conv: FftConvolution,
    gamma: f64,
    sigma: f64,
}

impl MaskedKernel {
    pub fn gaussian(masks: &MaskSet, gamma: f64, sigma: f64) -> Result<Self> {
        let kernel = gaussian_kernel(masks.grid(), gamma, sigma)?;
        let conv = FftConvolution::new(masks.grid(), &kernel)?;
        Ok(Self {
            masks: masks.masks().iter().map(|m| m.values().to_vec()).collect(),
            conv,
            gamma,
            sigma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut restricted = vec![0.0; v.len()];
        let mut smoothed = vec![0.0; v.len()];
        for mask in &self.masks {
            for ((r, &x), &m) in restricted.iter_mut().zip(v).zip(mask) {
                *r = m * x;
            }
            self.conv.apply_into(&restricted, &mut smoothed);
            for ((o, &s), &m) in out.iter_mut().zip(&smoothed).zip(mask) {
                if m != 0.0 {
                    *o += s;
                }
            }
        }
    }
}

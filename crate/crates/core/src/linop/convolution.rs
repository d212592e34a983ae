//! Zero-padded linear convolution on a rectilinear grid, evaluated with FFTs.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::field::{Grid, ScalarField};
use crate::error::{Error, Result};

/// Multi-dimensional FFT over a fixed row-major shape.
pub(crate) struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub(crate) fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Unnormalized transform in place; the inverse must be scaled by `1/len`.
    pub(crate) fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let plans = if inverse { &self.inverse } else { &self.forward };
        let total = buf.len();
        let mut scratch = Vec::new();
        let mut tmp = Vec::new();
        let mut stride = 1;
        for d in (0..self.shape.len()).rev() {
            let n = self.shape[d];
            let plan = &plans[d];
            let need = plan.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::default());
            }
            if stride == 1 {
                plan.process_with_scratch(buf, &mut scratch[..need]);
            } else {
                // Lines along this axis are strided; transpose each outer block
                // so the lines become contiguous, transform, transpose back.
                let block = n * stride;
                tmp.resize(block, Complex64::default());
                for outer in (0..total).step_by(block) {
                    let blk = &mut buf[outer..outer + block];
                    for j in 0..n {
                        for inner in 0..stride {
                            tmp[inner * n + j] = blk[j * stride + inner];
                        }
                    }
                    plan.process_with_scratch(&mut tmp, &mut scratch[..need]);
                    for j in 0..n {
                        for inner in 0..stride {
                            blk[j * stride + inner] = tmp[inner * n + j];
                        }
                    }
                }
            }
            stride *= n;
        }
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn fast_fft_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// `out[i] = sum_j l(r_i - r_j) v[j]` for a kernel tabulated on grid offsets.
pub struct FftConvolution {
    grid: Grid,
    radius: Vec<usize>,
    padded: Vec<usize>,
    spectrum: Vec<Complex64>,
    fft: FftNd,
}

impl std::fmt::Debug for FftConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftConvolution")
            .field("shape", &self.grid.shape())
            .field("radius", &self.radius)
            .field("padded", &self.padded)
            .finish()
    }
}

impl FftConvolution {
    /// `kernel` has odd extent `2 r_d + 1` per axis with the zero offset at its
    /// center, and must share the grid spacing.
    pub fn new(grid: &Grid, kernel: &ScalarField) -> Result<Self> {
        let kg = kernel.grid();
        if kg.ndim() != grid.ndim() {
            return Err(Error::shape(
                "convolution kernel dimension",
                grid.ndim(),
                kg.ndim(),
            ));
        }
        for (d, (&a, &b)) in kg.spacing().iter().zip(grid.spacing()).enumerate() {
            if (a - b).abs() > 1e-12 * b.abs() {
                return Err(Error::Construction(format!(
                    "kernel spacing {a} differs from grid spacing {b} on axis {d}"
                )));
            }
        }
        if let Some(&n) = kg.shape().iter().find(|&&n| n % 2 == 0) {
            return Err(Error::Construction(format!(
                "kernel extent must be odd on every axis, got {n}"
            )));
        }
        let full_radius: Vec<usize> = kg.shape().iter().map(|&n| n / 2).collect();
        // Offsets beyond the grid extent can never pair two grid points.
        let radius: Vec<usize> = full_radius
            .iter()
            .zip(grid.shape())
            .map(|(&r, &n)| r.min(n - 1))
            .collect();
        let padded: Vec<usize> = grid
            .shape()
            .iter()
            .zip(&radius)
            .map(|(&n, &r)| fast_fft_len(n + 2 * r))
            .collect();
        let fft = FftNd::new(&padded);
        let padded_grid = Grid::new(padded.clone(), grid.spacing().to_vec())?;

        let mut spectrum = vec![Complex64::default(); fft.len()];
        for k in 0..kg.len() {
            let idx = kg.unravel(k);
            let mut pos = Vec::with_capacity(idx.len());
            let mut inside = true;
            for d in 0..idx.len() {
                let off = idx[d] as isize - full_radius[d] as isize;
                if off.unsigned_abs() > radius[d] {
                    inside = false;
                    break;
                }
                pos.push(off.rem_euclid(padded[d] as isize) as usize);
            }
            if inside {
                spectrum[padded_grid.ravel(&pos)] = Complex64::new(kernel.values()[k], 0.0);
            }
        }
        fft.process(&mut spectrum, false);
        let scale = 1.0 / fft.len() as f64;
        for s in &mut spectrum {
            *s *= scale;
        }
        Ok(Self {
            grid: grid.clone(),
            radius,
            padded,
            spectrum,
            fft,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded
    }

    fn embed(&self, v: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.fft.len()];
        let shape = self.grid.shape();
        let inner = *shape.last().unwrap();
        let pinner = *self.padded.last().unwrap();
        let rows = v.len() / inner;
        let outer_shape = &shape[..shape.len() - 1];
        let outer_padded = &self.padded[..self.padded.len() - 1];
        for row in 0..rows {
            let dst = padded_row_offset(row, outer_shape, outer_padded) * pinner;
            for (b, &x) in buf[dst..dst + inner].iter_mut().zip(&v[row * inner..]) {
                *b = Complex64::new(x, 0.0);
            }
        }
        buf
    }

    fn crop(&self, buf: &[Complex64], out: &mut [f64]) {
        let shape = self.grid.shape();
        let inner = *shape.last().unwrap();
        let pinner = *self.padded.last().unwrap();
        let rows = out.len() / inner;
        let outer_shape = &shape[..shape.len() - 1];
        let outer_padded = &self.padded[..self.padded.len() - 1];
        for row in 0..rows {
            let src = padded_row_offset(row, outer_shape, outer_padded) * pinner;
            for (o, b) in out[row * inner..(row + 1) * inner]
                .iter_mut()
                .zip(&buf[src..src + inner])
            {
                *o = b.re;
            }
        }
    }

    fn run(&self, v: &[f64], out: &mut [f64], adjoint: bool) {
        let mut buf = self.embed(v);
        self.fft.process(&mut buf, false);
        if adjoint {
            for (b, s) in buf.iter_mut().zip(&self.spectrum) {
                *b *= s.conj();
            }
        } else {
            for (b, s) in buf.iter_mut().zip(&self.spectrum) {
                *b *= s;
            }
        }
        self.fft.process(&mut buf, true);
        self.crop(&buf, out);
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.run(v, out, false);
    }

    /// Correlation with the kernel, i.e. convolution with `l(-r)`.
    pub fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]) {
        self.run(v, out, true);
    }
}

/// Offset (in padded rows) of unpadded row `row` over all but the last axis.
fn padded_row_offset(mut row: usize, shape: &[usize], padded: &[usize]) -> usize {
    let mut off = 0;
    let mut mult = 1;
    for d in (0..shape.len()).rev() {
        off += (row % shape[d]) * mult;
        row /= shape[d];
        mult *= padded[d];
    }
    off
}

/// Gaussian `gamma * exp(-|r|^2 / sigma^2)` tabulated on grid offsets and
/// truncated to zero outside radius `4 sigma`.
pub fn gaussian_kernel(grid: &Grid, gamma: f64, sigma: f64) -> Result<ScalarField> {
    if !(gamma > 0.0 && gamma.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Construction(format!(
            "gaussian kernel needs gamma > 0 and sigma > 0 (got {gamma}, {sigma})"
        )));
    }
    let cutoff = 4.0 * sigma;
    let radius: Vec<usize> = grid
        .spacing()
        .iter()
        .zip(grid.shape())
        .map(|(&dx, &n)| ((cutoff / dx).floor() as usize).min(n - 1))
        .collect();
    let kgrid = Grid::new(
        radius.iter().map(|&r| 2 * r + 1).collect(),
        grid.spacing().to_vec(),
    )?;
    let values = (0..kgrid.len())
        .map(|k| {
            let idx = kgrid.unravel(k);
            let r2: f64 = idx
                .iter()
                .zip(&radius)
                .zip(grid.spacing())
                .map(|((&i, &r), &dx)| {
                    let x = (i as f64 - r as f64) * dx;
                    x * x
                })
                .sum();
            if r2 <= cutoff * cutoff {
                gamma * (-r2 / (sigma * sigma)).exp()
            } else {
                0.0
            }
        })
        .collect();
    ScalarField::new(kgrid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_conv_1d(kernel: &[f64], v: &[f64]) -> Vec<f64> {
        let r = kernel.len() as isize / 2;
        (0..v.len() as isize)
            .map(|i| {
                (0..v.len() as isize)
                    .filter_map(|j| {
                        let off = i - j;
                        (off.abs() <= r).then(|| kernel[(off + r) as usize] * v[j as usize])
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(fast_fft_len(7), 8);
        assert_eq!(fast_fft_len(17), 18);
        assert_eq!(fast_fft_len(544), 576);
        assert_eq!(fast_fft_len(1), 1);
    }

    #[test]
    fn box_kernel_on_unit_spike() {
        let g = Grid::new(vec![3], vec![1.0]).unwrap();
        let k = ScalarField::new(Grid::new(vec![3], vec![1.0]).unwrap(), vec![1.0; 3]).unwrap();
        let conv = FftConvolution::new(&g, &k).unwrap();
        let mut out = vec![0.0; 3];
        conv.apply_into(&[0.0, 1.0, 0.0], &mut out);
        for (o, e) in out.iter().zip([1.0, 1.0, 1.0]) {
            assert!((o - e).abs() < 1e-14);
        }
    }

    #[test]
    fn asymmetric_kernel_adjoint_is_dense_transpose() {
        let g = Grid::new(vec![3], vec![1.0]).unwrap();
        let kernel = [1.0, 2.0, 0.0];
        let k = ScalarField::new(Grid::new(vec![3], vec![1.0]).unwrap(), kernel.to_vec()).unwrap();
        let conv = FftConvolution::new(&g, &k).unwrap();
        // Dense Toeplitz T(i,j) = l(i-j); check both T v and T^T v.
        let n = 3;
        let t = |i: usize, j: usize| {
            let off = i as isize - j as isize + 1;
            if (0..3).contains(&off) {
                kernel[off as usize]
            } else {
                0.0
            }
        };
        let v = [0.0, 1.0, 0.0];
        let mut fwd = vec![0.0; n];
        let mut adj = vec![0.0; n];
        conv.apply_into(&v, &mut fwd);
        conv.apply_adjoint_into(&v, &mut adj);
        for i in 0..n {
            let dense_fwd: f64 = (0..n).map(|j| t(i, j) * v[j]).sum();
            let dense_adj: f64 = (0..n).map(|j| t(j, i) * v[j]).sum();
            assert!((fwd[i] - dense_fwd).abs() < 1e-14);
            assert!((adj[i] - dense_adj).abs() < 1e-14);
        }
        assert_eq!(fwd.iter().map(|x| x.round()).collect::<Vec<_>>(), [1.0, 2.0, 0.0]);
        assert_eq!(adj.iter().map(|x| x.round()).collect::<Vec<_>>(), [0.0, 2.0, 1.0]);
    }

    #[test]
    fn kernel_longer_than_grid_is_clipped() {
        let g = Grid::new(vec![4], vec![1.0]).unwrap();
        let kernel: Vec<f64> = (0..11).map(|i| (i as f64 - 5.0).abs() + 1.0).collect();
        let k = ScalarField::new(Grid::new(vec![11], vec![1.0]).unwrap(), kernel.clone()).unwrap();
        let conv = FftConvolution::new(&g, &k).unwrap();
        let v = [1.0, -2.0, 0.5, 3.0];
        let mut out = vec![0.0; 4];
        conv.apply_into(&v, &mut out);
        let dense = dense_conv_1d(&kernel, &v);
        for (a, b) in out.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_even_kernel_and_spacing_mismatch() {
        let g = Grid::new(vec![4], vec![1.0]).unwrap();
        let even = ScalarField::zeros(Grid::new(vec![2], vec![1.0]).unwrap());
        assert!(FftConvolution::new(&g, &even).is_err());
        let other = ScalarField::zeros(Grid::new(vec![3], vec![2.0]).unwrap());
        assert!(FftConvolution::new(&g, &other).is_err());
    }

    #[test]
    fn gaussian_table_is_truncated_at_four_sigma() {
        let g = Grid::new(vec![64], vec![1.0]).unwrap();
        let k = gaussian_kernel(&g, 2.0, 1.5).unwrap();
        assert_eq!(k.grid().shape(), &[13]);
        assert_eq!(k.values()[6], 2.0);
        let tail = k.values()[0] / 2.0;
        assert!(tail < 3.5e-7 && tail > 0.0);
        assert!(gaussian_kernel(&g, -1.0, 1.0).is_err());
    }
}

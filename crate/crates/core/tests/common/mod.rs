//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use lskkf::linop::{Grid, LinearOperator};
use lskkf::model::{assemble_system, Material, MaterialConfig, NoiseConfig, SystemModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A 1-D rod of `n` cells, `split` cells of soft tissue followed by plastic,
/// heated near the left end, measured on every tissue cell.
pub fn two_material_rod(n: usize, split: usize) -> SystemModel {
    two_material_rod_with(n, split, 0.02)
}

/// [`two_material_rod`] with a chosen process-noise correlation length, m.
pub fn two_material_rod_with(n: usize, split: usize, process_sigma: f64) -> SystemModel {
    let grid = Grid::new(vec![n], vec![0.005]).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= split)).collect();
    let mut cfg = MaterialConfig {
        grid,
        extrude: 0.01,
        materials: vec![
            Material { name: "tissue".into(), rho: 1050.0, c: 3600.0, k: 0.5 },
            Material { name: "plastic".into(), rho: 1400.0, c: 1200.0, k: 0.2 },
        ],
        labels,
        h: 10.0,
        loads: Vec::new(),
        dt: 93.0,
    };
    let load = cfg.focused_load(&[0.3], 0.1, 2.0);
    cfg.loads = vec![load];
    let measured: Vec<usize> = (0..split).collect();
    let noise = NoiseConfig {
        process_std: 0.1,
        process_sigma,
        measurement_variance: 0.05,
        overrides: Vec::new(),
    };
    assemble_system(&cfg, &measured, &noise).unwrap()
}

/// A random stable system with dense operators.
pub fn random_dense_system(seed: u64, n: usize, m: usize, n_u: usize) -> SystemModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uni = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let a = uni(n, n) * (0.8 / n as f64).sqrt();
    let b = uni(n, n_u);
    let c = uni(m, n);
    let lq = uni(n, n) * 0.3 + DMatrix::identity(n, n) * 0.2;
    let r: Vec<f64> = (0..m).map(|i| 0.1 + 0.05 * i as f64).collect();
    SystemModel::from_parts(
        LinearOperator::dense(a),
        b,
        LinearOperator::dense(c),
        LinearOperator::dense(lq),
        r,
    )
    .unwrap()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

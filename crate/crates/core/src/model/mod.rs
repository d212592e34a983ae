//! Heat-conduction test system in discrete-time LTI form
//! `x_{k+1} = A x_k + B u_k + w_k`, `y_k = C x_k + η_k`.

mod heat;
pub mod phantom;
mod rom;
mod truth;

use nalgebra::DMatrix;

pub use rom::{input_response_snapshots, pod_reduce, project_rom, RomMatrices};
pub use truth::{input_sequence, simulate_truth, simulate_truth_from, Trajectory};

use crate::error::{Error, Result};
use crate::linop::{gaussian_kernel, Grid, LinearOperator, MaskSet};

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg K).
    pub c: f64,
    /// Thermal conductivity, W/(m K).
    pub k: f64,
}

#[derive(Debug, Clone)]
pub struct MaterialConfig {
    pub grid: Grid,
    /// Out-of-plane extent for grids with fewer than three axes
    /// (m² for 1-D, m for 2-D; ignored for 3-D).
    pub extrude: f64,
    pub materials: Vec<Material>,
    /// Material index per grid point; must cover the grid.
    pub labels: Vec<usize>,
    /// Convective boundary coefficient, W/(m² K).
    pub h: f64,
    /// Heat-load fields `b_i` in W/m³ per unit input.
    pub loads: Vec<Vec<f64>>,
    /// Sample time, s.
    pub dt: f64,
}

impl MaterialConfig {
    /// The two-material phantom with default properties, 200 W per focus.
    pub fn phantom(grid: Grid) -> Self {
        let labels = phantom::labels(&grid);
        let extrude = match grid.ndim() {
            1 => 0.3 * 0.3,
            2 => 0.3,
            _ => 1.0,
        };
        let mut cfg = Self {
            grid,
            extrude,
            materials: vec![
                Material {
                    name: "soft_tissue".into(),
                    rho: 1050.0,
                    c: 3600.0,
                    k: 0.5,
                },
                Material {
                    name: "plastic".into(),
                    rho: 1400.0,
                    c: 1200.0,
                    k: 0.2,
                },
            ],
            labels,
            h: 10.0,
            loads: Vec::new(),
            dt: 93.0,
        };
        let centers = phantom::load_centers(cfg.grid.ndim());
        cfg.loads = centers
            .iter()
            .map(|c| cfg.focused_load(c, 0.12, 200.0))
            .collect();
        cfg
    }

    pub fn cell_volume(&self) -> f64 {
        let extrude = if self.grid.ndim() == 3 { 1.0 } else { self.extrude };
        heat::cell_volume(&self.grid, extrude)
    }

    /// Gaussian blob in soft tissue scaled to inject `power_w` watts at unit input.
    pub fn focused_load(&self, center: &[f64], width: f64, power_w: f64) -> Vec<f64> {
        let shape = phantom::focus_shape(&self.grid, &self.labels, center, width);
        let total: f64 = shape.iter().sum::<f64>() * self.cell_volume();
        if total == 0.0 {
            return shape;
        }
        shape.iter().map(|s| s * power_w / total).collect()
    }

    pub fn masks(&self) -> Result<MaskSet> {
        MaskSet::from_labels(self.grid.clone(), &self.labels, self.materials.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Construction(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::Construction(format!("h must be >= 0, got {}", self.h)));
        }
        if !(self.extrude > 0.0) {
            return Err(Error::Construction("extrude must be positive".into()));
        }
        if self.materials.is_empty() {
            return Err(Error::Construction("no materials".into()));
        }
        for m in &self.materials {
            if !(m.rho > 0.0 && m.c > 0.0 && m.k >= 0.0) {
                return Err(Error::Construction(format!(
                    "material `{}` needs rho > 0, c > 0, k >= 0",
                    m.name
                )));
            }
        }
        self.grid.check_len("material labels", self.labels.len())?;
        if let Some(p) = self.labels.iter().position(|&l| l >= self.materials.len()) {
            return Err(Error::Construction(format!(
                "grid point {p} is not covered by any material mask"
            )));
        }
        for (i, b) in self.loads.iter().enumerate() {
            self.grid.check_len(&format!("heat load {i}"), b.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Pointwise standard deviation (K) of the process noise away from mask edges.
    pub process_std: f64,
    /// Spatial correlation length (m) of the process-noise kernel.
    pub process_sigma: f64,
    /// Default measurement-noise variance (K²).
    pub measurement_variance: f64,
    /// `(grid index, variance)` overrides for individual measured points.
    pub overrides: Vec<(usize, f64)>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_std: 0.3,
            process_sigma: 0.01,
            measurement_variance: 0.05,
            overrides: Vec::new(),
        }
    }
}

/// Masked Gaussian whose interior diagonal of `L Lᵀ` equals `std²`.
pub fn noise_factor(masks: &MaskSet, std: f64, sigma: f64) -> Result<LinearOperator> {
    let n = masks.grid().len();
    if std == 0.0 {
        return Ok(LinearOperator::zero(n));
    }
    let table = gaussian_kernel(masks.grid(), 1.0, sigma)?;
    let energy: f64 = table.values().iter().map(|v| v * v).sum();
    LinearOperator::masked_kernel(masks, std / energy.sqrt(), sigma)
}

#[derive(Clone)]
pub struct SystemModel {
    pub a: LinearOperator,
    /// Columns are the discretized, time-integrated heat loads.
    pub b: DMatrix<f64>,
    pub c: LinearOperator,
    /// Process-noise factor, `Q = L_Q L_Qᵀ`.
    pub l_q: LinearOperator,
    pub r_diag: Vec<f64>,
    pub grid: Grid,
    pub masks: MaskSet,
    pub measured: Vec<usize>,
    pub dt: f64,
    /// `ρ c V` per cell, J/K.
    pub capacity: Vec<f64>,
}

impl std::fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemModel")
            .field("n_x", &self.n_x())
            .field("n_y", &self.n_y())
            .field("n_u", &self.n_u())
            .field("dt", &self.dt)
            .finish()
    }
}

/// Largest state dimension for which assembly verifies stability numerically.
const STABILITY_CHECK_MAX: usize = 4096;

pub fn assemble_system(
    cfg: &MaterialConfig,
    measured: &[usize],
    noise: &NoiseConfig,
) -> Result<SystemModel> {
    cfg.validate()?;
    let grid = cfg.grid.clone();
    let n = grid.len();
    let conductivity: Vec<f64> = cfg.labels.iter().map(|&l| cfg.materials[l].k).collect();
    let rho_c: Vec<f64> = cfg
        .labels
        .iter()
        .map(|&l| cfg.materials[l].rho * cfg.materials[l].c)
        .collect();
    let extrude = if grid.ndim() == 3 { 1.0 } else { cfg.extrude };
    let disc = heat::discretize(&heat::Coefficients {
        grid: &grid,
        extrude,
        conductivity: &conductivity,
        volumetric_capacity: &rho_c,
        h: cfg.h,
    });
    let step = heat::ImplicitStep::new(&disc, cfg.dt)?;
    let a = LinearOperator::custom(step.clone());

    let vol = cfg.cell_volume();
    let mut b = DMatrix::zeros(n, cfg.loads.len());
    for (j, load) in cfg.loads.iter().enumerate() {
        let mut col: Vec<f64> = load.iter().map(|q| cfg.dt * vol * q).collect();
        step.solve_in_place(&mut col);
        b.column_mut(j).copy_from_slice(&col);
    }

    let mut measured = measured.to_vec();
    measured.sort_unstable();
    measured.dedup();
    if let Some(&i) = measured.iter().find(|&&i| i >= n) {
        return Err(Error::Construction(format!("measured index {i} outside grid")));
    }
    let c = LinearOperator::selection(n, &measured)?;

    if !(noise.measurement_variance > 0.0) {
        return Err(Error::Construction("measurement variance must be positive".into()));
    }
    if !(noise.process_std >= 0.0) || !(noise.process_sigma > 0.0) {
        return Err(Error::Construction(
            "process noise needs std >= 0 and sigma > 0".into(),
        ));
    }
    let mut r_diag = vec![noise.measurement_variance; measured.len()];
    for &(idx, var) in &noise.overrides {
        let pos = measured.binary_search(&idx).map_err(|_| {
            Error::Construction(format!("noise override for unmeasured index {idx}"))
        })?;
        if !(var > 0.0) {
            return Err(Error::Construction(format!(
                "override variance at {idx} must be positive"
            )));
        }
        r_diag[pos] = var;
    }

    let masks = cfg.masks()?;
    let l_q = noise_factor(&masks, noise.process_std, noise.process_sigma)?;

    let model = SystemModel {
        a,
        b,
        c,
        l_q,
        r_diag,
        grid,
        masks,
        measured,
        dt: cfg.dt,
        capacity: disc.capacity,
    };
    if n <= STABILITY_CHECK_MAX {
        let rho = model.spectral_radius_estimate(300)?;
        if rho > 1.0 + 1e-8 {
            return Err(Error::Construction(format!(
                "unstable configuration: spectral radius {rho}"
            )));
        }
    }
    Ok(model)
}

impl SystemModel {
    /// A system without spatial structure: a 1-D unit-spaced grid with a
    /// single material, unit capacities and `dt = 1`.
    pub fn from_parts(
        a: LinearOperator,
        b: DMatrix<f64>,
        c: LinearOperator,
        l_q: LinearOperator,
        r_diag: Vec<f64>,
    ) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::shape("A", "square", format!("{}x{}", a.rows(), a.cols())));
        }
        if b.nrows() != n {
            return Err(Error::shape("B rows", n, b.nrows()));
        }
        if c.cols() != n {
            return Err(Error::shape("C columns", n, c.cols()));
        }
        if l_q.rows() != n || l_q.cols() != n {
            return Err(Error::shape("L_Q", format!("{n}x{n}"), format!("{}x{}", l_q.rows(), l_q.cols())));
        }
        if r_diag.len() != c.rows() {
            return Err(Error::shape("R diagonal", c.rows(), r_diag.len()));
        }
        if r_diag.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Construction("R diagonal entries must be positive".into()));
        }
        let grid = Grid::new(vec![n], vec![1.0])?;
        let masks = MaskSet::from_labels(grid.clone(), &vec![0; n], 1)?;
        Ok(Self {
            a,
            b,
            c,
            l_q,
            r_diag,
            grid,
            masks,
            measured: Vec::new(),
            dt: 1.0,
            capacity: vec![1.0; n],
        })
    }

    pub fn n_x(&self) -> usize {
        self.grid.len()
    }

    pub fn n_y(&self) -> usize {
        self.c.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn r_inv_diag(&self) -> Vec<f64> {
        self.r_diag.iter().map(|r| 1.0 / r).collect()
    }

    /// `A x + B u`.
    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_u() {
            return Err(Error::shape("input vector", self.n_u(), u.len()));
        }
        let mut next = self.a.apply(x)?;
        for (j, &uj) in u.iter().enumerate() {
            if uj != 0.0 {
                for (n, b) in next.iter_mut().zip(self.b.column(j).iter()) {
                    *n += uj * b;
                }
            }
        }
        Ok(next)
    }

    /// Thermal energy `Σ ρ c V x` (J, relative to the reference temperature).
    pub fn energy(&self, x: &[f64]) -> f64 {
        self.capacity.iter().zip(x).map(|(m, t)| m * t).sum()
    }

    /// Spectral radius of `A` by power iteration in the capacity-weighted
    /// inner product, in which `A` is self-adjoint.
    pub fn spectral_radius_estimate(&self, iterations: usize) -> Result<f64> {
        let n = self.n_x();
        let m_norm = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&self.capacity)
                .map(|(x, m)| m * x * x)
                .sum::<f64>()
                .sqrt()
        };
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        let s = m_norm(&v);
        v.iter_mut().for_each(|x| *x /= s);
        let mut rho = 0.0;
        for _ in 0..iterations {
            let w = self.a.apply(&v)?;
            rho = m_norm(&w);
            if rho == 0.0 || !rho.is_finite() {
                break;
            }
            v = w.into_iter().map(|x| x / rho).collect();
        }
        Ok(rho)
    }

    pub fn dense_a(&self) -> DMatrix<f64> {
        self.a.to_dense()
    }

    pub fn dense_c(&self) -> DMatrix<f64> {
        self.c.to_dense()
    }

    pub fn dense_q(&self) -> DMatrix<f64> {
        let l = self.l_q.to_dense();
        &l * l.transpose()
    }

    pub fn dense_r(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.r_diag.clone()))
    }
}

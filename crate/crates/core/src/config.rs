//! Experiment configuration: named profiles, strict JSON parsing, range
//! validation and the content digest embedded in every output.
//!
//! A user document is deep-merged over its profile (objects merge key by
//! key, everything else replaces) and the result is deserialized with
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linop::{Grid, ScalarField};
use crate::model::{phantom, Material, MaterialConfig, NoiseConfig};

pub const PROFILES: [&str; 3] = ["default", "small", "large"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: String,
    pub seed: u64,
    pub steps: usize,
    /// Where `run` writes artifacts when `--out` is not given; not part of
    /// the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub observers: Vec<ObserverConfig>,
    /// Normalized probe positions; snapped to the nearest measured point.
    pub probes: Vec<Vec<f64>>,
    pub truth: TruthSection,
    pub snapshot: Option<SnapshotSection>,
    pub export_truth: bool,
    pub rom: RomSection,
    pub design: DesignSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub shape: Vec<usize>,
    /// Meters per cell along each axis.
    pub spacing: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub name: String,
    pub rho: f64,
    pub c: f64,
    pub k: f64,
    /// Whether temperatures in this material are observed.
    pub measured: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutSection {
    /// Built-in two-material phantom.
    Phantom,
    /// Material indices stored as a scalar field file.
    Sf1 { path: String },
    /// Run-length encoding over flat indices: `[material, count]` pairs.
    Runs { runs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSection {
    /// Gaussian focus limited to the first material, scaled to `power_w`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
        power_w: f64,
    },
    /// Heat-load density (W/m³ per unit input) from a scalar field file.
    Sf1 { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub grid: GridSection,
    pub extrude: f64,
    pub dt: f64,
    pub h: f64,
    pub materials: Vec<MaterialSection>,
    pub layout: LayoutSection,
    pub loads: Vec<LoadSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseOverride {
    pub index: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub process_std: f64,
    pub process_sigma: f64,
    pub measurement_variance: f64,
    pub overrides: Vec<NoiseOverride>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSection {
    MaskedGaussian { gamma: f64, sigma: f64 },
    Identity { scale: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EnkfModeSection {
    Stochastic,
    Literal,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObserverConfig {
    Lskkf {
        name: String,
        kernel: KernelSection,
        cg_tol: f64,
        cg_max_iter: usize,
        warm_start: bool,
    },
    Enkf {
        name: String,
        ensemble_size: usize,
        mode: EnkfModeSection,
    },
    Romkf {
        name: String,
        energy_fraction: f64,
    },
    Luenberger {
        name: String,
        n_samples: usize,
    },
}

impl ObserverConfig {
    pub fn name(&self) -> &str {
        match self {
            ObserverConfig::Lskkf { name, .. }
            | ObserverConfig::Enkf { name, .. }
            | ObserverConfig::Romkf { name, .. }
            | ObserverConfig::Luenberger { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Sf1,
    Csv,
    Pgm,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSection {
    pub step: usize,
    pub formats: Vec<FieldFormat>,
}

/// How the reference ("physical") trajectory differs from the observers'
/// model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    /// Add `L_Q v_k` process noise to the reference trajectory.
    pub process_noise: bool,
    /// Factor applied to the heat loads that drive the reference trajectory.
    pub load_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RomSection {
    /// Length of each impulse and step response used as POD snapshots.
    pub snapshot_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Grid of the small model (same spacing as the main grid).
    pub small_shape: Vec<usize>,
    pub gammas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub shapes: Vec<Vec<usize>>,
    pub steps: usize,
    pub observers: Vec<ObserverConfig>,
}

fn default_observers() -> Value {
    json!([
        {"type": "lskkf", "name": "lskkf",
         "kernel": {"type": "masked_gaussian", "gamma": 0.06, "sigma": 0.01},
         "cg_tol": 1e-8, "cg_max_iter": 500, "warm_start": false},
        {"type": "enkf", "name": "enkf_n20", "ensemble_size": 20, "mode": "stochastic"},
        {"type": "enkf", "name": "enkf_n100", "ensemble_size": 100, "mode": "stochastic"},
        {"type": "romkf", "name": "romkf", "energy_fraction": 0.999},
        {"type": "luenberger", "name": "luenberger", "n_samples": 500}
    ])
}

fn phantom_materials() -> Value {
    json!([
        {"name": "soft_tissue", "rho": 1050.0, "c": 3600.0, "k": 0.5, "measured": true},
        {"name": "plastic", "rho": 1400.0, "c": 1200.0, "k": 0.2, "measured": false}
    ])
}

fn phantom_loads(ndim: usize) -> Value {
    let centers = phantom::load_centers(ndim);
    json!([
        {"type": "gaussian", "center": centers[0], "width": 0.12, "power_w": 200.0},
        {"type": "gaussian", "center": centers[1], "width": 0.12, "power_w": 200.0}
    ])
}

/// The fully populated document for a named profile.
pub fn profile(name: &str) -> Result<Value> {
    let (shape, spacing, small): (Vec<usize>, Vec<f64>, Vec<usize>) = match name {
        "default" => (vec![128, 128], vec![0.0025, 0.0025], vec![24, 24]),
        "small" => (vec![32, 32], vec![0.01, 0.01], vec![16, 16]),
        "large" => (
            vec![256, 256, 16],
            vec![0.00125, 0.00125, 0.01875],
            vec![16, 16, 4],
        ),
        other => {
            return Err(Error::config(
                "profile",
                format!("unknown profile `{other}`, expected one of {PROFILES:?}"),
            ))
        }
    };
    let ndim = shape.len();
    Ok(json!({
        "profile": name,
        "seed": 7,
        "steps": 17,
        "model": {
            "grid": {"shape": shape, "spacing": spacing},
            "extrude": 0.3,
            "dt": 93.0,
            "h": 10.0,
            "materials": phantom_materials(),
            "layout": {"type": "phantom"},
            "loads": phantom_loads(ndim)
        },
        "noise": {
            "process_std": 0.3,
            "process_sigma": 0.01,
            "measurement_variance": 0.05,
            "overrides": []
        },
        "observers": default_observers(),
        "probes": phantom::probe_positions(ndim),
        "truth": {"process_noise": false, "load_scale": 1.2},
        "snapshot": {"step": 17, "formats": ["sf1", "pgm"]},
        "export_truth": false,
        "rom": {"snapshot_steps": 17},
        "design": {
            "small_shape": small,
            "gammas": [0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.035, 0.04, 0.05, 0.06, 0.08, 0.1],
            "sigmas": [0.0025, 0.005, 0.0075, 0.01, 0.0125, 0.015, 0.02, 0.025]
        },
        "bench": {
            "shapes": [[64, 64], [128, 128], [256, 256], [512, 512]],
            "steps": 5,
            "observers": [
                {"type": "lskkf", "name": "lskkf",
                 "kernel": {"type": "masked_gaussian", "gamma": 0.06, "sigma": 0.01},
                 "cg_tol": 1e-8, "cg_max_iter": 500, "warm_start": false},
                {"type": "enkf", "name": "enkf_n5", "ensemble_size": 5, "mode": "stochastic"},
                {"type": "enkf", "name": "enkf_n10", "ensemble_size": 10, "mode": "stochastic"},
                {"type": "enkf", "name": "enkf_n20", "ensemble_size": 20, "mode": "stochastic"},
                {"type": "luenberger", "name": "luenberger", "n_samples": 500}
            ]
        }
    }))
}

/// Recursive merge: objects merge per key, other values replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolve a user document against its profile (`profile_override` wins
/// over the document's own `profile` key).
pub fn resolve(user: Value, profile_override: Option<&str>) -> Result<ExperimentConfig> {
    let Value::Object(_) = &user else {
        return Err(Error::config("<root>", "config must be a JSON object"));
    };
    let name = match profile_override {
        Some(p) => p.to_string(),
        None => match user.get("profile") {
            None => "default".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("profile", "expected a string")),
        },
    };
    let mut doc = profile(&name)?;
    merge(&mut doc, user);
    doc["profile"] = Value::String(name);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let key = e.path().to_string();
        Error::config(
            if key.is_empty() || key == "." { "<root>".to_string() } else { key },
            e.into_inner().to_string(),
        )
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str, profile_override: Option<&str>) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Format {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;
    resolve(value, profile_override)
}

pub fn parse_config(path: &Path, profile_override: Option<&str>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    resolve(value, profile_override)
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a positive finite number, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be >= 0, got {v}")))
    }
}

fn check_shape(key: &str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::config(
            key,
            format!("expected 1 to 3 positive axis lengths, got {shape:?}"),
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        let m = &self.model;
        check_shape("model.grid.shape", &m.grid.shape)?;
        if m.grid.spacing.len() != m.grid.shape.len() {
            return Err(Error::config(
                "model.grid.spacing",
                format!("needs {} entries", m.grid.shape.len()),
            ));
        }
        for (i, &s) in m.grid.spacing.iter().enumerate() {
            positive(&format!("model.grid.spacing[{i}]"), s)?;
        }
        positive("model.extrude", m.extrude)?;
        positive("model.dt", m.dt)?;
        non_negative("model.h", m.h)?;
        if m.materials.is_empty() {
            return Err(Error::config("model.materials", "at least one material required"));
        }
        for (i, mat) in m.materials.iter().enumerate() {
            positive(&format!("model.materials[{i}].rho"), mat.rho)?;
            positive(&format!("model.materials[{i}].c"), mat.c)?;
            non_negative(&format!("model.materials[{i}].k"), mat.k)?;
        }
        if !m.materials.iter().any(|mat| mat.measured) {
            return Err(Error::config("model.materials", "no material is measured"));
        }
        if let LayoutSection::Runs { runs } = &m.layout {
            let total: usize = runs.iter().map(|r| r.1).sum();
            let n: usize = m.grid.shape.iter().product();
            if total != n {
                return Err(Error::config(
                    "model.layout.runs",
                    format!("runs cover {total} points, grid has {n}"),
                ));
            }
            if let Some(r) = runs.iter().find(|r| r.0 >= m.materials.len()) {
                return Err(Error::config(
                    "model.layout.runs",
                    format!("material index {} out of range", r.0),
                ));
            }
        }
        if m.loads.is_empty() {
            return Err(Error::config("model.loads", "at least one heat load required"));
        }
        for (i, load) in m.loads.iter().enumerate() {
            if let LoadSection::Gaussian {
                center,
                width,
                power_w,
            } = load
            {
                if center.len() != m.grid.shape.len().min(2) && center.len() != m.grid.shape.len() {
                    return Err(Error::config(
                        format!("model.loads[{i}].center"),
                        "dimension does not match the grid",
                    ));
                }
                positive(&format!("model.loads[{i}].width"), *width)?;
                non_negative(&format!("model.loads[{i}].power_w"), *power_w)?;
            }
        }

        let n = &self.noise;
        non_negative("noise.process_std", n.process_std)?;
        positive("noise.process_sigma", n.process_sigma)?;
        positive("noise.measurement_variance", n.measurement_variance)?;
        for (i, o) in n.overrides.iter().enumerate() {
            positive(&format!("noise.overrides[{i}].variance"), o.variance)?;
        }

        self.validate_observers("observers", &self.observers)?;
        if self.probes.is_empty() {
            return Err(Error::config("probes", "at least one probe required"));
        }
        for (i, p) in self.probes.iter().enumerate() {
            if p.is_empty() || p.len() > 3 || p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::config(
                    format!("probes[{i}]"),
                    "expected 1 to 3 normalized coordinates in [0, 1]",
                ));
            }
        }
        non_negative("truth.load_scale", self.truth.load_scale)?;
        if let Some(s) = &self.snapshot {
            if s.step > self.steps {
                return Err(Error::config(
                    "snapshot.step",
                    format!("must be <= steps ({})", self.steps),
                ));
            }
        }
        if self.rom.snapshot_steps == 0 {
            return Err(Error::config("rom.snapshot_steps", "must be at least 1"));
        }
        check_shape("design.small_shape", &self.design.small_shape)?;
        if self.design.small_shape.len() != m.grid.shape.len() {
            return Err(Error::config(
                "design.small_shape",
                "must have the same dimension as the model grid",
            ));
        }
        if self.design.gammas.is_empty() {
            return Err(Error::config("design.gammas", "empty candidate list"));
        }
        if self.design.sigmas.is_empty() {
            return Err(Error::config("design.sigmas", "empty candidate list"));
        }
        for (i, &g) in self.design.gammas.iter().enumerate() {
            positive(&format!("design.gammas[{i}]"), g)?;
        }
        for (i, &s) in self.design.sigmas.iter().enumerate() {
            positive(&format!("design.sigmas[{i}]"), s)?;
        }
        for (i, s) in self.bench.shapes.iter().enumerate() {
            check_shape(&format!("bench.shapes[{i}]"), s)?;
        }
        if self.bench.steps < 1 {
            return Err(Error::config("bench.steps", "must be at least 1"));
        }
        self.validate_observers("bench.observers", &self.bench.observers)?;
        Ok(())
    }

    fn validate_observers(&self, key: &str, observers: &[ObserverConfig]) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for (i, o) in observers.iter().enumerate() {
            let at = |field: &str| format!("{key}[{i}].{field}");
            if o.name().is_empty() || !names.insert(o.name().to_string()) {
                return Err(Error::config(at("name"), "names must be non-empty and unique"));
            }
            match o {
                ObserverConfig::Lskkf {
                    kernel,
                    cg_tol,
                    cg_max_iter,
                    ..
                } => {
                    match kernel {
                        KernelSection::MaskedGaussian { gamma, sigma } => {
                            positive(&at("kernel.gamma"), *gamma)?;
                            positive(&at("kernel.sigma"), *sigma)?;
                        }
                        KernelSection::Identity { scale } => {
                            non_negative(&at("kernel.scale"), *scale)?;
                        }
                    }
                    positive(&at("cg_tol"), *cg_tol)?;
                    if *cg_max_iter == 0 {
                        return Err(Error::config(at("cg_max_iter"), "must be at least 1"));
                    }
                }
                ObserverConfig::Enkf { ensemble_size, .. } => {
                    if *ensemble_size < 2 {
                        return Err(Error::config(at("ensemble_size"), "must be at least 2"));
                    }
                }
                ObserverConfig::Romkf {
                    energy_fraction, ..
                } => {
                    if !(*energy_fraction > 0.0 && *energy_fraction <= 1.0) {
                        return Err(Error::config(at("energy_fraction"), "must lie in (0, 1]"));
                    }
                }
                ObserverConfig::Luenberger { n_samples, .. } => {
                    if *n_samples < 2 {
                        return Err(Error::config(at("n_samples"), "must be at least 2"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved config (without `output_dir`).
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.model.grid.shape.clone(), self.model.grid.spacing.clone())
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            process_std: self.noise.process_std,
            process_sigma: self.noise.process_sigma,
            measurement_variance: self.noise.measurement_variance,
            overrides: self
                .noise
                .overrides
                .iter()
                .map(|o| (o.index, o.variance))
                .collect(),
        }
    }

    /// Physical description on the configured grid.
    pub fn material_config(&self) -> Result<MaterialConfig> {
        self.material_config_on(self.grid()?)
    }

    /// Same physics on another grid (used for the small design model).
    pub fn material_config_on(&self, grid: Grid) -> Result<MaterialConfig> {
        let m = &self.model;
        let labels = match &m.layout {
            LayoutSection::Phantom => phantom::labels(&grid),
            LayoutSection::Runs { runs } => {
                let mut l = Vec::with_capacity(grid.len());
                for &(mat, count) in runs {
                    l.extend(std::iter::repeat_n(mat, count));
                }
                l
            }
            LayoutSection::Sf1 { path } => {
                let field = ScalarField::read_sf1(Path::new(path))?;
                field_labels(&field, &grid, m.materials.len(), "model.layout.path")?
            }
        };
        grid.check_len("material layout", labels.len())?;
        let mut cfg = MaterialConfig {
            extrude: m.extrude,
            materials: m
                .materials
                .iter()
                .map(|s| Material {
                    name: s.name.clone(),
                    rho: s.rho,
                    c: s.c,
                    k: s.k,
                })
                .collect(),
            labels,
            h: m.h,
            loads: Vec::new(),
            dt: m.dt,
            grid: grid.clone(),
        };
        let mut loads = Vec::with_capacity(m.loads.len());
        for (i, load) in m.loads.iter().enumerate() {
            loads.push(match load {
                LoadSection::Gaussian {
                    center,
                    width,
                    power_w,
                } => cfg.focused_load(center, *width, *power_w),
                LoadSection::Sf1 { path } => {
                    let field = ScalarField::read_sf1(Path::new(path))?;
                    if field.grid().shape() != grid.shape() {
                        return Err(Error::config(
                            format!("model.loads[{i}].path"),
                            "field shape does not match the grid",
                        ));
                    }
                    field.into_values()
                }
            });
        }
        cfg.loads = loads;
        Ok(cfg)
    }

    /// Flat indices of all measured grid points.
    pub fn measured_indices(&self, cfg: &MaterialConfig) -> Vec<usize> {
        cfg.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| self.model.materials[l].measured)
            .map(|(i, _)| i)
            .collect()
    }
}

fn field_labels(field: &ScalarField, grid: &Grid, count: usize, key: &str) -> Result<Vec<usize>> {
    if field.grid().shape() != grid.shape() {
        return Err(Error::config(key, "layout shape does not match the grid"));
    }
    field
        .values()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < count {
                Ok(v as usize)
            } else {
                Err(Error::config(key, format!("invalid material index {v}")))
            }
        })
        .collect()
}

//! End-to-end experiments: synthetic truth, all configured observers,
//! probe RMS, the two-step noise estimate and per-step timing.

mod bench;
mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

pub use bench::{bench_slopes, fit_loglog_slope, scaling_benchmark, write_bench_csv, BenchRow};
pub use metrics::{rms_at_probes, std_estimate, ProbeRms};

use crate::config::{
    EnkfModeSection, ExperimentConfig, FieldFormat, KernelSection, ObserverConfig,
};
use crate::error::{Error, Result};
use crate::export::{export_field, file_extension, Slice};
use crate::linop::{Grid, LinearOperator, ScalarField};
use crate::model::{
    assemble_system, input_response_snapshots, input_sequence, phantom, pod_reduce, project_rom,
    simulate_truth, MaterialConfig, SystemModel, Trajectory,
};
use crate::observers::{
    design_luenberger_gain, EnKf, EnkfMode, LskKf, LskKfOptions, Luenberger, ObserverState,
    RomKf, StateObserver,
};

/// Everything shared by the observers of one experiment.
pub struct Scenario {
    pub model: Arc<SystemModel>,
    pub material: MaterialConfig,
    pub probes: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
}

pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let material = cfg.material_config()?;
    let measured = cfg.measured_indices(&material);
    let model = assemble_system(&material, &measured, &cfg.noise_config())?;
    let probes = cfg
        .probes
        .iter()
        .map(|p| {
            phantom::snap_to_nearest(&model.grid, &model.measured, p)
                .ok_or_else(|| Error::config("probes", "no measured point to snap to"))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_u = model.n_u();
    let inputs = (0..cfg.steps)
        .map(|k| {
            let u = input_sequence(k);
            (0..n_u).map(|i| u.get(i).copied().unwrap_or(0.0)).collect()
        })
        .collect();
    Ok(Scenario {
        model: Arc::new(model),
        material,
        probes,
        inputs,
    })
}

/// The reference trajectory: the observers' model with the configured heat
/// load mismatch, with or without process noise. Measurements always carry
/// noise.
pub fn simulate_reference(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Trajectory> {
    let mut model = (*scenario.model).clone();
    model.b *= cfg.truth.load_scale;
    if !cfg.truth.process_noise {
        model.l_q = LinearOperator::zero(model.n_x());
    }
    simulate_truth(&model, &scenario.inputs, cfg.steps, cfg.seed)
}

/// Per-observer details that are fixed at construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ObserverDetails {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rom_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub luenberger_d: Option<f64>,
}

pub fn kind_of(oc: &ObserverConfig) -> &'static str {
    match oc {
        ObserverConfig::Lskkf { .. } => "lskkf",
        ObserverConfig::Enkf { .. } => "enkf",
        ObserverConfig::Romkf { .. } => "romkf",
        ObserverConfig::Luenberger { .. } => "luenberger",
    }
}

/// Stable per-name seed derivation (FNV-1a of the name mixed into the seed).
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

pub fn kernel_operator(kernel: &KernelSection, model: &SystemModel) -> Result<LinearOperator> {
    match kernel {
        KernelSection::MaskedGaussian { gamma, sigma } => {
            LinearOperator::masked_kernel(&model.masks, *gamma, *sigma)
        }
        KernelSection::Identity { scale } => Ok(LinearOperator::identity(model.n_x()).scale(*scale)),
    }
}

pub fn build_observer(
    oc: &ObserverConfig,
    model: &Arc<SystemModel>,
    seed: u64,
    rom_snapshot_steps: usize,
) -> Result<(ObserverState, ObserverDetails)> {
    let mut details = ObserverDetails::default();
    let state = match oc {
        ObserverConfig::Lskkf {
            name,
            kernel,
            cg_tol,
            cg_max_iter,
            warm_start,
        } => {
            let l = kernel_operator(kernel, model)?;
            let options = LskKfOptions {
                cg_tol: *cg_tol,
                cg_max_iter: *cg_max_iter,
                warm_start: *warm_start,
            };
            ObserverState::LskKf(LskKf::new(name.clone(), model.clone(), l, options)?)
        }
        ObserverConfig::Enkf {
            name,
            ensemble_size,
            mode,
        } => {
            let mode = match mode {
                EnkfModeSection::Stochastic => EnkfMode::Stochastic,
                EnkfModeSection::Literal => EnkfMode::Literal,
            };
            ObserverState::EnKf(EnKf::new(
                name.clone(),
                model.clone(),
                *ensemble_size,
                mode,
                derive_seed(seed, name),
                vec![0.0; model.n_x()],
            )?)
        }
        ObserverConfig::Romkf {
            name,
            energy_fraction,
        } => {
            let snapshots = input_response_snapshots(model, rom_snapshot_steps)?;
            let v = pod_reduce(&snapshots, *energy_fraction)?;
            let rom = project_rom(model, &v)?;
            details.rom_order = Some(v.ncols());
            ObserverState::RomKf(RomKf::new(name.clone(), rom, &model.r_diag)?)
        }
        ObserverConfig::Luenberger { name, n_samples } => {
            let (gain, d) = design_luenberger_gain(&model.r_diag, &model.l_q, *n_samples, seed)?;
            details.luenberger_d = Some(d);
            ObserverState::Luenberger(Luenberger::new(name.clone(), model.clone(), gain)?)
        }
    };
    Ok((state, details))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeInfo {
    pub index: usize,
    /// Physical coordinates of the grid point, m.
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFlagRecord {
    pub step: usize,
    pub flag: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverReport {
    pub name: String,
    pub kind: &'static str,
    /// `"ok"` or `"failed"`.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub completed_steps: usize,
    /// Per-probe RMS in K over the completed steps.
    pub probe_rms: Vec<f64>,
    pub total_rms: Option<f64>,
    /// Noise estimate from the final two estimates (see `std_pair`).
    pub std_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_iterations: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_converged: Option<Vec<bool>>,
    pub flags: Vec<StepFlagRecord>,
    #[serde(flatten)]
    pub details: ObserverDetails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverTiming {
    pub setup_s: f64,
    pub step_s: Vec<f64>,
    pub mean_step_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub model_s: f64,
    pub truth_s: f64,
    pub observers: BTreeMap<String, ObserverTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub digest: String,
    pub seed: u64,
    pub profile: String,
    pub steps: usize,
    pub dt: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub probes: Vec<ProbeInfo>,
    /// Steps `(k, k+1)` whose estimates feed `std_final`.
    pub std_pair: Option<[usize; 2]>,
    pub observers: Vec<ObserverReport>,
    /// Wall-clock measurements; the only non-deterministic part.
    pub timing: TimingReport,
}

impl ExperimentReport {
    pub fn observer(&self, name: &str) -> Option<&ObserverReport> {
        self.observers.iter().find(|o| o.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// The report with all wall-clock fields removed.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

/// Recorded trace of one observer run.
struct ObserverTrace {
    report: ObserverReport,
    timing: ObserverTiming,
    /// `probe_values[k-1][p]` for completed steps.
    probe_values: Vec<Vec<f64>>,
    snapshot: Option<Vec<f64>>,
}

fn run_observer(
    oc: &ObserverConfig,
    scenario: &Scenario,
    truth: &Trajectory,
    seed: u64,
    rom_snapshot_steps: usize,
    snapshot_step: Option<usize>,
) -> ObserverTrace {
    let steps = truth.steps();
    let mut report = ObserverReport {
        name: oc.name().to_string(),
        kind: kind_of(oc),
        status: "ok",
        failure: None,
        completed_steps: 0,
        probe_rms: Vec::new(),
        total_rms: None,
        std_final: None,
        cg_iterations: matches!(oc, ObserverConfig::Lskkf { .. }).then(Vec::new),
        cg_converged: matches!(oc, ObserverConfig::Lskkf { .. }).then(Vec::new),
        flags: Vec::new(),
        details: ObserverDetails::default(),
    };
    let mut timing = ObserverTiming {
        setup_s: 0.0,
        step_s: Vec::new(),
        mean_step_s: 0.0,
    };
    let mut probe_values = Vec::with_capacity(steps);
    let mut snapshot = None;

    let t0 = Instant::now();
    let built = build_observer(oc, &scenario.model, seed, rom_snapshot_steps);
    timing.setup_s = t0.elapsed().as_secs_f64();
    let (mut obs, details) = match built {
        Ok(b) => b,
        Err(e) => {
            report.status = "failed";
            report.failure = Some(format!("construction: {e}"));
            return ObserverTrace {
                report,
                timing,
                probe_values,
                snapshot,
            };
        }
    };
    report.details = details;

    let mut previous: Option<Vec<f64>> = None;
    let mut current: Option<Vec<f64>> = None;
    for k in 1..=steps {
        let t = Instant::now();
        let result = obs.step(&truth.inputs[k - 1], &truth.outputs[k - 1]);
        let estimate = obs.current_estimate();
        let elapsed = t.elapsed().as_secs_f64();
        match result {
            Ok(step) => {
                timing.step_s.push(elapsed);
                if let Some(cg) = step.cg {
                    if let Some(v) = report.cg_iterations.as_mut() {
                        v.push(cg.iterations);
                    }
                    if let Some(v) = report.cg_converged.as_mut() {
                        v.push(cg.converged);
                    }
                }
                for f in step.flags {
                    report.flags.push(StepFlagRecord {
                        step: k,
                        flag: f.as_str(),
                    });
                }
            }
            Err(e) => {
                report.status = "failed";
                report.failure = Some(format!("step {k}: {e}"));
                break;
            }
        }
        probe_values.push(scenario.probes.iter().map(|&p| estimate[p]).collect());
        if snapshot_step == Some(k) {
            snapshot = Some(estimate.clone());
        }
        previous = current.take();
        current = Some(estimate);
        report.completed_steps = k;
    }

    let done = report.completed_steps;
    if done > 0 {
        let est: Vec<Vec<f64>> = probe_values.clone();
        let tru: Vec<Vec<f64>> = (1..=done)
            .map(|k| scenario.probes.iter().map(|&p| truth.states[k][p]).collect())
            .collect();
        let idx: Vec<usize> = (0..scenario.probes.len()).collect();
        if let Ok(rms) = rms_at_probes(&est, &tru, &idx) {
            report.probe_rms = rms.per_probe;
            report.total_rms = Some(rms.total);
        }
        timing.mean_step_s = timing.step_s.iter().sum::<f64>() / timing.step_s.len().max(1) as f64;
    }
    if done == steps {
        if let (Some(a), Some(b)) = (&previous, &current) {
            report.std_final = std_estimate(a, b).ok();
        }
    }
    ObserverTrace {
        report,
        timing,
        probe_values,
        snapshot,
    }
}

const DIGEST_FILE: &str = "digest.txt";

/// Refuse to write into a directory produced by a different config.
pub fn prepare_output_dir(out: &Path, digest: &str, force: bool) -> Result<()> {
    let marker = out.join(DIGEST_FILE);
    if marker.exists() && !force {
        let existing = fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
        if existing.trim() != digest {
            return Err(Error::config(
                "--out",
                format!(
                    "{} holds results for digest {}; use --force to overwrite",
                    out.display(),
                    existing.trim()
                ),
            ));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(&marker, format!("{digest}\n")).map_err(|e| Error::io(&marker, e))
}

fn csv_num(v: f64) -> String {
    format!("{v:?}")
}

fn write_steps_csv(
    path: &Path,
    digest: &str,
    scenario: &Scenario,
    truth: &Trajectory,
    dt: f64,
    traces: &[ObserverTrace],
) -> Result<()> {
    let n_p = scenario.probes.len();
    let mut s = String::new();
    writeln!(s, "# digest={digest}").unwrap();
    let mut header = vec!["k".to_string(), "time_s".to_string()];
    header.extend((0..n_p).map(|p| format!("truth_p{p}")));
    for t in traces {
        let name = &t.report.name;
        header.extend((0..n_p).map(|p| format!("{name}_p{p}")));
        header.push(format!("{name}_step_s"));
        if t.report.cg_iterations.is_some() {
            header.push(format!("{name}_cg_iters"));
        }
    }
    writeln!(s, "{}", header.join(",")).unwrap();
    for k in 1..=truth.steps() {
        let mut row = vec![k.to_string(), csv_num(k as f64 * dt)];
        row.extend(scenario.probes.iter().map(|&p| csv_num(truth.states[k][p])));
        for t in traces {
            match t.probe_values.get(k - 1) {
                Some(vals) => row.extend(vals.iter().map(|&v| csv_num(v))),
                None => row.extend(std::iter::repeat_n(String::new(), n_p)),
            }
            row.push(t.timing.step_s.get(k - 1).map(|&v| csv_num(v)).unwrap_or_default());
            if let Some(iters) = &t.report.cg_iterations {
                row.push(iters.get(k - 1).map(|v| v.to_string()).unwrap_or_default());
            }
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Slice used for image export of 3-D fields: the middle of the last axis.
fn image_slice(grid: &Grid) -> Option<Slice> {
    (grid.ndim() == 3).then(|| Slice {
        axis: 2,
        index: grid.shape()[2] / 2,
    })
}

fn write_snapshot(
    dir: &Path,
    label: &str,
    step: usize,
    grid: &Grid,
    values: Vec<f64>,
    formats: &[FieldFormat],
    digest: &str,
) -> Result<()> {
    let field = ScalarField::new(grid.clone(), values)?;
    for &f in formats {
        let path = dir.join(format!("{label}_k{step:03}.{}", file_extension(f)));
        let slice = if f == FieldFormat::Pgm { image_slice(grid) } else { None };
        export_field(&field, &path, f, slice, Some(digest))?;
    }
    Ok(())
}

fn export_truth(dir: &Path, grid: &Grid, truth: &Trajectory, dt: f64, digest: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("# digest={digest}\nk,time_s,file\n");
    for (k, x) in truth.states.iter().enumerate() {
        let name = format!("x_{k:03}.sf1");
        ScalarField::new(grid.clone(), x.clone())?.write_sf1(&dir.join(&name))?;
        writeln!(manifest, "{k},{},{name}", csv_num(k as f64 * dt)).unwrap();
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Run every configured observer on one synthetic trajectory. With `out`,
/// also writes `report.json`, `steps.csv`, `digest.txt` and snapshots.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let digest = cfg.digest();
    let t0 = Instant::now();
    let scenario = build_scenario(cfg)?;
    let model_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let truth = simulate_reference(cfg, &scenario)?;
    let truth_s = t1.elapsed().as_secs_f64();

    let snapshot_step = cfg.snapshot.as_ref().map(|s| s.step);
    let traces: Vec<ObserverTrace> = cfg
        .observers
        .iter()
        .map(|oc| {
            run_observer(
                oc,
                &scenario,
                &truth,
                cfg.seed,
                cfg.rom.snapshot_steps,
                snapshot_step,
            )
        })
        .collect();

    let model = &scenario.model;
    let report = ExperimentReport {
        digest: digest.clone(),
        seed: cfg.seed,
        profile: cfg.profile.clone(),
        steps: cfg.steps,
        dt: model.dt,
        n_x: model.n_x(),
        n_y: model.n_y(),
        n_u: model.n_u(),
        probes: scenario
            .probes
            .iter()
            .map(|&i| ProbeInfo {
                index: i,
                position: model.grid.position(i),
            })
            .collect(),
        std_pair: (cfg.steps >= 2).then(|| [cfg.steps - 1, cfg.steps]),
        observers: traces.iter().map(|t| t.report.clone()).collect(),
        timing: TimingReport {
            model_s,
            truth_s,
            observers: traces
                .iter()
                .map(|t| (t.report.name.clone(), t.timing.clone()))
                .collect(),
        },
    };

    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("report.json");
        fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        write_steps_csv(&out.join("steps.csv"), &digest, &scenario, &truth, model.dt, &traces)?;
        if let (Some(snap), true) = (&cfg.snapshot, snapshot_step.is_some()) {
            let dir = out.join("snapshots");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_snapshot(
                &dir,
                "truth",
                snap.step,
                &model.grid,
                truth.states[snap.step].clone(),
                &snap.formats,
                &digest,
            )?;
            for t in &traces {
                if let Some(values) = &t.snapshot {
                    write_snapshot(
                        &dir,
                        &t.report.name,
                        snap.step,
                        &model.grid,
                        values.clone(),
                        &snap.formats,
                        &digest,
                    )?;
                }
            }
        }
        if cfg.export_truth {
            export_truth(&out.join("truth"), &model.grid, &truth, model.dt, &digest)?;
        }
    }
    Ok(report)
}

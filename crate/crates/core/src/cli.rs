//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{self, ExperimentConfig, FieldFormat, KernelSection, ObserverConfig};
use crate::error::{Error, Result};
use crate::export::{self, file_extension, Slice};
use crate::harness::{self, build_scenario, kernel_operator, prepare_output_dir};
use crate::linop::Grid;
use crate::model::assemble_system;
use crate::oracle::{conditional_expectation, fit_kernel_params, KernelCandidates};

#[derive(Debug, Parser)]
#[command(name = "lskkf", version, about = "Matrix-free kernel Kalman filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON); profile defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Profile whose defaults the config is merged over.
    #[arg(long)]
    profile: Option<String>,
    /// Overwrite an output directory holding a different config digest.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario and run every configured observer.
    Run(Common),
    /// Time observer steps across grid sizes.
    Bench(Common),
    /// Fit the masked-Gaussian kernel on the small model.
    DesignKernel(Common),
    /// Export the conditional-expectation field of an observer's kernel.
    CondExp {
        #[command(flatten)]
        common: Common,
        /// Flat grid index to condition on.
        #[arg(long)]
        index: usize,
        /// Value at the conditioning index.
        #[arg(long, default_value_t = 1.0)]
        value: f64,
        /// LSK-KF observer whose kernel is used (default: the first one).
        #[arg(long)]
        observer: Option<String>,
        /// Output formats (repeatable).
        #[arg(long = "format", value_enum)]
        formats: Vec<FormatArg>,
    },
    /// Convert a field between SF1, CSV and PGM.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Output format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Select the hyperplane AXIS:INDEX before writing.
        #[arg(long)]
        slice: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Sf1,
    Csv,
    Pgm,
}

impl From<FormatArg> for FieldFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Sf1 => FieldFormat::Sf1,
            FormatArg::Csv => FieldFormat::Csv,
            FormatArg::Pgm => FieldFormat::Pgm,
        }
    }
}

/// Failure tagged with the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

fn validation(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn runtime(error: Error) -> Failure {
    let code = if error.is_validation() { 1 } else { 2 };
    Failure { code, error }
}

fn load_config(common: &Common) -> std::result::Result<ExperimentConfig, Failure> {
    let profile = common.profile.as_deref();
    let mut cfg = match &common.config {
        Some(path) => config::parse_config(path, profile),
        None => config::resolve(json!({}), profile),
    }
    .map_err(validation)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_run(common: &Common) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = out_dir(common, &cfg, "out");
    let digest = cfg.digest();
    prepare_output_dir(&out, &digest, common.force).map_err(validation)?;
    write_text(&out.join("config.json"), &(cfg.canonical_json() + "\n")).map_err(runtime)?;
    let report = harness::run_experiment(&cfg, Some(&out)).map_err(runtime)?;
    println!("digest {digest}");
    println!(
        "{:<14} {:>10} {:>10} {:>12}  status",
        "observer", "total_rms", "std_final", "mean_step_s"
    );
    for o in &report.observers {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let t = report
            .timing
            .observers
            .get(&o.name)
            .map(|t| format!("{:.4}", t.mean_step_s))
            .unwrap_or_default();
        println!(
            "{:<14} {:>10} {:>10} {:>12}  {}",
            o.name,
            fmt(o.total_rms),
            fmt(o.std_final),
            t,
            o.failure.as_deref().unwrap_or(o.status)
        );
    }
    println!("wrote {}", out.display());
    let failed = report.observers.iter().any(|o| o.status != "ok");
    if failed {
        return Err(Failure {
            code: 2,
            error: Error::Numeric("one or more observers failed; see report.json".into()),
        });
    }
    Ok(())
}

fn cmd_bench(common: &Common) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = out_dir(common, &cfg, "bench");
    let digest = cfg.digest();
    prepare_output_dir(&out, &digest, common.force).map_err(validation)?;
    let rows = harness::scaling_benchmark(&cfg, &cfg.bench.shapes, &cfg.bench.observers, cfg.bench.steps)
        .map_err(runtime)?;
    harness::write_bench_csv(&out.join("bench.csv"), &rows, &digest).map_err(runtime)?;
    let json = serde_json::to_string_pretty(&json!({
        "digest": digest,
        "rows": rows,
        "slopes": harness::bench_slopes(&rows),
    }))
    .expect("bench rows serialize");
    write_text(&out.join("bench.json"), &(json + "\n")).map_err(runtime)?;
    for r in &rows {
        match r.median_step_s {
            Some(t) => println!("{:>8} {:<12} {:.6} s", r.n_x, r.observer, t),
            None => println!(
                "{:>8} {:<12} skipped ({})",
                r.n_x,
                r.observer,
                r.skipped.as_deref().unwrap_or("")
            ),
        }
    }
    for (name, slope) in harness::bench_slopes(&rows) {
        if let Some(s) = slope {
            println!("slope {name} {s:.3}");
        }
    }
    Ok(())
}

fn cmd_design(common: &Common) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(common)?;
    let spacing = cfg.model.grid.spacing.clone();
    let grid = Grid::new(cfg.design.small_shape.clone(), spacing).map_err(validation)?;
    let material = cfg.material_config_on(grid).map_err(validation)?;
    let measured = cfg.measured_indices(&material);
    let mut noise = cfg.noise_config();
    noise.overrides.clear();
    let small = assemble_system(&material, &measured, &noise).map_err(runtime)?;
    let candidates = KernelCandidates {
        gammas: cfg.design.gammas.clone(),
        sigmas: cfg.design.sigmas.clone(),
    };
    let (fit, steady) = fit_kernel_params(&small, &candidates).map_err(runtime)?;
    println!("gamma={:?} sigma={:?}", fit.gamma, fit.sigma);
    println!(
        "shape_score={:.6e} variance_score={:.6e} riccati_iterations={}",
        fit.shape_score, fit.variance_score, steady.iterations
    );
    if let Some(out) = &common.out {
        for oc in cfg.observers.iter_mut() {
            if let ObserverConfig::Lskkf { kernel, .. } = oc {
                *kernel = KernelSection::MaskedGaussian {
                    gamma: fit.gamma,
                    sigma: fit.sigma,
                };
            }
        }
        let digest = cfg.digest();
        prepare_output_dir(out, &digest, common.force).map_err(validation)?;
        let design = serde_json::to_string_pretty(&json!({
            "digest": digest,
            "gamma": fit.gamma,
            "sigma": fit.sigma,
            "shape_score": fit.shape_score,
            "variance_score": fit.variance_score,
            "sigma_scores": fit.sigma_scores,
            "probes": fit.probes,
            "small_shape": cfg.design.small_shape,
            "riccati_iterations": steady.iterations,
        }))
        .expect("design serializes");
        write_text(&out.join("kernel_design.json"), &(design + "\n")).map_err(runtime)?;
        write_text(&out.join("config.json"), &(cfg.canonical_json() + "\n")).map_err(runtime)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_cond_exp(
    common: &Common,
    index: usize,
    value: f64,
    observer: Option<&str>,
    formats: &[FormatArg],
) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let kernel = cfg
        .observers
        .iter()
        .find_map(|oc| match oc {
            ObserverConfig::Lskkf { name, kernel, .. }
                if observer.is_none_or(|want| want == name) =>
            {
                Some(kernel.clone())
            }
            _ => None,
        })
        .ok_or_else(|| {
            validation(Error::config(
                "--observer",
                "no matching lskkf observer in the config",
            ))
        })?;
    let out = out_dir(common, &cfg, "cond_exp");
    let digest = cfg.digest();
    prepare_output_dir(&out, &digest, common.force).map_err(validation)?;
    let scenario = build_scenario(&cfg).map_err(runtime)?;
    let model = &scenario.model;
    if index >= model.n_x() {
        return Err(validation(Error::config(
            "--index",
            format!("must be < {}", model.n_x()),
        )));
    }
    let l = kernel_operator(&kernel, model).map_err(runtime)?;
    let field = conditional_expectation(&l, &model.grid, index, value).map_err(runtime)?;
    let mut formats: Vec<FieldFormat> = formats.iter().map(|&f| f.into()).collect();
    if formats.is_empty() {
        formats.extend([FieldFormat::Sf1, FieldFormat::Pgm]);
    }
    for f in formats {
        let path = out.join(format!("cond_exp_b{index}.{}", file_extension(f)));
        let slice = (f == FieldFormat::Pgm && model.grid.ndim() == 3).then(|| Slice {
            axis: 2,
            index: model.grid.unravel(index)[2],
        });
        export::export_field(&field, &path, f, slice, Some(&digest)).map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_export(
    input: &Path,
    output: &Path,
    format: Option<FormatArg>,
    slice: Option<&str>,
) -> std::result::Result<(), Failure> {
    let format: FieldFormat = match format {
        Some(f) => f.into(),
        None => match output.extension().and_then(|e| e.to_str()) {
            Some("sf1") => FieldFormat::Sf1,
            Some("csv") => FieldFormat::Csv,
            Some("pgm") => FieldFormat::Pgm,
            _ => {
                return Err(validation(Error::config(
                    "--format",
                    "cannot infer the format from the output extension",
                )))
            }
        },
    };
    let slice = slice
        .map(|s| s.parse::<Slice>())
        .transpose()
        .map_err(validation)?;
    let field = export::read_field(input).map_err(validation)?;
    if let Some(s) = slice {
        if s.axis >= field.grid().ndim() || s.index >= field.grid().shape()[s.axis] {
            return Err(validation(Error::config(
                "--slice",
                format!("{}:{} is out of range for shape {:?}", s.axis, s.index, field.grid().shape()),
            )));
        }
    }
    export::export_field(&field, output, format, slice, None).map_err(runtime)?;
    Ok(())
}

fn configure_threads() {
    if let Ok(v) = std::env::var("LSKKF_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                // Fails only if a pool already exists, which is harmless.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Bench(c) => cmd_bench(c),
        Command::DesignKernel(c) => cmd_design(c),
        Command::CondExp {
            common,
            index,
            value,
            observer,
            formats,
        } => cmd_cond_exp(common, *index, *value, observer.as_deref(), formats),
        Command::Export {
            input,
            output,
            format,
            slice,
        } => cmd_export(input, output, *format, slice.as_deref()),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

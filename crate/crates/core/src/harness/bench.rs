use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, ObserverConfig};
use crate::error::{Error, Result};
use crate::model::simulate_truth;
use crate::observers::StateObserver;

use super::{build_observer, build_scenario};
use crate::observers::ObserverState;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub shape: Vec<usize>,
    pub n_x: usize,
    pub observer: String,
    pub steps: usize,
    /// Median per-step wall-clock, s; `None` when skipped.
    pub median_step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Median per-step time of each observer on each grid shape (same spacing
/// and physics as `cfg`). Failures at a size are recorded as skipped rows.
pub fn scaling_benchmark(
    cfg: &ExperimentConfig,
    shapes: &[Vec<usize>],
    observers: &[ObserverConfig],
    steps: usize,
) -> Result<Vec<BenchRow>> {
    if steps == 0 {
        return Err(Error::config("bench.steps", "must be at least 1"));
    }
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("bench.shapes", "sizes must be ascending"));
    }
    let mut rows = Vec::new();
    for shape in shapes {
        let n_x: usize = shape.iter().product();
        let mut local = cfg.clone();
        local.model.grid.shape = shape.clone();
        local.steps = steps + 2;
        let skip_all = |msg: String, rows: &mut Vec<BenchRow>| {
            for oc in observers {
                rows.push(BenchRow {
                    shape: shape.clone(),
                    n_x,
                    observer: oc.name().to_string(),
                    steps,
                    median_step_s: None,
                    skipped: Some(msg.clone()),
                });
            }
        };
        let scenario = match build_scenario(&local) {
            Ok(s) => s,
            Err(e) => {
                skip_all(e.to_string(), &mut rows);
                continue;
            }
        };
        // Start inside the heating window so every step has active input.
        let inputs: Vec<Vec<f64>> = scenario.inputs[2..].to_vec();
        let truth = match simulate_truth(&scenario.model, &inputs, steps, cfg.seed) {
            Ok(t) => t,
            Err(e) => {
                skip_all(e.to_string(), &mut rows);
                continue;
            }
        };
        // Observers advance round-robin, one step each, so slow drift in
        // machine load is shared rather than charged to whichever runs last.
        let mut live: Vec<(usize, ObserverState)> = Vec::new();
        let mut times: Vec<Vec<f64>> = vec![Vec::with_capacity(steps); observers.len()];
        let mut failures: Vec<Option<String>> = vec![None; observers.len()];
        for (i, oc) in observers.iter().enumerate() {
            match build_observer(oc, &scenario.model, cfg.seed, cfg.rom.snapshot_steps) {
                Ok((obs, _)) => live.push((i, obs)),
                Err(e) => failures[i] = Some(e.to_string()),
            }
        }
        for k in 0..steps {
            for (i, obs) in live.iter_mut() {
                if failures[*i].is_some() {
                    continue;
                }
                let t = Instant::now();
                let outcome = obs.step(&truth.inputs[k], &truth.outputs[k]).map(|_| obs.current_estimate());
                let elapsed = t.elapsed().as_secs_f64();
                match outcome {
                    Ok(_) => times[*i].push(elapsed),
                    Err(e) => failures[*i] = Some(e.to_string()),
                }
            }
        }
        drop(live);
        for (i, oc) in observers.iter().enumerate() {
            let failure = failures[i].take();
            rows.push(BenchRow {
                shape: shape.clone(),
                n_x,
                observer: oc.name().to_string(),
                steps,
                median_step_s: failure.is_none().then(|| median(std::mem::take(&mut times[i]))),
                skipped: failure,
            });
        }
    }
    Ok(rows)
}

/// Per-observer log-log slope of median step time against `n_x`.
pub fn bench_slopes(rows: &[BenchRow]) -> Vec<(String, Option<f64>)> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r.observer) {
            names.push(r.observer.clone());
        }
    }
    names
        .into_iter()
        .map(|name| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.observer == name)
                .filter_map(|r| r.median_step_s.map(|t| (r.n_x as f64, t)))
                .unzip();
            let slope = fit_loglog_slope(&xs, &ys);
            (name, slope)
        })
        .collect()
}

/// CSV table of the rows followed by a slope table.
pub fn write_bench_csv(path: &Path, rows: &[BenchRow], digest: &str) -> Result<()> {
    let mut s = format!("# digest={digest}\nshape,n_x,observer,steps,median_step_s,status\n");
    for r in rows {
        let shape = r
            .shape
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let median = r.median_step_s.map(|t| format!("{t:?}")).unwrap_or_default();
        let status = match &r.skipped {
            None => "ok".to_string(),
            Some(m) => format!("skipped: {}", m.replace([',', '\n'], ";")),
        };
        writeln!(s, "{shape},{},{},{},{median},{status}", r.n_x, r.observer, r.steps).unwrap();
    }
    s.push_str("\nobserver,loglog_slope\n");
    for (name, slope) in bench_slopes(rows) {
        let v = slope.map(|x| format!("{x:?}")).unwrap_or_default();
        writeln!(s, "{name},{v}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((fit_loglog_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(fit_loglog_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRms {
    pub per_probe: Vec<f64>,
    /// RMS over all probe residuals pooled together.
    pub total: f64,
}

/// RMS over time of `estimate − truth` at each probe index.
/// `estimates[k]` and `truth[k]` must refer to the same time.
pub fn rms_at_probes(
    estimates: &[Vec<f64>],
    truth: &[Vec<f64>],
    probes: &[usize],
) -> Result<ProbeRms> {
    if estimates.is_empty() {
        return Err(Error::Construction("rms_at_probes: empty sequence".into()));
    }
    if estimates.len() != truth.len() {
        return Err(Error::shape("truth sequence", estimates.len(), truth.len()));
    }
    if probes.is_empty() {
        return Err(Error::Construction("rms_at_probes: no probes".into()));
    }
    let mut sums = vec![0.0; probes.len()];
    for (est, tru) in estimates.iter().zip(truth) {
        if est.len() != tru.len() {
            return Err(Error::shape("estimate length", tru.len(), est.len()));
        }
        for (s, &p) in sums.iter_mut().zip(probes) {
            if p >= est.len() {
                return Err(Error::shape("probe index", format!("< {}", est.len()), p));
            }
            let e = est[p] - tru[p];
            *s += e * e;
        }
    }
    let steps = estimates.len() as f64;
    let per_probe = sums.iter().map(|s| (s / steps).sqrt()).collect();
    let total = (sums.iter().sum::<f64>() / (steps * probes.len() as f64)).sqrt();
    Ok(ProbeRms { per_probe, total })
}

/// Noise level from two consecutive estimates:
/// `(√2/2) · sample-std(x̂_k − x̂_{k+1})`.
pub fn std_estimate(x_k: &[f64], x_next: &[f64]) -> Result<f64> {
    if x_k.len() != x_next.len() {
        return Err(Error::shape("std_estimate second vector", x_k.len(), x_next.len()));
    }
    let n = x_k.len();
    if n < 2 {
        return Err(Error::Construction("std_estimate needs at least 2 states".into()));
    }
    let diff: Vec<f64> = x_k.iter().zip(x_next).map(|(a, b)| a - b).collect();
    let mu = diff.iter().sum::<f64>() / n as f64;
    let var = diff.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / (n - 1) as f64;
    Ok(std::f64::consts::FRAC_1_SQRT_2 * var.sqrt())
}

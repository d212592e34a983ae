use crate::error::{Error, Result};
use crate::rng::{self, stream};

use super::SystemModel;

/// A simulated run: `states[0..=K]`, `inputs[0..K]`, `outputs[k-1] = y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Heating schedule: `u_1` on for steps 2..=7, `u_2` on for steps 8..=15.
pub fn input_sequence(k: usize) -> [f64; 2] {
    let u1 = if (2..=7).contains(&k) { 1.0 } else { 0.0 };
    let u2 = if (8..=15).contains(&k) { 1.0 } else { 0.0 };
    [u1, u2]
}

/// Simulate `steps` transitions from `x_0 = 0`.
pub fn simulate_truth(
    model: &SystemModel,
    inputs: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_truth_from(model, &vec![0.0; model.n_x()], inputs, steps, seed)
}

pub fn simulate_truth_from(
    model: &SystemModel,
    x0: &[f64],
    inputs: &[Vec<f64>],
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if x0.len() != model.n_x() {
        return Err(Error::shape("initial state", model.n_x(), x0.len()));
    }
    if inputs.len() < steps {
        return Err(Error::shape("input sequence length", steps, inputs.len()));
    }
    let mut process = rng::seeded(seed, stream::PROCESS_NOISE);
    let mut measurement = rng::seeded(seed, stream::MEASUREMENT_NOISE);
    let r_std: Vec<f64> = model.r_diag.iter().map(|r| r.sqrt()).collect();

    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs = Vec::with_capacity(steps);
    states.push(x0.to_vec());
    for u in &inputs[..steps] {
        let x = states.last().expect("non-empty");
        let mut next = model.predict(x, u)?;
        let v = rng::standard_normal_vec(&mut process, model.n_x());
        let w = model.l_q.apply(&v)?;
        next.iter_mut().zip(&w).for_each(|(a, b)| *a += b);

        let mut y = model.c.apply(&next)?;
        let eta = rng::standard_normal_vec(&mut measurement, model.n_y());
        for ((yi, e), s) in y.iter_mut().zip(&eta).zip(&r_std) {
            *yi += s * e;
        }
        outputs.push(y);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs[..steps].to_vec(),
        outputs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        assert_eq!(input_sequence(0), [0.0, 0.0]);
        assert_eq!(input_sequence(1), [0.0, 0.0]);
        assert_eq!(input_sequence(2), [1.0, 0.0]);
        assert_eq!(input_sequence(7), [1.0, 0.0]);
        assert_eq!(input_sequence(8), [0.0, 1.0]);
        assert_eq!(input_sequence(15), [0.0, 1.0]);
        assert_eq!(input_sequence(16), [0.0, 0.0]);
    }
}

use lskkf::linop::{Grid, LinearOperator};
use lskkf::model::{
    assemble_system, input_response_snapshots, input_sequence, pod_reduce, project_rom,
    simulate_truth, MaterialConfig, NoiseConfig, SystemModel,
};
use proptest::prelude::*;

fn phantom_model(n: usize, h: f64) -> SystemModel {
    let grid = Grid::new(vec![n, n], vec![0.32 / n as f64; 2]).unwrap();
    let mut cfg = MaterialConfig::phantom(grid);
    cfg.h = h;
    let measured: Vec<usize> = (0..cfg.labels.len()).filter(|&i| cfg.labels[i] == 0).collect();
    assemble_system(&cfg, &measured, &NoiseConfig::default()).unwrap()
}

fn m_dot(m: &SystemModel, a: &[f64], b: &[f64]) -> f64 {
    m.capacity.iter().zip(a).zip(b).map(|((c, x), y)| c * x * y).sum()
}

fn field(n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed);
            ((t >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn insulated_step_conserves_energy(seed in any::<u64>()) {
        let m = phantom_model(12, 0.0);
        let x = field(m.n_x(), seed);
        let ax = m.a.apply(&x).unwrap();
        let (e0, e1) = (m.energy(&x), m.energy(&ax));
        let scale: f64 = m.capacity.iter().zip(&x).map(|(c, v)| (c * v).abs()).sum();
        prop_assert!((e0 - e1).abs() <= 1e-10 * scale);
    }

    #[test]
    fn step_is_self_adjoint_and_contractive_in_the_capacity_norm(s1 in any::<u64>(), s2 in any::<u64>()) {
        let m = phantom_model(10, 10.0);
        let (x, y) = (field(m.n_x(), s1), field(m.n_x(), s2));
        let (ax, ay) = (m.a.apply(&x).unwrap(), m.a.apply(&y).unwrap());
        let lhs = m_dot(&m, &ax, &y);
        let rhs = m_dot(&m, &x, &ay);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * m_dot(&m, &x, &x).sqrt() * m_dot(&m, &y, &y).sqrt());
        prop_assert!(m_dot(&m, &ax, &ax) <= m_dot(&m, &x, &x) * (1.0 + 1e-12));
    }

    #[test]
    fn step_preserves_nonnegativity(seed in any::<u64>()) {
        let m = phantom_model(10, 10.0);
        let x: Vec<f64> = field(m.n_x(), seed).iter().map(|v| v.abs()).collect();
        let ax = m.a.apply(&x).unwrap();
        let floor = -1e-12 * x.iter().cloned().fold(0.0, f64::max);
        prop_assert!(ax.iter().all(|&v| v >= floor));
    }
}

#[test]
fn unit_input_injects_the_configured_energy() {
    let m = phantom_model(16, 0.0);
    for j in 0..m.n_u() {
        let mut u = vec![0.0; m.n_u()];
        u[j] = 1.0;
        let x = m.predict(&vec![0.0; m.n_x()], &u).unwrap();
        let joules = m.energy(&x);
        let want = 200.0 * m.dt;
        assert!((joules - want).abs() < 1e-9 * want, "input {j}: {joules} vs {want}");
    }
}

#[test]
fn robin_boundary_cools_and_stays_stable() {
    let m = phantom_model(16, 10.0);
    let rho = m.spectral_radius_estimate(500).unwrap();
    assert!(rho < 1.0 && rho > 0.9, "spectral radius {rho}");
    let x = vec![1.0; m.n_x()];
    assert!(m.energy(&m.a.apply(&x).unwrap()) < m.energy(&x));
}

#[test]
fn pod_of_the_heating_responses_is_low_order() {
    let m = phantom_model(32, 10.0);
    let snaps = input_response_snapshots(&m, 17).unwrap();
    assert_eq!(snaps.ncols(), 4 * 17);
    let v = pod_reduce(&snaps, 0.999).unwrap();
    assert!(v.ncols() >= 1 && v.ncols() <= 15, "n_r = {}", v.ncols());
    let gram = v.transpose() * &v;
    let eye = nalgebra::DMatrix::<f64>::identity(v.ncols(), v.ncols());
    assert!((gram - eye).amax() < 1e-10);
    let rom = project_rom(&m, &v).unwrap();
    assert_eq!(rom.c_r.nrows(), m.n_y());
    assert!((&rom.q_r - rom.q_r.transpose()).amax() < 1e-15);
}

#[test]
fn rom_reproduces_the_noiseless_heating_response() {
    let base = phantom_model(24, 10.0);
    let m = SystemModel { l_q: LinearOperator::zero(base.n_x()), ..base };
    let snaps = input_response_snapshots(&m, 17).unwrap();
    let v = pod_reduce(&snaps, 0.999999).unwrap();
    let rom = project_rom(&m, &v).unwrap();
    let inputs: Vec<Vec<f64>> = (0..17).map(|k| input_sequence(k).to_vec()).collect();
    let truth = simulate_truth(&m, &inputs, 17, 0).unwrap();
    let mut z = nalgebra::DVector::zeros(v.ncols());
    for k in 0..17 {
        z = &rom.a_r * &z + &rom.b_r * nalgebra::DVector::from_column_slice(&inputs[k]);
    }
    let approx = &v * z;
    let x = &truth.states[17];
    let err: f64 = approx.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = x.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(err < 1e-2 * scale, "{err} vs {scale}");
}

#[test]
fn truth_without_noise_follows_the_recursion() {
    let base = phantom_model(12, 10.0);
    let m = SystemModel { l_q: LinearOperator::zero(base.n_x()), ..base };
    let inputs: Vec<Vec<f64>> = (0..6).map(|k| input_sequence(k + 2).to_vec()).collect();
    let t = simulate_truth(&m, &inputs, 6, 3).unwrap();
    assert_eq!(t.states.len(), 7);
    assert_eq!(t.outputs.len(), 6);
    let mut x = vec![0.0; m.n_x()];
    for k in 0..6 {
        x = m.predict(&x, &inputs[k]).unwrap();
        assert_eq!(t.states[k + 1], x);
        let clean = m.c.apply(&x).unwrap();
        let resid: Vec<f64> = t.outputs[k].iter().zip(&clean).map(|(a, b)| a - b).collect();
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var / m.r_diag[0] - 1.0).abs() < 0.6, "measurement variance {var}");
    }
    let again = simulate_truth(&m, &inputs, 6, 3).unwrap();
    assert_eq!(again.outputs, t.outputs);
    let other = simulate_truth(&m, &inputs, 6, 4).unwrap();
    assert_ne!(other.outputs, t.outputs);
    assert!(simulate_truth(&m, &inputs, 7, 3).is_err());
}

#[test]
fn input_schedule_windows() {
    let on: Vec<[f64; 2]> = (0..18).map(input_sequence).collect();
    assert_eq!(on[1], [0.0, 0.0]);
    assert_eq!(on[2], [1.0, 0.0]);
    assert_eq!(on[7], [1.0, 0.0]);
    assert_eq!(on[8], [0.0, 1.0]);
    assert_eq!(on[15], [0.0, 1.0]);
    assert_eq!(on[16], [0.0, 0.0]);
}

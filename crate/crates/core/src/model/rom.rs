use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linop::LinearOperator;

use super::SystemModel;

/// Stacked impulse and step responses of each input, `steps` states each
/// (the zero initial state is not included).
pub fn input_response_snapshots(model: &SystemModel, steps: usize) -> Result<DMatrix<f64>> {
    let n = model.n_x();
    let m = model.n_u();
    let mut columns = Vec::with_capacity(2 * m * steps);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let zero = vec![0.0; m];
        for persistent in [false, true] {
            let mut x = vec![0.0; n];
            for k in 0..steps {
                let u = if persistent || k == 0 { &e } else { &zero };
                x = model.predict(&x, u)?;
                columns.push(x.clone());
            }
        }
    }
    Ok(DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]))
}

/// Orthonormal POD basis holding `energy_fraction` of the snapshot energy.
///
/// Singular values below `σ_max · max(n, m) · ε` are treated as zero.
pub fn pod_reduce(snapshots: &DMatrix<f64>, energy_fraction: f64) -> Result<DMatrix<f64>> {
    let (n, m) = snapshots.shape();
    if m < 2 {
        return Err(Error::Construction(format!(
            "POD needs at least 2 snapshots, got {m}"
        )));
    }
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::Construction(format!(
            "energy fraction must lie in (0, 1], got {energy_fraction}"
        )));
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite snapshot entry".into()));
    }
    let svd = snapshots.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma_max = svd.singular_values[order[0]];
    if sigma_max == 0.0 {
        return Err(Error::Construction("all snapshots are zero".into()));
    }
    let cutoff = sigma_max * n.max(m) as f64 * f64::EPSILON;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let total: f64 = kept.iter().map(|&i| svd.singular_values[i].powi(2)).sum();
    let mut acc = 0.0;
    let mut rank = kept.len();
    for (r, &i) in kept.iter().enumerate() {
        acc += svd.singular_values[i].powi(2);
        if acc >= energy_fraction * total * (1.0 - 1e-14) {
            rank = r + 1;
            break;
        }
    }
    let mut v = DMatrix::zeros(n, rank);
    for (c, &i) in kept[..rank].iter().enumerate() {
        v.set_column(c, &u.column(i));
    }
    Ok(v)
}

/// Dense reduced-order matrices in the coordinates `x ≈ V z`.
#[derive(Debug, Clone)]
pub struct RomMatrices {
    pub v: DMatrix<f64>,
    pub a_r: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub q_r: DMatrix<f64>,
}

fn apply_columns(op: &LinearOperator, v: &DMatrix<f64>, adjoint: bool) -> Result<DMatrix<f64>> {
    let rows = if adjoint { op.cols() } else { op.rows() };
    let mut out = DMatrix::zeros(rows, v.ncols());
    for j in 0..v.ncols() {
        let col: Vec<f64> = v.column(j).iter().copied().collect();
        let image = if adjoint { op.apply_adjoint(&col)? } else { op.apply(&col)? };
        out.set_column(j, &nalgebra::DVector::from_vec(image));
    }
    Ok(out)
}

pub fn project_rom(model: &SystemModel, v: &DMatrix<f64>) -> Result<RomMatrices> {
    if v.nrows() != model.n_x() {
        return Err(Error::shape("projection rows", model.n_x(), v.nrows()));
    }
    let vt = v.transpose();
    let av = apply_columns(&model.a, v, false)?;
    // Vᵀ L_Q L_Qᵀ V
    let ltv = apply_columns(&model.l_q, v, true)?;
    let q_r = ltv.transpose() * &ltv;
    Ok(RomMatrices {
        a_r: &vt * av,
        b_r: &vt * &model.b,
        c_r: apply_columns(&model.c, v, false)?,
        q_r: (&q_r + q_r.transpose()) * 0.5,
        v: v.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_snapshot_gives_rank_one() {
        let x = nalgebra::DVector::from_vec(vec![3.0, 0.0, 4.0]);
        let s = DMatrix::from_columns(&[x.clone(), x.clone(), x]);
        let v = pod_reduce(&s, 0.999).unwrap();
        assert_eq!(v.ncols(), 1);
        let expected = [0.6, 0.0, 0.8];
        let sign = v[(0, 0)].signum();
        for i in 0..3 {
            assert!((sign * v[(i, 0)] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_cut_drops_tiny_mode() {
        let mut s = DMatrix::zeros(4, 2);
        s[(0, 0)] = 10.0;
        s[(1, 1)] = 1e-9;
        assert_eq!(pod_reduce(&s, 0.999).unwrap().ncols(), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = DMatrix::from_element(3, 1, 1.0);
        assert!(pod_reduce(&s, 0.9).is_err());
        let s = DMatrix::from_element(3, 2, 1.0);
        assert!(pod_reduce(&s, 0.0).is_err());
        assert!(pod_reduce(&s, 1.5).is_err());
    }
}

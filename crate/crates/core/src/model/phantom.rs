//! Synthetic two-material phantom: a soft-tissue body inside a plastic shell,
//! with plastic "pelvis" and "spine" inclusions, and two focused heat loads.
//!
//! Geometry is defined in normalized coordinates `u_d = (i_d + 1/2) / n_d`
//! over the first two axes; a third axis (if any) repeats the 2-D layout.

use crate::linop::Grid;

pub const SOFT_TISSUE: usize = 0;
pub const PLASTIC: usize = 1;

fn normalized(grid: &Grid, flat: usize) -> Vec<f64> {
    grid.unravel(flat)
        .iter()
        .zip(grid.shape())
        .map(|(&i, &n)| (i as f64 + 0.5) / n as f64)
        .collect()
}

fn inside_ellipse(p: (f64, f64), center: (f64, f64), radii: (f64, f64)) -> bool {
    let a = (p.0 - center.0) / radii.0;
    let b = (p.1 - center.1) / radii.1;
    a * a + b * b <= 1.0
}

/// Material label per grid point.
pub fn labels(grid: &Grid) -> Vec<usize> {
    (0..grid.len())
        .map(|i| {
            let u = normalized(grid, i);
            let plastic = if grid.ndim() == 1 {
                let x = u[0];
                !(0.06..=0.94).contains(&x) || (0.62..=0.72).contains(&x)
            } else {
                let p = (u[0], u[1]);
                let shell = !inside_ellipse(p, (0.5, 0.5), (0.44, 0.46));
                let pelvis = inside_ellipse(p, (0.64, 0.28), (0.10, 0.08))
                    || inside_ellipse(p, (0.64, 0.72), (0.10, 0.08));
                let spine = inside_ellipse(p, (0.82, 0.5), (0.06, 0.06));
                shell || pelvis || spine
            };
            if plastic {
                PLASTIC
            } else {
                SOFT_TISSUE
            }
        })
        .collect()
}

/// Normalized focus centers of the right (`b_1`) and left (`b_2`) loads.
pub fn load_centers(ndim: usize) -> [Vec<f64>; 2] {
    if ndim == 1 {
        [vec![0.3], vec![0.5]]
    } else {
        [vec![0.42, 0.66], vec![0.42, 0.34]]
    }
}

/// Unnormalized Gaussian focus shape, restricted to soft tissue.
pub fn focus_shape(grid: &Grid, labels: &[usize], center: &[f64], width: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            if labels[i] != SOFT_TISSUE {
                return 0.0;
            }
            let u = normalized(grid, i);
            let r2: f64 = center
                .iter()
                .zip(&u)
                .map(|(c, x)| (x - c) * (x - c))
                .sum();
            (-r2 / (width * width)).exp()
        })
        .collect()
}

/// Six soft-tissue probe positions: two near the foci, two mid-body, two far.
pub fn probe_positions(ndim: usize) -> Vec<Vec<f64>> {
    if ndim == 1 {
        vec![
            vec![0.3],
            vec![0.5],
            vec![0.4],
            vec![0.2],
            vec![0.85],
            vec![0.1],
        ]
    } else {
        vec![
            vec![0.42, 0.64],
            vec![0.42, 0.36],
            vec![0.5, 0.5],
            vec![0.3, 0.5],
            vec![0.22, 0.3],
            vec![0.2, 0.74],
        ]
    }
}

/// Nearest grid point carrying `label` to a normalized position (middle of
/// any axes the position does not specify).
pub fn snap_to_label(grid: &Grid, labels: &[usize], pos: &[f64], label: usize) -> Option<usize> {
    let candidates: Vec<usize> = (0..grid.len()).filter(|&i| labels[i] == label).collect();
    snap_to_nearest(grid, &candidates, pos)
}

/// Nearest of `candidates` to a normalized position, measured in cells;
/// ties go to the lowest flat index.
pub fn snap_to_nearest(grid: &Grid, candidates: &[usize], pos: &[f64]) -> Option<usize> {
    let target: Vec<f64> = (0..grid.ndim())
        .map(|d| pos.get(d).copied().unwrap_or(0.5))
        .collect();
    candidates
        .iter()
        .map(|&i| {
            let u = normalized(grid, i);
            let d2: f64 = u
                .iter()
                .zip(&target)
                .zip(grid.shape())
                .map(|((a, b), &n)| {
                    let cells = (a - b) * n as f64;
                    cells * cells
                })
                .sum();
            (i, d2)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_has_both_materials_and_soft_probes() {
        for shape in [vec![32], vec![24, 24], vec![12, 12, 3]] {
            let n = shape.len();
            let grid = Grid::new(shape, vec![0.01; n]).unwrap();
            let l = labels(&grid);
            let soft = l.iter().filter(|&&x| x == SOFT_TISSUE).count();
            assert!(soft > 0 && soft < grid.len());
            for p in probe_positions(n) {
                let i = snap_to_label(&grid, &l, &p, SOFT_TISSUE).unwrap();
                assert_eq!(l[i], SOFT_TISSUE);
            }
        }
    }
}

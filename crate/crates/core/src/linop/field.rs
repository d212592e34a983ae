//! Rectilinear grids, scalar fields living on them, and material masks.
//!
//! Flat indices are row-major over the axes: axis 1 varies slowest, the last
//! axis fastest. Every operator, file format, and Kronecker factor ordering in
//! the crate uses this layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Construction(format!(
                "grid dimension must be 1, 2 or 3, got {}",
                shape.len()
            )));
        }
        if spacing.len() != shape.len() {
            return Err(Error::shape("grid spacing", shape.len(), spacing.len()));
        }
        if shape.contains(&0) {
            return Err(Error::Construction("grid axes must be non-empty".into()));
        }
        if spacing.iter().any(|&dx| !(dx > 0.0 && dx.is_finite())) {
            return Err(Error::Construction(
                "grid spacing must be strictly positive".into(),
            ));
        }
        Ok(Self { shape, spacing })
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides (in elements) for each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.ndim()];
        for d in (0..self.ndim().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.shape[d + 1];
        }
        strides
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.ndim()];
        for d in (0..self.ndim()).rev() {
            idx[d] = flat % self.shape[d];
            flat /= self.shape[d];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Physical position of grid point `flat`, with point 0 at the origin.
    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, &dx)| i as f64 * dx)
            .collect()
    }

    /// Physical extent `n_d * dx_d` along every axis.
    pub fn extent(&self) -> Vec<f64> {
        self.shape
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &dx)| n as f64 * dx)
            .collect()
    }

    pub(crate) fn check_len(&self, context: &str, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::shape(context, self.len(), len));
        }
        Ok(())
    }
}

/// Values on a rectilinear grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len("scalar field values", values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Restrict a field to the hyperplane `axis = index`, dropping that axis.
    pub fn slice(&self, axis: usize, index: usize) -> Result<ScalarField> {
        let d = self.grid.ndim();
        if axis >= d {
            return Err(Error::Construction(format!(
                "slice axis {axis} out of range for a {d}-D field"
            )));
        }
        if index >= self.grid.shape[axis] {
            return Err(Error::Construction(format!(
                "slice index {index} out of range (axis {axis} has {} points)",
                self.grid.shape[axis]
            )));
        }
        if d == 1 {
            return Err(Error::Construction("cannot slice a 1-D field".into()));
        }
        let keep: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
        let grid = Grid::new(
            keep.iter().map(|&a| self.grid.shape[a]).collect(),
            keep.iter().map(|&a| self.grid.spacing[a]).collect(),
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for flat in 0..grid.len() {
            let sub = grid.unravel(flat);
            let mut full = Vec::with_capacity(d);
            let mut it = sub.iter();
            for a in 0..d {
                full.push(if a == axis { index } else { *it.next().unwrap() });
            }
            values.push(self.values[self.grid.ravel(&full)]);
        }
        ScalarField::new(grid, values)
    }

    fn header_dims(&self) -> String {
        let mut s = format!("{}", self.grid.ndim());
        for n in &self.grid.shape {
            s.push_str(&format!(" {n}"));
        }
        for dx in &self.grid.spacing {
            s.push_str(&format!(" {dx}"));
        }
        s
    }

    /// Encode as SF1: one ASCII header line followed by little-endian f64 values.
    pub fn to_sf1_bytes(&self) -> Vec<u8> {
        let mut out = format!("SF1 {}\n", self.header_dims()).into_bytes();
        out.reserve(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_sf1_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing SF1 header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| bad("SF1 header is not ASCII".into()))?;
        let grid = parse_dims(header, "SF1").map_err(bad)?;
        let body = &bytes[nl + 1..];
        if body.len() != grid.len() * 8 {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                grid.len() * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ScalarField::new(grid, values)
    }

    pub fn write_sf1(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sf1_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_sf1(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_sf1_bytes(&bytes, path)
    }

    /// CSV export: a `# SF1-csv` header line, then one value per line in flat order.
    pub fn to_csv_string(&self) -> String {
        let shape = join(&self.grid.shape, "x");
        let spacing = join(&self.grid.spacing, "x");
        let mut s = format!("# SF1-csv shape={shape} spacing={spacing}\n");
        for v in &self.values {
            // Debug formatting of f64 is the shortest round-trip representation.
            s.push_str(&format!("{v:?}\n"));
        }
        s
    }

    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty CSV file".into()))?;
        let rest = header
            .strip_prefix("# SF1-csv")
            .ok_or_else(|| bad("missing `# SF1-csv` header".into()))?;
        let mut shape = None;
        let mut spacing = None;
        for tok in rest.split_whitespace() {
            if let Some(v) = tok.strip_prefix("shape=") {
                shape = Some(
                    v.split('x')
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape `{v}`")))?,
                );
            } else if let Some(v) = tok.strip_prefix("spacing=") {
                spacing = Some(
                    v.split('x')
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad spacing `{v}`")))?,
                );
            }
        }
        let shape = shape.ok_or_else(|| bad("header lacks shape=".into()))?;
        let spacing = match spacing {
            Some(s) => s,
            None => vec![1.0; shape.len()],
        };
        let grid = Grid::new(shape, spacing).map_err(|e| bad(e.to_string()))?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        ScalarField::new(grid, values).map_err(|e| bad(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }
}

fn join<T: std::fmt::Display>(xs: &[T], sep: &str) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_dims(header: &str, magic: &str) -> std::result::Result<Grid, String> {
    let mut toks = header.split_ascii_whitespace();
    if toks.next() != Some(magic) {
        return Err(format!("header does not start with `{magic}`"));
    }
    let d: usize = toks
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or("missing dimension count")?;
    if !(1..=3).contains(&d) {
        return Err(format!("unsupported dimension {d}"));
    }
    let shape = (0..d)
        .map(|_| toks.next().and_then(|t| t.parse::<usize>().ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or("bad grid counts")?;
    let spacing = (0..d)
        .map(|_| toks.next().and_then(|t| t.parse::<f64>().ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or("bad grid spacing")?;
    if toks.next().is_some() {
        return Err("trailing tokens in header".into());
    }
    Grid::new(shape, spacing).map_err(|e| e.to_string())
}

/// Pairwise-disjoint binary masks on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    grid: Grid,
    masks: Vec<ScalarField>,
}

impl MaskSet {
    pub fn new(grid: Grid, masks: Vec<ScalarField>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::Construction("mask set is empty".into()));
        }
        for (i, m) in masks.iter().enumerate() {
            if m.grid() != &grid {
                return Err(Error::Construction(format!(
                    "mask {i} lives on a different grid"
                )));
            }
            if let Some(v) = m.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Construction(format!(
                    "mask {i} has non-binary value {v}"
                )));
            }
        }
        for p in 0..grid.len() {
            let owners = masks.iter().filter(|m| m.values()[p] == 1.0).count();
            if owners > 1 {
                return Err(Error::Construction(format!(
                    "masks are not disjoint: grid point {p} belongs to {owners} masks"
                )));
            }
        }
        Ok(Self { grid, masks })
    }

    /// Build one mask per label value `0..count` from a per-point label array.
    pub fn from_labels(grid: Grid, labels: &[usize], count: usize) -> Result<Self> {
        grid.check_len("mask labels", labels.len())?;
        let masks = (0..count)
            .map(|m| {
                let values = labels
                    .iter()
                    .map(|&l| if l == m { 1.0 } else { 0.0 })
                    .collect();
                ScalarField::new(grid.clone(), values)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, masks)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[ScalarField] {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> &ScalarField {
        &self.masks[i]
    }

    /// Index of the mask containing grid point `p`, if any.
    pub fn label_of(&self, p: usize) -> Option<usize> {
        self.masks.iter().position(|m| m.values()[p] == 1.0)
    }

    pub fn indices(&self, i: usize) -> Vec<usize> {
        self.masks[i]
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn covers_grid(&self) -> bool {
        (0..self.grid.len()).all(|p| self.label_of(p).is_some())
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        (0..self.grid.len()).map(|p| self.label_of(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid {
        Grid::new(vec![2, 3], vec![0.5, 0.25]).unwrap()
    }

    #[test]
    fn ravel_unravel_row_major() {
        let g = grid2();
        assert_eq!(g.strides(), vec![3, 1]);
        assert_eq!(g.unravel(4), vec![1, 1]);
        assert_eq!(g.ravel(&[1, 2]), 5);
        assert_eq!(g.position(5), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(vec![], vec![]).is_err());
        assert!(Grid::new(vec![2, 2], vec![1.0]).is_err());
        assert!(Grid::new(vec![2], vec![0.0]).is_err());
        assert!(Grid::new(vec![1, 1, 1, 1], vec![1.0; 4]).is_err());
    }

    #[test]
    fn sf1_round_trip_is_lossless() {
        let g = grid2();
        let vals = vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0, -0.0, 7.0];
        let f = ScalarField::new(g, vals.clone()).unwrap();
        let bytes = f.to_sf1_bytes();
        assert!(bytes.starts_with(b"SF1 2 2 3 0.5 0.25\n"));
        let back = ScalarField::from_sf1_bytes(&bytes, Path::new("mem")).unwrap();
        for (a, b) in back.values().iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.grid(), f.grid());
    }

    #[test]
    fn sf1_rejects_truncated_payload() {
        let f = ScalarField::zeros(grid2());
        let mut bytes = f.to_sf1_bytes();
        bytes.pop();
        assert!(ScalarField::from_sf1_bytes(&bytes, Path::new("mem")).is_err());
    }

    #[test]
    fn csv_of_2x2_field_has_four_rows_in_order() {
        let g = Grid::new(vec![2, 2], vec![1.0, 1.0]).unwrap();
        let f = ScalarField::new(g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let csv = f.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# SF1-csv shape=2x2 spacing=1x1");
        assert_eq!(&lines[1..], &["1.0", "2.0", "3.0", "4.0"]);
        let back = ScalarField::from_csv_str(&csv, Path::new("mem")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn slice_drops_axis() {
        let g = Grid::new(vec![2, 2, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let f = ScalarField::from_fn(g, |r| r[0] + 10.0 * r[1] + 100.0 * r[2]);
        let s = f.slice(1, 1).unwrap();
        assert_eq!(s.grid().shape(), &[2, 3]);
        assert_eq!(s.values(), &[20.0, 320.0, 620.0, 21.0, 321.0, 621.0]);
        assert!(f.slice(1, 2).is_err());
        assert!(f.slice(3, 0).is_err());
    }

    #[test]
    fn mask_set_rejects_overlap_and_non_binary() {
        let g = Grid::new(vec![3], vec![1.0]).unwrap();
        let a = ScalarField::new(g.clone(), vec![1.0, 1.0, 0.0]).unwrap();
        let b = ScalarField::new(g.clone(), vec![0.0, 1.0, 1.0]).unwrap();
        assert!(MaskSet::new(g.clone(), vec![a.clone(), b]).is_err());
        let c = ScalarField::new(g.clone(), vec![0.0, 0.0, 0.5]).unwrap();
        assert!(MaskSet::new(g.clone(), vec![a.clone(), c]).is_err());
        let d = ScalarField::new(g.clone(), vec![0.0, 0.0, 1.0]).unwrap();
        let set = MaskSet::new(g, vec![a, d]).unwrap();
        assert!(set.covers_grid());
        assert_eq!(set.indices(0), vec![0, 1]);
        assert_eq!(set.label_of(2), Some(1));
    }
}

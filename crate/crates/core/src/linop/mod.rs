//! Matrix-free linear operators.
//!
//! A [`LinearOperator`] is an immutable, cheaply clonable handle exposing
//! `apply` and `apply_adjoint`. The building blocks are diagonal scaling,
//! FFT convolution, separable (Kronecker) products, masked kernels and sparse
//! matrices; sums, compositions, scalings and adjoints of them are evaluated
//! lazily.

mod convolution;
pub mod field;
mod masked;
mod separable;
mod sparse;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

pub use convolution::{gaussian_kernel, FftConvolution};
pub use field::{Grid, MaskSet, ScalarField};
pub use masked::MaskedKernel;
pub use separable::Separable;
pub use sparse::CsrMatrix;

use crate::error::{Error, Result};

/// A user-supplied matrix-free map, for operators that are not expressible
/// through the built-in kinds (e.g. "solve a factored system, then scale").
pub trait MatrixFree: Send + Sync {
    fn name(&self) -> &str;
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply_into(&self, v: &[f64], out: &mut [f64]);
    fn apply_adjoint_into(&self, v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    Diagonal,
    Dense,
    Convolution,
    Separable,
    MaskedKernel,
    Sparse,
    Sum,
    Compose,
    Scale,
    Adjoint,
    Custom,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{self:?}").to_lowercase();
        f.write_str(&s)
    }
}

#[derive(Clone)]
enum Node {
    Identity,
    Diagonal(Arc<[f64]>),
    Dense(Arc<DMatrix<f64>>),
    Convolution(Arc<FftConvolution>),
    Separable(Arc<Separable>),
    MaskedKernel(Arc<MaskedKernel>),
    Sparse(Arc<CsrMatrix>),
    Sum(Arc<[LinearOperator]>),
    Compose(Arc<[LinearOperator; 2]>),
    Scale(f64, Arc<LinearOperator>),
    Adjoint(Arc<LinearOperator>),
    Custom(Arc<dyn MatrixFree>),
}

#[derive(Clone)]
pub struct LinearOperator {
    rows: usize,
    cols: usize,
    node: Node,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LinearOperator({} {}x{})", self.kind(), self.rows, self.cols)
    }
}

/// Description of a single building block, see [`build_block`].
#[derive(Debug, Clone)]
pub enum BlockSpec {
    Identity(usize),
    /// Pointwise multiplication by a field: `L(i,i) = l(r_i)`.
    Diagonal(ScalarField),
    /// `L(i,j) = l(r_i - r_j)` with a kernel tabulated on grid offsets.
    Convolution {
        kernel: ScalarField,
        boundary: Boundary,
    },
    /// Kronecker product of one dense square factor per grid axis.
    Separable(Vec<DMatrix<f64>>),
    Sparse {
        rows: usize,
        cols: usize,
        triplets: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Linear convolution: values outside the grid are treated as zero.
    #[default]
    ZeroPad,
}

/// Lazy combinators over existing operators, see [`combine`].
#[derive(Debug, Clone)]
pub enum Combination {
    Sum(Vec<LinearOperator>),
    /// `Compose(a, b)` applies `b` first, then `a`.
    Compose(LinearOperator, LinearOperator),
    Scale(LinearOperator, f64),
    Adjoint(LinearOperator),
}

pub fn build_block(spec: BlockSpec, grid: &Grid) -> Result<LinearOperator> {
    match spec {
        BlockSpec::Identity(n) => Ok(LinearOperator::identity(n)),
        BlockSpec::Diagonal(field) => {
            if field.grid().shape() != grid.shape() {
                return Err(Error::shape(
                    "diagonal block field",
                    format!("{:?}", grid.shape()),
                    format!("{:?}", field.grid().shape()),
                ));
            }
            Ok(LinearOperator::diagonal(field.into_values()))
        }
        BlockSpec::Convolution { kernel, boundary } => {
            let Boundary::ZeroPad = boundary;
            LinearOperator::convolution(grid, &kernel)
        }
        BlockSpec::Separable(factors) => LinearOperator::separable(grid, factors),
        BlockSpec::Sparse {
            rows,
            cols,
            triplets,
        } => LinearOperator::sparse(rows, cols, &triplets),
    }
}

pub fn combine(combination: Combination) -> Result<LinearOperator> {
    match combination {
        Combination::Sum(parts) => LinearOperator::sum(parts),
        Combination::Compose(a, b) => a.compose(&b),
        Combination::Scale(a, s) => Ok(a.scale(s)),
        Combination::Adjoint(a) => Ok(a.adjoint()),
    }
}

impl LinearOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            node: Node::Identity,
        }
    }

    /// The zero map, represented as a scaled identity.
    pub fn zero(n: usize) -> Self {
        Self::identity(n).scale(0.0)
    }

    pub fn diagonal(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            rows: n,
            cols: n,
            node: Node::Diagonal(values.into()),
        }
    }

    pub fn dense(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            node: Node::Dense(Arc::new(m)),
        }
    }

    pub fn convolution(grid: &Grid, kernel: &ScalarField) -> Result<Self> {
        let conv = FftConvolution::new(grid, kernel)?;
        Ok(Self {
            rows: grid.len(),
            cols: grid.len(),
            node: Node::Convolution(Arc::new(conv)),
        })
    }

    pub fn separable(grid: &Grid, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let sep = Separable::new(grid, factors)?;
        Ok(Self {
            rows: grid.len(),
            cols: grid.len(),
            node: Node::Separable(Arc::new(sep)),
        })
    }

    /// Masked Gaussian kernel `v -> sum_i phi_i * (k * (phi_i * v))`.
    pub fn masked_kernel(masks: &MaskSet, gamma: f64, sigma: f64) -> Result<Self> {
        let mk = MaskedKernel::gaussian(masks, gamma, sigma)?;
        let n = masks.grid().len();
        Ok(Self {
            rows: n,
            cols: n,
            node: Node::MaskedKernel(Arc::new(mk)),
        })
    }

    pub fn sparse(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let csr = CsrMatrix::from_triplets(rows, cols, triplets)?;
        Ok(Self {
            rows,
            cols,
            node: Node::Sparse(Arc::new(csr)),
        })
    }

    /// Row selection: output `k` is input `indices[k]`.
    pub fn selection(n: usize, indices: &[usize]) -> Result<Self> {
        let triplets: Vec<_> = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, i, 1.0))
            .collect();
        Self::sparse(indices.len(), n, &triplets)
    }

    pub fn custom(op: Arc<dyn MatrixFree>) -> Self {
        Self {
            rows: op.rows(),
            cols: op.cols(),
            node: Node::Custom(op),
        }
    }

    pub fn sum(parts: Vec<LinearOperator>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Construction("sum of zero operators".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        for p in &parts[1..] {
            if p.rows != rows || p.cols != cols {
                return Err(Error::shape(
                    "sum operands",
                    format!("{rows}x{cols}"),
                    format!("{}x{}", p.rows, p.cols),
                ));
            }
        }
        Ok(Self {
            rows,
            cols,
            node: Node::Sum(parts.into()),
        })
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &LinearOperator) -> Result<Self> {
        if self.cols != inner.rows {
            return Err(Error::shape(
                format!("compose({}, {})", self.kind(), inner.kind()),
                format!("inner rows = {}", self.cols),
                inner.rows,
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: inner.cols,
            node: Node::Compose(Arc::new([self.clone(), inner.clone()])),
        })
    }

    /// Compose a chain `ops[0] ∘ ops[1] ∘ ... ∘ ops[n-1]`.
    pub fn chain(ops: &[LinearOperator]) -> Result<Self> {
        let (last, rest) = ops
            .split_last()
            .ok_or_else(|| Error::Construction("empty operator chain".into()))?;
        rest.iter()
            .rev()
            .try_fold(last.clone(), |acc, op| op.compose(&acc))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            node: Node::Scale(s, Arc::new(self.clone())),
        }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            node: Node::Adjoint(Arc::new(self.clone())),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn kind(&self) -> OperatorKind {
        match &self.node {
            Node::Identity => OperatorKind::Identity,
            Node::Diagonal(_) => OperatorKind::Diagonal,
            Node::Dense(_) => OperatorKind::Dense,
            Node::Convolution(_) => OperatorKind::Convolution,
            Node::Separable(_) => OperatorKind::Separable,
            Node::MaskedKernel(_) => OperatorKind::MaskedKernel,
            Node::Sparse(_) => OperatorKind::Sparse,
            Node::Sum(_) => OperatorKind::Sum,
            Node::Compose(_) => OperatorKind::Compose,
            Node::Scale(..) => OperatorKind::Scale,
            Node::Adjoint(_) => OperatorKind::Adjoint,
            Node::Custom(_) => OperatorKind::Custom,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::shape(
                format!("apply({})", self.kind()),
                self.cols,
                v.len(),
            ));
        }
        let mut out = vec![0.0; self.rows];
        self.eval(v, &mut out, false);
        Ok(out)
    }

    pub fn apply_adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::shape(
                format!("apply_adjoint({})", self.kind()),
                self.rows,
                v.len(),
            ));
        }
        let mut out = vec![0.0; self.cols];
        self.eval(v, &mut out, true);
        Ok(out)
    }

    /// Dimensions must already be checked. `out` is fully overwritten.
    fn eval(&self, v: &[f64], out: &mut [f64], adjoint: bool) {
        match &self.node {
            Node::Identity => out.copy_from_slice(v),
            Node::Diagonal(d) => {
                for ((o, &x), &s) in out.iter_mut().zip(v).zip(d.iter()) {
                    *o = s * x;
                }
            }
            Node::Dense(m) => {
                let x = nalgebra::DVectorView::from_slice(v, v.len());
                let y = if adjoint { m.tr_mul(&x) } else { &**m * x };
                out.copy_from_slice(y.as_slice());
            }
            Node::Convolution(c) => {
                if adjoint {
                    c.apply_adjoint_into(v, out)
                } else {
                    c.apply_into(v, out)
                }
            }
            Node::Separable(s) => s.apply_into(v, out, adjoint),
            // Symmetric by construction.
            Node::MaskedKernel(k) => k.apply_into(v, out),
            Node::Sparse(m) => {
                if adjoint {
                    m.apply_transpose_into(v, out)
                } else {
                    m.apply_into(v, out)
                }
            }
            Node::Sum(parts) => {
                parts[0].eval(v, out, adjoint);
                let mut tmp = vec![0.0; out.len()];
                for p in &parts[1..] {
                    p.eval(v, &mut tmp, adjoint);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += t;
                    }
                }
            }
            Node::Compose(pair) => {
                let [outer, inner] = &**pair;
                if adjoint {
                    let mut mid = vec![0.0; outer.cols];
                    outer.eval(v, &mut mid, true);
                    inner.eval(&mid, out, true);
                } else {
                    let mut mid = vec![0.0; inner.rows];
                    inner.eval(v, &mut mid, false);
                    outer.eval(&mid, out, false);
                }
            }
            Node::Scale(s, op) => {
                if *s == 0.0 {
                    out.fill(0.0);
                } else {
                    op.eval(v, out, adjoint);
                    for o in out.iter_mut() {
                        *o *= s;
                    }
                }
            }
            Node::Adjoint(op) => op.eval(v, out, !adjoint),
            Node::Custom(op) => {
                if adjoint {
                    op.apply_adjoint_into(v, out)
                } else {
                    op.apply_into(v, out)
                }
            }
        }
    }

    /// Materialize the operator by probing unit vectors (small sizes only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        let mut e = vec![0.0; self.cols];
        let mut col = vec![0.0; self.rows];
        for j in 0..self.cols {
            e[j] = 1.0;
            self.eval(&e, &mut col, false);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

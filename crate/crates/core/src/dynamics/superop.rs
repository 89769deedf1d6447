use alloc::vec;

use nalgebra::{DMatrix, DVector};

use super::generator::{unvec, vec_of, Generator};
use crate::operator::{DensityMatrix, Operator, SpaceLayout};
use crate::sparse::CsrMatrix;
use crate::{Error, Result, C64, ZERO};

/// Liouvillian on column-stacked density matrices (`vec index = i + N j`).
///
/// Stored sparse together with the generator it was built from; the
/// generator is what the steady-state preconditioner needs.
#[derive(Debug, Clone)]
pub struct Superoperator {
    layout: SpaceLayout,
    matrix: CsrMatrix,
    generator: Generator,
}

/// Builds the Liouvillian of `-i[H, rho] + sum_k D[c_k] rho`.
pub fn liouvillian(h: &Operator, c_ops: &[Operator]) -> Result<Superoperator> {
    for c in c_ops {
        h.layout().ensure_same(c.layout()).map_err(|e| match e {
            Error::LayoutMismatch { expected, found } => Error::InvalidArgument(alloc::format!(
                "collapse operator layout {found:?} differs from Hamiltonian layout {expected:?}"
            )),
            other => other,
        })?;
    }
    Superoperator::from_generator(Generator::time_independent(h, c_ops)?)
}

impl Superoperator {
    /// Freezes a (possibly time-dependent) generator at `t = 0`.
    pub fn from_generator(generator: Generator) -> Result<Self> {
        Ok(Self {
            layout: generator.layout().clone(),
            matrix: generator.superoperator_matrix(0.0),
            generator,
        })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    /// Hilbert-space dimension `N`; the superoperator is `N^2 x N^2`.
    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.matrix.to_dense()
    }

    /// `L vec(rho)`.
    pub fn apply_vec(&self, v: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(v.len());
        self.matrix.matvec(v.as_slice(), out.as_mut_slice());
        out
    }

    /// `L rho` as a matrix.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        unvec(self.apply_vec(&vec_of(rho)).as_slice(), self.dim())
    }

    /// `||L vec(rho)||_2`.
    pub fn residual(&self, rho: &DensityMatrix) -> f64 {
        self.apply_vec(&vec_of(rho.matrix())).norm()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Largest entry of the row vector `<<I| L`; zero for a trace-preserving
    /// generator.
    pub fn trace_defect(&self) -> f64 {
        let n = self.dim();
        let mut acc = vec![ZERO; n * n];
        for (r, c, v) in self.matrix.iter() {
            if r % (n + 1) == 0 {
                acc[c] += v;
            }
        }
        acc.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

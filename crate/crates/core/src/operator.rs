//! Composite Hilbert space `lambda (x) mode a (x) mode b`, elementary
//! operators on it, and the state types that live there.
//!
//! Operators are stored densely. Kronecker order is the factor order of the
//! [`SpaceLayout`]: the first factor is the most significant index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result, C64, ONE, ZERO};

/// Basis states of the lambda emitter. The order is fixed project-wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    G = 0,
    H = 1,
    E = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::G, Level::H, Level::E];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Dimension of the lambda factor.
pub const LAMBDA_DIM: usize = 3;

/// Factor dimensions of a composite space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpaceLayout {
    dims: Vec<usize>,
    total: usize,
}

impl SpaceLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDimension(
                "layout needs at least one factor".into(),
            ));
        }
        let mut total = 1usize;
        for &d in &dims {
            if d == 0 {
                return Err(Error::InvalidDimension(format!(
                    "zero-dimensional factor in {dims:?}"
                )));
            }
            total = total.checked_mul(d).ok_or_else(|| {
                Error::InvalidDimension(format!("dimension overflow for {dims:?}"))
            })?;
        }
        Ok(Self { dims, total })
    }

    /// `lambda (x) a (x) b` with Fock cutoffs `n_a`, `n_b`.
    pub fn switch(n_a: usize, n_b: usize) -> Result<Self> {
        Self::new(vec![LAMBDA_DIM, n_a, n_b])
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Flat index of a product basis state.
    pub fn index(&self, factors: &[usize]) -> Result<usize> {
        if factors.len() != self.dims.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} factor indices, got {}",
                self.dims.len(),
                factors.len()
            )));
        }
        let mut idx = 0;
        for (&f, &d) in factors.iter().zip(&self.dims) {
            if f >= d {
                return Err(Error::InvalidArgument(format!(
                    "factor index {f} out of range 0..{d}"
                )));
            }
            idx = idx * d + f;
        }
        Ok(idx)
    }

    /// Inverse of [`SpaceLayout::index`].
    pub fn factors(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in self.dims.iter().enumerate().rev() {
            out[slot] = index % d;
            index /= d;
        }
        out
    }

    pub(crate) fn ensure_same(&self, other: &SpaceLayout) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::LayoutMismatch {
                expected: self.dims.clone(),
                found: other.dims.clone(),
            })
        }
    }
}

/// Dense complex operator tagged with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn new(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let n = layout.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidDimension(format!(
                "matrix is {}x{} but layout {:?} needs {n}x{n}",
                matrix.nrows(),
                matrix.ncols(),
                layout.dims()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let n = layout.total();
        Self {
            layout: layout.clone(),
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let n = layout.total();
        Self {
            layout: layout.clone(),
            matrix: DMatrix::identity(n, n),
        }
    }

    /// Single-factor operator from an explicit matrix.
    pub fn single(matrix: DMatrix<C64>) -> Result<Self> {
        let layout = SpaceLayout::single(matrix.nrows())?;
        Self::new(layout, matrix)
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * factor,
        }
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs_diff(&self.matrix, &other.matrix)
    }

    /// Largest entry modulus of `self - self^dagger`.
    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.matrix)
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| *z == ZERO)
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        }
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        self.layout.ensure_same(&state.layout)?;
        Ok(StateVector {
            layout: self.layout.clone(),
            amplitudes: &self.matrix * &state.amplitudes,
        })
    }

    pub fn checked_mul(&self, rhs: &Operator) -> Result<Operator> {
        self.layout.ensure_same(&rhs.layout)?;
        Ok(self * rhs)
    }

    pub fn checked_add(&self, rhs: &Operator) -> Result<Operator> {
        self.layout.ensure_same(&rhs.layout)?;
        Ok(self + rhs)
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale(C64::new(rhs, 0.0))
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale(-ONE)
    }
}

/// Bosonic annihilation operator truncated to `cutoff` Fock states.
pub fn annihilation(cutoff: usize) -> Result<Operator> {
    if cutoff == 0 {
        return Err(Error::InvalidDimension(
            "Fock cutoff must be at least 1".into(),
        ));
    }
    let mut m = DMatrix::zeros(cutoff, cutoff);
    for n in 1..cutoff {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Operator::single(m)
}

/// Single-factor identity.
pub fn identity(dim: usize) -> Result<Operator> {
    Ok(Operator::identity(&SpaceLayout::single(dim)?))
}

/// `|to><from|` on the lambda factor.
pub fn transition(to: Level, from: Level) -> Operator {
    let mut m = DMatrix::zeros(LAMBDA_DIM, LAMBDA_DIM);
    m[(to.index(), from.index())] = ONE;
    Operator::single(m).expect("lambda factor is non-empty")
}

/// Kronecker product in list order.
pub fn tensor(ops: &[Operator]) -> Result<Operator> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("tensor of an empty operator list".into()))?;
    let mut dims = first.layout.dims().to_vec();
    let mut matrix = first.matrix.clone();
    for op in rest {
        dims.extend_from_slice(op.layout.dims());
        // validates the combined size before allocating
        let layout = SpaceLayout::new(dims.clone())?;
        layout
            .total()
            .checked_mul(layout.total())
            .ok_or_else(|| Error::InvalidDimension(format!("operator on {dims:?} is too large")))?;
        matrix = matrix.kronecker(&op.matrix);
    }
    Operator::new(SpaceLayout::new(dims)?, matrix)
}

/// Places a single-factor operator on `slot`, identity elsewhere.
pub fn embed(op: &Operator, slot: usize, layout: &SpaceLayout) -> Result<Operator> {
    let dims = layout.dims();
    if slot >= dims.len() {
        return Err(Error::InvalidArgument(format!(
            "slot {slot} out of range for layout {dims:?}"
        )));
    }
    if op.dim() != dims[slot] {
        return Err(Error::InvalidArgument(format!(
            "operator dimension {} does not match factor {slot} of {dims:?}",
            op.dim()
        )));
    }
    let factors: Vec<Operator> = dims
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if k == slot {
                Operator::single(op.matrix.clone())
            } else {
                identity(d)
            }
        })
        .collect::<Result<_>>()?;
    tensor(&factors)
}

/// Pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: SpaceLayout,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(layout: SpaceLayout, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total() {
            return Err(Error::InvalidDimension(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Product basis state with the given factor indices.
    pub fn basis(layout: &SpaceLayout, factors: &[usize]) -> Result<Self> {
        let idx = layout.index(factors)?;
        let mut amplitudes = DVector::zeros(layout.total());
        amplitudes[idx] = ONE;
        Ok(Self {
            layout: layout.clone(),
            amplitudes,
        })
    }

    /// Tensor product of single- or multi-factor states, in order.
    pub fn product(states: &[StateVector]) -> Result<Self> {
        let (first, rest) = states
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("product of an empty state list".into()))?;
        let mut dims = first.layout.dims().to_vec();
        let mut amps = first.amplitudes.clone();
        for s in rest {
            dims.extend_from_slice(s.layout.dims());
            amps = amps.kronecker(&s.amplitudes);
        }
        Self::new(SpaceLayout::new(dims)?, amps)
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> DVector<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite state".into(),
            ));
        }
        self.amplitudes /= C64::new(n, 0.0);
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.layout.ensure_same(&other.layout)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `<psi|op|psi>` (not divided by the norm).
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        self.layout.ensure_same(op.layout())?;
        Ok(self.amplitudes.dotc(&(op.matrix() * &self.amplitudes)))
    }
}

/// Truncated coherent state `sum_n alpha^n / sqrt(n!) |n>`, renormalized
/// after truncation.
pub fn coherent_state(cutoff: usize, amplitude: C64) -> Result<StateVector> {
    if cutoff == 0 {
        return Err(Error::InvalidDimension(
            "Fock cutoff must be at least 1".into(),
        ));
    }
    let mut amps = DVector::zeros(cutoff);
    let mut c = C64::new((-0.5 * amplitude.norm_sqr()).exp(), 0.0);
    let mut weight = 0.0;
    for n in 0..cutoff {
        if n > 0 {
            c = c * amplitude / (n as f64).sqrt();
        }
        amps[n] = c;
        weight += c.norm_sqr();
    }
    let truncated = 1.0 - weight;
    if truncated > 1e-6 {
        log::warn!(
            "coherent state |alpha|^2 = {} loses weight {truncated:.3e} at cutoff {cutoff}",
            amplitude.norm_sqr()
        );
    }
    StateVector::new(SpaceLayout::single(cutoff)?, amps)?.normalized()
}

/// Hermiticity tolerance for density matrices.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-9;
/// Smallest admissible eigenvalue for density matrices.
pub const POSITIVITY_TOL: f64 = -1e-8;

/// Mixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

/// Measured deviations of a density matrix from the physical set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDiagnostics {
    pub hermitian_defect: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl StateDiagnostics {
    pub fn passes(&self) -> bool {
        self.hermitian_defect <= HERMITIAN_TOL
            && self.trace_error <= TRACE_TOL
            && self.min_eigenvalue >= POSITIVITY_TOL
    }
}

impl DensityMatrix {
    /// Wraps a matrix without checking physicality.
    pub fn new(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let n = layout.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidDimension(format!(
                "density matrix is {}x{} but the layout needs {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn from_pure(state: &StateVector) -> Self {
        let a = state.amplitudes();
        Self {
            layout: state.layout.clone(),
            matrix: a * a.adjoint(),
        }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `tr(op rho)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        self.layout.ensure_same(op.layout())?;
        Ok(trace_of_product(op.matrix(), &self.matrix))
    }

    /// Real part of `tr(op rho)`, for Hermitian observables.
    pub fn expect_real(&self, op: &Operator) -> f64 {
        trace_of_product(op.matrix(), &self.matrix).re
    }

    /// `<psi|rho|psi>` for a normalized `psi`.
    pub fn fidelity_pure(&self, state: &StateVector) -> Result<f64> {
        self.layout.ensure_same(state.layout())?;
        let a = state.amplitudes();
        Ok(a.dotc(&(&self.matrix * a)).re)
    }

    /// `0.5 * || rho - sigma ||_1`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        self.layout.ensure_same(&other.layout)?;
        let mut diff = &self.matrix - &other.matrix;
        symmetrize(&mut diff);
        let eig = nalgebra::SymmetricEigen::new(diff);
        Ok(0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let mut h = self.matrix.clone();
        symmetrize(&mut h);
        nalgebra::SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        StateDiagnostics {
            hermitian_defect: self.hermitian_defect(),
            trace_error: (self.trace() - ONE).norm(),
            min_eigenvalue: self.min_eigenvalue(),
        }
    }

    /// Hermiticity, unit trace and positivity gate.
    pub fn check(&self) -> Result<StateDiagnostics> {
        let d = self.diagnostics();
        if d.passes() {
            Ok(d)
        } else {
            Err(Error::Invariant(format!(
                "density matrix fails the physicality gate: {d:?}"
            )))
        }
    }

    /// Replaces `rho` by `(rho + rho^dagger) / 2`.
    pub fn hermitize(&mut self) {
        symmetrize(&mut self.matrix);
    }

    /// Populations of the diagonal basis states.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|k| self.matrix[(k, k)].re)
            .collect()
    }
}

pub(crate) fn trace_of_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    // tr(AB) = sum_ij A_ij B_ji
    let n = a.nrows();
    let mut acc = ZERO;
    for j in 0..n {
        for i in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub(crate) fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
        m[(j, j)] = C64::new(m[(j, j)].re, 0.0);
    }
}

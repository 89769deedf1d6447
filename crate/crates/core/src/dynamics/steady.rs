use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use super::generator::{unvec, vec_of};
use super::superop::{liouvillian, Superoperator};
use crate::linalg::{Gmres, SylvesterPreconditioner};
use crate::operator::{DensityMatrix, Operator, SpaceLayout, StateDiagnostics};
use crate::{Error, Result, C64, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyMethod {
    /// Dense for small spaces, Krylov otherwise.
    Auto,
    /// Trace-row replacement and a dense LU solve, with an SVD rank check.
    Dense,
    /// Bordered system solved by preconditioned GMRES.
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    pub method: SteadyMethod,
    pub gmres: Gmres,
    /// Shift of the Sylvester preconditioner.
    pub sigma: f64,
    /// Repeat the Krylov solve with a second border to detect a degenerate
    /// steady-state manifold.
    pub check_uniqueness: bool,
    /// Bound on `||L vec(rho)|| / ||L||_F`.
    pub residual_tol: f64,
    /// Largest Hilbert-space dimension handled by [`SteadyMethod::Auto`]
    /// with the dense path.
    pub dense_limit: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Auto,
            gmres: Gmres::default(),
            sigma: 1e-3,
            check_uniqueness: true,
            residual_tol: 1e-8,
            dense_limit: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    pub rho: DensityMatrix,
    /// `||L vec(rho)|| / ||L||_F`.
    pub relative_residual: f64,
    pub iterations: usize,
    pub method: SteadyMethod,
    pub diagnostics: StateDiagnostics,
}

/// A probe solve stalling above this relative residual means the bordered
/// operator is singular.
const SINGULAR_RESIDUAL: f64 = 1e-6;
/// Singular values below this fraction of the largest count as null.
const RANK_TOL: f64 = 1e-10;

pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    Ok(steady_state_with(l, &SteadyStateOptions::default())?.rho)
}

pub fn steady_state_with(
    l: &Superoperator,
    opts: &SteadyStateOptions,
) -> Result<SteadyStateReport> {
    let n = l.dim();
    let method = match opts.method {
        SteadyMethod::Auto if n <= opts.dense_limit => SteadyMethod::Dense,
        SteadyMethod::Auto => SteadyMethod::Krylov,
        m => m,
    };
    let (x, iterations) = match method {
        SteadyMethod::Dense => (dense_solve(l)?, 0),
        _ => krylov_solve(l, opts)?,
    };
    let mut rho = DensityMatrix::new(l.layout().clone(), unvec(x.as_slice(), n))?;
    rho.hermitize();
    let lnorm = l.frobenius_norm();
    let relative_residual = if lnorm > 0.0 {
        l.residual(&rho) / lnorm
    } else {
        0.0
    };
    if relative_residual > opts.residual_tol {
        return Err(Error::NoConvergence(format!(
            "steady-state residual {relative_residual:.3e} exceeds {:.1e}",
            opts.residual_tol
        )));
    }
    let diagnostics = rho.check()?;
    Ok(SteadyStateReport {
        rho,
        relative_residual,
        iterations,
        method,
        diagnostics,
    })
}

fn trace_row(n: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |i| i + n * i)
}

fn dense_solve(l: &Superoperator) -> Result<DVector<C64>> {
    let n = l.dim();
    let mut m = l.to_dense();
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let nullity = svd
        .singular_values
        .iter()
        .filter(|s| **s <= RANK_TOL * smax)
        .count();
    if nullity > 1 {
        return Err(Error::MultipleSteadyStates { nullity });
    }
    // replace the first equation by tr(rho) = 1
    m.row_mut(0).fill(ZERO);
    for k in trace_row(n) {
        m[(0, k)] = ONE;
    }
    let mut rhs = DVector::zeros(n * n);
    rhs[0] = ONE;
    match m.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => Ok(x),
        _ => {
            log::warn!("trace-replaced Liouvillian is singular, using least squares");
            m.svd(true, true).solve(&rhs, RANK_TOL).map_err(|e| {
                Error::NoConvergence(format!("least-squares steady state failed: {e}"))
            })
        }
    }
}

fn krylov_solve(l: &Superoperator, opts: &SteadyStateOptions) -> Result<(DVector<C64>, usize)> {
    let n = l.dim();
    let pre = SylvesterPreconditioner::new(&l.generator().heff(0.0), opts.sigma)?;
    let w = vec_of(&(DMatrix::identity(n, n) * C64::new(1.0 / n as f64, 0.0)));
    let apply = |x: &DVector<C64>, out: &mut DVector<C64>| {
        l.matrix().matvec(x.as_slice(), out.as_mut_slice());
        let tr: C64 = trace_row(n).map(|k| x[k]).sum();
        out.axpy(tr, &w, ONE);
    };
    let first = opts.gmres.solve(apply, |r, out| pre.apply(r, out), &w)?;
    log::debug!(
        "steady state: {} GMRES iterations, residual {:.2e}",
        first.iterations,
        first.relative_residual
    );
    let mut iterations = first.iterations;
    if opts.check_uniqueness {
        // The bordered operator is singular exactly when the steady state is
        // degenerate. Its own right-hand side is always in range, so probe it
        // with a generic one instead.
        let probe = DVector::from_fn(n * n, |k, _| {
            let phase = (k as f64 * 0.618_033_988_749_895).fract();
            C64::new(1.0 + phase, phase - 0.5)
        });
        let second = opts
            .gmres
            .iterate(apply, |r, out| pre.apply(r, out), &probe);
        iterations += second.iterations;
        let rel = second.relative_residual;
        if !rel.is_finite() || rel > SINGULAR_RESIDUAL {
            return Err(Error::MultipleSteadyStates { nullity: 2 });
        }
        if rel > opts.gmres.tol {
            return Err(Error::NoConvergence(format!(
                "uniqueness probe stalled at relative residual {rel:.3e}"
            )));
        }
    }
    Ok((first.x, iterations))
}

/// Steady state of the dynamics restricted to an invariant set of basis
/// states, embedded back into the full space. Used where the full generator
/// has several steady states, one per invariant sector.
pub fn steady_state_in_sector(
    h: &Operator,
    c_ops: &[Operator],
    sector: &[usize],
) -> Result<DensityMatrix> {
    let layout = h.layout();
    let n = layout.total();
    if sector.is_empty() || sector.iter().any(|&k| k >= n) {
        return Err(Error::InvalidArgument(
            "sector indices empty or out of range".into(),
        ));
    }
    let mut inside = alloc::vec![false; n];
    for &k in sector {
        inside[k] = true;
    }
    let leaks = |m: &DMatrix<C64>| {
        sector
            .iter()
            .any(|&j| (0..n).any(|i| !inside[i] && m[(i, j)] != ZERO))
    };
    let mut decay = DMatrix::<C64>::zeros(n, n);
    for c in c_ops {
        layout.ensure_same(c.layout())?;
        if leaks(c.matrix()) {
            return Err(Error::InvalidArgument(
                "collapse operator leaves the sector".into(),
            ));
        }
        decay += c.matrix().adjoint() * c.matrix();
    }
    if leaks(h.matrix()) || leaks(&decay) {
        return Err(Error::InvalidArgument(
            "Hamiltonian leaves the sector".into(),
        ));
    }
    let k = sector.len();
    let sub_layout = SpaceLayout::single(k)?;
    let restrict = |m: &DMatrix<C64>| {
        Operator::new(
            sub_layout.clone(),
            DMatrix::from_fn(k, k, |i, j| m[(sector[i], sector[j])]),
        )
    };
    let hs = restrict(h.matrix())?;
    let cs = c_ops
        .iter()
        .map(|c| restrict(c.matrix()))
        .collect::<Result<Vec<_>>>()?;
    let rho_s = steady_state(&liouvillian(&hs, &cs)?)?;
    let mut full = DMatrix::zeros(n, n);
    for (i, &si) in sector.iter().enumerate() {
        for (j, &sj) in sector.iter().enumerate() {
            full[(si, sj)] = rho_s.matrix()[(i, j)];
        }
    }
    let rho = DensityMatrix::new(layout.clone(), full)?;
    rho.check()?;
    Ok(rho)
}

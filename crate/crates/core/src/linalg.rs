//! Krylov solver and the Sylvester-type preconditioner used for steady
//! states, plus small dense helpers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Schur};
#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result, C64, I, ZERO};

/// Restarted GMRES settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmres {
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for Gmres {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 600,
            restart: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: DVector<C64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl Gmres {
    /// Solves `A x = b` with right preconditioning `A M^-1 y = b`, `x = M^-1 y`.
    pub fn solve<A, P>(&self, apply: A, precond: P, b: &DVector<C64>) -> Result<GmresOutcome>
    where
        A: FnMut(&DVector<C64>, &mut DVector<C64>),
        P: FnMut(&DVector<C64>, &mut DVector<C64>),
    {
        let out = self.iterate(apply, precond, b);
        let rel = out.relative_residual;
        if !rel.is_finite() || rel > self.tol {
            return Err(Error::NoConvergence(format!(
                "GMRES stopped after {} iterations at relative residual {rel:.3e}",
                out.iterations
            )));
        }
        Ok(out)
    }

    /// Like [`Gmres::solve`] but returns the last iterate even when the
    /// target was not reached.
    pub fn iterate<A, P>(&self, mut apply: A, mut precond: P, b: &DVector<C64>) -> GmresOutcome
    where
        A: FnMut(&DVector<C64>, &mut DVector<C64>),
        P: FnMut(&DVector<C64>, &mut DVector<C64>),
    {
        let n = b.len();
        let bnorm = b.norm();
        let mut x = DVector::zeros(n);
        if bnorm == 0.0 {
            return GmresOutcome {
                x,
                iterations: 0,
                relative_residual: 0.0,
            };
        }
        let m = self.restart.max(1);
        let mut r = b.clone();
        let mut tmp = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        let mut iterations = 0;

        while iterations < self.max_iter {
            let beta = r.norm();
            if beta / bnorm <= self.tol {
                break;
            }
            let mut basis: Vec<DVector<C64>> = Vec::with_capacity(m + 1);
            basis.push(&r / C64::new(beta, 0.0));
            let mut h = DMatrix::<C64>::zeros(m + 1, m);
            let mut cs = vec![0.0f64; m];
            let mut sn = vec![ZERO; m];
            let mut g = DVector::<C64>::zeros(m + 1);
            g[0] = C64::new(beta, 0.0);
            let mut k = 0;
            while k < m && iterations < self.max_iter {
                precond(&basis[k], &mut z);
                apply(&z, &mut tmp);
                let mut w = tmp.clone();
                // two passes of modified Gram-Schmidt
                for _ in 0..2 {
                    for (i, v) in basis.iter().enumerate() {
                        let hij = v.dotc(&w);
                        h[(i, k)] += hij;
                        w.axpy(-hij, v, C64::new(1.0, 0.0));
                    }
                }
                let hn = w.norm();
                h[(k + 1, k)] = C64::new(hn, 0.0);
                for i in 0..k {
                    let (a, bb) = (h[(i, k)], h[(i + 1, k)]);
                    h[(i, k)] = a * cs[i] + sn[i] * bb;
                    h[(i + 1, k)] = -sn[i].conj() * a + bb * cs[i];
                }
                let (c, s, rr) = givens(h[(k, k)], h[(k + 1, k)]);
                cs[k] = c;
                sn[k] = s;
                h[(k, k)] = rr;
                h[(k + 1, k)] = ZERO;
                let gk = g[k];
                g[k] = gk * c;
                g[k + 1] = -s.conj() * gk;
                iterations += 1;
                k += 1;
                let est = g[k].norm() / bnorm;
                if est <= self.tol || hn <= f64::EPSILON * beta {
                    break;
                }
                basis.push(w / C64::new(hn, 0.0));
            }
            // back substitution for the k x k upper-triangular system
            let mut y = DVector::<C64>::zeros(k);
            for i in (0..k).rev() {
                let mut acc = g[i];
                for j in i + 1..k {
                    acc -= h[(i, j)] * y[j];
                }
                y[i] = acc / h[(i, i)];
            }
            let mut update = DVector::<C64>::zeros(n);
            for (i, yi) in y.iter().enumerate() {
                update.axpy(*yi, &basis[i], C64::new(1.0, 0.0));
            }
            precond(&update, &mut z);
            x += &z;
            apply(&x, &mut tmp);
            r = b - &tmp;
        }
        GmresOutcome {
            x,
            iterations,
            relative_residual: r.norm() / bnorm,
        }
    }
}

/// Complex Givens rotation zeroing `b` against `a`: returns `(c, s, r)`
/// with `[c s; -s* c] [a; b] = [r; 0]`.
fn givens(a: C64, b: C64) -> (f64, C64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, ZERO, a);
    }
    if an == 0.0 {
        return (0.0, C64::new(1.0, 0.0), b);
    }
    let r = an.hypot(bn);
    let phase = a / an;
    (an / r, phase * b.conj() / r, phase * r)
}

/// Complex Schur form `(Q, T)` of `m`. Matrices with large clusters of
/// exactly repeated eigenvalues can stall the QR iteration at machine
/// precision; the retry uses a slightly looser deflation threshold.
pub fn schur(m: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    for (eps, iterations) in [(f64::EPSILON, 10_000), (1e-14, 100_000)] {
        if let Some(s) = Schur::try_new(m.clone(), eps, iterations) {
            return Ok(s.unpack());
        }
    }
    Err(Error::NoConvergence(
        "Schur decomposition did not converge".into(),
    ))
}

/// Inverse of `X -> -i K X + i X K^dagger - sigma X` through the complex
/// Schur form `K = Q T Q^dagger` and a column-wise triangular solve.
#[derive(Debug, Clone)]
pub struct SylvesterPreconditioner {
    q: DMatrix<C64>,
    t: DMatrix<C64>,
    sigma: f64,
}

impl SylvesterPreconditioner {
    pub fn new(k: &DMatrix<C64>, sigma: f64) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::InvalidDimension(
                "preconditioner needs a square matrix".into(),
            ));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "preconditioner shift must be positive".into(),
            ));
        }
        let (q, t) = schur(k)?;
        Ok(Self { q, t, sigma })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Solves `P(X) = R` for a matrix right-hand side.
    pub fn solve(&self, r: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.dim();
        let rt = self.q.adjoint() * r * &self.q;
        let t = &self.t;
        let shift = C64::new(0.0, self.sigma);
        let mut y = DMatrix::<C64>::zeros(n, n);
        let mut rhs = DVector::<C64>::zeros(n);
        for j in (0..n).rev() {
            for i in 0..n {
                rhs[i] = I * rt[(i, j)];
            }
            for k in j + 1..n {
                let u = t[(j, k)].conj();
                if u != ZERO {
                    for i in 0..n {
                        rhs[i] += y[(i, k)] * u;
                    }
                }
            }
            let lambda = t[(j, j)].conj() + shift;
            for i in (0..n).rev() {
                let mut acc = rhs[i];
                for l in i + 1..n {
                    acc -= t[(i, l)] * y[(l, j)];
                }
                y[(i, j)] = acc / (t[(i, i)] - lambda);
            }
        }
        &self.q * y * self.q.adjoint()
    }

    /// Vectorized form of [`SylvesterPreconditioner::solve`] (column stacking).
    pub fn apply(&self, r: &DVector<C64>, out: &mut DVector<C64>) {
        let n = self.dim();
        let rm = DMatrix::from_column_slice(n, n, r.as_slice());
        let x = self.solve(&rm);
        out.as_mut_slice().copy_from_slice(x.as_slice());
    }
}

/// Eigenvalues of a small general complex matrix, sorted by real part and
/// then by imaginary part.
pub fn eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::InvalidDimension(
            "eigenvalues need a square matrix".into(),
        ));
    }
    let (_, t) = schur(m)?;
    let mut ev: Vec<C64> = (0..t.nrows()).map(|k| t[(k, k)]).collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schur_handles_degenerate_driven_ladders() {
        // three copies of a driven damped ladder, all with the same spectrum
        let (rungs, copies) = (12, 6);
        let n = rungs * copies;
        let mut m = DMatrix::<C64>::zeros(n, n);
        for c in 0..copies {
            for k in 0..rungs {
                let i = c * rungs + k;
                m[(i, i)] = C64::new(0.0, -0.5 * (k + c) as f64);
                if k + 1 < rungs {
                    m[(i, i + 1)] = C64::new(0.3, 0.0);
                    m[(i + 1, i)] = C64::new(0.3, 0.0);
                }
            }
        }
        let (q, t) = schur(&m).unwrap();
        let back = &q * &t * q.adjoint();
        assert!((back - &m).camax() < 1e-11);
        for i in 0..n {
            for j in 0..i {
                assert!(t[(i, j)].norm() < 1e-10);
            }
        }
    }

    fn test_matrix(n: usize, seed: u64) -> DMatrix<C64> {
        // deterministic pseudo-random entries
        let mut s = seed;
        DMatrix::from_fn(n, n, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            C64::new(a, b)
        })
    }

    #[test]
    fn gmres_solves_dense_system() {
        let n = 30;
        let a = test_matrix(n, 3) + DMatrix::identity(n, n) * C64::new(4.0, 0.0);
        let x_true = DVector::from_fn(n, |i, _| C64::new(i as f64, -1.0));
        let b = &a * &x_true;
        let out = Gmres {
            restart: 7,
            ..Gmres::default()
        }
        .solve(|v, o| o.copy_from(&(&a * v)), |v, o| o.copy_from(v), &b)
        .unwrap();
        assert!((out.x - x_true).norm() < 1e-9);
    }

    #[test]
    fn sylvester_inverse_matches_forward_map() {
        let n = 6;
        let k = test_matrix(n, 11) - DMatrix::identity(n, n) * C64::new(0.0, 1.0);
        let p = SylvesterPreconditioner::new(&k, 1e-3).unwrap();
        let x = test_matrix(n, 5);
        let forward = -(&k * &x) * I + &x * k.adjoint() * I - &x * C64::new(1e-3, 0.0);
        let back = p.solve(&forward);
        assert!((back - x).camax() < 1e-10);
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![
            C64::new(3.0, 0.0),
            C64::new(-1.0, 0.0),
            C64::new(2.0, 0.0),
        ]));
        let ev = eigenvalues(&m).unwrap();
        assert_eq!(
            ev.iter().map(|z| z.re).collect::<Vec<_>>(),
            vec![-1.0, 2.0, 3.0]
        );
    }
}

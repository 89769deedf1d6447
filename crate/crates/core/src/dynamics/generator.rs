use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::model::HamiltonianParts;
use crate::operator::{Operator, SpaceLayout};
use crate::sparse::CsrMatrix;
use crate::{Result, C64, I, ZERO};

/// Sparse Lindblad generator `L(t) rho = -i[H(t), rho] + sum_k D[c_k] rho`,
/// stored through `H_eff = H - (i/2) sum c^dagger c` and the jump operators.
#[derive(Debug, Clone)]
pub struct Generator {
    layout: SpaceLayout,
    /// Static part of `H_eff`.
    k0: CsrMatrix,
    /// `(X, X^dagger, Omega)` for the term `e^{-i Omega t} X + h.c.`.
    modulated: Option<(CsrMatrix, CsrMatrix, f64)>,
    jumps: Vec<CsrMatrix>,
    /// For jump operators with at most one entry per row, that entry as
    /// `(column, value)`; lets `c rho c^dagger` be formed by a gather.
    monomial: Vec<Option<Vec<Option<(usize, C64)>>>>,
    /// `H_eff(t)` on the union sparsity pattern of its static and modulated
    /// parts.
    pattern: Pattern,
}

#[derive(Debug, Clone)]
struct Pattern {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    /// static values, then the coefficients of `e^{-i Omega t}` and of
    /// `e^{i Omega t}`
    values: [Vec<C64>; 3],
}

impl Pattern {
    fn new(n: usize, parts: [Option<&CsrMatrix>; 3]) -> Self {
        let mut entries: BTreeMap<(usize, usize), [C64; 3]> = BTreeMap::new();
        for (slot, m) in parts.iter().enumerate() {
            if let Some(m) = m {
                for (r, c, v) in m.iter() {
                    entries.entry((r, c)).or_insert([ZERO; 3])[slot] += v;
                }
            }
        }
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: [Vec<C64>; 3] = core::array::from_fn(|_| Vec::with_capacity(entries.len()));
        for ((r, c), v) in entries {
            indptr[r + 1] += 1;
            indices.push(c);
            for (dst, x) in values.iter_mut().zip(v) {
                dst.push(x);
            }
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Self {
            indptr,
            indices,
            values,
        }
    }
}

fn monomial_rows(m: &CsrMatrix) -> Option<Vec<Option<(usize, C64)>>> {
    let mut rows = vec![None; m.nrows()];
    for (r, c, v) in m.iter() {
        if rows[r].replace((c, v)).is_some() {
            return None;
        }
    }
    Some(rows)
}

impl Generator {
    pub fn new(h: &HamiltonianParts, c_ops: &[Operator]) -> Result<Self> {
        let layout = h.static_part.layout().clone();
        let mut decay = Operator::zeros(&layout);
        for c in c_ops {
            layout.ensure_same(c.layout())?;
            decay = &decay + &(&c.adjoint() * c);
        }
        let heff = &h.static_part - &decay.scale(C64::new(0.0, 0.5));
        let modulated = match &h.modulated {
            Some((x, omega)) => {
                layout.ensure_same(x.layout())?;
                let xs = CsrMatrix::from_dense(x.matrix());
                Some((xs.clone(), xs.adjoint(), *omega))
            }
            None => None,
        };
        let jumps: Vec<CsrMatrix> = c_ops
            .iter()
            .map(|c| CsrMatrix::from_dense(c.matrix()))
            .collect();
        let k0 = CsrMatrix::from_dense(heff.matrix());
        let pattern = Pattern::new(
            layout.total(),
            [
                Some(&k0),
                modulated.as_ref().map(|m| &m.0),
                modulated.as_ref().map(|m| &m.1),
            ],
        );
        Ok(Self {
            k0,
            pattern,
            modulated,
            monomial: jumps.iter().map(monomial_rows).collect(),
            jumps,
            layout,
        })
    }

    pub fn time_independent(h: &Operator, c_ops: &[Operator]) -> Result<Self> {
        Self::new(
            &HamiltonianParts {
                static_part: h.clone(),
                modulated: None,
            },
            c_ops,
        )
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.modulated.is_some()
    }

    pub fn jumps(&self) -> &[CsrMatrix] {
        &self.jumps
    }

    fn modulation(&self, t: f64) -> Option<(&CsrMatrix, &CsrMatrix, C64)> {
        self.modulated
            .as_ref()
            .map(|(x, xd, omega)| (x, xd, C64::new(0.0, -omega * t).exp()))
    }

    /// Dense `H_eff(t)`.
    pub fn heff(&self, t: f64) -> DMatrix<C64> {
        let mut m = self.k0.to_dense();
        if let Some((x, xd, f)) = self.modulation(t) {
            m += x.to_dense() * f + xd.to_dense() * f.conj();
        }
        m
    }

    /// `out = L(t) rho` in matrix form, for Hermitian `rho`.
    pub fn apply(&self, t: f64, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, scratch: &mut Scratch) {
        self.apply_slice(t, rho.as_slice(), out.as_mut_slice(), scratch);
    }

    /// [`Generator::apply`] on column-major slices. Only the upper triangle
    /// is computed; the lower one is filled in by Hermitian symmetry.
    pub fn apply_slice(&self, t: f64, rho: &[C64], out: &mut [C64], s: &mut Scratch) {
        // L rho = -i H_eff rho + i rho H_eff^dagger + sum c rho c^dagger
        let n = self.dim();
        let pat = &self.pattern;
        let vals: &[C64] = match self.modulation(t) {
            None => &pat.values[0],
            Some((_, _, f)) => {
                let [v0, vx, vxd] = &pat.values;
                for (k, dst) in s.k.iter_mut().enumerate() {
                    *dst = v0[k] + vx[k] * f + vxd[k] * f.conj();
                }
                &s.k
            }
        };
        for j in 0..n {
            let col = &rho[n * j..n * (j + 1)];
            let dst = &mut out[n * j..n * j + j + 1];
            for (r, d) in dst.iter_mut().enumerate() {
                let mut acc = ZERO;
                for p in pat.indptr[r]..pat.indptr[r + 1] {
                    acc += vals[p] * col[pat.indices[p]];
                }
                *d = C64::new(acc.im, -acc.re);
            }
            // column j of rho H_eff^dagger mixes the columns of rho named in row j
            for p in pat.indptr[j]..pat.indptr[j + 1] {
                let w = I * vals[p].conj();
                let k = pat.indices[p];
                for (d, x) in dst.iter_mut().zip(&rho[n * k..n * k + j + 1]) {
                    *d += w * x;
                }
            }
            for rows in self.monomial.iter().flatten() {
                let Some((pj, vj)) = rows[j] else { continue };
                let vj = vj.conj();
                let src = &rho[n * pj..n * (pj + 1)];
                for (d, ci) in dst.iter_mut().zip(rows) {
                    if let Some((pi, vi)) = *ci {
                        *d += vi * src[pi] * vj;
                    }
                }
            }
        }
        for (c, rows) in self.jumps.iter().zip(&self.monomial) {
            if rows.is_some() {
                continue;
            }
            // c rho c^dagger = (c (c rho)^dagger)^dagger
            c.mul_cols(rho, n, &mut s.b);
            adjoint_into(&s.b, &mut s.c, n);
            c.mul_cols(&s.c, n, &mut s.b);
            for j in 0..n {
                for i in 0..=j {
                    out[i + n * j] += s.b[j + n * i].conj();
                }
            }
        }
        for j in 0..n {
            let d = out[j + n * j];
            out[j + n * j] = C64::new(d.re, 0.0);
            for i in 0..j {
                out[j + n * i] = out[i + n * j].conj();
            }
        }
    }

    pub fn scratch(&self) -> Scratch {
        let n = self.dim();
        Scratch {
            k: vec![ZERO; self.pattern.indices.len()],
            b: vec![ZERO; n * n],
            c: vec![ZERO; n * n],
        }
    }

    /// `out = -i H_eff(t) psi`.
    pub fn apply_heff(&self, t: f64, psi: &[C64], out: &mut [C64], tmp: &mut [C64]) {
        self.k0.matvec(psi, out);
        if let Some((x, xd, f)) = self.modulation(t) {
            x.matvec(psi, tmp);
            for (o, v) in out.iter_mut().zip(tmp.iter()) {
                *o += v * f;
            }
            xd.matvec(psi, tmp);
            for (o, v) in out.iter_mut().zip(tmp.iter()) {
                *o += v * f.conj();
            }
        }
        for o in out.iter_mut() {
            *o *= -I;
        }
    }

    /// Sparse column-stacked superoperator at time `t`.
    pub fn superoperator_matrix(&self, t: f64) -> CsrMatrix {
        let n = self.dim();
        let mut heff = self.k0.clone();
        if let Some((x, xd, f)) = self.modulation(t) {
            heff = heff
                .add(&x.scale(f))
                .and_then(|m| m.add(&xd.scale(f.conj())))
                .expect("shapes agree");
        }
        let id = CsrMatrix::identity(n);
        let conj = |m: &CsrMatrix| {
            let t = m.iter().map(|(r, c, v)| (r, c, v.conj())).collect();
            CsrMatrix::from_triplets(m.nrows(), m.ncols(), t).expect("indices are in range")
        };
        let mut l = id.kron(&heff.scale(-I));
        l = l
            .add(&conj(&heff).scale(I).kron(&id))
            .expect("shapes agree");
        for c in &self.jumps {
            l = l.add(&conj(c).kron(c)).expect("shapes agree");
        }
        l
    }
}

/// Work buffers for [`Generator::apply`].
#[derive(Debug, Clone)]
pub struct Scratch {
    k: Vec<C64>,
    b: Vec<C64>,
    c: Vec<C64>,
}

fn adjoint_into(m: &[C64], out: &mut [C64], n: usize) {
    for j in 0..n {
        for i in 0..n {
            out[j + n * i] = m[i + n * j].conj();
        }
    }
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[C64], n: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(n, n, v)
}

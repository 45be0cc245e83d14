//! Linear solves for `(D + V - z)` on large truncated spaces where `D` is
//! diagonal and `V` only connects neighbouring photon-number sectors.
//!
//! The top sector has no internal coupling, so it is eliminated exactly and
//! the remaining Schur complement on the lower sectors is factored densely.

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{fz, nz, DMat, SparseMat, C64, ZERO};

/// Largest lower-sector dimension factored densely.
pub const MAX_LOWER_DIM: usize = 8000;

pub struct SectorSolver {
    n: usize,
    lower: Vec<usize>,
    upper: Vec<usize>,
    du: Vec<C64>,
    /// For each lower position: (upper position, A_LU value).
    a_lu: Vec<Vec<(usize, C64)>>,
    /// For each upper position: (lower position, A_UL value).
    a_ul: Vec<Vec<(usize, C64)>>,
    lu: PartialPivLu<c64>,
}

use faer::complex_native::c64;

impl SectorSolver {
    /// `diag`, `coupling`: the operator on the full index range. `sector[i]`:
    /// photon number of index `i`. `active[i]`: index belongs to the
    /// subspace the system is restricted to. Solves `(D + V - z) x = b` on it.
    pub fn new(diag: &[C64], coupling: &SparseMat, sector: &[usize], active: &[bool], z: C64) -> Result<Self> {
        let n = diag.len();
        assert_eq!(coupling.nrows, n);
        let top = (0..n).filter(|&i| active[i]).map(|i| sector[i]).max().unwrap_or(0);
        let mut pos = vec![(u8::MAX, 0usize); n];
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if sector[i] == top && top > 0 {
                pos[i] = (1, upper.len());
                upper.push(i);
            } else {
                pos[i] = (0, lower.len());
                lower.push(i);
            }
        }
        if lower.len() > MAX_LOWER_DIM {
            return Err(Error::Invalid(format!("lower-sector dimension {} exceeds {MAX_LOWER_DIM}", lower.len())));
        }
        let du: Vec<C64> = upper.iter().map(|&u| diag[u] - z).collect();
        let dmin = du.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        if dmin < 1e-14 {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        let nl = lower.len();
        let mut s = DMat::zeros(nl, nl);
        for (li, &l) in lower.iter().enumerate() {
            s.write(li, li, fz(diag[l] - z));
        }
        let mut a_lu = vec![Vec::new(); nl];
        let mut a_ul = vec![Vec::new(); upper.len()];
        for (i, row) in coupling.rows.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let (ki, pi) = pos[i];
            for &(j, v) in row {
                if !active[j] || v == ZERO {
                    continue;
                }
                let (kj, pj) = pos[j];
                match (ki, kj) {
                    (0, 0) => s.write(pi, pj, fz(nz(s.read(pi, pj)) + v)),
                    (0, 1) => a_lu[pi].push((pj, v)),
                    (1, 0) => a_ul[pi].push((pj, v)),
                    _ => return Err(Error::Invalid("coupling inside the top photon sector".into())),
                }
            }
        }
        // column view of A_LU
        let mut lu_cols: Vec<Vec<(usize, C64)>> = vec![Vec::new(); upper.len()];
        for (li, row) in a_lu.iter().enumerate() {
            for &(u, v) in row {
                lu_cols[u].push((li, v));
            }
        }
        for (u, col) in lu_cols.iter().enumerate() {
            let inv = 1.0 / du[u];
            for &(l1, v1) in col {
                let f = v1 * inv;
                for &(l2, v2) in &a_ul[u] {
                    let cur = nz(s.read(l1, l2));
                    s.write(l1, l2, fz(cur - f * v2));
                }
            }
        }
        let lu = s.partial_piv_lu();
        Ok(Self { n, lower, upper, du, a_lu, a_ul, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn active_len(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    /// Solve for several right-hand sides given on the full index range;
    /// entries outside the active set are ignored and returned as zero.
    pub fn solve_many(&self, rhs: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
        let nl = self.lower.len();
        let k = rhs.len();
        if k == 0 {
            return Ok(vec![]);
        }
        let mut bl = DMat::zeros(nl, k);
        for (c, b) in rhs.iter().enumerate() {
            assert_eq!(b.len(), self.n);
            for (li, &l) in self.lower.iter().enumerate() {
                let mut v = b[l];
                for &(u, a) in &self.a_lu[li] {
                    v -= a * b[self.upper[u]] / self.du[u];
                }
                bl.write(li, c, fz(v));
            }
        }
        let xl = self.lu.solve(&bl);
        let mut out = Vec::with_capacity(k);
        for (c, b) in rhs.iter().enumerate() {
            let mut x = vec![ZERO; self.n];
            for (li, &l) in self.lower.iter().enumerate() {
                x[l] = nz(xl.read(li, c));
            }
            for (u, &ui) in self.upper.iter().enumerate() {
                let mut v = b[ui];
                for &(li, a) in &self.a_ul[u] {
                    v -= a * x[self.lower[li]];
                }
                x[ui] = v / self.du[u];
            }
            if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Singular { cond: f64::INFINITY });
            }
            out.push(x);
        }
        Ok(out)
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        Ok(self.solve_many(std::slice::from_ref(&b.to_vec()))?.pop().unwrap())
    }
}

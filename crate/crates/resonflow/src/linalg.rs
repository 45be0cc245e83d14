//! Complex matrices shared by every module: a row-compressed sparse form,
//! faer dense matrices, and the `OperatorMatrix` wrapper over both.

use faer::complex_native::c64;
use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type DMat = Mat<c64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn fz(z: C64) -> c64 {
    c64::new(z.re, z.im)
}

#[inline]
pub fn nz(z: c64) -> C64 {
    C64::new(z.re, z.im)
}

/// Row-wise sparse matrix. Each row keeps its entries sorted by column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMat {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, C64)>>,
}

impl SparseMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![ONE; n])
    }

    pub fn diagonal(d: &[C64]) -> Self {
        let rows = d.iter().enumerate().map(|(i, &v)| if v == ZERO { vec![] } else { vec![(i, v)] }).collect();
        Self { nrows: d.len(), ncols: d.len(), rows }
    }

    /// Build from unsorted triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); nrows];
        for (i, j, v) in trip {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            rows[i].push((j, v));
        }
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
            let mut out: Vec<(usize, C64)> = Vec::with_capacity(r.len());
            for &(j, v) in r.iter() {
                match out.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => out.push((j, v)),
                }
            }
            out.retain(|e| e.1 != ZERO);
            *r = out;
        }
        Self { nrows, ncols, rows }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.rows.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |&(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(i, j, v)| (j, i, v)))
    }

    pub fn scale(&self, s: C64) -> Self {
        let rows = self.rows.iter().map(|r| r.iter().map(|&(j, v)| (j, v * s)).collect()).collect();
        Self { nrows: self.nrows, ncols: self.ncols, rows }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()))
    }

    /// Product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            for &(k, a) in r {
                for &(j, b) in &other.rows[k] {
                    trip.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, trip)
    }

    pub fn to_dense(&self) -> DMat {
        let mut m = DMat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m.write(i, j, fz(nz(m.read(i, j)) + v));
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.triplets().map(|t| t.2.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.triplets().all(|t| t.2.re.is_finite() && t.2.im.is_finite())
    }

    /// Largest singular value by power iteration on A^*A, deterministic start.
    pub fn norm2(&self) -> f64 {
        let adj = self.adjoint();
        power_norm(self.ncols, |x| self.matvec(x), |y| adj.matvec(y))
    }
}

/// Largest singular value of an operator given by its action and adjoint action.
pub fn power_norm(n: usize, apply: impl Fn(&[C64]) -> Vec<C64>, apply_adj: impl Fn(&[C64]) -> Vec<C64>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut x: Vec<C64> = (0..n).map(|i| C64::new(1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0, 0.11 * ((i * 31) % 17) as f64)).collect();
    let nx = vec_norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut sigma2 = 0.0;
    for _ in 0..2000 {
        let y = apply(&x);
        let mut z = apply_adj(&y);
        let nz_ = vec_norm(&z);
        if nz_ == 0.0 {
            return 0.0;
        }
        z.iter_mut().for_each(|v| *v /= nz_);
        let done = (nz_ - sigma2).abs() <= 1e-12 * nz_;
        sigma2 = nz_;
        x = z;
        if done {
            break;
        }
    }
    sigma2.sqrt()
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// A square complex operator on a truncated space.
#[derive(Clone, Debug)]
pub enum OperatorMatrix {
    Dense(DMat),
    Sparse(SparseMat),
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Sparse(s) => s.nrows,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match self {
            Self::Dense(m) => nz(m.read(i, j)),
            Self::Sparse(s) => s.get(i, j),
        }
    }

    pub fn to_dense(&self) -> DMat {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Sparse(s) => s.to_dense(),
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        match self {
            Self::Dense(m) => dense_matvec(m, x),
            Self::Sparse(s) => s.matvec(x),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Dense(m) => (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| {
                let v = m.read(i, j);
                v.re.is_finite() && v.im.is_finite()
            })),
            Self::Sparse(s) => s.is_finite(),
        }
    }

    pub fn norm2(&self) -> f64 {
        match self {
            Self::Dense(m) => norm2(m),
            Self::Sparse(s) => s.norm2(),
        }
    }

    /// Largest |A_ij - conj(A_ji)|.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.to_dense();
        let n = d.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((nz(d.read(i, j)) - nz(d.read(j, i)).conj()).norm());
            }
        }
        worst
    }
}

pub fn dense_matvec(m: &DMat, x: &[C64]) -> Vec<C64> {
    assert_eq!(m.ncols(), x.len());
    let mut y = vec![ZERO; m.nrows()];
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj == ZERO {
            continue;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += nz(m.read(i, j)) * xj;
        }
    }
    y
}

pub fn col_from(x: &[C64]) -> DMat {
    DMat::from_fn(x.len(), 1, |i, _| fz(x[i]))
}

pub fn col_to_vec(m: &DMat, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| nz(m.read(i, j))).collect()
}

pub fn identity(n: usize) -> DMat {
    DMat::from_fn(n, n, |i, j| if i == j { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) })
}

pub fn from_diag(d: &[C64]) -> DMat {
    DMat::from_fn(d.len(), d.len(), |i, j| if i == j { fz(d[i]) } else { c64::new(0.0, 0.0) })
}

pub fn singular_values(m: &DMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    m.singular_values()
}

pub fn norm2(m: &DMat) -> f64 {
    singular_values(m).into_iter().fold(0.0, f64::max)
}

pub fn min_singular(m: &DMat) -> f64 {
    singular_values(m).into_iter().fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &DMat) -> f64 {
    let mut w = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            w = w.max(nz(m.read(i, j)).norm());
        }
    }
    w
}

pub fn max_abs_diff(a: &DMat, b: &DMat) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut w = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            w = w.max((nz(a.read(i, j)) - nz(b.read(i, j))).norm());
        }
    }
    w
}

/// Solve `a x = b` by partially pivoted LU.
pub fn solve(a: &DMat, b: &DMat) -> DMat {
    a.partial_piv_lu().solve(b)
}

pub fn inverse(a: &DMat) -> DMat {
    solve(a, &identity(a.nrows()))
}

/// Eigenvalues and right eigenvectors of a general complex matrix.
pub fn eig(a: &DMat) -> (Vec<C64>, DMat) {
    let evd = a.eigendecomposition::<c64>();
    let s = evd.s();
    let vals = (0..a.nrows()).map(|i| nz(s.column_vector().read(i))).collect();
    (vals, evd.u().to_owned())
}

pub fn eigvals(a: &DMat) -> Vec<C64> {
    if a.nrows() == 0 {
        return vec![];
    }
    a.complex_eigenvalues().into_iter().map(nz).collect()
}

/// Eigen-decomposition of a hermitian matrix: ascending real eigenvalues and eigenvectors.
pub fn eigh(a: &DMat) -> (Vec<f64>, DMat) {
    let evd = a.selfadjoint_eigendecomposition(faer::Side::Lower);
    let s = evd.s();
    let vals = (0..a.nrows()).map(|i| s.column_vector().read(i).re).collect();
    (vals, evd.u().to_owned())
}

pub fn adjoint(a: &DMat) -> DMat {
    a.adjoint().to_owned()
}

/// Rows/columns `idx` of `a`.
pub fn submatrix(a: &DMat, rows: &[usize], cols: &[usize]) -> DMat {
    DMat::from_fn(rows.len(), cols.len(), |i, j| a.read(rows[i], cols[j]))
}

//! The smooth Feshbach-Schur map on finite matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{adjoint, eigh, fz, max_abs, min_singular, norm2, nz, solve, submatrix, DMat, OperatorMatrix, C64};

/// Eigenvalue threshold identifying ran P̄ and ran P.
pub const RANGE_TOL: f64 = 1e-12;
/// Relative smallest-singular-value threshold for "bounded invertible".
pub const INVERTIBLE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FeshbachPair {
    pub h: DMat,
    pub t: DMat,
    pub p: DMat,
    pub pbar: DMat,
    pub w: DMat,
    /// Orthonormal basis of ran P̄.
    vbar: DMat,
    /// Orthonormal basis of ran P.
    vp: DMat,
    /// Row indices when P is diagonal (fast path), else None.
    diag_bar: Option<Vec<usize>>,
}

fn is_diagonal(m: &DMat) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || nz(m.read(i, j)) == C64::new(0.0, 0.0)))
}

fn commutator_norm(a: &DMat, b: &DMat) -> f64 {
    max_abs(&(a * b - b * a))
}

fn scale(m: &DMat, s: C64) -> DMat {
    DMat::from_fn(m.nrows(), m.ncols(), |i, j| fz(nz(m.read(i, j)) * s))
}

impl FeshbachPair {
    pub fn new(h: DMat, t: DMat, p: DMat) -> Result<Self> {
        let n = h.nrows();
        if [h.ncols(), t.nrows(), t.ncols(), p.nrows(), p.ncols()].iter().any(|&d| d != n) {
            return Err(Error::Invalid("H, T and P must be square of equal size".into()));
        }
        let herm = max_abs(&(&p - adjoint(&p)));
        if herm > 1e-12 {
            return Err(Error::Invalid(format!("P is not hermitian (defect {herm:.2e})")));
        }
        let (vals, vecs) = eigh(&p);
        if vals.iter().any(|&v| v < -1e-12 || v > 1.0 + 1e-12) {
            return Err(Error::Invalid("spectrum of P outside [0,1]".into()));
        }
        // snap eigenvalues within rounding of 0 or 1; sqrt(1 - v²) would turn a 1e-16 split into 1e-8
        let vals: Vec<f64> = vals.iter().map(|&v| if v < 1e-12 { 0.0 } else if v > 1.0 - 1e-12 { 1.0 } else { v }).collect();
        let bar: Vec<f64> = vals.iter().map(|&v| (1.0 - v * v).sqrt()).collect();
        let pbar = if is_diagonal(&p) {
            DMat::from_fn(n, n, |i, j| if i == j { fz(C64::new((1.0 - nz(p.read(i, i)).re.clamp(0.0, 1.0).powi(2)).sqrt(), 0.0)) } else { fz(C64::new(0.0, 0.0)) })
        } else {
            let d = DMat::from_fn(n, n, |i, j| if i == j { fz(C64::new(bar[i], 0.0)) } else { fz(C64::new(0.0, 0.0)) });
            &vecs * &d * adjoint(&vecs)
        };
        let cols_bar: Vec<usize> = (0..n).filter(|&i| bar[i] > RANGE_TOL).collect();
        let cols_p: Vec<usize> = (0..n).filter(|&i| vals[i] > RANGE_TOL).collect();
        if cols_bar.is_empty() || cols_p.is_empty() {
            return Err(Error::Invalid("P and P̄ must both be nonzero".into()));
        }
        let tol = 1e-12 * max_abs(&t).max(1.0);
        if commutator_norm(&t, &p) > tol || commutator_norm(&t, &pbar) > tol {
            return Err(Error::Invalid("T does not commute with P and P̄".into()));
        }
        let diag_bar: Option<Vec<usize>> = is_diagonal(&p).then(|| (0..n).filter(|&i| nz(pbar.read(i, i)).re > RANGE_TOL).collect());
        let all: Vec<usize> = (0..n).collect();
        let (vbar, vp) = match &diag_bar {
            Some(rows) => {
                let prow: Vec<usize> = (0..n).filter(|&i| nz(p.read(i, i)).re > RANGE_TOL).collect();
                (selector(n, rows), selector(n, &prow))
            }
            None => (submatrix(&vecs, &all, &cols_bar), submatrix(&vecs, &all, &cols_p)),
        };
        let w = &h - &t;
        Ok(Self { h, t, p, pbar, w, vbar, vp, diag_bar })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// The same pair for the shifted operators (H - z, T - z).
    pub fn shifted(&self, z: C64) -> Self {
        let n = self.dim();
        let sh = DMat::from_fn(n, n, |i, j| if i == j { fz(z) } else { fz(C64::new(0.0, 0.0)) });
        let mut out = self.clone();
        out.h = &self.h - &sh;
        out.t = &self.t - &sh;
        out
    }

    fn restrict_bar(&self, m: &DMat) -> DMat {
        match &self.diag_bar {
            Some(rows) => submatrix(m, rows, rows),
            None => adjoint(&self.vbar) * m * &self.vbar,
        }
    }

    pub fn pbar_w_pbar(&self) -> DMat {
        &self.pbar * &self.w * &self.pbar
    }

    /// H_P̄ = T + P̄WP̄ restricted to ran P̄.
    fn hbar_restricted(&self) -> DMat {
        self.restrict_bar(&(&self.t + self.pbar_w_pbar()))
    }

    /// (H_P̄)⁻¹ on ran P̄, embedded back in the ambient space.
    fn hbar_inverse_ambient(&self, rhs: &DMat) -> Result<DMat> {
        let hr = self.hbar_restricted();
        check_invertible(&hr)?;
        let x = solve(&hr, &(adjoint(&self.vbar) * rhs));
        Ok(&self.vbar * x)
    }

    pub fn range_p(&self) -> &DMat {
        &self.vp
    }
}

fn selector(n: usize, rows: &[usize]) -> DMat {
    DMat::from_fn(n, rows.len(), |i, j| if rows[j] == i { fz(C64::new(1.0, 0.0)) } else { fz(C64::new(0.0, 0.0)) })
}

fn check_invertible(m: &DMat) -> Result<()> {
    let s = crate::linalg::singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > INVERTIBLE_TOL * smax) || smax == 0.0 {
        return Err(Error::Singular { cond: if smin > 0.0 { smax / smin } else { f64::INFINITY } });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub t_invertible: bool,
    pub hbar_invertible: bool,
    /// ‖T⁻¹P̄WP̄‖ on ran P̄.
    pub crit_left: f64,
    /// ‖P̄WP̄T⁻¹‖ on ran P̄.
    pub crit_right: f64,
    /// ‖T⁻¹P̄WP‖.
    pub crit_mixed: f64,
    pub pass: bool,
    pub message: String,
}

pub fn verify_pair(pair: &FeshbachPair, tol: f64) -> PairReport {
    let tr = pair.restrict_bar(&pair.t);
    let t_inv_ok = check_invertible(&tr).is_ok();
    let hb_ok = check_invertible(&pair.hbar_restricted()).is_ok();
    let (mut c1, mut c2, mut c3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    if t_inv_ok {
        let pwp = pair.restrict_bar(&pair.pbar_w_pbar());
        let tinv = crate::linalg::inverse(&tr);
        c1 = norm2(&(&tinv * &pwp));
        c2 = norm2(&(&pwp * &tinv));
        let mixed = adjoint(&pair.vbar) * &pair.pbar * &pair.w * &pair.p;
        c3 = norm2(&(&tinv * mixed));
    }
    let pass = t_inv_ok && hb_ok && c1 < 1.0 - tol && c2 < 1.0 - tol && c3.is_finite();
    let message = if !t_inv_ok {
        "T not invertible on ran P̄".to_string()
    } else if !hb_ok {
        "H_P̄ not invertible on ran P̄".to_string()
    } else if !pass {
        format!("criteria not below 1: {c1:.3e}, {c2:.3e}")
    } else {
        "ok".to_string()
    };
    PairReport { t_invertible: t_inv_ok, hbar_invertible: hb_ok, crit_left: c1, crit_right: c2, crit_mixed: c3, pass, message }
}

/// F = T + PWP − PWP̄ (H_P̄)⁻¹ P̄WP on the ambient space.
pub fn feshbach_map(pair: &FeshbachPair) -> Result<OperatorMatrix> {
    Ok(OperatorMatrix::Dense(feshbach_dense(pair)?.0))
}

/// Feshbach map plus, when the Neumann criterion holds, the max deviation of
/// the Neumann-series value from the direct solve.
pub fn feshbach_dense(pair: &FeshbachPair) -> Result<(DMat, Option<f64>)> {
    let pw = &pair.p * &pair.w;
    let pwp = &pw * &pair.p;
    let right = &pair.pbar * &pair.w * &pair.p;
    let x = pair.hbar_inverse_ambient(&right)?;
    let corr = &pw * &pair.pbar * &x;
    let f = &pair.t + &pwp - &corr;
    let mut neumann = None;
    let tr = pair.restrict_bar(&pair.t);
    if check_invertible(&tr).is_ok() {
        let tinv = crate::linalg::inverse(&tr);
        let k = &tinv * pair.restrict_bar(&pair.pbar_w_pbar());
        if norm2(&k) < 0.9 {
            // H_P̄⁻¹ = Σ (−T⁻¹P̄WP̄)^n T⁻¹
            let b = adjoint(&pair.vbar) * &right;
            let mut term = &tinv * &b;
            let mut sum = term.clone();
            for _ in 0..500 {
                term = scale(&(&k * &term), C64::new(-1.0, 0.0));
                sum = &sum + &term;
                if max_abs(&term) < 1e-17 * max_abs(&sum).max(1e-300) {
                    break;
                }
            }
            let xn = &pair.vbar * sum;
            neumann = Some(crate::linalg::max_abs_diff(&xn, &x));
        }
    }
    Ok((f, neumann))
}

/// Q = P − P̄ (H_P̄)⁻¹ P̄WP.
pub fn q_operator(pair: &FeshbachPair) -> Result<OperatorMatrix> {
    let right = &pair.pbar * &pair.w * &pair.p;
    let x = pair.hbar_inverse_ambient(&right)?;
    Ok(OperatorMatrix::Dense(&pair.p - &pair.pbar * x))
}

/// F restricted to ran P (orthonormal basis of eigenvectors of P above threshold).
pub fn restrict_to_p(pair: &FeshbachPair, f: &DMat) -> DMat {
    adjoint(pair.range_p()) * f * pair.range_p()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoPoint {
    pub z: C64,
    pub smin_h: f64,
    pub smin_f: f64,
    pub pair_ok: bool,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoReport {
    pub points: Vec<IsoPoint>,
    pub mismatches: usize,
}

/// For every z: smallest singular values of H − z and of F(H − z, T − z) on
/// ran P, and whether they are simultaneously below `tol`.
pub fn isospectrality_check(pair: &FeshbachPair, z_grid: &[C64], tol: f64) -> IsoReport {
    let points: Vec<IsoPoint> = crate::exec::map_slice(z_grid, |&z| {
        let sp = pair.shifted(z);
        let smin_h = min_singular(&sp.h);
        match feshbach_dense(&sp) {
            Ok((f, _)) => {
                let smin_f = min_singular(&restrict_to_p(&sp, &f));
                IsoPoint { z, smin_h, smin_f, pair_ok: true, agree: (smin_h < tol) == (smin_f < tol) }
            }
            Err(_) => IsoPoint { z, smin_h, smin_f: f64::NAN, pair_ok: false, agree: true },
        }
    });
    let mismatches = points.iter().filter(|p| !p.agree).count();
    IsoReport { points, mismatches }
}

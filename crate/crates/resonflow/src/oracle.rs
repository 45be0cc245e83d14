//! Brute-force validation: diagonalization of the fiber Hamiltonian on the
//! truncated space, dilation plateaus, ground-state dispersion and
//! perturbative fits.

use serde::{Deserialize, Serialize};

use crate::atommodel::{free_diagonal, interaction_sparse, AtomSpec, ProblemParams};
use crate::error::{Error, Result};
use crate::fockspace::FockBasis;
use crate::linalg::{dot_conj, eig, fz, nz, power_norm, vec_norm, DMat, SparseMat, C64, ZERO};
use crate::sector::SectorSolver;

/// Dense path below this dimension.
pub const DENSE_CAP: usize = 4000;

/// H_θ(p) = D + V on C^N ⊗ Fock with its photon-number grading.
pub struct FiberOperator {
    pub diag: Vec<C64>,
    pub coupling: SparseMat,
    pub sector: Vec<usize>,
}

impl FiberOperator {
    pub fn new(atom: &AtomSpec, params: &ProblemParams, basis: &FockBasis) -> Self {
        let n = atom.n();
        let diag = free_diagonal(basis, atom, params);
        let coupling = interaction_sparse(basis, params.uv_sigma, atom, params.theta, params.lambda0);
        let sector = (0..diag.len()).map(|i| basis.count(i / n)).collect();
        Self { diag, coupling, sector }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = self.coupling.matvec(x);
        for (i, v) in y.iter_mut().enumerate() {
            *v += self.diag[i] * x[i];
        }
        y
    }

    pub fn to_dense(&self) -> DMat {
        let mut m = self.coupling.to_dense();
        for (i, d) in self.diag.iter().enumerate() {
            m.write(i, i, fz(nz(m.read(i, i)) + d));
        }
        m
    }
}

/// All eigenpairs, sorted by real part (then imaginary part).
pub fn dense_spectrum(h: &DMat) -> (Vec<C64>, DMat) {
    let (vals, vecs) = eig(h);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].re.total_cmp(&vals[b].re).then(vals[a].im.total_cmp(&vals[b].im)));
    let sorted = order.iter().map(|&i| vals[i]).collect();
    let v = DMat::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs.read(r, order[c]));
    (sorted, v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: C64,
    pub residual: f64,
    #[serde(skip)]
    pub vector: Vec<C64>,
}

/// Eigenvalues nearest `sigma`: shift-invert Arnoldi with `krylov` vectors,
/// restarted from the best Ritz vector until the residual is below `tol`.
pub fn eigs_near(op: &FiberOperator, sigma: C64, count: usize, krylov: usize, tol: f64) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if n <= DENSE_CAP {
        let (vals, vecs) = dense_spectrum(&op.to_dense());
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| (vals[a] - sigma).norm().total_cmp(&(vals[b] - sigma).norm()));
        return Ok(idx
            .into_iter()
            .take(count)
            .map(|i| {
                let v: Vec<C64> = (0..n).map(|r| nz(vecs.read(r, i))).collect();
                let r: Vec<C64> = op.apply(&v).iter().zip(&v).map(|(a, b)| a - vals[i] * b).collect();
                EigenPair { value: vals[i], residual: vec_norm(&r) / vec_norm(&v), vector: v }
            })
            .collect());
    }
    let active = vec![true; n];
    let solver = SectorSolver::new(&op.diag, &op.coupling, &op.sector, &active, sigma)?;
    let k = krylov.max(count + 2);
    let mut start: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i % 7) as f64 * 0.01, 0.0)).collect();
    let mut best = Vec::new();
    for _restart in 0..20 {
        let s = vec_norm(&start);
        let mut basis: Vec<Vec<C64>> = vec![start.iter().map(|x| x / s).collect()];
        let mut h = DMat::zeros(k + 1, k);
        let mut kk = k;
        for j in 0..k {
            let mut w = solver.solve(&basis[j])?;
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot_conj(b, &w);
                    h.write(i, j, fz(nz(h.read(i, j)) + c));
                    for (wv, bv) in w.iter_mut().zip(b) {
                        *wv -= c * bv;
                    }
                }
            }
            let nw = vec_norm(&w);
            h.write(j + 1, j, fz(C64::new(nw, 0.0)));
            if nw < 1e-300 {
                kk = j + 1;
                break;
            }
            basis.push(w.iter().map(|x| x / nw).collect());
        }
        let hk = DMat::from_fn(kk, kk, |r, c| h.read(r, c));
        let (ritz, y) = eig(&hk);
        let mut order: Vec<usize> = (0..kk).collect();
        order.sort_by(|&a, &b| ritz[b].norm().total_cmp(&ritz[a].norm()));
        best.clear();
        for &o in order.iter().take(count) {
            let mut v = vec![ZERO; n];
            for (c, b) in basis.iter().take(kk).enumerate() {
                let yc = nz(y.read(c, o));
                for (vv, bv) in v.iter_mut().zip(b) {
                    *vv += yc * bv;
                }
            }
            let value = sigma + 1.0 / ritz[o];
            let r: Vec<C64> = op.apply(&v).iter().zip(&v).map(|(a, b)| a - value * b).collect();
            best.push(EigenPair { value, residual: vec_norm(&r) / vec_norm(&v), vector: v });
        }
        if best.iter().all(|p| p.residual < tol) {
            break;
        }
        start = best.iter().fold(vec![ZERO; n], |mut acc, p| {
            for (a, b) in acc.iter_mut().zip(&p.vector) {
                *a += b;
            }
            acc
        });
    }
    best.sort_by(|a, b| (a.value - sigma).norm().total_cmp(&(b.value - sigma).norm()));
    Ok(best)
}

/// The eigenvalue of H_θ(p) nearest `guess`.
pub fn resonance_at(atom: &AtomSpec, params: &ProblemParams, basis: &FockBasis, guess: C64) -> Result<EigenPair> {
    let op = FiberOperator::new(atom, params, basis);
    let mut v = eigs_near(&op, guess, 1, 12, 1e-11)?;
    Ok(v.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub thetas: Vec<f64>,
    pub values: Vec<C64>,
    pub residuals: Vec<f64>,
    /// |dz/dϑ| between neighbouring sweep points.
    pub derivs: Vec<f64>,
    pub index: usize,
    pub z_res: C64,
    /// Largest deviation of the plateau neighbours from z_res.
    pub noise: f64,
}

/// Tracks the eigenvalue nearest E_i0 (or `guess`) over a ϑ sweep and
/// returns the value where |dz/dϑ| is smallest.
pub fn resonance_by_dilation(atom: &AtomSpec, params: &ProblemParams, basis: &FockBasis, thetas: &[f64], guess: Option<C64>) -> Result<PlateauReport> {
    if thetas.len() < 3 {
        return Err(Error::Invalid("plateau detection needs at least 3 angles".into()));
    }
    let e_i0 = C64::new(atom.energies[params.level()], 0.0);
    let mut g = guess.unwrap_or(e_i0);
    let mut values = Vec::new();
    let mut residuals = Vec::new();
    for &t in thetas {
        let mut p = params.clone();
        p.theta = C64::new(0.0, t);
        let pair = resonance_at(atom, &p, basis, g)?;
        g = pair.value;
        values.push(pair.value);
        residuals.push(pair.residual);
    }
    let derivs: Vec<f64> = (0..thetas.len() - 1).map(|k| (values[k + 1] - values[k]).norm() / (thetas[k + 1] - thetas[k]).abs()).collect();
    // interior point whose two adjacent derivatives are smallest
    let index = (1..thetas.len() - 1).min_by(|&a, &b| (derivs[a - 1] + derivs[a]).total_cmp(&(derivs[b - 1] + derivs[b]))).expect("at least 3 angles");
    let z_res = values[index];
    let noise = (values[index - 1] - z_res).norm().max((values[index + 1] - z_res).norm());
    let floor = derivs.iter().cloned().fold(f64::INFINITY, f64::min);
    if (derivs[index - 1] + derivs[index]) / 2.0 > 10.0 * floor.max(1e-14) && noise > 1e-6 * z_res.norm().max(1.0) {
        return Err(Error::NoPlateau { best: noise });
    }
    Ok(PlateauReport { thetas: thetas.to_vec(), values, residuals, derivs, index, z_res, noise })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    pub energy: f64,
    pub gap: f64,
    pub residual: f64,
    pub simple: bool,
}

pub const GAP_TOL: f64 = 1e-6;

/// Lowest eigenvalue of the self-adjoint H(p) (θ must be 0, p real) and the
/// distance to the next one.
pub fn ground_state_energy(atom: &AtomSpec, params: &ProblemParams, basis: &FockBasis) -> Result<GroundState> {
    if params.theta != ZERO || params.p.iter().any(|x| x.im != 0.0) {
        return Err(Error::Invalid("ground state needs theta = 0 and real p".into()));
    }
    let op = FiberOperator::new(atom, params, basis);
    let low = op.diag.iter().map(|d| d.re).fold(f64::INFINITY, f64::min);
    let adj = op.coupling.adjoint();
    let wn = power_norm(op.dim(), |x| op.coupling.matvec(x), |y| adj.matvec(y));
    // below the spectrum, then just below the located minimum
    let rough = eigs_near(&op, C64::new(low - 1.01 * wn - 1e-3, 0.0), 1, 20, 1e-6)?;
    let e0 = rough[0].value.re;
    let sigma = C64::new(e0 - 1e-3 - 1e-3 * e0.abs(), 0.0);
    let pairs = eigs_near(&op, sigma, 2, 30, 1e-11)?;
    let mut vals: Vec<(f64, f64)> = pairs.iter().map(|p| (p.value.re, p.residual)).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gap = vals[1].0 - vals[0].0;
    Ok(GroundState { energy: vals[0].0, gap, residual: vals[0].1.max(vals[1].1), simple: gap > GAP_TOL })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationFit {
    /// Fitted coefficient of λ₀² in (z − E_i0) = a λ₀² + b λ₀⁴.
    pub a: C64,
    pub b: C64,
    pub a_ref: C64,
    pub rel_err: f64,
    /// Slope of log|z − E_i0 − a_ref λ₀²| against log λ₀.
    pub residual_exponent: f64,
}

/// Least-squares fit of z(λ₀) − E_i0 against λ₀² and λ₀⁴.
pub fn perturbation_fit(e_i0: f64, lambdas: &[f64], zs: &[C64], a_ref: C64) -> Result<PerturbationFit> {
    let pts: Vec<(f64, C64)> = lambdas.iter().zip(zs).filter(|(l, _)| **l > 0.0).map(|(l, z)| (*l, *z)).collect();
    if pts.len() < 3 {
        return Err(Error::Invalid("perturbation fit needs at least 3 nonzero couplings".into()));
    }
    // (z − E)/λ² = a + b λ²
    let (mut sx, mut sxx) = (0.0, 0.0);
    let (mut sy, mut sxy) = (ZERO, ZERO);
    for &(l, z) in &pts {
        let x = l * l;
        let y = (z - e_i0) / x;
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += y * x;
    }
    let n = pts.len() as f64;
    let det = n * sxx - sx * sx;
    let b = (sxy * n - sy * sx) / det;
    let a = (sy - b * sx) / n;
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &(l, z) in &pts {
        let r = (z - e_i0 - a_ref * l * l).norm();
        if r > 0.0 {
            lx.push(l.ln());
            ly.push(r.ln());
        }
    }
    let residual_exponent = if lx.len() >= 2 { linear_fit(&lx, &ly).0 } else { f64::INFINITY };
    Ok(PerturbationFit { a, b, a_ref, rel_err: (a - a_ref).norm() / a_ref.norm(), residual_exponent })
}

/// (slope, intercept, R²) of a least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

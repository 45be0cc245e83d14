//! Atomic data, the dilated dipole interaction and the fiber Hamiltonians
//! on C^N ⊗ Fock.
//!
//! Product-space index of (fock state f, atomic level a) is `f * N + a`, so
//! photon-number sectors are contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{FockBasis, ModeGrid};
use crate::linalg::{fz, nz, norm2, DMat, OperatorMatrix, SparseMat, C64, I, ZERO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub energies: Vec<f64>,
    /// d^1, d^2, d^3 as row-major N×N complex matrices.
    pub dipoles: [Vec<C64>; 3],
    pub delta0: f64,
}

impl AtomSpec {
    /// Validates ordering, hermiticity and unit operator norm of each nonzero
    /// dipole matrix.
    pub fn new(energies: Vec<f64>, dipoles: [Vec<C64>; 3]) -> Result<Self> {
        Self::build(energies, dipoles, true)
    }

    /// As [`AtomSpec::new`] without the unit-norm requirement (for zeroed or
    /// partially switched-off couplings).
    pub fn new_unnormalized(energies: Vec<f64>, dipoles: [Vec<C64>; 3]) -> Result<Self> {
        Self::build(energies, dipoles, false)
    }

    fn build(energies: Vec<f64>, dipoles: [Vec<C64>; 3], unit_norm: bool) -> Result<Self> {
        let n = energies.len();
        if n == 0 {
            return Err(Error::Invalid("atom needs at least one level".into()));
        }
        if energies.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("atomic energies must be strictly increasing".into()));
        }
        for (c, d) in dipoles.iter().enumerate() {
            if d.len() != n * n {
                return Err(Error::Invalid(format!("dipole d^{} has {} entries, expected {}", c + 1, d.len(), n * n)));
            }
            for i in 0..n {
                for j in 0..n {
                    if (d[i * n + j] - d[j * n + i].conj()).norm() > 1e-12 {
                        return Err(Error::Invalid(format!("dipole d^{} is not hermitian", c + 1)));
                    }
                }
            }
            if unit_norm {
                let m = DMat::from_fn(n, n, |i, j| fz(d[i * n + j]));
                let s = norm2(&m);
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Invalid(format!("dipole d^{} has operator norm {s}, expected 1", c + 1)));
                }
            }
        }
        let delta0 = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        Ok(Self { energies, dipoles, delta0 })
    }

    /// E = (0, 1) with d^1 = d^2 = d^3 = sigma_x.
    pub fn two_level_reference() -> Self {
        let sx = vec![ZERO, C64::new(1.0, 0.0), C64::new(1.0, 0.0), ZERO];
        Self::new(vec![0.0, 1.0], [sx.clone(), sx.clone(), sx]).expect("reference atom is valid")
    }

    pub fn n(&self) -> usize {
        self.energies.len()
    }

    pub fn d(&self, c: usize, i: usize, j: usize) -> C64 {
        self.dipoles[c][i * self.n() + j]
    }

    /// Row-major ε·d.
    pub fn eps_dot_d(&self, eps: [f64; 3]) -> Vec<C64> {
        let n = self.n();
        (0..n * n).map(|ij| (0..3).map(|c| self.dipoles[c][ij] * eps[c]).sum()).collect()
    }

    pub fn with_dipoles_scaled(&self, s: f64) -> Self {
        let dipoles = self.dipoles.clone().map(|d| d.into_iter().map(|v| v * s).collect());
        Self { energies: self.energies.clone(), dipoles, delta0: self.delta0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub lambda0: f64,
    /// Dilation parameter θ; i ϑ in all physical runs.
    pub theta: C64,
    pub p: [C64; 3],
    pub p_star: [f64; 3],
    pub mu: f64,
    pub uv_sigma: f64,
    pub rho0: f64,
    pub eps: f64,
    /// Targeted level, 1-based (1 = ground state).
    pub i0: usize,
}

impl ProblemParams {
    /// θ = iϑ, μ = (1 - |p*|)/2, ρ₀ = 0.5 min(1, δ₀), ε = 1/2.
    pub fn new(atom: &AtomSpec, lambda0: f64, vartheta: f64, p: [C64; 3], p_star: [f64; 3], i0: usize) -> Self {
        let pn = (p_star[0] * p_star[0] + p_star[1] * p_star[1] + p_star[2] * p_star[2]).sqrt();
        Self {
            lambda0,
            theta: C64::new(0.0, vartheta),
            p,
            p_star,
            mu: (1.0 - pn) / 2.0,
            uv_sigma: 1.0,
            rho0: 0.5 * atom.delta0.min(1.0),
            eps: 0.5,
            i0,
        }
    }

    pub fn real_p(p: [f64; 3]) -> [C64; 3] {
        p.map(|x| C64::new(x, 0.0))
    }

    pub fn vartheta(&self) -> f64 {
        self.theta.im
    }

    pub fn level(&self) -> usize {
        self.i0 - 1
    }

    pub fn validate(&self, atom: &AtomSpec) -> Result<()> {
        if self.i0 == 0 || self.i0 > atom.n() {
            return Err(Error::Invalid(format!("i0={} outside 1..={}", self.i0, atom.n())));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(Error::Invalid("lambda0 must be nonnegative".into()));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Invalid("rho0 and eps must lie in (0,1)".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Invalid("|p*| must be below 1".into()));
        }
        Ok(())
    }
}

/// e^{-θ}
pub fn dil(theta: C64) -> C64 {
    (-theta).exp()
}

/// Photon-number independent coefficient i e^{-2θ} Λ(e^{-θ}k) |k|^{1/2} of mode k.
pub fn coupling(kabs: f64, uv_sigma: f64, theta: C64) -> C64 {
    let e2 = (-2.0 * theta).exp();
    let lam = (-e2 * kabs * kabs / (2.0 * uv_sigma * uv_sigma)).exp();
    I * e2 * lam * kabs.sqrt()
}

/// Free energy e^{-2θ}l²/2 + e^{-θ}(r - p·l) of a photon configuration.
pub fn free_field_energy(r: f64, l: [f64; 3], p: [C64; 3], theta: C64) -> C64 {
    let e1 = dil(theta);
    let e2 = e1 * e1;
    let l2 = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    let pl: C64 = (0..3).map(|c| p[c] * l[c]).sum();
    e2 * (l2 / 2.0) + e1 * (r - pl)
}

/// Per-mode interaction data: coefficient c_k and row-major ε_k·d.
pub struct ModeCoupling {
    pub c: Vec<C64>,
    pub ed: Vec<Vec<C64>>,
}

pub fn mode_couplings(basis: &FockBasis, uv_sigma: f64, atom: &AtomSpec, theta: C64) -> ModeCoupling {
    let c = basis.modes().iter().map(|m| coupling(m.kabs, uv_sigma, theta)).collect();
    let ed = basis.modes().iter().map(|m| atom.eps_dot_d(m.eps)).collect();
    ModeCoupling { c, ed }
}

/// H_{I,θ} = Σ w c_k (ε·d ⊗ a_k - ε·d ⊗ a_k^*) on C^N ⊗ Fock.
pub fn dilated_interaction(grid: &ModeGrid, basis: &FockBasis, atom: &AtomSpec, theta: C64) -> OperatorMatrix {
    OperatorMatrix::Sparse(interaction_sparse(basis, grid.uv_sigma, atom, theta, 1.0))
}

pub fn interaction_sparse(basis: &FockBasis, uv_sigma: f64, atom: &AtomSpec, theta: C64, scale: f64) -> SparseMat {
    let n = atom.n();
    let mc = mode_couplings(basis, uv_sigma, atom, theta);
    let dim = basis.dim() * n;
    let mut trip = Vec::new();
    for f in 0..basis.dim() {
        for (m, occ) in basis.occupations(f) {
            let Some(g) = basis.remove(f, m) else { continue };
            let amp = (basis.modes()[m].weight * occ as f64).sqrt() * scale;
            let cm = mc.c[m] * amp;
            for a in 0..n {
                for b in 0..n {
                    let v = cm * mc.ed[m][a * n + b];
                    if v != ZERO {
                        trip.push((g * n + a, f * n + b, v));
                        trip.push((f * n + a, g * n + b, -v));
                    }
                }
            }
        }
    }
    SparseMat::from_triplets(dim, dim, trip)
}

/// Diagonal of the free fiber Hamiltonian.
pub fn free_diagonal(basis: &FockBasis, atom: &AtomSpec, params: &ProblemParams) -> Vec<C64> {
    let n = atom.n();
    let mut d = Vec::with_capacity(basis.dim() * n);
    for f in 0..basis.dim() {
        let fe = free_field_energy(basis.energy(f), basis.momentum(f), params.p, params.theta);
        for a in 0..n {
            d.push(fe + atom.energies[a]);
        }
    }
    d
}

fn check_dims(grid: &ModeGrid, basis: &FockBasis) -> Result<()> {
    if grid.len() != basis.n_modes() {
        return Err(Error::Invalid(format!("grid has {} modes, basis was built on {}", grid.len(), basis.n_modes())));
    }
    Ok(())
}

/// H_θ(p) = e^{-2θ}P_f²/2 - e^{-θ}p·P_f + H_is + e^{-θ}H_f + λ₀ H_{I,θ}.
pub fn fiber_hamiltonian(grid: &ModeGrid, basis: &FockBasis, atom: &AtomSpec, params: &ProblemParams) -> Result<OperatorMatrix> {
    check_dims(grid, basis)?;
    let d = SparseMat::diagonal(&free_diagonal(basis, atom, params));
    if params.lambda0 == 0.0 {
        return Ok(OperatorMatrix::Sparse(d));
    }
    let hi = interaction_sparse(basis, grid.uv_sigma, atom, params.theta, params.lambda0);
    Ok(OperatorMatrix::Sparse(d.add(&hi)))
}

pub fn free_fiber_hamiltonian(grid: &ModeGrid, basis: &FockBasis, atom: &AtomSpec, params: &ProblemParams) -> Result<OperatorMatrix> {
    check_dims(grid, basis)?;
    Ok(OperatorMatrix::Sparse(SparseMat::diagonal(&free_diagonal(basis, atom, params))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub mu: f64,
    pub dist_p_pstar: f64,
    pub im_p: f64,
    pub in_domain: bool,
    /// σ^{-3/2} ρ₀^{1/2} μ sin ϑ / λ₀ (large means the coupling is comfortably small).
    pub coupling_margin: f64,
    /// ρ₀ / (λ₀² σ³ (μ sin ϑ)^{-2}).
    pub rho0_margin: f64,
    pub rho0_below_delta0: bool,
    pub theta_in_range: bool,
}

pub fn domain_check(params: &ProblemParams, atom: &AtomSpec) -> DomainReport {
    let mu = params.mu;
    let dist = (0..3).map(|c| (params.p[c] - params.p_star[c]).norm_sqr()).sum::<f64>().sqrt();
    let im_p = (0..3).map(|c| params.p[c].im.powi(2)).sum::<f64>().sqrt();
    let vt = params.vartheta();
    let in_domain = dist < mu && im_p < 0.5 * mu * vt.tan();
    let s = params.uv_sigma;
    let ms = mu * vt.sin();
    let coupling_margin = if params.lambda0 == 0.0 { f64::INFINITY } else { s.powf(-1.5) * params.rho0.sqrt() * ms / params.lambda0 };
    let rho0_margin = if params.lambda0 == 0.0 { f64::INFINITY } else { params.rho0 * ms * ms / (params.lambda0.powi(2) * s.powi(3)) };
    DomainReport {
        mu,
        dist_p_pstar: dist,
        im_p,
        in_domain,
        coupling_margin,
        rho0_margin,
        rho0_below_delta0: params.rho0 < atom.delta0.min(1.0),
        theta_in_range: params.theta.re == 0.0 && vt > 0.0 && vt < std::f64::consts::FRAC_PI_4,
    }
}

/// Atomic block ⟨a|·|b⟩ as a dense matrix; helper for tests.
pub fn atom_matrix(n: usize, m: &[C64]) -> DMat {
    DMat::from_fn(n, n, |i, j| fz(m[i * n + j]))
}

pub fn atom_entry(m: &DMat, i: usize, j: usize) -> C64 {
    nz(m.read(i, j))
}

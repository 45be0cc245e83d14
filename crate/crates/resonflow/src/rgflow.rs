//! The renormalization flow: first decimation, scale schedule, decimation
//! steps, zero finding, and eigenvector reconstruction.
//!
//! Every family depends analytically on the spectral parameter z. Step j
//! keeps a polynomial model of its family in z, fitted from samples on the
//! circle of radius r_j around z^(j-1) (trapezoid/Cauchy coefficients).
//! Samples of step j+1 are produced by one decimation of the step-j model
//! evaluated at the sample point.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::atommodel::{free_field_energy, interaction_sparse, mode_couplings, AtomSpec, ProblemParams};
use crate::error::{Error, Result};
use crate::fockspace::{CutoffProfile, FockBasis};
use crate::kernels::{
    evaluate_on, norm_check, rewick, w_ge1_norm, Amp, Chain, KernelFamily, KernelKey, NormCheck, RewickOptions, Subspace, WickKernel,
    MAX_AMP,
};
use crate::linalg::{fz, nz, power_norm, solve, vec_norm, DMat, SparseMat, C64, ZERO};
use crate::sector::SectorSolver;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub rho0: f64,
    pub eps: f64,
    pub mu: f64,
    pub vartheta: f64,
}

impl ScaleSchedule {
    pub fn new(rho0: f64, eps: f64, mu: f64, vartheta: f64) -> Self {
        Self { rho0, eps, mu, vartheta }
    }

    pub fn from_params(p: &ProblemParams) -> Self {
        Self::new(p.rho0, p.eps, p.mu, p.vartheta())
    }

    /// ρ_j, obtained by iterating ρ ↦ ρ^{2-ε}.
    pub fn rho(&self, j: usize) -> f64 {
        let mut r = self.rho0;
        for _ in 0..j {
            r = self.next(r);
        }
        r
    }

    pub fn next(&self, rho: f64) -> f64 {
        rho.powf(2.0 - self.eps)
    }

    pub fn r(&self, j: usize) -> f64 {
        self.mu * self.vartheta.sin() * self.rho(j) / 32.0
    }

    /// Σ_{k>j} r_k / 2.
    pub fn enclosure(&self, j: usize) -> f64 {
        let mut s = 0.0;
        let mut rho = self.rho(j);
        for _ in 0..64 {
            rho = self.next(rho);
            let t = self.mu * self.vartheta.sin() * rho / 64.0;
            s += t;
            if t < 1e-300 || t < s * 1e-17 {
                break;
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub l_max: usize,
    pub m_max: usize,
    pub j_max: usize,
    /// Newton tolerance on |ℰ|; 0 selects 1e-14 max(1, |E_i0|).
    pub tol_z: f64,
    pub newton_max: usize,
    pub track_dropped: bool,
    pub norm_checks: bool,
    /// Chain terms are kept until their operator-norm tail is below this
    /// (times max(1, |E_i0|)); `l_max` caps the length.
    pub tail_tol: f64,
    /// z-samples per fit at step 0 and at later steps.
    pub samples_first: usize,
    pub samples: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { l_max: 4, m_max: 2, j_max: 12, tol_z: 0.0, newton_max: 50, track_dropped: true, norm_checks: true, tail_tol: 1e-15, samples_first: 6, samples: 6 }
    }
}

pub const SAMPLES: usize = 16;
pub const PROFILE: CutoffProfile = CutoffProfile::Cosine;

/// Fixed data of one flow: model, basis and precomputed tables.
pub struct FlowModel {
    pub atom: AtomSpec,
    pub params: ProblemParams,
    pub basis: FockBasis,
    pub opts: FlowOptions,
    pub schedule: ScaleSchedule,
    /// Field part of the free energy per basis state.
    pub free: Vec<C64>,
    /// λ c_q per mode.
    lc: Vec<C64>,
    /// ε_q·d per mode, row-major.
    ed: Vec<Vec<C64>>,
    all_modes: Vec<u32>,
    /// λ H_I on C^N ⊗ Fock (index f*N + a).
    pub interaction: SparseMat,
    pub w_norm: f64,
}

impl FlowModel {
    pub fn new(atom: AtomSpec, params: ProblemParams, basis: FockBasis, opts: FlowOptions) -> Result<Self> {
        params.validate(&atom)?;
        if atom.n() > MAX_AMP {
            return Err(Error::Invalid(format!("at most {MAX_AMP} atomic levels in the flow")));
        }
        if opts.m_max > crate::kernels::MAX_LEGS || opts.l_max == 0 {
            return Err(Error::Invalid("need 1 <= l_max and m_max <= 4".into()));
        }
        if opts.samples_first < 4 || opts.samples < 4 {
            return Err(Error::Invalid("at least 4 z-samples per fit".into()));
        }
        let free = (0..basis.dim()).map(|s| free_field_energy(basis.energy(s), basis.momentum(s), params.p, params.theta)).collect();
        let mc = mode_couplings(&basis, params.uv_sigma, &atom, params.theta);
        let lc = mc.c.iter().map(|c| c * params.lambda0).collect();
        let interaction = interaction_sparse(&basis, params.uv_sigma, &atom, params.theta, params.lambda0);
        let all_modes = (0..basis.n_modes() as u32).collect();
        let schedule = ScaleSchedule::from_params(&params);
        let adj = interaction.adjoint();
        let w_norm = if params.lambda0 > 0.0 { power_norm(interaction.nrows, |x| interaction.matvec(x), |y| adj.matvec(y)) } else { 0.0 };
        Ok(Self { atom, params, basis, opts, schedule, free, lc, ed: mc.ed, all_modes, interaction, w_norm })
    }

    pub fn n(&self) -> usize {
        self.atom.n()
    }

    pub fn e_i0(&self) -> f64 {
        self.atom.energies[self.params.level()]
    }

    pub fn tol_z(&self) -> f64 {
        if self.opts.tol_z > 0.0 {
            self.opts.tol_z
        } else {
            1e-14 * self.e_i0().abs().max(1.0)
        }
    }

    pub fn tail_tol(&self) -> f64 {
        self.opts.tail_tol * self.e_i0().abs().max(1.0)
    }

    fn rewick_options(&self, track_dropped: bool) -> RewickOptions {
        RewickOptions { l_max: self.opts.l_max, m_max: self.opts.m_max, track_dropped }
    }

    /// Diagonal of H_0 - z on C^N ⊗ Fock.
    pub fn free_diag(&self, z: C64) -> Vec<C64> {
        let n = self.n();
        let mut d = Vec::with_capacity(self.basis.dim() * n);
        for f in 0..self.basis.dim() {
            for a in 0..n {
                d.push(self.free[f] + self.atom.energies[a] - z);
            }
        }
        d
    }

    /// 𝛘 = P_i0 ⊗ χ_ρ0(H_f) as a diagonal.
    pub fn chi_diag(&self) -> Vec<f64> {
        let n = self.n();
        let i0 = self.params.level();
        let mut d = Vec::with_capacity(self.basis.dim() * n);
        for f in 0..self.basis.dim() {
            let c = PROFILE.chi_at(self.basis.energy(f), self.params.rho0);
            for a in 0..n {
                d.push(if a == i0 { c } else { 0.0 });
            }
        }
        d
    }
}

struct FirstChain<'a> {
    m: &'a FlowModel,
    res: Vec<Amp>,
    outer: Vec<f64>,
}

impl Chain for FirstChain<'_> {
    fn basis(&self) -> &FockBasis {
        &self.m.basis
    }

    fn na(&self) -> usize {
        self.m.n()
    }

    fn factor_orders(&self) -> Vec<(usize, usize)> {
        vec![(0, 1), (1, 0)]
    }

    fn factor(&self, order: (usize, usize), _mid: usize, cre: &[u32], ann: &[u32], amp: &Amp, out: &mut Amp) -> bool {
        let (q, coef) = if order == (1, 0) { (cre[0] as usize, -self.m.lc[cre[0] as usize]) } else { (ann[0] as usize, self.m.lc[ann[0] as usize]) };
        if coef == ZERO {
            return false;
        }
        let n = self.m.n();
        let ed = &self.m.ed[q];
        let mut any = false;
        for a in 0..n {
            let mut v = ZERO;
            for b in 0..n {
                v += ed[a * n + b] * amp[b];
            }
            out[a] = coef * v;
            any |= out[a] != ZERO;
        }
        any
    }

    fn resolvent(&self, config: usize, amp: &mut Amp) -> bool {
        let r = &self.res[config];
        let mut any = false;
        for a in 0..self.m.n() {
            amp[a] *= r[a];
            any |= amp[a] != ZERO;
        }
        any
    }

    fn inflight_modes(&self) -> &[u32] {
        &self.m.all_modes
    }

    fn outer(&self, config: usize) -> f64 {
        self.outer[config]
    }

    fn start(&self) -> Amp {
        let mut a = [ZERO; MAX_AMP];
        a[self.m.params.level()] = C64::new(1.0, 0.0);
        a
    }

    fn finish(&self, amp: &Amp) -> C64 {
        amp[self.m.params.level()]
    }
}

/// ‖T⁻¹P̄WP̄‖ on ran P̄ for the first pair (H_θ - z, H_θ,0 - z) with P = 𝛘.
pub fn first_neumann_ratio(m: &FlowModel, z: C64) -> f64 {
    let d = m.free_diag(z);
    let chi = m.chi_diag();
    let pbar: Vec<f64> = chi.iter().map(|c| (1.0 - c * c).max(0.0).sqrt()).collect();
    let w = &m.interaction;
    let wa = w.adjoint();
    let n = d.len();
    power_norm(
        n,
        |x| {
            let y: Vec<C64> = x.iter().zip(&pbar).map(|(v, p)| v * *p).collect();
            let y = w.matvec(&y);
            y.iter().enumerate().map(|(i, v)| if pbar[i] > 0.0 { v * pbar[i] / d[i] } else { ZERO }).collect()
        },
        |x| {
            let y: Vec<C64> = x.iter().enumerate().map(|(i, v)| if pbar[i] > 0.0 { v * pbar[i] / d[i].conj() } else { ZERO }).collect();
            let y = wa.matvec(&y);
            y.iter().zip(&pbar).map(|(v, p)| v * *p).collect()
        },
    )
}

/// H^(0)(z) = ⟨ψ_i0| F_𝛘(H_θ - z, H_θ,0 - z) |ψ_i0⟩ on H_f <= ρ₀ as a kernel family.
pub fn first_decimation(m: &FlowModel, z: C64) -> Result<KernelFamily> {
    first_decimation_with(m, z, m.opts.track_dropped)
}

pub fn first_decimation_with(m: &FlowModel, z: C64, track_dropped: bool) -> Result<KernelFamily> {
    let n = m.n();
    let i0 = m.params.level();
    let rho0 = m.params.rho0;
    let basis = &m.basis;
    let mut res = vec![[ZERO; MAX_AMP]; basis.dim()];
    let mut outer = vec![0.0; basis.dim()];
    for s in 0..basis.dim() {
        let e = basis.energy(s);
        outer[s] = PROFILE.chi_at(e, rho0);
        for a in 0..n {
            let num = if a == i0 { PROFILE.chibar_at(e, rho0).powi(2) } else { 1.0 };
            if num == 0.0 {
                continue;
            }
            let den = m.free[s] + m.atom.energies[a] - z;
            if den.norm() < 1e-10 {
                return Err(Error::NearPole(den.norm()));
            }
            res[s][a] = num / den;
        }
    }
    let mut tail = 0.0;
    if m.params.lambda0 > 0.0 {
        let ratio = first_neumann_ratio(m, z);
        if !(ratio < 1.0) {
            return Err(Error::PairFailed(format!("Neumann ratio {ratio:.3e} >= 1")));
        }
        let tinv = res.iter().flat_map(|r| r.iter().map(|v| v.norm())).fold(0.0, f64::max);
        tail = m.w_norm * m.w_norm * tinv * ratio.powi(m.opts.l_max as i32 - 1) / (1.0 - ratio);
    }
    let sub = Subspace::below(basis, rho0);
    let mut fam = KernelFamily::new(rho0, C64::new(m.atom.energies[i0], 0.0) - z);
    if m.params.lambda0 == 0.0 {
        fam.kernels.insert((0, 0), w00_kernel(&sub, |s| m.free[s]));
        return Ok(fam);
    }
    let chain = FirstChain { m, res, outer };
    let out = rewick(&chain, &sub, &m.rewick_options(track_dropped));
    let c00: BTreeMap<usize, C64> = out.c00.into_iter().collect();
    let vac = c00[&0];
    fam.e += vac;
    fam.kernels.insert((0, 0), w00_kernel(&sub, |s| m.free[s] + c00[&s] - vac));
    fam.kernels.extend(out.kernels);
    fam.dropped_mass = out.dropped_mass;
    fam.tail_bound = tail;
    fam.chain_len = m.opts.l_max;
    Ok(fam)
}

fn w00_kernel(sub: &Subspace, f: impl Fn(usize) -> C64) -> WickKernel {
    WickKernel::from_entries(0, 0, sub.idx.iter().map(|&s| (KernelKey::new(s, &[], &[]), f(s))).collect())
}

/// Matrix path: ⟨ψ_i0|F_𝛘|ψ_i0⟩ on H_f <= ρ₀ by direct sparse/Schur solves.
/// Rows and columns follow `Subspace::below(basis, ρ₀).idx`.
pub fn first_decimation_matrix(m: &FlowModel, z: C64) -> Result<DMat> {
    let n = m.n();
    let i0 = m.params.level();
    let basis = &m.basis;
    let dim = basis.dim() * n;
    let d = m.free_diag(C64::new(0.0, 0.0));
    let chi = m.chi_diag();
    let pbar: Vec<f64> = chi.iter().map(|c| (1.0 - c * c).max(0.0).sqrt()).collect();
    let w = &m.interaction;
    let coupling = SparseMat::from_triplets(dim, dim, w.triplets().map(|(i, j, v)| (i, j, v * pbar[i] * pbar[j])));
    let sector: Vec<usize> = (0..dim).map(|i| basis.count(i / n)).collect();
    let active: Vec<bool> = pbar.iter().map(|&p| p > 0.0).collect();
    let solver = SectorSolver::new(&d, &coupling, &sector, &active, z)?;
    let sub = Subspace::below(basis, m.params.rho0);
    let cols: Vec<usize> = sub.idx.iter().map(|&s| s * n + i0).collect();
    let k = cols.len();
    let mut f = DMat::zeros(k, k);
    for chunk in cols.chunks(64).enumerate() {
        let (ci, block) = chunk;
        let mut rhs = Vec::with_capacity(block.len());
        let mut pwp = Vec::with_capacity(block.len());
        for &c in block {
            let mut e = vec![ZERO; dim];
            e[c] = C64::new(chi[c], 0.0);
            let we = w.matvec(&e);
            rhs.push(we.iter().enumerate().map(|(i, v)| v * pbar[i]).collect::<Vec<_>>());
            pwp.push(we);
        }
        let xs = solver.solve_many(&rhs)?;
        for (bi, &c) in block.iter().enumerate() {
            let x: Vec<C64> = xs[bi].iter().enumerate().map(|(i, v)| v * pbar[i]).collect();
            let wx = w.matvec(&x);
            let col = ci * 64 + bi;
            for (row, &r) in cols.iter().enumerate() {
                let mut v = chi[r] * (pwp[bi][r] - wx[r]);
                if r == c {
                    v += d[r] - z;
                }
                f.write(row, col, fz(v));
            }
        }
    }
    Ok(f)
}

struct FlowChain<'a> {
    basis: &'a FockBasis,
    fam: &'a KernelFamily,
    orders: Vec<(usize, usize)>,
    res: Vec<C64>,
    outer: Vec<f64>,
    modes: Vec<u32>,
}

impl Chain for FlowChain<'_> {
    fn basis(&self) -> &FockBasis {
        self.basis
    }

    fn na(&self) -> usize {
        1
    }

    fn factor_orders(&self) -> Vec<(usize, usize)> {
        self.orders.clone()
    }

    fn factor(&self, order: (usize, usize), mid: usize, cre: &[u32], ann: &[u32], amp: &Amp, out: &mut Amp) -> bool {
        let Some(k) = self.fam.kernels.get(&order) else { return false };
        let v = k.get(&KernelKey::new(mid, cre, ann));
        out[0] = v * amp[0];
        v != ZERO
    }

    fn resolvent(&self, config: usize, amp: &mut Amp) -> bool {
        amp[0] *= self.res[config];
        self.res[config] != ZERO
    }

    fn inflight_modes(&self) -> &[u32] {
        &self.modes
    }

    fn outer(&self, config: usize) -> f64 {
        self.outer[config]
    }

    fn start(&self) -> Amp {
        let mut a = [ZERO; MAX_AMP];
        a[0] = C64::new(1.0, 0.0);
        a
    }

    fn finish(&self, amp: &Amp) -> C64 {
        amp[0]
    }
}

/// min over χ̄_ρ̃ ≠ 0 of |w00 + ℰ| / (μρ̃/2); errors when below 1.
pub fn resolvent_margin(basis: &FockBasis, fam: &KernelFamily, rho_out: f64, mu: f64, step: usize) -> Result<f64> {
    let bound = mu * rho_out / 2.0;
    let mut worst = f64::INFINITY;
    for &s in &basis.below(fam.rho) {
        if PROFILE.chibar_at(basis.energy(s), rho_out) == 0.0 {
            continue;
        }
        let v = (fam.w00(s) + fam.e).norm();
        if v < bound {
            let _ = step;
            return Err(Error::ResolventBound { state: s, value: v, bound });
        }
        worst = worst.min(v / bound);
    }
    Ok(worst)
}

/// One step ρ → ρ^{2-ε}: F_χ(H[w, ℰ], W00 + ℰ) re-Wick ordered.
pub fn decimation_step(m: &FlowModel, fam: &KernelFamily, step: usize) -> Result<KernelFamily> {
    decimation_step_with(&m.basis, fam, m.schedule.next(fam.rho), m.params.mu, step, &m.rewick_options(m.opts.track_dropped), m.tail_tol())
}

/// Chain length and tail bound: the L-th term is bounded by ‖W‖κ^{L-1}
/// with κ = ‖W‖ max χ̄²/|w00 + ℰ|.
pub fn chain_length(w: f64, kappa: f64, l_max: usize, tol: f64) -> (usize, f64) {
    let tail = |l: usize| w * kappa.powi(l as i32) / (1.0 - kappa);
    let l = (1..=l_max).find(|&l| tail(l) <= tol).unwrap_or(l_max);
    (l, tail(l))
}

pub fn decimation_step_with(basis: &FockBasis, fam: &KernelFamily, rho_out: f64, mu: f64, step: usize, opts: &RewickOptions, tail_tol: f64) -> Result<KernelFamily> {
    resolvent_margin(basis, fam, rho_out, mu, step)?;
    let sub_in = Subspace::below(basis, fam.rho);
    let w = w_ge1_norm(basis, &sub_in, fam);
    let rmax = sub_in
        .idx
        .iter()
        .map(|&s| PROFILE.chibar_at(basis.energy(s), rho_out).powi(2) / (fam.w00(s) + fam.e).norm())
        .fold(0.0, f64::max);
    let kappa = w * rmax;
    if !(kappa < 1.0) {
        return Err(Error::Margin { step, what: format!("chain ratio {kappa:.3e} >= 1") });
    }
    let (l_eff, tail) = chain_length(w, kappa, opts.l_max, tail_tol);
    let opts = &RewickOptions { l_max: l_eff, ..*opts };
    let sub_out = Subspace::below(basis, rho_out);
    let mut res = vec![ZERO; basis.dim()];
    for &s in &basis.below(fam.rho) {
        let cb = PROFILE.chibar_at(basis.energy(s), rho_out);
        if cb > 0.0 {
            res[s] = cb * cb / (fam.w00(s) + fam.e);
        }
    }
    let outer: Vec<f64> = (0..basis.dim()).map(|s| PROFILE.chi_at(basis.energy(s), rho_out)).collect();
    let modes: Vec<u32> = (0..basis.n_modes() as u32).filter(|&q| basis.modes()[q as usize].kabs <= fam.rho).collect();
    let orders = fam.active_orders();
    let mut new = KernelFamily::new(rho_out, fam.e);
    if orders.is_empty() {
        new.kernels.insert((0, 0), w00_kernel(&sub_out, |s| fam.w00(s)));
        return Ok(new);
    }
    let chain = FlowChain { basis, fam, orders, res, outer, modes };
    let out = rewick(&chain, &sub_out, opts);
    let c00: BTreeMap<usize, C64> = out.c00.into_iter().collect();
    let vac = c00[&0];
    new.e += vac;
    new.kernels.insert((0, 0), w00_kernel(&sub_out, |s| fam.w00(s) + c00[&s] - vac));
    new.kernels.extend(out.kernels);
    new.dropped_mass = out.dropped_mass;
    new.tail_bound = tail;
    new.chain_len = l_eff;
    Ok(new)
}

/// Matrix path for one step: F_χ(H[w,ℰ], W00 + ℰ) on H_f <= ρ̃, dense.
/// Rows and columns follow `Subspace::below(basis, rho_out).idx`.
pub fn decimation_matrix(basis: &FockBasis, fam: &KernelFamily, rho_out: f64) -> Result<DMat> {
    let sub = Subspace::below(basis, fam.rho);
    let h = evaluate_on(basis, &sub, fam).to_dense();
    let k = sub.len();
    let chi: Vec<f64> = sub.idx.iter().map(|&s| PROFILE.chi_at(basis.energy(s), rho_out)).collect();
    let chib: Vec<f64> = sub.idx.iter().map(|&s| PROFILE.chibar_at(basis.energy(s), rho_out)).collect();
    let t: Vec<C64> = sub.idx.iter().map(|&s| fam.w00(s) + fam.e).collect();
    let bar: Vec<usize> = (0..k).filter(|&i| chib[i] > 0.0).collect();
    let out_rows: Vec<usize> = (0..k).filter(|&i| basis.energy(sub.idx[i]) <= rho_out).collect();
    let wm = |i: usize, j: usize| {
        let mut v = nz(h.read(i, j));
        if i == j {
            v -= t[i];
        }
        v
    };
    let hb = DMat::from_fn(bar.len(), bar.len(), |a, b| {
        let (i, j) = (bar[a], bar[b]);
        let mut v = chib[i] * wm(i, j) * chib[j];
        if i == j {
            v += t[i];
        }
        fz(v)
    });
    let rhs = DMat::from_fn(bar.len(), out_rows.len(), |a, b| fz(chib[bar[a]] * wm(bar[a], out_rows[b]) * chi[out_rows[b]]));
    let x = if bar.is_empty() { DMat::zeros(0, out_rows.len()) } else { solve(&hb, &rhs) };
    Ok(DMat::from_fn(out_rows.len(), out_rows.len(), |a, b| {
        let (i, j) = (out_rows[a], out_rows[b]);
        let mut v = chi[i] * wm(i, j) * chi[j];
        if i == j {
            v += t[i];
        }
        for (c, &l) in bar.iter().enumerate() {
            v -= chi[i] * wm(i, l) * chib[l] * nz(x.read(c, b));
        }
        fz(v)
    }))
}

/// Polynomial model in z of a family, from samples on a circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyModel {
    pub step: usize,
    pub center: C64,
    pub radius: f64,
    pub rho: f64,
    pub dropped_mass: f64,
    pub tail_bound: f64,
    pub chain_len: usize,
    /// Coefficients in t = (z - center)/radius.
    pub e: Vec<C64>,
    pub orders: BTreeMap<(usize, usize), (Vec<KernelKey>, Vec<Vec<C64>>)>,
}

pub fn sample_points(center: C64, radius: f64, m: usize) -> Vec<C64> {
    (0..m).map(|k| center + C64::from_polar(radius, 2.0 * PI * k as f64 / m as f64)).collect()
}

fn dft(v: &[C64]) -> Vec<C64> {
    let m = v.len();
    (0..m)
        .map(|k| {
            let mut acc = ZERO;
            for (j, x) in v.iter().enumerate() {
                acc += x * C64::from_polar(1.0, -2.0 * PI * ((j * k) % m) as f64 / m as f64);
            }
            acc / m as f64
        })
        .collect()
}

fn horner(c: &[C64], t: C64) -> C64 {
    c.iter().rev().fold(ZERO, |acc, x| acc * t + x)
}

impl FamilyModel {
    pub fn fit(step: usize, center: C64, radius: f64, samples: &[KernelFamily]) -> Self {
        let rho = samples[0].rho;
        let e = dft(&samples.iter().map(|f| f.e).collect::<Vec<_>>());
        let mut all_orders: BTreeSet<(usize, usize)> = BTreeSet::new();
        for f in samples {
            all_orders.extend(f.kernels.keys().copied());
        }
        let mut orders = BTreeMap::new();
        for o in all_orders {
            let mut keys: BTreeSet<KernelKey> = BTreeSet::new();
            for f in samples {
                if let Some(k) = f.kernels.get(&o) {
                    keys.extend(k.entries().iter().map(|e| e.0));
                }
            }
            let keys: Vec<KernelKey> = keys.into_iter().collect();
            let coeffs = crate::exec::map_slice(&keys, |key| {
                let v: Vec<C64> = samples.iter().map(|f| f.kernels.get(&o).map_or(ZERO, |k| k.get(key))).collect();
                dft(&v)
            });
            orders.insert(o, (keys, coeffs));
        }
        let dropped_mass = samples.iter().map(|f| f.dropped_mass).fold(0.0, f64::max);
        let tail_bound = samples.iter().map(|f| f.tail_bound).fold(0.0, f64::max);
        let chain_len = samples.iter().map(|f| f.chain_len).max().unwrap_or(0);
        Self { step, center, radius, rho, dropped_mass, tail_bound, chain_len, e, orders }
    }

    fn t(&self, z: C64) -> C64 {
        (z - self.center) / self.radius
    }

    pub fn eval_e(&self, z: C64) -> C64 {
        horner(&self.e, self.t(z))
    }

    pub fn deriv_e(&self, z: C64) -> C64 {
        let t = self.t(z);
        let d: Vec<C64> = self.e.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect();
        horner(&d, t) / self.radius
    }

    pub fn eval(&self, z: C64) -> KernelFamily {
        let t = self.t(z);
        let mut fam = KernelFamily::new(self.rho, horner(&self.e, t));
        for (o, (keys, coeffs)) in &self.orders {
            let entries = keys.iter().zip(coeffs).map(|(k, c)| (*k, horner(c, t))).collect();
            fam.kernels.insert(*o, WickKernel::from_entries(o.0, o.1, entries));
        }
        fam.dropped_mass = self.dropped_mass;
        fam.tail_bound = self.tail_bound;
        fam.chain_len = self.chain_len;
        fam
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroReport {
    pub z: C64,
    pub iterations: usize,
    pub winding: f64,
    /// max |∂_zℰ + 1| on the search circle and its center.
    pub deriv_dev: f64,
    pub e_at_zero: f64,
}

/// Newton on the model of ℰ^(j) from z^(j-1), certified by the 16-point
/// winding number on ∂D(z^(j-1), 2r_j/3).
pub fn find_zero(model: &FamilyModel, step: usize, r_j: f64, deriv_bound: f64, tol: f64, max_iter: usize) -> Result<ZeroReport> {
    let c = model.center;
    let rad = 2.0 * r_j / 3.0;
    let pts = sample_points(c, rad, SAMPLES);
    let mut wsum = ZERO;
    let mut dev = (model.deriv_e(c) + 1.0).norm();
    for &p in &pts {
        let e = model.eval_e(p);
        let de = model.deriv_e(p);
        dev = dev.max((de + 1.0).norm());
        wsum += de / e * (p - c);
    }
    let winding = (wsum / SAMPLES as f64).re;
    let wi = winding.round() as i64;
    if wi != 1 || (winding - 1.0).abs() > 0.25 {
        return Err(Error::Winding { step, winding: wi });
    }
    if dev > deriv_bound {
        return Err(Error::Margin { step, what: format!("|dE/dz + 1| = {dev:.3e} exceeds {deriv_bound}") });
    }
    let mut z = c;
    for it in 0..=max_iter {
        let e = model.eval_e(z);
        if e.norm() < tol {
            if (z - c).norm() >= r_j / 2.0 {
                return Err(Error::Margin { step, what: format!("|z^(j) - z^(j-1)| = {:.3e} >= r_j/2", (z - c).norm()) });
            }
            return Ok(ZeroReport { z, iterations: it, winding, deriv_dev: dev, e_at_zero: e.norm() });
        }
        if it == max_iter {
            break;
        }
        z -= e / model.deriv_e(z);
    }
    Err(Error::NoConvergence(max_iter))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub j: usize,
    pub rho: f64,
    pub r: f64,
    pub z: C64,
    pub dz: f64,
    pub w_norm: f64,
    pub winding: f64,
    pub deriv_dev: f64,
    pub newton_iterations: usize,
    /// |ℰ^(j)(z^(j))| from a direct evaluation (not the model).
    pub e_residual: f64,
    /// 1 - max|ℰ^(j)| / (μρ_{j+1}/16) on ∂D(z^(j), 2r_{j+1}/3).
    pub e_bound_margin: f64,
    pub resolvent_margin: Option<f64>,
    /// min |w00(s)| / H_f(s) over s ≠ Ω.
    pub eps_hat: Option<f64>,
    /// sup |w̃00 + ℰ̃ - w00 - ℰ| against the previous step at z^(j).
    pub drift: Option<f64>,
    pub dropped_mass: f64,
    pub tail_bound: f64,
    pub chain_len: usize,
    pub norm_checks: Vec<NormCheck>,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub i0: usize,
    pub lambda0: f64,
    pub vartheta: f64,
    pub p: [C64; 3],
    pub steps: Vec<StepRecord>,
    pub z_inf: Option<C64>,
    pub enclosure: Option<f64>,
    pub converged: bool,
    pub eigen_residual: Option<f64>,
    pub psi_minus_omega: Option<f64>,
    pub error: Option<String>,
}

impl FlowRecord {
    fn new(m: &FlowModel) -> Self {
        Self {
            i0: m.params.i0,
            lambda0: m.params.lambda0,
            vartheta: m.params.vartheta(),
            p: m.params.p,
            steps: vec![],
            z_inf: None,
            enclosure: None,
            converged: false,
            eigen_residual: None,
            psi_minus_omega: None,
            error: None,
        }
    }

    pub fn zs(&self) -> Vec<C64> {
        self.steps.iter().map(|s| s.z).collect()
    }
}

/// Record plus the per-step z-models needed to resume or reconstruct.
#[derive(Clone, Debug)]
pub struct FlowRun {
    pub record: FlowRecord,
    pub models: Vec<FamilyModel>,
}

fn eps_hat(basis: &FockBasis, fam: &KernelFamily) -> Option<f64> {
    basis.below(fam.rho).into_iter().filter(|&s| s != 0).map(|s| fam.w00(s).norm() / basis.energy(s)).reduce(f64::min)
}

/// Direct family of step j at z (no model for step j itself).
fn direct_family(m: &FlowModel, prev: Option<&FamilyModel>, j: usize, z: C64) -> Result<KernelFamily> {
    match prev {
        None => first_decimation_with(m, z, false),
        Some(pm) => decimation_step_with(&m.basis, &pm.eval(z), m.schedule.next(pm.rho), m.params.mu, j, &m.rewick_options(false), m.tail_tol()),
    }
}

fn fit_step(m: &FlowModel, prev: Option<&FamilyModel>, j: usize, center: C64) -> Result<FamilyModel> {
    let r = m.schedule.r(j);
    let ns = if j == 0 { m.opts.samples_first } else { m.opts.samples };
    let pts = sample_points(center, r, ns);
    let mut samples = Vec::with_capacity(ns);
    for (k, &z) in pts.iter().enumerate() {
        let fam = match prev {
            None => first_decimation_with(m, z, m.opts.track_dropped && k == 0)?,
            Some(pm) => decimation_step_with(&m.basis, &pm.eval(z), m.schedule.next(pm.rho), m.params.mu, j, &m.rewick_options(m.opts.track_dropped && k == 0), m.tail_tol())?,
        };
        samples.push(fam);
    }
    Ok(FamilyModel::fit(j, center, r, &samples))
}

pub fn run_flow(m: &FlowModel) -> FlowRun {
    resume_flow(m, FlowRecord::new(m), vec![])
}

/// Continue a flow whose first `models.len()` step models and matching
/// records are given.
pub fn resume_flow(m: &FlowModel, mut record: FlowRecord, mut models: Vec<FamilyModel>) -> FlowRun {
    record.steps.truncate(models.len().saturating_sub(1));
    match flow_loop(m, &mut record, &mut models) {
        Ok(()) => {}
        Err(e) => record.error = Some(e.to_string()),
    }
    FlowRun { record, models }
}

fn flow_loop(m: &FlowModel, record: &mut FlowRecord, models: &mut Vec<FamilyModel>) -> Result<()> {
    let e_i0 = C64::new(m.e_i0(), 0.0);
    let tol = m.tol_z();
    let mut j = record.steps.len();
    if models.is_empty() {
        models.push(fit_step(m, None, 0, e_i0)?);
    }
    // on resume, rebuild the previous family so the drift column matches
    let mut prev_family = match j {
        0 => None,
        _ => Some(direct_family(m, j.checked_sub(2).map(|k| &models[k]), j - 1, record.steps[j - 1].z)?),
    };
    loop {
        let model = &models[j];
        let center = model.center;
        let r_j = m.schedule.r(j);
        let bound = if j == 0 { 0.25 } else { 0.5 };
        let zr = find_zero(model, j, r_j, bound, tol, m.opts.newton_max)?;
        let prev_model = if j == 0 { None } else { Some(&models[j - 1]) };
        let fam = direct_family(m, prev_model, j, zr.z)?;
        let basis = &m.basis;
        let sub = Subspace::below(basis, fam.rho);
        let w_norm = w_ge1_norm(basis, &sub, &fam);
        let mut checks = Vec::new();
        if m.opts.norm_checks {
            for (o, k) in &fam.kernels {
                if o.0 + o.1 > 0 && !k.is_empty() {
                    checks.push(norm_check(basis, &sub, k, fam.rho));
                }
            }
        }
        let rho_next = m.schedule.next(fam.rho);
        let r_next = m.schedule.r(j + 1);
        let bound43 = m.params.mu * rho_next / 16.0;
        let emax = sample_points(zr.z, 2.0 * r_next / 3.0, SAMPLES).iter().map(|&p| model.eval_e(p).norm()).fold(0.0, f64::max);
        let drift = prev_family.as_ref().map(|pf| {
            basis
                .below(fam.rho)
                .into_iter()
                .map(|s| (fam.w00(s) + fam.e - pf.w00(s) - pf.e).norm())
                .fold(0.0, f64::max)
        });
        let rmargin = if w_norm > 0.0 { resolvent_margin(basis, &fam, rho_next, m.params.mu, j).ok() } else { None };
        record.steps.push(StepRecord {
            j,
            rho: fam.rho,
            r: r_j,
            z: zr.z,
            dz: (zr.z - center).norm(),
            w_norm,
            winding: zr.winding,
            deriv_dev: zr.deriv_dev,
            newton_iterations: zr.iterations,
            e_residual: fam.e.norm(),
            e_bound_margin: 1.0 - emax / bound43,
            resolvent_margin: rmargin,
            eps_hat: eps_hat(basis, &fam),
            drift,
            dropped_mass: model.dropped_mass,
            tail_bound: model.tail_bound,
            chain_len: model.chain_len,
            norm_checks: checks,
            dim: sub.len(),
        });
        let scale = m.e_i0().abs().max(1.0);
        if w_norm <= 1e-15 * scale || j >= m.opts.j_max {
            record.z_inf = Some(zr.z);
            record.enclosure = Some(m.schedule.enclosure(j));
            record.converged = w_norm <= 1e-15 * scale;
            return Ok(());
        }
        let next = fit_step(m, Some(&models[j]), j + 1, zr.z)?;
        models.push(next);
        prev_family = Some(fam);
        j += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenvector {
    /// On C^N ⊗ Fock, index f*N + a, normalized to ⟨ψ_i0⊗Ω|Ψ⟩ = 1.
    pub psi: Vec<C64>,
    pub residual: f64,
    pub dist_to_omega: f64,
}

/// Q_χ(H, T) φ = χφ - χ̄ (T + χ̄Wχ̄)⁻¹ χ̄Wχφ on H_f <= ρ of a family.
fn q_apply(basis: &FockBasis, fam: &KernelFamily, rho_next: f64, phi: &[C64], sub: &Subspace) -> Result<Vec<C64>> {
    let h = evaluate_on(basis, sub, fam).to_dense();
    let k = sub.len();
    let chi: Vec<f64> = sub.idx.iter().map(|&s| PROFILE.chi_at(basis.energy(s), rho_next)).collect();
    let chib: Vec<f64> = sub.idx.iter().map(|&s| PROFILE.chibar_at(basis.energy(s), rho_next)).collect();
    let t: Vec<C64> = sub.idx.iter().map(|&s| fam.w00(s) + fam.e).collect();
    let wm = |i: usize, j: usize| nz(h.read(i, j)) - if i == j { t[i] } else { ZERO };
    let bar: Vec<usize> = (0..k).filter(|&i| chib[i] > 0.0).collect();
    let cphi: Vec<C64> = (0..k).map(|i| phi[i] * chi[i]).collect();
    let mut out = cphi.clone();
    if bar.is_empty() {
        return Ok(out);
    }
    let hb = DMat::from_fn(bar.len(), bar.len(), |a, b| {
        let (i, j) = (bar[a], bar[b]);
        fz(chib[i] * wm(i, j) * chib[j] + if i == j { t[i] } else { ZERO })
    });
    let rhs = DMat::from_fn(bar.len(), 1, |a, _| {
        let i = bar[a];
        fz(chib[i] * (0..k).map(|j| wm(i, j) * cphi[j]).sum::<C64>())
    });
    let x = solve(&hb, &rhs);
    for (a, &i) in bar.iter().enumerate() {
        let v = nz(x.read(a, 0));
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        out[i] -= chib[i] * v;
    }
    Ok(out)
}

/// Ψ = Q_𝛘 Q_χρ1 … Q_χρJ (ψ_i0 ⊗ Ω) at z = z^(∞).
pub fn reconstruct_eigenvector(m: &FlowModel, run: &FlowRun) -> Result<Eigenvector> {
    let z = run.record.z_inf.ok_or_else(|| Error::Invalid("flow did not finish".into()))?;
    let basis = &m.basis;
    let n = m.n();
    let i0 = m.params.level();
    let last = run.record.steps.len() - 1;
    // vector on H_f <= ρ_last
    let sub_last = Subspace::below(basis, m.schedule.rho(last));
    let mut phi = vec![ZERO; sub_last.len()];
    phi[0] = C64::new(1.0, 0.0);
    let mut cur_sub = sub_last;
    for j in (0..last).rev() {
        let fam = run.models[j].eval(z);
        let sub = Subspace::below(basis, fam.rho);
        let mut emb = vec![ZERO; sub.len()];
        for (p, &s) in cur_sub.idx.iter().enumerate() {
            emb[sub.pos(s).expect("nested subspaces")] = phi[p];
        }
        phi = q_apply(basis, &fam, m.schedule.rho(j + 1), &emb, &sub).map_err(|_| Error::Margin { step: j + 1, what: "Q operator singular".into() })?;
        cur_sub = sub;
    }
    // first Q on C^N ⊗ Fock
    let dim = basis.dim() * n;
    let chi = m.chi_diag();
    let pbar: Vec<f64> = chi.iter().map(|c| (1.0 - c * c).max(0.0).sqrt()).collect();
    let mut v = vec![ZERO; dim];
    for (p, &s) in cur_sub.idx.iter().enumerate() {
        v[s * n + i0] = phi[p] * chi[s * n + i0];
    }
    if m.params.lambda0 > 0.0 {
        let w = &m.interaction;
        let d = m.free_diag(C64::new(0.0, 0.0));
        let coupling = SparseMat::from_triplets(dim, dim, w.triplets().map(|(i, j, x)| (i, j, x * pbar[i] * pbar[j])));
        let sector: Vec<usize> = (0..dim).map(|i| basis.count(i / n)).collect();
        let active: Vec<bool> = pbar.iter().map(|&p| p > 0.0).collect();
        let solver = SectorSolver::new(&d, &coupling, &sector, &active, z).map_err(|_| Error::Margin { step: 0, what: "Q operator singular".into() })?;
        let wv = w.matvec(&v);
        let rhs: Vec<C64> = wv.iter().enumerate().map(|(i, x)| x * pbar[i]).collect();
        let x = solver.solve(&rhs).map_err(|_| Error::Margin { step: 0, what: "Q operator singular".into() })?;
        for i in 0..dim {
            v[i] -= pbar[i] * x[i];
        }
    }
    let norm0 = v[i0];
    let psi: Vec<C64> = v.iter().map(|x| x / norm0).collect();
    let d = m.free_diag(z);
    let hv = m.interaction.matvec(&psi);
    let r: Vec<C64> = (0..dim).map(|i| d[i] * psi[i] + hv[i]).collect();
    let residual = vec_norm(&r) / vec_norm(&psi);
    let mut diff = psi.clone();
    diff[i0] -= 1.0;
    Ok(Eigenvector { dist_to_omega: vec_norm(&diff), psi, residual })
}

/// Reconstructs the eigenvector and stores its residual and distance to
/// ψ_i0 ⊗ Ω in the record.
pub fn attach_eigenvector(m: &FlowModel, run: &mut FlowRun) -> Result<Eigenvector> {
    let ev = reconstruct_eigenvector(m, run)?;
    run.record.eigen_residual = Some(ev.residual);
    run.record.psi_minus_omega = Some(ev.dist_to_omega);
    Ok(ev)
}

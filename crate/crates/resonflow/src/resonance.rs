//! Leading-order resonance analysis: the second-order level shifts z^d and
//! z^od, the residue formula for Im z^od, the golden-rule value and the
//! leading Feshbach operator.

use std::f64::consts::PI;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::atommodel::{AtomSpec, ProblemParams};
use crate::error::{Error, Result};
use crate::fockspace::{dot, FockBasis, ModeGrid};
use crate::kernels::{evaluate_on, Subspace};
use crate::linalg::{min_singular, C64, ZERO};
use crate::rgflow::{FamilyModel, FlowModel, PROFILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelShift {
    pub z_d: C64,
    pub z_od: C64,
    pub im_zod_residue: f64,
    /// r^od_j per lower level j (outer) and angular node (inner).
    pub pole_radii: Vec<Vec<f64>>,
}

impl LevelShift {
    /// Second-order coefficient a in z ≈ E_i0 + a λ₀².
    pub fn second_order(&self) -> C64 {
        -(self.z_d + self.z_od)
    }
}

/// Unit directions with weights summing to 4π: Gauss-Legendre in cos θ
/// times a uniform azimuthal grid.
pub fn angular_rule(n_theta: usize, n_phi: usize) -> Result<Vec<([f64; 3], f64)>> {
    let gl = GaussLegendre::new(n_theta.max(2)).map_err(|e| Error::Invalid(format!("gauss-legendre: {e:?}")))?;
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for &(u, wu) in gl.as_node_weight_pairs() {
        let s = (1.0 - u * u).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
            out.push(([s * phi.cos(), s * phi.sin(), u], wu * 2.0 * PI / n_phi as f64));
        }
    }
    Ok(out)
}

fn dvec(atom: &AtomSpec, j: usize, i: usize) -> [C64; 3] {
    [atom.d(0, j, i), atom.d(1, j, i), atom.d(2, j, i)]
}

/// Σ_λ |ε_λ(k̂)·v|² = |v|² − |k̂·v|².
pub fn polarization_sum(khat: [f64; 3], v: [C64; 3]) -> f64 {
    let n2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let kv: C64 = (0..3).map(|c| v[c] * khat[c]).sum();
    (n2 - kv.norm_sqr()).max(0.0)
}

/// z^d and z^od by the mode-grid quadrature of their defining integrals,
/// with Im z^od from the residue formula on an independent angular rule.
pub fn zd_zod(atom: &AtomSpec, params: &ProblemParams, grid: &ModeGrid) -> Result<LevelShift> {
    let i0 = params.level();
    let th = params.theta;
    let (e1, e2, e4) = ((-th).exp(), (-2.0 * th).exp(), (-4.0 * th).exp());
    let sigma2 = params.uv_sigma * params.uv_sigma;
    let mut z_d = ZERO;
    let mut z_od = ZERO;
    for md in &grid.modes {
        let k2 = md.kabs * md.kabs;
        let pk: C64 = (0..3).map(|c| params.p[c] * md.k[c]).sum();
        let field = e1 * md.kabs + e2 * k2 / 2.0 - e1 * pk;
        let pref = md.weight * e4 * (-e2 * k2 / sigma2).exp() * md.kabs;
        let ed = atom.eps_dot_d(md.eps);
        let n = atom.n();
        for j in 0..n {
            let m2 = ed[j * n + i0].norm_sqr();
            if m2 == 0.0 {
                continue;
            }
            let den = if j == i0 { field } else { atom.energies[j] - atom.energies[i0] + field };
            if den.norm() < 1e-10 {
                return Err(Error::NearPole(den.norm()));
            }
            if j == i0 {
                z_d += pref * m2 / den;
            } else {
                z_od += pref * m2 / den;
            }
        }
    }
    let (im, radii) = residue_parts(atom, params, &angular_rule(32, 32)?)?;
    Ok(LevelShift { z_d, z_od, im_zod_residue: im, pole_radii: radii })
}

/// Positive root of E_i0 − r − r²/2 + r p·k̂ = E_j.
pub fn pole_radius(e_i0: f64, e_j: f64, pk: f64) -> Option<f64> {
    let a = 1.0 - pk;
    let disc = 2.0 * (e_i0 - e_j) + a * a;
    if disc < 0.0 {
        return None;
    }
    let r = -a + disc.sqrt();
    (r > 0.0).then_some(r)
}

fn residue_parts(atom: &AtomSpec, params: &ProblemParams, rule: &[([f64; 3], f64)]) -> Result<(f64, Vec<Vec<f64>>)> {
    if params.p.iter().any(|x| x.im != 0.0) {
        return Err(Error::Invalid("the residue formula needs a real total momentum".into()));
    }
    let p = params.p.map(|x| x.re);
    let i0 = params.level();
    let sigma2 = params.uv_sigma * params.uv_sigma;
    let mut total = 0.0;
    let mut radii = Vec::new();
    for j in 0..i0 {
        let v = dvec(atom, j, i0);
        let mut rs = Vec::with_capacity(rule.len());
        for &(khat, w) in rule {
            let pk = dot(p, khat);
            let Some(r) = pole_radius(atom.energies[i0], atom.energies[j], pk) else {
                rs.push(f64::NAN);
                continue;
            };
            rs.push(r);
            let a = 1.0 - pk;
            let res = r.powi(3) * (-r * r / sigma2).exp() / (2.0 * (atom.energies[i0] - atom.energies[j]) + a * a).sqrt();
            total += w * polarization_sum(khat, v) * res;
        }
        radii.push(rs);
    }
    Ok((PI * total, radii))
}

/// π Σ_{j<i0} ∫dk̂ Σ_λ Res(f^od, r^od_j); zero for the ground state.
pub fn im_zod_residue(atom: &AtomSpec, params: &ProblemParams) -> Result<f64> {
    Ok(residue_parts(atom, params, &angular_rule(48, 48)?)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgrReport {
    pub value: f64,
    pub holds: bool,
}

pub const FGR_THRESHOLD: f64 = 1e-12;

/// The golden-rule integral, equal to Im z^od / π.
pub fn fgr_condition(atom: &AtomSpec, params: &ProblemParams) -> Result<FgrReport> {
    let value = im_zod_residue(atom, params)? / PI;
    Ok(FgrReport { value, holds: value > FGR_THRESHOLD })
}

/// λ₀² σ^{9/2} / (μ² sin²ϑ min(1, δ₀²)) · λ₀^{3/5}, the remainder scale.
pub fn remainder_scale(atom: &AtomSpec, params: &ProblemParams) -> f64 {
    let l = params.lambda0;
    let s = params.vartheta().sin();
    l * l * params.uv_sigma.powf(4.5) / (params.mu * params.mu * s * s * atom.delta0.powi(2).min(1.0)) * l.powf(0.6)
}

/// Diagonal of H_L(p) − z on the basis states below ρ₀ (subspace order) and
/// the remainder budget c · remainder_scale.
pub fn leading_feshbach(atom: &AtomSpec, params: &ProblemParams, basis: &FockBasis, shift: &LevelShift, z: C64, c_rem: f64) -> (Vec<C64>, f64) {
    let sub = Subspace::below(basis, params.rho0);
    let l2 = params.lambda0 * params.lambda0;
    let th = params.theta;
    let e_i0 = atom.energies[params.level()];
    let diag = sub
        .idx
        .iter()
        .map(|&s| {
            let c2 = PROFILE.chi_at(basis.energy(s), params.rho0).powi(2);
            let pf = basis.momentum(s);
            let pp: C64 = (0..3).map(|c| params.p[c] * pf[c]).sum();
            let p2: f64 = pf.iter().map(|x| x * x).sum();
            let free = (-th).exp() * basis.energy(s) + (-2.0 * th).exp() * p2 / 2.0 - (-th).exp() * pp;
            e_i0 - l2 * (shift.z_od.re + shift.z_d.re) * c2 - C64::new(0.0, l2 * shift.z_od.im) * c2 + free - z
        })
        .collect();
    let budget = if params.lambda0 == 0.0 { 0.0 } else { c_rem * remainder_scale(atom, params) };
    (diag, budget)
}

/// max over subspace entries of |H^(0)(z) − (H_L − z)| / remainder_scale.
pub fn fit_remainder_constant(m: &FlowModel, model0: &FamilyModel, shift: &LevelShift, z: C64) -> f64 {
    let fam = model0.eval(z);
    let sub = Subspace::below(&m.basis, m.params.rho0);
    let h = evaluate_on(&m.basis, &sub, &fam);
    let (diag, _) = leading_feshbach(&m.atom, &m.params, &m.basis, shift, z, 0.0);
    let mut worst = 0.0f64;
    for (i, j, v) in h.triplets() {
        let d = if i == j { v - diag[i] } else { v };
        worst = worst.max(d.norm());
    }
    for i in 0..sub.len() {
        if h.get(i, i) == ZERO {
            worst = worst.max(diag[i].norm());
        }
    }
    let scale = remainder_scale(&m.atom, &m.params);
    if scale > 0.0 {
        worst / scale
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthReport {
    /// λ₀²(C λ₀^{3/5} κ − Im z^od), with κ the remainder geometry factor.
    pub threshold: f64,
    /// (z, σ_min(H^(0)(z))) on sample points with Im z above the threshold.
    pub samples: Vec<(C64, f64)>,
    pub min_singular: f64,
    pub negative_width: bool,
}

/// Checks invertibility of the one-step Feshbach operator above the
/// golden-rule threshold inside the first search disk.
pub fn width_certificate(m: &FlowModel, model0: &FamilyModel, shift: &LevelShift, c_rem: f64) -> WidthReport {
    let l2 = m.params.lambda0 * m.params.lambda0;
    let threshold = c_rem * remainder_scale(&m.atom, &m.params) - l2 * shift.z_od.im;
    let e_i0 = m.e_i0();
    let re = e_i0 - l2 * (shift.z_od.re + shift.z_d.re);
    let r0 = m.schedule.r(0);
    let sub = Subspace::below(&m.basis, m.params.rho0);
    let mut samples = Vec::new();
    let top = e_i0 + 0.0;
    for k in 0..6 {
        let im = threshold + (k as f64 + 1.0) / 6.0 * (r0 * 0.6);
        let z = C64::new(re, im);
        if (z - C64::new(top, 0.0)).norm() > r0 {
            continue;
        }
        let h = evaluate_on(&m.basis, &sub, &model0.eval(z)).to_dense();
        samples.push((z, min_singular(&h)));
    }
    let min_sv = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    WidthReport { threshold, negative_width: threshold < 0.0 && min_sv > 1e-12, samples, min_singular: min_sv }
}

//! Photon modes, the truncated symmetric Fock basis and the diagonal field
//! operators on it.
//!
//! A mode of weight `w` stands for the smeared operator `w^{-1/2} a(1_cell)`,
//! so `<n-1|a_i|n> = sqrt(n_i / w_i)` and `sum_i w_i |k_i| a_i^* a_i = H_f`.

use std::collections::HashMap;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{OperatorMatrix, SparseMat, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: [f64; 3],
    pub kabs: f64,
    /// 1 or 2.
    pub helicity: u8,
    pub weight: f64,
    pub eps: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeGrid {
    pub modes: Vec<Mode>,
    pub uv_sigma: f64,
    pub k_max: f64,
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm3(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Unit directions of a spherical design with `n` points (4, 6, 8, 12 or 20).
pub fn design_directions(n: usize) -> Result<Vec<[f64; 3]>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw: Vec<[f64; 3]> = match n {
        4 => vec![[1., 1., 1.], [1., -1., -1.], [-1., 1., -1.], [-1., -1., 1.]],
        6 => vec![[1., 0., 0.], [-1., 0., 0.], [0., 1., 0.], [0., -1., 0.], [0., 0., 1.], [0., 0., -1.]],
        8 => {
            let mut v = Vec::new();
            for sx in [1., -1.] {
                for sy in [1., -1.] {
                    for sz in [1., -1.] {
                        v.push([sx, sy, sz]);
                    }
                }
            }
            v
        }
        12 => {
            let mut v = Vec::new();
            for s1 in [1., -1.] {
                for s2 in [1., -1.] {
                    v.push([0., s1, s2 * phi]);
                    v.push([s1, s2 * phi, 0.]);
                    v.push([s2 * phi, 0., s1]);
                }
            }
            v
        }
        20 => {
            let mut v = Vec::new();
            for sx in [1., -1.] {
                for sy in [1., -1.] {
                    for sz in [1., -1.] {
                        v.push([sx, sy, sz]);
                    }
                }
            }
            for s1 in [1., -1.] {
                for s2 in [1., -1.] {
                    v.push([0., s1 / phi, s2 * phi]);
                    v.push([s1 / phi, s2 * phi, 0.]);
                    v.push([s2 * phi, 0., s1 / phi]);
                }
            }
            v
        }
        _ => return Err(Error::Invalid(format!("unsupported direction count {n}; use 4, 6, 8, 12 or 20"))),
    };
    Ok(raw.into_iter().map(unit).collect())
}

/// Polarization pair for direction `khat`: Gram-Schmidt of the z axis
/// (x axis when `khat` is parallel to z), then `khat x eps1`.
pub fn polarizations(khat: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let mut reference = [0.0, 0.0, 1.0];
    if norm3(cross(khat, reference)) < 1e-8 {
        reference = [1.0, 0.0, 0.0];
    }
    let c = dot(reference, khat);
    let e1 = unit([reference[0] - c * khat[0], reference[1] - c * khat[1], reference[2] - c * khat[2]]);
    (e1, cross(khat, e1))
}

impl ModeGrid {
    /// `n_r` Gauss-Legendre radii on (0, k_max] times a spherical design of
    /// `n_dir` directions times two helicities.
    pub fn spherical(n_r: usize, n_dir: usize, k_max: f64, uv_sigma: f64) -> Result<Self> {
        if n_r == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(k_max > 0.0) || !(uv_sigma > 0.0) {
            return Err(Error::Invalid("k_max and uv_sigma must be positive".into()));
        }
        let dirs = design_directions(n_dir)?;
        let mut radial: Vec<(f64, f64)> = if n_r == 1 {
            vec![(0.0, 2.0)]
        } else {
            GaussLegendre::new(n_r)
                .map_err(|e| Error::Invalid(format!("gauss-legendre: {e:?}")))?
                .as_node_weight_pairs()
                .to_vec()
        };
        radial.sort_by(|a, b| a.0.total_cmp(&b.0));
        let dir_w = 4.0 * std::f64::consts::PI / dirs.len() as f64;
        let mut modes = Vec::with_capacity(n_r * dirs.len() * 2);
        for &(x, wx) in &radial {
            let r = 0.5 * k_max * (x + 1.0);
            let wr = 0.5 * k_max * wx;
            for &d in &dirs {
                let (e1, e2) = polarizations(d);
                for (h, e) in [(1u8, e1), (2u8, e2)] {
                    modes.push(Mode { k: [r * d[0], r * d[1], r * d[2]], kabs: r, helicity: h, weight: wr * r * r * dir_w, eps: e });
                }
            }
        }
        Ok(Self { modes, uv_sigma, k_max })
    }

    /// Both helicities at a single momentum `k`, each with weight `w`.
    pub fn single_point(k: [f64; 3], w: f64, uv_sigma: f64) -> Self {
        let kabs = norm3(k);
        let (e1, e2) = polarizations(unit(k));
        let modes = vec![
            Mode { k, kabs, helicity: 1, weight: w, eps: e1 },
            Mode { k, kabs, helicity: 2, weight: w, eps: e2 },
        ];
        Self { modes, uv_sigma, k_max: kabs }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Gaussian ultraviolet cutoff at a (possibly complex-rotated) momentum
    /// with bilinear square `q2`.
    pub fn cutoff(&self, q2: C64) -> C64 {
        (-q2 / (2.0 * self.uv_sigma * self.uv_sigma)).exp()
    }
}

pub const NONE: u32 = u32::MAX;

/// Occupation-number basis truncated by photon number and field energy.
/// States are sorted mode multisets; the vacuum is index 0 and states are
/// ordered by photon number, then lexicographically.
#[derive(Clone, Debug)]
pub struct FockBasis {
    pub n_max: usize,
    pub e_max: f64,
    modes: Vec<Mode>,
    states: Vec<Vec<u32>>,
    energy: Vec<f64>,
    momentum: Vec<[f64; 3]>,
    index: HashMap<Vec<u32>, usize>,
    add_row: Vec<u32>,
    add_table: Vec<u32>,
    rem_off: Vec<u32>,
    /// (mode, occupation, state without one photon of that mode).
    rem_table: Vec<(u32, u32, u32)>,
}

pub const DEFAULT_BASIS_CAP: usize = 4_000_000;

pub fn build_basis(grid: &ModeGrid, n_max: usize, e_max: f64) -> Result<FockBasis> {
    build_basis_capped(grid, n_max, e_max, DEFAULT_BASIS_CAP)
}

pub fn build_basis_capped(grid: &ModeGrid, n_max: usize, e_max: f64, cap: usize) -> Result<FockBasis> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !(e_max > 0.0) {
        return Err(Error::Invalid("e_max must be positive".into()));
    }
    let modes = grid.modes.clone();
    let nm = modes.len();
    let mut states: Vec<Vec<u32>> = vec![vec![]];
    let mut frontier: Vec<(Vec<u32>, f64)> = vec![(vec![], 0.0)];
    for _ in 0..n_max {
        let mut next = Vec::new();
        for (s, e) in &frontier {
            let start = s.last().copied().unwrap_or(0) as usize;
            for m in start..nm {
                let e2 = e + modes[m].kabs;
                if e2 <= e_max {
                    let mut t = s.clone();
                    t.push(m as u32);
                    next.push((t, e2));
                    if states.len() + next.len() > cap {
                        return Err(Error::BasisCap { cap, n_max, e_max });
                    }
                }
            }
        }
        states.extend(next.iter().map(|x| x.0.clone()));
        frontier = next;
    }
    let energy: Vec<f64> = states.iter().map(|s| s.iter().map(|&m| modes[m as usize].kabs).sum()).collect();
    let momentum: Vec<[f64; 3]> = states
        .iter()
        .map(|s| {
            let mut p = [0.0; 3];
            for &m in s {
                for c in 0..3 {
                    p[c] += modes[m as usize].k[c];
                }
            }
            p
        })
        .collect();
    let index: HashMap<Vec<u32>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut add_row = vec![NONE; states.len()];
    let mut add_table = Vec::new();
    for (i, s) in states.iter().enumerate() {
        if s.len() >= n_max {
            continue;
        }
        add_row[i] = (add_table.len() / nm) as u32;
        let mut t = Vec::with_capacity(s.len() + 1);
        for m in 0..nm as u32 {
            t.clear();
            t.extend_from_slice(s);
            let pos = t.partition_point(|&x| x <= m);
            t.insert(pos, m);
            add_table.push(index.get(&t).map_or(NONE, |&j| j as u32));
        }
    }
    let mut rem_off = Vec::with_capacity(states.len() + 1);
    let mut rem_table = Vec::new();
    for s in &states {
        rem_off.push(rem_table.len() as u32);
        let mut k = 0;
        while k < s.len() {
            let m = s[k];
            let occ = s[k..].iter().take_while(|&&x| x == m).count();
            let mut t = s.clone();
            t.remove(k);
            // subsets of admissible states are admissible
            rem_table.push((m, occ as u32, index[&t] as u32));
            k += occ;
        }
    }
    rem_off.push(rem_table.len() as u32);
    Ok(FockBasis { n_max, e_max, modes, states, energy, momentum, index, add_row, add_table, rem_off, rem_table })
}

impl FockBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn count(&self, i: usize) -> usize {
        self.states[i].len()
    }

    pub fn energy(&self, i: usize) -> f64 {
        self.energy[i]
    }

    pub fn momentum(&self, i: usize) -> [f64; 3] {
        self.momentum[i]
    }

    /// (mode, occupation) pairs of state `i`.
    pub fn occupations(&self, i: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &m in &self.states[i] {
            match out.last_mut() {
                Some(last) if last.0 == m as usize => last.1 += 1,
                _ => out.push((m as usize, 1)),
            }
        }
        out
    }

    pub fn occupation(&self, i: usize, mode: usize) -> usize {
        self.states[i].iter().filter(|&&m| m as usize == mode).count()
    }

    /// Index of a sorted multiset, if admissible.
    pub fn index_of(&self, sorted: &[u32]) -> Option<usize> {
        self.index.get(sorted).copied()
    }

    /// Index of state `i` plus one photon in `mode`.
    #[inline]
    pub fn add(&self, i: usize, mode: usize) -> Option<usize> {
        let row = self.add_row[i];
        if row == NONE {
            return None;
        }
        let j = self.add_table[row as usize * self.modes.len() + mode];
        (j != NONE).then_some(j as usize)
    }

    /// Index of state `i` minus one photon in `mode`.
    pub fn remove(&self, i: usize, mode: usize) -> Option<usize> {
        self.removals(i).iter().find(|r| r.0 as usize == mode).map(|r| r.2 as usize)
    }

    /// (mode, occupation, index after removing one photon) per occupied mode.
    #[inline]
    pub fn removals(&self, i: usize) -> &[(u32, u32, u32)] {
        &self.rem_table[self.rem_off[i] as usize..self.rem_off[i + 1] as usize]
    }

    /// Add a multiset of modes to state `i`.
    pub fn add_all(&self, i: usize, modes: &[u32]) -> Option<usize> {
        let mut cur = i;
        for &m in modes {
            cur = self.add(cur, m as usize)?;
        }
        Some(cur)
    }

    /// Basis indices with H_f <= rho, in basis order.
    pub fn below(&self, rho: f64) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.energy[i] <= rho).collect()
    }
}

/// Annihilation and creation operators of one mode.
pub fn ladder_ops(basis: &FockBasis, mode: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    if mode >= basis.n_modes() {
        return Err(Error::Invalid(format!("mode index {mode} out of range {}", basis.n_modes())));
    }
    let w = basis.modes[mode].weight;
    let mut trip = Vec::new();
    for j in 0..basis.dim() {
        let n = basis.occupation(j, mode);
        if n == 0 {
            continue;
        }
        if let Some(i) = basis.remove(j, mode) {
            trip.push((i, j, C64::new((n as f64 / w).sqrt(), 0.0)));
        }
    }
    let a = SparseMat::from_triplets(basis.dim(), basis.dim(), trip);
    let ad = a.adjoint();
    Ok((OperatorMatrix::Sparse(a), OperatorMatrix::Sparse(ad)))
}

/// H_f and the three components of P_f.
pub fn field_ops(basis: &FockBasis) -> (OperatorMatrix, [OperatorMatrix; 3]) {
    let hf: Vec<C64> = (0..basis.dim()).map(|i| C64::new(basis.energy(i), 0.0)).collect();
    let pf = |c: usize| {
        let d: Vec<C64> = (0..basis.dim()).map(|i| C64::new(basis.momentum(i)[c], 0.0)).collect();
        OperatorMatrix::Sparse(SparseMat::diagonal(&d))
    };
    (OperatorMatrix::Sparse(SparseMat::diagonal(&hf)), [pf(0), pf(1), pf(2)])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffProfile {
    /// cos^2(2 pi (x - 3/4)) on (3/4, 1].
    #[default]
    Cosine,
}

impl CutoffProfile {
    pub fn chi(self, x: f64) -> f64 {
        match self {
            Self::Cosine => {
                if x <= 0.75 {
                    1.0
                } else if x > 1.0 {
                    0.0
                } else {
                    (2.0 * std::f64::consts::PI * (x - 0.75)).cos().powi(2)
                }
            }
        }
    }

    pub fn chibar(self, x: f64) -> f64 {
        let c = self.chi(x);
        (1.0 - c * c).max(0.0).sqrt()
    }

    /// chi(e / rho)
    pub fn chi_at(self, e: f64, rho: f64) -> f64 {
        self.chi(e / rho)
    }

    pub fn chibar_at(self, e: f64, rho: f64) -> f64 {
        self.chibar(e / rho)
    }
}

/// Sharp indicator of H_f <= rho, chi_rho(H_f) and chibar_rho(H_f).
pub fn cutoff_ops(basis: &FockBasis, rho: f64, profile: CutoffProfile) -> (OperatorMatrix, OperatorMatrix, OperatorMatrix) {
    let n = basis.dim();
    let diag = |f: &dyn Fn(f64) -> f64| {
        let d: Vec<C64> = (0..n).map(|i| C64::new(f(basis.energy(i)), 0.0)).collect();
        OperatorMatrix::Sparse(SparseMat::diagonal(&d))
    };
    (
        diag(&|e| if e <= rho { 1.0 } else { 0.0 }),
        diag(&|e| profile.chi_at(e, rho)),
        diag(&|e| profile.chibar_at(e, rho)),
    )
}

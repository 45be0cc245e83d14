//! Wick kernels sampled on truncated-basis states, their assembly into
//! monomials, and the re-Wick-ordering engine.
//!
//! A kernel sample is keyed by a spectator state `s` (basis index), the
//! creation legs and the annihilation legs (mode indices, each group stored
//! sorted). The sample is the value of `w(H_f, P_f; K, K̃)` on `s`, so the
//! functional calculus is exact on the basis. The monomial is
//!
//!   Σ_{K, K̃ ordered} Π w a*(K) w(H_f,P_f;K,K̃) a(K̃)
//!
//! compressed to `H_f <= rho`.
//!
//! Normal ordering of operator products is done as a path sum: external
//! legs are handed to the factors in order, contracted photons travel "in
//! flight" between factors with bosonic ladder amplitudes, and every kernel
//! or resolvent is evaluated on the actual configuration
//! `spectators ⊎ pending externals ⊎ in-flight`, which is the pull-through
//! rule. A configuration missing from the basis contributes zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fockspace::{FockBasis, NONE};
use crate::linalg::{power_norm, OperatorMatrix, SparseMat, C64, ZERO};

pub const MAX_LEGS: usize = 4;
pub const NO_MODE: u32 = u32::MAX;
/// Largest atomic amplitude length handled by the path sum.
pub const MAX_AMP: usize = 8;

pub type Amp = [C64; MAX_AMP];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelKey {
    pub s: u32,
    /// Creation legs then annihilation legs, each sorted; unused slots NO_MODE.
    pub legs: [u32; MAX_LEGS],
}

impl KernelKey {
    pub fn new(s: usize, cre: &[u32], ann: &[u32]) -> Self {
        assert!(cre.len() + ann.len() <= MAX_LEGS, "at most {MAX_LEGS} legs");
        let mut legs = [NO_MODE; MAX_LEGS];
        legs[..cre.len()].copy_from_slice(cre);
        legs[cre.len()..cre.len() + ann.len()].copy_from_slice(ann);
        legs[..cre.len()].sort_unstable();
        legs[cre.len()..cre.len() + ann.len()].sort_unstable();
        Self { s: s as u32, legs }
    }

    pub fn cre(&self, m: usize) -> &[u32] {
        &self.legs[..m]
    }

    pub fn ann(&self, m: usize, n: usize) -> &[u32] {
        &self.legs[m..m + n]
    }
}

/// Canonical (symmetric) kernel of order (m, n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WickKernel {
    pub m: usize,
    pub n: usize,
    entries: Vec<(KernelKey, C64)>,
}

impl WickKernel {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n, entries: Vec::new() }
    }

    /// Entries keyed by canonical keys; duplicates are summed.
    pub fn from_entries(m: usize, n: usize, mut entries: Vec<(KernelKey, C64)>) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(KernelKey, C64)> = Vec::with_capacity(entries.len());
        for (k, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += v,
                _ => out.push((k, v)),
            }
        }
        Self { m, n, entries: out }
    }

    pub fn entries(&self) -> &[(KernelKey, C64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, key: &KernelKey) -> C64 {
        match self.entries.binary_search_by(|e| e.0.cmp(key)) {
            Ok(p) => self.entries[p].1,
            Err(_) => ZERO,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.1 == ZERO)
    }

    pub fn map(&self, f: impl Fn(&KernelKey, C64) -> C64) -> Self {
        Self { m: self.m, n: self.n, entries: self.entries.iter().map(|(k, v)| (*k, f(k, *v))).collect() }
    }
}

/// Samples on ordered leg tuples, not necessarily symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct RawKernel {
    pub m: usize,
    pub n: usize,
    pub entries: BTreeMap<(u32, Vec<u32>, Vec<u32>), C64>,
}

/// Distinct permutations of `v` with their multiplicities.
pub fn distinct_perms(v: &[u32]) -> Vec<(Vec<u32>, usize)> {
    fn rec(rest: &mut Vec<u32>, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut all = Vec::new();
    rec(&mut v.to_vec(), &mut Vec::new(), &mut all);
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for p in all {
        *counts.entry(p).or_default() += 1;
    }
    counts.into_iter().collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Average over permutations within the creation group and within the
/// annihilation group, stored canonically.
pub fn symmetrize(raw: &RawKernel) -> WickKernel {
    let norm = factorial(raw.m) * factorial(raw.n);
    let mut canon: BTreeMap<KernelKey, C64> = BTreeMap::new();
    for (s, c, a) in raw.entries.keys() {
        canon.entry(KernelKey::new(*s as usize, c, a)).or_insert(ZERO);
    }
    let entries = canon
        .into_keys()
        .map(|k| {
            let mut acc = ZERO;
            for (pc, mc) in distinct_perms(k.cre(raw.m)) {
                for (pa, ma) in distinct_perms(k.ann(raw.m, raw.n)) {
                    if let Some(v) = raw.entries.get(&(k.s, pc.clone(), pa)) {
                        acc += *v * (mc * ma) as f64;
                    }
                }
            }
            (k, acc / norm)
        })
        .collect();
    WickKernel::from_entries(raw.m, raw.n, entries)
}

/// All orderings of a canonical kernel as raw samples.
pub fn expand(k: &WickKernel) -> RawKernel {
    let mut entries = BTreeMap::new();
    for (key, v) in k.entries() {
        for (pc, _) in distinct_perms(key.cre(k.m)) {
            for (pa, _) in distinct_perms(key.ann(k.m, k.n)) {
                entries.insert((key.s, pc.clone(), pa), *v);
            }
        }
    }
    RawKernel { m: k.m, n: k.n, entries }
}

/// Scale-ρ family: kernels by order (including (0,0), the w00 samples) and ℰ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFamily {
    pub rho: f64,
    pub e: C64,
    pub kernels: BTreeMap<(usize, usize), WickKernel>,
    pub dropped_mass: f64,
    /// Operator-norm bound on the chain terms beyond `chain_len`.
    pub tail_bound: f64,
    pub chain_len: usize,
}

impl KernelFamily {
    pub fn new(rho: f64, e: C64) -> Self {
        Self { rho, e, kernels: BTreeMap::new(), dropped_mass: 0.0, tail_bound: 0.0, chain_len: 0 }
    }

    pub fn kernel(&self, m: usize, n: usize) -> Option<&WickKernel> {
        self.kernels.get(&(m, n))
    }

    pub fn w00(&self, s: usize) -> C64 {
        self.kernels.get(&(0, 0)).map_or(ZERO, |k| k.get(&KernelKey::new(s, &[], &[])))
    }

    /// Orders with m+n >= 1 holding at least one nonzero sample.
    pub fn active_orders(&self) -> Vec<(usize, usize)> {
        self.kernels.iter().filter(|(o, k)| o.0 + o.1 > 0 && !k.is_zero()).map(|(o, _)| *o).collect()
    }

    pub fn w_ge1_is_zero(&self) -> bool {
        self.active_orders().is_empty()
    }
}

/// |w| / (Π|k|^{1/2} Π|k̃|^{1/2}) supremum; sup |w| for (0,0).
pub fn half_norm(basis: &FockBasis, k: &WickKernel) -> f64 {
    let modes = basis.modes();
    k.entries()
        .iter()
        .map(|(key, v)| {
            let den: f64 = key.legs[..k.m + k.n].iter().map(|&q| modes[q as usize].kabs.sqrt()).product();
            v.norm() / den
        })
        .fold(0.0, f64::max)
}

/// Basis indices with H_f <= rho and the inverse position map.
#[derive(Clone, Debug)]
pub struct Subspace {
    pub idx: Vec<usize>,
    pos: Vec<u32>,
}

impl Subspace {
    pub fn below(basis: &FockBasis, rho: f64) -> Self {
        let idx = basis.below(rho);
        let mut pos = vec![NONE; basis.dim()];
        for (p, &i) in idx.iter().enumerate() {
            pos[i] = p as u32;
        }
        Self { idx, pos }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    #[inline]
    pub fn pos(&self, basis_index: usize) -> Option<usize> {
        let p = self.pos[basis_index];
        (p != NONE).then_some(p as usize)
    }
}

/// Π_modes sqrt(w^r N!/(N−r)!) for removing multiset `legs` from state `a`,
/// times the number of distinct orderings of `legs`.
fn leg_amplitude(basis: &FockBasis, a: usize, legs: &[u32]) -> f64 {
    let modes = basis.modes();
    let mut amp = 1.0;
    let mut i = 0;
    while i < legs.len() {
        let q = legs[i];
        let mut r = 0;
        while i < legs.len() && legs[i] == q {
            r += 1;
            i += 1;
        }
        let big_n = basis.occupation(a, q as usize);
        let mut f = 1.0;
        for c in 0..r {
            f *= modes[q as usize].weight * (big_n - c) as f64;
        }
        amp *= f.sqrt() / factorial(r);
    }
    amp * factorial(legs.len())
}

/// Matrix of one monomial on the subspace H_f <= rho.
pub fn assemble_on(basis: &FockBasis, sub: &Subspace, k: &WickKernel) -> SparseMat {
    let mut trip = Vec::with_capacity(k.len());
    for (key, v) in k.entries() {
        let s = key.s as usize;
        let (Some(a), Some(b)) = (basis.add_all(s, key.cre(k.m)), basis.add_all(s, key.ann(k.m, k.n))) else { continue };
        let (Some(pa), Some(pb)) = (sub.pos(a), sub.pos(b)) else { continue };
        let amp = leg_amplitude(basis, a, key.cre(k.m)) * leg_amplitude(basis, b, key.ann(k.m, k.n));
        trip.push((pa, pb, *v * amp));
    }
    SparseMat::from_triplets(sub.len(), sub.len(), trip)
}

/// Monomial as an operator on the full basis (zero outside H_f <= rho).
pub fn assemble_monomial(basis: &FockBasis, k: &WickKernel, rho: f64) -> OperatorMatrix {
    let sub = Subspace::below(basis, rho);
    let small = assemble_on(basis, &sub, k);
    let trip = small.triplets().map(|(i, j, v)| (sub.idx[i], sub.idx[j], v));
    OperatorMatrix::Sparse(SparseMat::from_triplets(basis.dim(), basis.dim(), trip))
}

/// H[w, ℰ] on the subspace H_f <= rho of the family.
pub fn evaluate_on(basis: &FockBasis, sub: &Subspace, fam: &KernelFamily) -> SparseMat {
    let mut acc = SparseMat::diagonal(&vec![fam.e; sub.len()]);
    for k in fam.kernels.values() {
        acc = acc.add(&assemble_on(basis, sub, k));
    }
    acc
}

pub fn evaluate_family(basis: &FockBasis, fam: &KernelFamily) -> OperatorMatrix {
    let sub = Subspace::below(basis, fam.rho);
    let small = evaluate_on(basis, &sub, fam);
    let trip = small.triplets().map(|(i, j, v)| (sub.idx[i], sub.idx[j], v));
    OperatorMatrix::Sparse(SparseMat::from_triplets(basis.dim(), basis.dim(), trip))
}

/// Σ Π w over ordered m-tuples of modes with Σ|k| <= rho.
pub fn tuple_volume(basis: &FockBasis, m: usize, rho: f64) -> f64 {
    let modes: Vec<(f64, f64)> = basis.modes().iter().filter(|q| q.kabs <= rho).map(|q| (q.kabs, q.weight)).collect();
    fn rec(modes: &[(f64, f64)], m: usize, budget: f64) -> f64 {
        if m == 0 {
            return 1.0;
        }
        modes.iter().filter(|q| q.0 <= budget).map(|q| q.1 * rec(modes, m - 1, budget - q.0)).sum()
    }
    rec(&modes, m, rho)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    pub m: usize,
    pub n: usize,
    pub norm: f64,
    pub half_norm: f64,
    /// ‖w‖_{1/2} (V_m V_n ρ^{m+n})^{1/2} with discrete tuple volumes V.
    pub bound: f64,
    /// (8π)^{(m+n)/2} ρ^{2(m+n)} ‖w‖_{1/2}.
    pub continuum_bound: f64,
    pub ok: bool,
}

/// Operator norm of the assembled monomial against the Cauchy-Schwarz bound.
pub fn norm_check(basis: &FockBasis, sub: &Subspace, k: &WickKernel, rho: f64) -> NormCheck {
    let mat = assemble_on(basis, sub, k);
    let norm = mat.norm2();
    let hn = half_norm(basis, k);
    let bound = hn * (tuple_volume(basis, k.m, rho) * tuple_volume(basis, k.n, rho) * rho.powi((k.m + k.n) as i32)).sqrt();
    let continuum_bound = (8.0 * std::f64::consts::PI).powf((k.m + k.n) as f64 / 2.0) * rho.powi(2 * (k.m + k.n) as i32) * hn;
    NormCheck { m: k.m, n: k.n, norm, half_norm: hn, bound, continuum_bound, ok: norm <= bound * (1.0 + 1e-8) + 1e-300 }
}

/// ‖Σ_{m+n>=1} W_{m,n}‖ on the family's subspace.
pub fn w_ge1_norm(basis: &FockBasis, sub: &Subspace, fam: &KernelFamily) -> f64 {
    let mut acc = SparseMat::zeros(sub.len(), sub.len());
    for (o, k) in &fam.kernels {
        if o.0 + o.1 > 0 {
            acc = acc.add(&assemble_on(basis, sub, k));
        }
    }
    let adj = acc.adjoint();
    power_norm(sub.len(), |x| acc.matvec(x), |y| adj.matvec(y))
}

/// Functional-calculus shifts seen by each factor of an L-fold product.
#[derive(Clone, Debug, PartialEq)]
pub struct PullShift {
    /// Σ|k| and Σk over external creations of the factors to the right.
    pub r: f64,
    pub l: [f64; 3],
    /// Σ|k̃| and Σk̃ over external annihilations of the factors to the left.
    pub rt: f64,
    pub lt: [f64; 3],
}

/// `assignment[i] = (creations, annihilations)` of factor i (left to right).
pub fn pull_through_shifts(assignment: &[(Vec<[f64; 3]>, Vec<[f64; 3]>)]) -> Vec<PullShift> {
    let sum = |v: &[[f64; 3]]| {
        let mut l = [0.0; 3];
        let mut r = 0.0;
        for k in v {
            r += (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
            for c in 0..3 {
                l[c] += k[c];
            }
        }
        (r, l)
    };
    (0..assignment.len())
        .map(|i| {
            let mut out = PullShift { r: 0.0, l: [0.0; 3], rt: 0.0, lt: [0.0; 3] };
            for (j, (cre, ann)) in assignment.iter().enumerate() {
                if j > i {
                    let (r, l) = sum(cre);
                    out.r += r;
                    (0..3).for_each(|c| out.l[c] += l[c]);
                } else if j < i {
                    let (r, l) = sum(ann);
                    out.rt += r;
                    (0..3).for_each(|c| out.lt[c] += l[c]);
                }
            }
            out
        })
        .collect()
}

/// Operator product to be normal ordered: factors of given orders separated
/// by a diagonal resolvent and framed by a diagonal outer cutoff.
pub trait Chain: Sync {
    fn basis(&self) -> &FockBasis;
    /// Amplitude length (1 for scalar families, N for atom-valued chains).
    fn na(&self) -> usize;
    fn factor_orders(&self) -> Vec<(usize, usize)>;
    /// `out = w_{M,N}(mid; cre; ann) amp`; false when the sample is zero.
    fn factor(&self, order: (usize, usize), mid: usize, cre: &[u32], ann: &[u32], amp: &Amp, out: &mut Amp) -> bool;
    /// Multiply by the resolvent at `config`; false when it vanishes.
    fn resolvent(&self, config: usize, amp: &mut Amp) -> bool;
    /// Modes a contracted photon may occupy.
    fn inflight_modes(&self) -> &[u32];
    fn outer(&self, config: usize) -> f64;
    fn start(&self) -> Amp;
    fn finish(&self, amp: &Amp) -> C64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternFactor {
    pub order: (usize, usize),
    /// External creations / annihilations.
    pub m: usize,
    pub n: usize,
    /// In-flight creations / annihilations.
    pub p: usize,
    pub q: usize,
    pub binom: f64,
    pub c_off: usize,
    pub a_off: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    /// Left to right.
    pub factors: Vec<PatternFactor>,
    pub sign: f64,
    /// Largest number of in-flight photons between factors.
    pub max_inflight: usize,
}

fn binom(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Contraction patterns with output order (mo, no), 1 <= L <= l_max.
pub fn enumerate_patterns(orders: &[(usize, usize)], mo: usize, no: usize, l_max: usize, cap: usize) -> Vec<Pattern> {
    let mut out = Vec::new();
    for l in 1..=l_max {
        let mut cur: Vec<PatternFactor> = Vec::new();
        rec_patterns(orders, l, mo, no, cap, &mut cur, &mut out);
    }
    out
}

fn rec_patterns(orders: &[(usize, usize)], l: usize, mo_left: usize, no_left: usize, cap: usize, cur: &mut Vec<PatternFactor>, out: &mut Vec<Pattern>) {
    if cur.len() == l {
        if mo_left != 0 || no_left != 0 {
            return;
        }
        let mut f = 0usize;
        let mut max_f = 0usize;
        for pf in cur.iter().rev() {
            if pf.q > f {
                return;
            }
            f = f - pf.q + pf.p;
            if f > cap {
                return;
            }
            max_f = max_f.max(f);
        }
        if f != 0 {
            return;
        }
        let sign = if l % 2 == 1 { 1.0 } else { -1.0 };
        out.push(Pattern { factors: cur.clone(), sign, max_inflight: max_f });
        return;
    }
    let c_off: usize = cur.iter().map(|f| f.m).sum();
    let a_off: usize = cur.iter().map(|f| f.n).sum();
    for &(mm, nn) in orders {
        for m in 0..=mm.min(mo_left) {
            for n in 0..=nn.min(no_left) {
                if l == 1 && (m != mm || n != nn) {
                    continue;
                }
                cur.push(PatternFactor { order: (mm, nn), m, n, p: mm - m, q: nn - n, binom: binom(mm, m) * binom(nn, n), c_off, a_off });
                rec_patterns(orders, l, mo_left - m, no_left - n, cap, cur, out);
                cur.pop();
            }
        }
    }
}

struct PathCtx<'a, C: Chain> {
    chain: &'a C,
    pat: &'a Pattern,
    k: &'a [u32],
    kt: &'a [u32],
    x: Vec<usize>,
    y: Vec<usize>,
}

fn scale_amp(a: &Amp, s: f64, na: usize) -> Amp {
    let mut o = *a;
    for v in o.iter_mut().take(na) {
        *v *= s;
    }
    o
}

impl<C: Chain> PathCtx<'_, C> {
    fn run(&self, i: usize, f: usize, amp: Amp, acc: &mut C64) {
        let basis = self.chain.basis();
        let pf = &self.pat.factors[i];
        let mut removed: Vec<u32> = Vec::with_capacity(pf.q);
        self.remove_rec(i, f, pf.q, 1.0, &mut removed, amp, acc, basis);
    }

    #[allow(clippy::too_many_arguments)]
    fn remove_rec(&self, i: usize, f: usize, left: usize, fac: f64, removed: &mut Vec<u32>, amp: Amp, acc: &mut C64, basis: &FockBasis) {
        if left == 0 {
            let Some(mid) = basis.add_all(self.x[i], basis.state(f)) else { return };
            let mut created: Vec<u32> = Vec::with_capacity(self.pat.factors[i].p);
            self.create_rec(i, f, mid, self.pat.factors[i].p, fac, removed, &mut created, amp, acc, basis);
            return;
        }
        for &(q, occ, f2) in basis.removals(f) {
            let w = basis.modes()[q as usize].weight;
            removed.push(q);
            self.remove_rec(i, f2 as usize, left - 1, fac * (w * occ as f64).sqrt(), removed, amp, acc, basis);
            removed.pop();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn create_rec(&self, i: usize, f: usize, mid: usize, left: usize, fac: f64, removed: &[u32], created: &mut Vec<u32>, amp: Amp, acc: &mut C64, basis: &FockBasis) {
        if left == 0 {
            self.apply(i, f, mid, fac, removed, created, amp, acc, basis);
            return;
        }
        for &q in self.chain.inflight_modes() {
            let Some(f2) = basis.add(f, q as usize) else { continue };
            let w = basis.modes()[q as usize].weight;
            let occ = basis.occupation(f, q as usize);
            created.push(q);
            self.create_rec(i, f2, mid, left - 1, fac * (w * (occ + 1) as f64).sqrt(), removed, created, amp, acc, basis);
            created.pop();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(&self, i: usize, f: usize, mid: usize, fac: f64, removed: &[u32], created: &[u32], amp: Amp, acc: &mut C64, basis: &FockBasis) {
        let pf = &self.pat.factors[i];
        let after = if i > 0 {
            match basis.add_all(self.y[i], basis.state(f)) {
                Some(a) => a,
                None => return,
            }
        } else {
            NONE as usize
        };
        let mut cre = [0u32; MAX_LEGS];
        let mut ann = [0u32; MAX_LEGS];
        let nc = pf.m + created.len();
        let na_ = pf.n + removed.len();
        if nc + na_ > MAX_LEGS {
            return;
        }
        cre[..pf.m].copy_from_slice(&self.k[pf.c_off..pf.c_off + pf.m]);
        cre[pf.m..nc].copy_from_slice(created);
        ann[..pf.n].copy_from_slice(&self.kt[pf.a_off..pf.a_off + pf.n]);
        ann[pf.n..na_].copy_from_slice(removed);
        let na = self.chain.na();
        let mut out = [ZERO; MAX_AMP];
        if !self.chain.factor(pf.order, mid, &cre[..nc], &ann[..na_], &amp, &mut out) {
            return;
        }
        let mut out = scale_amp(&out, fac * pf.binom, na);
        if i == 0 {
            *acc += self.chain.finish(&out);
            return;
        }
        if !self.chain.resolvent(after, &mut out) {
            return;
        }
        self.run(i - 1, f, out, acc);
    }
}

/// One pattern's contribution for ordered external legs `k`, `kt` at
/// spectator `s`, without sign or outer cutoffs.
pub fn path_sum<C: Chain>(chain: &C, pat: &Pattern, s: usize, k: &[u32], kt: &[u32]) -> C64 {
    let basis = chain.basis();
    let l = pat.factors.len();
    if basis.count(s) + pat.max_inflight > basis.n_max {
        return ZERO;
    }
    let mut x = vec![0usize; l];
    let mut y = vec![0usize; l];
    for i in 0..l {
        let mut xs: Vec<u32> = Vec::new();
        let mut ys: Vec<u32> = Vec::new();
        for (j, pf) in pat.factors.iter().enumerate() {
            if j < i {
                xs.extend_from_slice(&kt[pf.a_off..pf.a_off + pf.n]);
                ys.extend_from_slice(&kt[pf.a_off..pf.a_off + pf.n]);
            }
            if j > i {
                xs.extend_from_slice(&k[pf.c_off..pf.c_off + pf.m]);
            }
            if j >= i {
                ys.extend_from_slice(&k[pf.c_off..pf.c_off + pf.m]);
            }
        }
        let Some(xi) = basis.add_all(s, &xs) else { return ZERO };
        x[i] = xi;
        y[i] = match basis.add_all(s, &ys) {
            Some(v) => v,
            None if i == 0 => NONE as usize,
            None => return ZERO,
        };
    }
    let ctx = PathCtx { chain, pat, k, kt, x, y };
    let mut acc = ZERO;
    ctx.run(l - 1, 0, chain.start(), &mut acc);
    acc
}

/// Symmetrized, signed output sample at canonical (s, K, K̃) including the
/// outer cutoffs.
pub fn output_value<C: Chain>(chain: &C, pats: &[Pattern], s: usize, k: &[u32], kt: &[u32]) -> C64 {
    let basis = chain.basis();
    let (Some(a), Some(b)) = (basis.add_all(s, k), basis.add_all(s, kt)) else { return ZERO };
    let outer = chain.outer(a) * chain.outer(b);
    if outer == 0.0 {
        return ZERO;
    }
    let pk = distinct_perms(k);
    let pkt = distinct_perms(kt);
    let norm = factorial(k.len()) * factorial(kt.len());
    let mut acc = ZERO;
    for pat in pats {
        let mut v = ZERO;
        for (kk, mk) in &pk {
            for (tt, mt) in &pkt {
                v += path_sum(chain, pat, s, kk, tt) * (mk * mt) as f64;
            }
        }
        acc += v * pat.sign;
    }
    acc * (outer / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewickOptions {
    pub l_max: usize,
    pub m_max: usize,
    /// Also evaluate orders above m_max (up to MAX_LEGS) to report their mass.
    pub track_dropped: bool,
}

impl Default for RewickOptions {
    fn default() -> Self {
        Self { l_max: 4, m_max: 2, track_dropped: true }
    }
}

#[derive(Clone, Debug)]
pub struct RewickOutput {
    /// Fully contracted value per output spectator state (basis index order).
    pub c00: Vec<(usize, C64)>,
    pub kernels: BTreeMap<(usize, usize), WickKernel>,
    pub dropped_mass: f64,
    pub dropped: BTreeMap<(usize, usize), f64>,
}

/// Canonical multisets of `m` modes from `modes` that keep `s` inside `sub`.
fn leg_sets(basis: &FockBasis, sub: &Subspace, s: usize, modes: &[u32], m: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    fn rec(basis: &FockBasis, sub: &Subspace, cur_state: usize, modes: &[u32], start: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for (ix, &q) in modes.iter().enumerate().skip(start) {
            let Some(nx) = basis.add(cur_state, q as usize) else { continue };
            if sub.pos(nx).is_none() {
                continue;
            }
            cur.push(q);
            rec(basis, sub, nx, modes, ix, left - 1, cur, out);
            cur.pop();
        }
    }
    rec(basis, sub, s, modes, 0, m, &mut Vec::new(), &mut out);
    out
}

/// All output orders (m, n) with m + n <= limit, m + n >= 1.
fn orders_upto(limit: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for t in 1..=limit {
        for m in 0..=t {
            v.push((m, t - m));
        }
    }
    v
}

/// Normal-order Σ_L (−1)^{L+1} χ W (R W)^{L−1} χ on the subspace `out_sub`.
pub fn rewick<C: Chain>(chain: &C, out_sub: &Subspace, opts: &RewickOptions) -> RewickOutput {
    let basis = chain.basis();
    let orders = chain.factor_orders();
    let leg_modes: Vec<u32> = {
        let rho_out = out_sub.idx.iter().map(|&i| basis.energy(i)).fold(0.0, f64::max);
        (0..basis.n_modes() as u32).filter(|&q| basis.modes()[q as usize].kabs <= rho_out).collect()
    };
    let cap = basis.n_max;
    let p00 = enumerate_patterns(&orders, 0, 0, opts.l_max, cap);
    let c00: Vec<(usize, C64)> = crate::exec::map_slice(&out_sub.idx, |&s| (s, output_value(chain, &p00, s, &[], &[])));
    let limit = if opts.track_dropped { MAX_LEGS.min(2 * basis.n_max) } else { opts.m_max };
    let mut kernels = BTreeMap::new();
    let mut dropped = BTreeMap::new();
    for (mo, no) in orders_upto(limit) {
        if mo > basis.n_max || no > basis.n_max {
            continue;
        }
        let pats = enumerate_patterns(&orders, mo, no, opts.l_max, cap);
        if pats.is_empty() {
            continue;
        }

        let per_state: Vec<Vec<(KernelKey, C64)>> = crate::exec::map_slice(&out_sub.idx, |&s| {
            let ks = leg_sets(basis, out_sub, s, &leg_modes, mo);
            let kts = leg_sets(basis, out_sub, s, &leg_modes, no);
            let mut v = Vec::new();
            for k in &ks {
                for kt in &kts {
                    let val = output_value(chain, &pats, s, k, kt);
                    if val != ZERO {
                        v.push((KernelKey::new(s, k, kt), val));
                    }
                }
            }
            v
        });
        let kern = WickKernel::from_entries(mo, no, per_state.into_iter().flatten().collect());
        if mo + no <= opts.m_max {
            kernels.insert((mo, no), kern);
        } else {
            dropped.insert((mo, no), half_norm(basis, &kern));
        }
    }
    let dropped_mass = dropped.values().sum();
    RewickOutput { c00, kernels, dropped_mass, dropped }
}

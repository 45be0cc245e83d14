#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use resonflow::atommodel::{AtomSpec, ProblemParams};
use resonflow::feshbach::{feshbach_dense, restrict_to_p, FeshbachPair};
use resonflow::fockspace::{build_basis, CutoffProfile, FockBasis, ModeGrid};
use resonflow::linalg::{adjoint, eigh, fz, inverse, max_abs_diff, nz, submatrix, DMat, C64, ZERO};
use resonflow::rgflow::{FlowModel, FlowOptions};

pub fn reference_grid() -> ModeGrid {
    ModeGrid::spherical(24, 6, 6.0, 1.0).unwrap()
}

pub fn reference_basis() -> FockBasis {
    build_basis(&reference_grid(), 2, 12.0).unwrap()
}

pub fn tiny_grid() -> ModeGrid {
    ModeGrid::spherical(2, 4, 1.2, 1.0).unwrap()
}

pub fn tiny_basis() -> FockBasis {
    build_basis(&tiny_grid(), 2, 2.4).unwrap()
}

pub fn params(atom: &AtomSpec, lambda: f64, vartheta: f64, p: [C64; 3], i0: usize) -> ProblemParams {
    ProblemParams::new(atom, lambda, vartheta, p, [0.0, 0.0, 0.5], i0)
}

pub fn pz(re: f64, im: f64) -> [C64; 3] {
    [ZERO, ZERO, C64::new(re, im)]
}

pub fn model(atom: AtomSpec, basis: FockBasis, lambda: f64, vartheta: f64, p: [C64; 3], i0: usize) -> FlowModel {
    let prm = params(&atom, lambda, vartheta, p, i0);
    FlowModel::new(atom, prm, basis, FlowOptions::default()).unwrap()
}

pub fn tiny_model(lambda: f64, i0: usize) -> FlowModel {
    model(AtomSpec::two_level_reference(), tiny_basis(), lambda, PI / 8.0, pz(0.0, 0.0), i0)
}

fn cplx<R: Rng>(rng: &mut R) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn rand_unitary<R: Rng>(rng: &mut R, n: usize) -> DMat {
    let a = DMat::from_fn(n, n, |i, j| fz(cplx(rng) + if i == j { C64::new(0.0, 0.0) } else { ZERO }));
    let herm = &a + adjoint(&a);
    eigh(&herm).1
}

/// Random pair of size n: T diagonal in the eigenbasis of P, W of norm
/// about `w_scale`. `sharp` makes P a projection; `rotated` conjugates
/// everything by a random unitary.
pub fn random_pair<R: Rng>(rng: &mut R, n: usize, sharp: bool, rotated: bool, w_scale: f64) -> FeshbachPair {
    let mut chi = vec![0.0; n];
    for (i, c) in chi.iter_mut().enumerate() {
        *c = if i == 0 {
            1.0
        } else if i == n - 1 {
            0.0
        } else if sharp {
            if rng.gen_bool(0.5) { 1.0 } else { 0.0 }
        } else {
            CutoffProfile::Cosine.chi(rng.gen_range(0.5..1.2))
        };
    }
    let t: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..0.0))).collect();
    let w = DMat::from_fn(n, n, |_, _| fz(cplx(rng) * (w_scale / n as f64)));
    let pd = DMat::from_fn(n, n, |i, j| fz(if i == j { C64::new(chi[i], 0.0) } else { ZERO }));
    let td = DMat::from_fn(n, n, |i, j| fz(if i == j { t[i] } else { ZERO }));
    let (p, tm, wm) = if rotated {
        let u = rand_unitary(rng, n);
        let ua = adjoint(&u);
        let p = &u * &pd * &ua;
        // exact hermitian symmetrization
        let p = DMat::from_fn(n, n, |i, j| fz((resonflow::linalg::nz(p.read(i, j)) + resonflow::linalg::nz(p.read(j, i)).conj()) * 0.5));
        (p, &u * &td * &ua, w)
    } else {
        (pd, td, w)
    };
    let h = &tm + &wm;
    FeshbachPair::new(h, tm, p).unwrap_or_else(|e| panic!("{e}"))
}

/// max |F_P(H,T) − Schur complement| for a pair with a sharp diagonal P.
pub fn schur_agreement(pair: &FeshbachPair) -> f64 {
    let n = pair.dim();
    let rows: Vec<usize> = (0..n).filter(|&i| nz(pair.p.read(i, i)).re > 0.5).collect();
    let bar: Vec<usize> = (0..n).filter(|&i| nz(pair.p.read(i, i)).re <= 0.5).collect();
    let hpp = submatrix(&pair.h, &rows, &rows);
    let hpb = submatrix(&pair.h, &rows, &bar);
    let hbp = submatrix(&pair.h, &bar, &rows);
    let hbb = submatrix(&pair.h, &bar, &bar);
    let schur = &hpp - &hpb * inverse(&hbb) * &hbp;
    let (f, _) = feshbach_dense(pair).unwrap();
    max_abs_diff(&restrict_to_p(pair, &f), &schur)
}

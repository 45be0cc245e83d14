mod common;

use std::f64::consts::PI;

use resonflow::atommodel::AtomSpec;
use resonflow::fockspace::{build_basis, ModeGrid};
use resonflow::linalg::{fz, DMat, C64, ZERO};
use resonflow::oracle::{dense_spectrum, eigs_near, ground_state_energy, linear_fit, perturbation_fit, resonance_by_dilation, resonance_at, FiberOperator, DENSE_CAP};

#[test]
fn dense_spectrum_sorts_and_pairs() {
    let d = [C64::new(2.0, 0.0), C64::new(-1.0, 0.5), C64::new(-1.0, -0.5)];
    let h = DMat::from_fn(3, 3, |i, j| fz(if i == j { d[i] } else { ZERO }));
    let (vals, vecs) = dense_spectrum(&h);
    assert_eq!(vals, vec![C64::new(-1.0, -0.5), C64::new(-1.0, 0.5), C64::new(2.0, 0.0)]);
    for k in 0..3 {
        let col: Vec<C64> = (0..3).map(|r| resonflow::linalg::nz(vecs.read(r, k))).collect();
        let hv = resonflow::linalg::dense_matvec(&h, &col);
        for r in 0..3 {
            assert!((hv[r] - vals[k] * col[r]).norm() < 1e-14);
        }
    }
}

#[test]
fn dense_path_matches_full_spectrum() {
    let atom = AtomSpec::two_level_reference();
    let p = common::params(&atom, 0.05, PI / 8.0, common::pz(0.1, 0.0), 2);
    let op = FiberOperator::new(&atom, &p, &common::tiny_basis());
    let (all, _) = dense_spectrum(&op.to_dense());
    let sigma = C64::new(1.0, 0.0);
    let near = eigs_near(&op, sigma, 3, 12, 1e-11).unwrap();
    let mut d: Vec<f64> = all.iter().map(|v| (v - sigma).norm()).collect();
    d.sort_by(f64::total_cmp);
    for (k, e) in near.iter().enumerate() {
        assert!(((e.value - sigma).norm() - d[k]).abs() < 1e-12);
        assert!(e.residual < 1e-10);
    }
}

#[test]
fn shift_invert_path_converges() {
    // 2 x 2·(6·6) modes, n_max 2: above the dense cap
    let g = ModeGrid::spherical(6, 6, 3.0, 1.0).unwrap();
    let b = build_basis(&g, 2, 6.0).unwrap();
    let atom = AtomSpec::two_level_reference();
    let p = common::params(&atom, 3e-3, PI / 8.0, common::pz(0.0, 0.0), 2);
    let op = FiberOperator::new(&atom, &p, &b);
    assert!(op.dim() > DENSE_CAP);
    let e = resonance_at(&atom, &p, &b, C64::new(1.0, 0.0)).unwrap();
    assert!(e.residual < 1e-10, "{}", e.residual);
    // independent residual through the operator
    let hv = op.apply(&e.vector);
    let r: f64 = hv.iter().zip(&e.vector).map(|(a, x)| (a - e.value * x).norm_sqr()).sum::<f64>().sqrt();
    let n: f64 = e.vector.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    assert!(r / n < 1e-10);
    assert!(e.value.im < 0.0 && (e.value - 1.0).norm() < 1e-3);
}

#[test]
fn ground_state_needs_self_adjoint_setting() {
    let atom = AtomSpec::two_level_reference();
    let b = common::tiny_basis();
    let p = common::params(&atom, 1e-2, PI / 8.0, common::pz(0.1, 0.0), 1);
    assert!(ground_state_energy(&atom, &p, &b).is_err());
    let mut q = p.clone();
    q.theta = ZERO;
    let gs = ground_state_energy(&atom, &q, &b).unwrap();
    let (all, _) = dense_spectrum(&FiberOperator::new(&atom, &q, &b).to_dense());
    assert!((gs.energy - all[0].re).abs() < 1e-12);
    assert!((gs.gap - (all[1].re - all[0].re)).abs() < 1e-10);
    assert!(gs.simple && gs.energy < 0.0);
}

#[test]
fn plateau_on_tiny_basis() {
    let atom = AtomSpec::two_level_reference();
    let b = common::tiny_basis();
    let p = common::params(&atom, 3e-3, PI / 8.0, common::pz(0.0, 0.0), 2);
    assert!(resonance_by_dilation(&atom, &p, &b, &[0.3, 0.4], None).is_err());
    let rep = resonance_by_dilation(&atom, &p, &b, &[0.25, 0.3, 0.35, 0.4, 0.45], None).unwrap();
    assert!(rep.index > 0 && rep.index < 4);
    assert!(rep.z_res.im < 0.0);
    assert!(rep.residuals.iter().all(|&r| r < 1e-10));
}

#[test]
fn perturbation_fit_recovers_polynomial() {
    let (a, b) = (C64::new(-10.6, -10.5), C64::new(300.0, 40.0));
    let ls = [0.0, 1e-3, 2e-3, 3e-3, 5e-3];
    let zs: Vec<C64> = ls.iter().map(|&l| 1.0 + a * l * l + b * l.powi(4)).collect();
    let fit = perturbation_fit(1.0, &ls, &zs, a).unwrap();
    assert!((fit.a - a).norm() < 1e-8);
    assert!((fit.b - b).norm() < 1e-2);
    assert!(fit.rel_err < 1e-9);
    assert!((fit.residual_exponent - 4.0).abs() < 1e-6);
    assert!(perturbation_fit(1.0, &ls[..3], &zs[..3], a).is_err());
}

#[test]
fn linear_fit_of_exact_line() {
    let x = [0.0, 1.0, 2.0, 3.0];
    let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 0.5).collect();
    let (s, c, r2) = linear_fit(&x, &y);
    assert!((s + 2.0).abs() < 1e-14 && (c - 0.5).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
}

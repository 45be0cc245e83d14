mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use resonflow::atommodel::AtomSpec;
use resonflow::linalg::{C64, ZERO};
use resonflow::resonance::{angular_rule, fgr_condition, im_zod_residue, leading_feshbach, pole_radius, polarization_sum, zd_zod};
use resonflow::fockspace::ModeGrid;

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn zero_atom() -> AtomSpec {
    let z = vec![ZERO; 4];
    AtomSpec::new_unnormalized(vec![0.0, 1.0], [z.clone(), z.clone(), z]).unwrap()
}

/// σ_x, σ_x, σ_z: has a diagonal dipole element, so z^d is nonzero.
fn mixed_atom() -> AtomSpec {
    let sx = vec![ZERO, re(1.0), re(1.0), ZERO];
    let sz = vec![re(1.0), ZERO, ZERO, re(-1.0)];
    AtomSpec::new(vec![0.0, 1.0], [sx.clone(), sx, sz]).unwrap()
}

#[test]
fn two_level_pole_at_rest() {
    let r = pole_radius(1.0, 0.0, 0.0).unwrap();
    assert!((r - (3f64.sqrt() - 1.0)).abs() < 1e-12);
    assert!((1.0 - r - r * r / 2.0).abs() < 1e-15);
    assert_eq!(pole_radius(0.0, 1.0, 0.0), None);
}

#[test]
fn angular_sum_rule() {
    let rule = angular_rule(16, 16).unwrap();
    let total: f64 = rule.iter().map(|x| x.1).sum();
    assert!((total - 4.0 * PI).abs() < 1e-12);
    let v = [re(0.0), re(0.0), re(1.0)];
    let s: f64 = rule.iter().map(|&(k, w)| w * polarization_sum(k, v)).sum();
    assert!((s - 8.0 * PI / 3.0).abs() < 1e-12);
}

#[test]
fn zero_dipoles_give_no_shift() {
    let atom = zero_atom();
    let p = common::params(&atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 2);
    let s = zd_zod(&atom, &p, &common::tiny_grid()).unwrap();
    assert_eq!((s.z_d, s.z_od, s.im_zod_residue), (ZERO, ZERO, 0.0));
    let f = fgr_condition(&atom, &p).unwrap();
    assert!(!f.holds && f.value == 0.0);
}

#[test]
fn ground_state_has_no_decay_channel() {
    let atom = AtomSpec::two_level_reference();
    let p = common::params(&atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 1);
    assert_eq!(im_zod_residue(&atom, &p).unwrap(), 0.0);
    let g = ModeGrid::spherical(200, 6, 6.0, 1.0).unwrap();
    let s = zd_zod(&atom, &p, &g).unwrap();
    assert!(s.z_od.im.abs() < 1e-6, "{}", s.z_od);
}

#[test]
fn quadrature_matches_residue_on_fine_grid() {
    let atom = AtomSpec::two_level_reference();
    let p = common::params(&atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 2);
    let g = ModeGrid::spherical(200, 6, 6.0, 1.0).unwrap();
    let s = zd_zod(&atom, &p, &g).unwrap();
    assert!((s.z_od.im - s.im_zod_residue).abs() < 1e-6, "{} vs {}", s.z_od.im, s.im_zod_residue);
    // reference value with |d_12|^2 = 3: 8π²(√3-1)³ e^{-(√3-1)²}/√3 · (angular factor 8π/3 per unit vector)
    let r: f64 = 3f64.sqrt() - 1.0;
    let want = PI * (8.0 * PI / 3.0) * 3.0 * r.powi(3) * (-r * r).exp() / 3f64.sqrt();
    assert!((s.im_zod_residue - want).abs() < 1e-10 * want, "{} {}", s.im_zod_residue, want);
}

#[test]
fn diagonal_shift_is_real() {
    let atom = mixed_atom();
    let p = common::params(&atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 2);
    let g = ModeGrid::spherical(200, 6, 6.0, 1.0).unwrap();
    let s = zd_zod(&atom, &p, &g).unwrap();
    assert!(s.z_d.norm() > 1e-3);
    assert!(s.z_d.im.abs() < 1e-10, "{}", s.z_d);
}

#[test]
fn shift_is_theta_independent_on_fine_grid() {
    let atom = mixed_atom();
    let g = ModeGrid::spherical(200, 6, 6.0, 1.0).unwrap();
    // the arc at k_max leaves exp(-36 cos 2ϑ): 2e-8 at ϑ = 0.5, so stay at small angles
    let a = zd_zod(&atom, &common::params(&atom, 1e-2, 0.2, common::pz(0.0, 0.0), 2), &g).unwrap();
    let b = zd_zod(&atom, &common::params(&atom, 1e-2, 0.3, common::pz(0.0, 0.0), 2), &g).unwrap();
    assert!((a.z_d - b.z_d).norm() < 1e-9, "{} {}", a.z_d, b.z_d);
    assert!((a.z_od - b.z_od).norm() < 1e-6);
    assert_eq!(a.im_zod_residue, b.im_zod_residue);
}

#[test]
fn fgr_depends_on_momentum() {
    let atom = AtomSpec::two_level_reference();
    let f0 = fgr_condition(&atom, &common::params(&atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 2)).unwrap();
    let f3 = fgr_condition(&atom, &common::params(&atom, 1e-2, PI / 8.0, common::pz(0.3, 0.0), 2)).unwrap();
    assert!(f0.holds && f3.holds);
    assert!((f0.value - f3.value).abs() > 1e-3);
    assert!(im_zod_residue(&atom, &common::params(&atom, 1e-2, PI / 8.0, common::pz(0.3, 0.1), 2)).is_err());
}

#[test]
fn adding_a_channel_cannot_lower_the_width() {
    // three levels; level 3 decays to 2, then also to 1
    let mk = |with_13: bool| {
        let mut d = vec![ZERO; 9];
        d[1 * 3 + 2] = re(1.0);
        d[2 * 3 + 1] = re(1.0);
        if with_13 {
            d[2] = re(0.5);
            d[6] = re(0.5);
        }
        AtomSpec::new_unnormalized(vec![0.0, 0.6, 1.0], [d.clone(), d.clone(), d]).unwrap()
    };
    let (a, b) = (mk(false), mk(true));
    let w = |atom: &AtomSpec| im_zod_residue(atom, &common::params(atom, 1e-2, PI / 8.0, common::pz(0.0, 0.0), 3)).unwrap();
    assert!(w(&a) > 0.0);
    assert!(w(&b) > w(&a));
}

#[test]
fn leading_operator_without_coupling_is_free() {
    let atom = AtomSpec::two_level_reference();
    let p = common::params(&atom, 0.0, PI / 8.0, common::pz(0.0, 0.0), 2);
    let basis = common::tiny_basis();
    let shift = zd_zod(&atom, &p, &common::tiny_grid()).unwrap();
    let z = C64::new(1.0, -1e-3);
    let (diag, budget) = leading_feshbach(&atom, &p, &basis, &shift, z, 5.0);
    assert_eq!(budget, 0.0);
    let sub = resonflow::kernels::Subspace::below(&basis, p.rho0);
    for (i, &s) in sub.idx.iter().enumerate() {
        let free = resonflow::atommodel::free_field_energy(basis.energy(s), basis.momentum(s), p.p, p.theta);
        assert!((diag[i] - (free + 1.0 - z)).norm() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pole_solves_its_equation(e_i in 0.1f64..3.0, gap in 0.01f64..2.0, pk in -0.9f64..0.9) {
        let r = pole_radius(e_i, e_i - gap, pk).unwrap();
        prop_assert!(r > 0.0);
        prop_assert!((e_i - r - r * r / 2.0 + r * pk - (e_i - gap)).abs() < 1e-12);
    }

    #[test]
    fn polarization_sum_bounds(th in 0.0f64..PI, ph in 0.0f64..(2.0 * PI), a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
        let k = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
        let v = [re(a), re(b), C64::new(0.0, c)];
        let n2 = a * a + b * b + c * c;
        let s = polarization_sum(k, v);
        prop_assert!(s >= 0.0 && s <= n2 + 1e-14);
    }

    #[test]
    fn width_nonnegative(pz in -0.6f64..0.6) {
        let atom = AtomSpec::two_level_reference();
        let w = im_zod_residue(&atom, &common::params(&atom, 1e-2, PI / 8.0, common::pz(pz, 0.0), 2)).unwrap();
        prop_assert!(w > 0.0);
    }
}

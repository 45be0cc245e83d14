use std::f64::consts::PI;

use proptest::prelude::*;
use resonflow::atommodel::{coupling, dilated_interaction, domain_check, fiber_hamiltonian, free_fiber_hamiltonian, free_field_energy, AtomSpec, ProblemParams};
use resonflow::fockspace::{build_basis, ModeGrid};
use resonflow::linalg::{eigvals, C64, ZERO};

fn tiny() -> (ModeGrid, resonflow::fockspace::FockBasis) {
    let g = ModeGrid::spherical(2, 4, 1.2, 1.0).unwrap();
    let b = build_basis(&g, 2, 2.4).unwrap();
    (g, b)
}

fn zero_atom() -> AtomSpec {
    let z = vec![ZERO; 4];
    AtomSpec::new_unnormalized(vec![0.0, 1.0], [z.clone(), z.clone(), z]).unwrap()
}

#[test]
fn atom_validation() {
    let sx = vec![ZERO, C64::new(1.0, 0.0), C64::new(1.0, 0.0), ZERO];
    assert!(AtomSpec::new(vec![1.0, 0.0], [sx.clone(), sx.clone(), sx.clone()]).is_err());
    let twice: Vec<C64> = sx.iter().map(|v| v * 2.0).collect();
    assert!(AtomSpec::new(vec![0.0, 1.0], [twice, sx.clone(), sx.clone()]).is_err());
    let nonherm = vec![ZERO, C64::new(0.0, 1.0), C64::new(0.0, 1.0), ZERO];
    assert!(AtomSpec::new(vec![0.0, 1.0], [nonherm, sx.clone(), sx.clone()]).is_err());
    let a = AtomSpec::new(vec![-0.5, 0.25, 2.0], {
        let mut d = vec![ZERO; 9];
        d[1] = C64::new(1.0, 0.0);
        d[3] = C64::new(1.0, 0.0);
        [d.clone(), d.clone(), d]
    })
    .unwrap();
    assert_eq!(a.delta0, 0.75);
}

#[test]
fn params_derived_fields() {
    let atom = AtomSpec::two_level_reference();
    let p = ProblemParams::new(&atom, 1e-2, PI / 8.0, ProblemParams::real_p([0.0; 3]), [0.0, 0.0, 0.5], 2);
    assert_eq!(p.mu, 0.25);
    assert_eq!(p.rho0, 0.5);
    assert_eq!(p.level(), 1);
    p.validate(&atom).unwrap();
    let mut bad = p.clone();
    bad.i0 = 3;
    assert!(bad.validate(&atom).is_err());
    let inside = ProblemParams::new(&atom, 1e-2, PI / 8.0, [ZERO, ZERO, C64::new(0.4, 0.02)], [0.0, 0.0, 0.5], 1);
    assert!(domain_check(&inside, &atom).in_domain);
    let outside = ProblemParams::new(&atom, 1e-2, PI / 8.0, [ZERO, ZERO, C64::new(0.4, 0.06)], [0.0, 0.0, 0.5], 1);
    assert!(!domain_check(&outside, &atom).in_domain);
}

#[test]
fn zero_dipoles_give_zero_interaction() {
    let (g, b) = tiny();
    let h = dilated_interaction(&g, &b, &zero_atom(), ZERO);
    assert_eq!(h.norm2(), 0.0);
}

#[test]
fn undilated_interaction_and_fiber_are_hermitian() {
    let (g, b) = tiny();
    let atom = AtomSpec::two_level_reference();
    assert!(dilated_interaction(&g, &b, &atom, ZERO).hermiticity_defect() < 1e-12);
    let mut p = ProblemParams::new(&atom, 0.3, 0.0, ProblemParams::real_p([0.1, 0.0, 0.2]), [0.0, 0.0, 0.5], 1);
    p.theta = ZERO;
    let h = fiber_hamiltonian(&g, &b, &atom, &p).unwrap();
    assert!(h.hermiticity_defect() < 1e-12);
    for z in eigvals(&h.to_dense()) {
        assert!(z.im.abs() < 1e-11);
    }
}

#[test]
fn free_vacuum_sector_is_the_atomic_spectrum() {
    let (g, b) = tiny();
    let atom = AtomSpec::two_level_reference();
    let p = ProblemParams::new(&atom, 0.0, PI / 8.0, ProblemParams::real_p([0.0, 0.0, 0.3]), [0.0, 0.0, 0.5], 1);
    let h = fiber_hamiltonian(&g, &b, &atom, &p).unwrap();
    assert_eq!(h.get(0, 0), C64::new(0.0, 0.0));
    assert_eq!(h.get(1, 1), C64::new(1.0, 0.0));
    // one photon: E_j + e^{-θ}(|k| - p·k) + e^{-2θ}k²/2
    let n = atom.n();
    let th = p.theta;
    for f in 1..b.dim() {
        if b.count(f) != 1 {
            continue;
        }
        let m = &b.modes()[b.state(f)[0] as usize];
        let k2 = m.kabs * m.kabs;
        for a in 0..n {
            let want = atom.energies[a] + (-th).exp() * (m.kabs - 0.3 * m.k[2]) + (-2.0 * th).exp() * k2 / 2.0;
            assert!((h.get(f * n + a, f * n + a) - want).norm() < 1e-14);
        }
    }
    let free = free_fiber_hamiltonian(&g, &b, &atom, &p).unwrap();
    assert_eq!(free.to_dense(), h.to_dense());
}

#[test]
fn coupling_matches_closed_form() {
    let th = C64::new(0.0, 0.3);
    let c = coupling(0.7, 1.0, th);
    let want = C64::new(0.0, 1.0) * (-2.0 * th).exp() * (-(-2.0 * th).exp() * 0.49 / 2.0).exp() * 0.7f64.sqrt();
    assert!((c - want).norm() < 1e-15);
    assert_eq!(free_field_energy(0.0, [0.0; 3], ProblemParams::real_p([0.3; 3]), th), ZERO);
}

#[test]
fn conjugate_dilation_conjugates_the_spectrum() {
    let (g, b) = tiny();
    let atom = AtomSpec::two_level_reference();
    let p = ProblemParams::new(&atom, 0.2, 0.3, ProblemParams::real_p([0.0, 0.0, 0.1]), [0.0, 0.0, 0.5], 1);
    let mut q = p.clone();
    q.theta = p.theta.conj();
    let a = eigvals(&fiber_hamiltonian(&g, &b, &atom, &p).unwrap().to_dense());
    let c = eigvals(&fiber_hamiltonian(&g, &b, &atom, &q).unwrap().to_dense());
    assert_eq!(a.len(), c.len());
    for x in &a {
        let d = c.iter().map(|y| (x - y.conj()).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-9, "{x} has no conjugate partner ({d:e})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hermitian_at_real_theta(lambda in 0.0f64..0.5, pz in -0.9f64..0.9) {
        let g = ModeGrid::spherical(1, 4, 1.0, 1.0).unwrap();
        let b = build_basis(&g, 2, 2.0).unwrap();
        let atom = AtomSpec::two_level_reference();
        let mut p = ProblemParams::new(&atom, lambda, 0.0, ProblemParams::real_p([0.0, 0.0, pz]), [0.0, 0.0, 0.5], 1);
        p.theta = ZERO;
        let h = fiber_hamiltonian(&g, &b, &atom, &p).unwrap();
        prop_assert!(h.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn interaction_is_linear_in_dipoles(s in 0.0f64..2.0) {
        let g = ModeGrid::spherical(1, 4, 1.0, 1.0).unwrap();
        let b = build_basis(&g, 1, 2.0).unwrap();
        let atom = AtomSpec::two_level_reference();
        let th = C64::new(0.0, 0.2);
        let h1 = dilated_interaction(&g, &b, &atom, th).to_dense();
        let hs = dilated_interaction(&g, &b, &atom.with_dipoles_scaled(s), th).to_dense();
        for i in 0..h1.nrows() {
            for j in 0..h1.ncols() {
                let d = resonflow::linalg::nz(hs.read(i, j)) - resonflow::linalg::nz(h1.read(i, j)) * s;
                prop_assert!(d.norm() < 1e-13);
            }
        }
    }
}

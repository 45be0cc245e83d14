mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resonflow::feshbach::{feshbach_dense, isospectrality_check, q_operator, restrict_to_p, verify_pair, FeshbachPair};
use resonflow::linalg::{eigvals, fz, max_abs_diff, nz, DMat, C64, ZERO};

fn diag(v: &[C64]) -> DMat {
    DMat::from_fn(v.len(), v.len(), |i, j| fz(if i == j { v[i] } else { ZERO }))
}

#[test]
fn zero_interaction_gives_t() {
    let t = [C64::new(1.0, 0.0), C64::new(2.0, -0.5), C64::new(3.0, 0.0)];
    let p = diag(&[C64::new(1.0, 0.0), C64::new(0.6, 0.0), ZERO]);
    let pair = FeshbachPair::new(diag(&t), diag(&t), p).unwrap();
    let rep = verify_pair(&pair, 0.0);
    assert!(rep.pass);
    assert_eq!((rep.crit_left, rep.crit_right, rep.crit_mixed), (0.0, 0.0, 0.0));
    let (f, _) = feshbach_dense(&pair).unwrap();
    assert!(max_abs_diff(&f, &diag(&t)) < 1e-15);
}

#[test]
fn invalid_pairs_are_rejected() {
    let t = diag(&[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
    let bad_p = DMat::from_fn(2, 2, |i, j| fz(if i == j { C64::new(0.5, 0.0) } else { C64::new(0.0, 0.1) }));
    let full = diag(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
    assert!(FeshbachPair::new(t.clone(), t.clone(), bad_p.clone()).is_err());
    assert!(FeshbachPair::new(t.clone(), t.clone(), full).is_err());
    let over = diag(&[C64::new(1.5, 0.0), ZERO]);
    assert!(FeshbachPair::new(t.clone(), t, over).is_err());
}

#[test]
fn two_by_two_schur_complement() {
    // H = [[a, b], [c, d]], P = e_1 e_1^*: F = a - b c / d
    let (a, b, c, d) = (C64::new(0.3, 0.1), C64::new(0.2, 0.0), C64::new(-0.1, 0.4), C64::new(2.0, -0.3));
    let h = DMat::from_fn(2, 2, |i, j| fz([[a, b], [c, d]][i][j]));
    let t = diag(&[a, d]);
    let p = diag(&[C64::new(1.0, 0.0), ZERO]);
    let pair = FeshbachPair::new(h, t, p).unwrap();
    let (f, _) = feshbach_dense(&pair).unwrap();
    let fp = restrict_to_p(&pair, &f);
    assert!((nz(fp.read(0, 0)) - (a - b * c / d)).norm() < 1e-15);
}

#[test]
fn singular_hbar_is_an_error() {
    let t = diag(&[C64::new(1.0, 0.0), ZERO]);
    let p = diag(&[C64::new(1.0, 0.0), ZERO]);
    let pair = FeshbachPair::new(t.clone(), t, p).unwrap();
    assert!(feshbach_dense(&pair).is_err());
    assert!(!verify_pair(&pair, 0.0).t_invertible);
}

#[test]
fn neumann_series_agrees_with_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let pair = common::random_pair(&mut rng, 8, false, false, 0.3);
        if let Ok((_, Some(dev))) = feshbach_dense(&pair) {
            assert!(dev < 1e-12, "{dev}");
        }
    }
}

#[test]
fn q_intertwines_on_kernels() {
    // F ψ = 0 at an eigenvalue z of H implies (H - z) Q ψ = 0
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pair = common::random_pair(&mut rng, 7, false, true, 0.5);
    let ev = eigvals(&pair.h);
    let z = ev[0];
    let sp = pair.shifted(z);
    let (f, _) = feshbach_dense(&sp).unwrap();
    let fp = restrict_to_p(&sp, &f);
    // null vector of F on ran P
    let fe = resonflow::linalg::eig(&fp);
    let k = (0..fe.0.len()).min_by(|&a, &b| fe.0[a].norm().total_cmp(&fe.0[b].norm())).unwrap();
    let phi_p = resonflow::linalg::col_to_vec(&fe.1, k);
    let phi = resonflow::linalg::dense_matvec(sp.range_p(), &phi_p);
    let q = q_operator(&sp).unwrap().to_dense();
    let psi = resonflow::linalg::dense_matvec(&q, &phi);
    let r = resonflow::linalg::dense_matvec(&sp.h, &psi);
    assert!(resonflow::linalg::vec_norm(&r) < 1e-10 * resonflow::linalg::vec_norm(&psi).max(1e-300));
    assert!(resonflow::linalg::vec_norm(&psi) > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sharp_projection_is_the_schur_complement(seed in any::<u64>(), n in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = common::random_pair(&mut rng, n, true, false, 1.0);
        prop_assert!(common::schur_agreement(&pair) < 1e-12);
    }

    #[test]
    fn isospectral_at_eigenvalues(seed in any::<u64>(), n in 3usize..10, rotated in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = common::random_pair(&mut rng, n, false, rotated, 0.5);
        let mut zs = eigvals(&pair.h);
        zs.push(C64::new(0.123, -0.456));
        let rep = isospectrality_check(&pair, &zs, 1e-9);
        prop_assert_eq!(rep.mismatches, 0);
        // the off-spectrum point is regular for both
        let last = rep.points.last().unwrap();
        prop_assert!(last.smin_h > 1e-9 || !last.pair_ok);
    }
}

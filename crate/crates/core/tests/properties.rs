use std::sync::{Arc, OnceLock};

use flowcz::counterexample::{phi_beta, psi_box_corner_check, strip_exponents};
use flowcz::cubes::AbelianDyadic;
use flowcz::cylinder::{AdmissibilityParams, FlowSpace};
use flowcz::cz::{cz_decompose, identity_residual, random_simple_function};
use flowcz::family::{DyadicFamily, FamilyConfig};
use flowcz::measure::FlowMeasure;
use flowcz::{BasePoint, GroupPoint, GroupSpec, VerticalField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: &BasePoint, b: &BasePoint, tol: f64) -> bool {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn heis_point() -> impl Strategy<Value = BasePoint> {
    prop::array::uniform3(-5.0..5.0f64).prop_map(|c| BasePoint::new(&c))
}

fn group_point() -> impl Strategy<Value = GroupPoint> {
    (heis_point(), -3.0..3.0f64).prop_map(|(n, la)| GroupPoint::new(n, la.exp()).unwrap())
}

fn space(m: usize) -> FlowSpace {
    let mu = FlowMeasure::haar(GroupSpec::abelian(m).unwrap(), VerticalField::new(&vec![0.5; m])).unwrap();
    FlowSpace::new(Arc::new(AbelianDyadic::dyadic(mu, 64.0).unwrap()), AdmissibilityParams::default()).unwrap()
}

fn family() -> &'static DyadicFamily {
    static FAM: OnceLock<DyadicFamily> = OnceLock::new();
    FAM.get_or_init(|| DyadicFamily::build(space(2), FamilyConfig { up: 2, down: 4, ..Default::default() }).unwrap())
}

proptest! {
    #[test]
    fn heisenberg_group_laws(x in group_point(), y in group_point(), z in group_point()) {
        let g = GroupSpec::Heisenberg;
        let l = g.mul(&g.mul(&x, &y), &z);
        let r = g.mul(&x, &g.mul(&y, &z));
        prop_assert!(close(&l.n, &r.n, 1e-9) && (l.a - r.a).abs() <= 1e-9 * l.a);
        let e = g.mul(&x, &g.group_inv(&x));
        prop_assert!(close(&e.n, &g.base_identity(), 1e-9) && (e.a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_is_left_invariant_and_symmetric(x in group_point(), y in group_point(), z in group_point()) {
        let g = GroupSpec::Heisenberg;
        let d = g.dist_g(&x, &y);
        prop_assert!((d - g.dist_g(&y, &x)).abs() <= 1e-9 * (1.0 + d));
        let dz = g.dist_g(&g.mul(&z, &x), &g.mul(&z, &y));
        prop_assert!((d - dz).abs() <= 1e-7 * (1.0 + d));
    }

    #[test]
    fn psi_is_a_flow_of_automorphisms(n in heis_point(), m in heis_point(), s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let g = GroupSpec::Heisenberg;
        let z = VerticalField::new(&[1.0, 0.0]);
        let lhs = g.psi(t, &g.base_mul(&n, &m), &z);
        let rhs = g.base_mul(&g.psi(t, &n, &z), &g.psi(t, &m, &z));
        prop_assert!(close(&lhs, &rhs, 1e-9));
        prop_assert!(close(&g.psi(s + t, &n, &z), &g.psi(s, &g.psi(t, &n, &z), &z), 1e-9));
    }

    #[test]
    fn box_image_matches_corners(t in -6.0..6.0f64, l in 0.01..50.0f64) {
        let c = psi_box_corner_check(t, l).unwrap();
        prop_assert!(c.outside <= 1e-12 && c.face_gap <= 1e-12);
    }

    #[test]
    fn phi_at_origin(b in prop::collection::vec(-3.0..3.0f64, 1..4)) {
        let b2: f64 = b.iter().map(|x| x * x).sum();
        let v = vec![0.0; b.len()];
        prop_assert!((phi_beta(&b, &v) - 1.0 / (1.0 + b2)).abs() < 1e-15);
    }

    #[test]
    fn sons_partition_and_stay_admissible(seed in any::<u64>(), m in 1usize..=2) {
        let fs = space(m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = BasePoint::from(vec![1.5; m]);
        let p = fs.random_admissible(&n, (seed % 9) as i32 - 3, 6.0, &mut rng).unwrap();
        prop_assert!(fs.classify(&p).is_admissible());
        let mu = fs.cylinder_measure(&p).unwrap();
        let sons = fs.sons(&p).unwrap();
        let total: f64 = sons.iter().map(|s| fs.cylinder_measure(s).unwrap()).sum();
        prop_assert!((total - mu).abs() <= 1e-12 * mu);
        for s in &sons {
            prop_assert!(fs.classify(s).is_admissible());
        }
        for (i, a) in sons.iter().enumerate() {
            for b in &sons[i + 1..] {
                prop_assert!(!fs.intersects(a, b).unwrap());
            }
        }
        let c = 1.0 + (seed % 7) as f64;
        let env = fs.envelope(&p, c).unwrap();
        prop_assert!((fs.cylinder_measure(&env).unwrap() - c * mu).abs() <= 1e-12 * c * mu);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_reassembles(seed in any::<u64>(), j in 1u32..6) {
        let fam = family();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_simple_function(fam, 4, (0, 3), &mut rng).unwrap();
        let alpha = f.sup_abs(fam) / 2f64.powi(j as i32);
        match cz_decompose(fam, &f, alpha, 2.0 * (74f64).powi(2)) {
            Ok(rep) => {
                prop_assert!(rep.certificates.a && rep.certificates.b && rep.certificates.c && rep.certificates.d);
                prop_assert!(identity_residual(fam, &f, &rep, 100, &mut rng).unwrap() <= 1e-10);
            }
            Err(flowcz::Error::WindowExhausted(_)) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn strip_exponents_are_four_times_six_powers() {
    for (l, e) in strip_exponents(8).into_iter().enumerate() {
        assert_eq!(e, 4 * 6u64.pow(l as u32));
    }
}

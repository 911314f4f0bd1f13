use std::f64::consts::E;
use std::sync::Arc;

use flowcz::counterexample::*;
use flowcz::cubes::{AbelianDyadic, NetConfig, NetCubes};
use flowcz::cylinder::{AdmissibilityParams, BaseSet, Cylinder, FlowSpace};
use flowcz::measure::FlowMeasure;
use flowcz::{BasePoint, GroupSpec, VerticalField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn heisenberg_space() -> FlowSpace {
    let mu = FlowMeasure::haar(GroupSpec::Heisenberg, heisenberg_field()).unwrap();
    let cfg = NetConfig { samples: 50_000, ..Default::default() };
    FlowSpace::new(Arc::new(NetCubes::build(mu, cfg).unwrap()), AdmissibilityParams::default()).unwrap()
}

#[test]
fn thickened_cylinder_on_the_line() {
    let mu = FlowMeasure::haar(GroupSpec::abelian(1).unwrap(), VerticalField::new(&[0.5])).unwrap();
    let fs = FlowSpace::new(Arc::new(AbelianDyadic::dyadic(mu, 64.0).unwrap()), AdmissibilityParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [-2, 0, 3] {
        let p = fs.random_admissible(&BasePoint::new(&[0.3]), k, 4.0, &mut rng).unwrap();
        for r in [0.05, 0.5, 2.0] {
            let c = verify_thickened_cylinder(&fs, &p, r, None, 2000, &mut rng).unwrap();
            assert!(c.holds(), "k={k} R={r}: {c:?}");
        }
    }
}

#[test]
fn thickened_cylinder_at_moderate_scales_on_heisenberg() {
    // The conjugation bound needs R large against |1 − e^{−t}| over the flow interval.
    let fs = heisenberg_space();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = fs.cubes.cube_at(&BasePoint::zeros(3), -1).unwrap();
    let p = Cylinder::from_logs(0.5, 0.0, BaseSet::Cube(q.clone()));
    let c = verify_thickened_cylinder(&fs, &p, 4.0, None, 2000, &mut rng).unwrap();
    assert!(c.holds(), "{c:?}");

    // The witness factors the sampled point exactly.
    let spec = fs.spec;
    let small = Cylinder::from_interval(-0.2, 0.2, BaseSet::Ball { center: spec.base_identity(), radius: 0.25 });
    let w = BasePoint::new(&[0.01, -0.02, 0.003]);
    let (x1, x2) = fs.product_witness(&p, &small, &q.center, &w, 0.1).unwrap();
    let x = fs.flow_point(&spec.base_mul(&q.center, &w), 0.1);
    assert!(spec.dist_g(&spec.mul(&x1, &x2), &x) < 1e-9);
}

#[test]
fn conjugation_bound_breaks_for_small_scales() {
    // With eᵗ tiny and R large the ball B(1, c̃eᵗR) is not inside ψ_t(B(1,R)),
    // and the thickened cylinder built from it leaves the R-neighbourhood.
    let fs = heisenberg_space();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = fs.cubes.cube_at(&BasePoint::zeros(3), -3).unwrap();
    let p = Cylinder::from_logs(4.0, -12.0, BaseSet::Cube(q));
    let r = 20.0;
    let c = verify_thickened_cylinder(&fs, &p, r, None, 2000, &mut rng).unwrap();
    assert!(c.psi_escapes > 0 && c.escapes > 0, "{c:?}");
    let direct = conjugation_ball_check(p.lo, r, 2000, &mut rng).unwrap();
    assert!(!direct.holds());
    // Small radii fail on both sides of t = 0.
    assert!(!conjugation_ball_check(0.5, 0.1, 2000, &mut rng).unwrap().holds());
    assert!(conjugation_ball_check(0.5, 20.0, 2000, &mut rng).unwrap().holds());
}

#[test]
fn small_ball_cylinder_sits_in_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = heisenberg_field();
    for r in [0.1, 1.0, 10.0] {
        let c = verify_small_ball_in_cylinder(GroupSpec::Heisenberg, &z, r, 10_000, &mut rng).unwrap();
        assert!(c.holds() && c.worst_ratio < 1.0);
    }
    let z = VerticalField::new(&[1.0, -2.0]);
    let c = verify_small_ball_in_cylinder(GroupSpec::abelian(2).unwrap(), &z, 0.1, 10_000, &mut rng).unwrap();
    assert!(c.holds());
}

#[test]
fn table_csv_layout() {
    let params = CounterexampleParams { r0: E * E, c: 0.25, c1: 74.0, lambda: 2.1 * E.powi(3), gamma: 5.0, k: 1.0 };
    let rows = counterexample_table(&params, 6).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.log_diam_lb.is_finite() && r.log_ratio_lb.is_finite()));
    let mut buf = Vec::new();
    write_counterexample_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ℓ,log_r0_r,a_low,a_high,log_diam_lb,log_ratio_lb_at_K1"));
    assert_eq!(lines.count(), 7);
    assert!(counterexample_table(&CounterexampleParams { r0: 2.0, ..params }, 3).is_err());
}

#[test]
fn abelian_metrics_are_cosh_equivalent_in_three_dimensions() {
    let rep = abelian_equivalence_certificate(&[0.3, -0.7, 1.1], 5000, 9).unwrap();
    assert!(rep.holds());
    assert!(rep.phi_min > 0.0 && rep.phi_max >= rep.phi_at_zero);
    assert!(rep.annuli.iter().all(|a| a.min_ratio > 0.0 && a.min_ratio <= a.max_ratio));
}

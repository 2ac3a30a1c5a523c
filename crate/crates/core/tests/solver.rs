mod common;

use common::{constraint_matrix, monomial_derivative, null_space, oracle_cost, rest};
use dyntraj::poly::{allocate_segment_times, plan, solve_min_snap, DynamicsLimits, COEFFS};
use dyntraj::{PiecewisePolynomial, Vec3, WaypointConstraint};
use nalgebra::{DVector, SMatrix, SVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn symmetric_segment_matches_boundary_system() {
    // Rows: derivatives 0..3 at τ = 0, then at τ = 1.
    let a = SMatrix::<f64, 8, 8>::from_fn(|r, i| monomial_derivative(i, r % 4, if r < 4 { 0.0 } else { 1.0 }));
    let mut b = SVector::<f64, 8>::zeros();
    b[4] = 1.0;
    let oracle = a.lu().solve(&b).unwrap();

    let traj = solve_min_snap(&[rest(0.0, 0.0, 0.0), rest(1.0, 0.0, 0.0)], &[0.0, 1.0]).unwrap();
    let x = &traj.coeffs()[0][0];
    for i in 0..COEFFS {
        assert!((x[i] - oracle[i]).abs() < 1e-9, "c{i}: {} vs {}", x[i], oracle[i]);
    }
    let closed_form = [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0];
    for i in 0..COEFFS {
        assert!((oracle[i] - closed_form[i]).abs() < 1e-9);
    }
    assert!((traj.eval(0.5, 0).unwrap().x - 0.5).abs() < 1e-12);
    assert!((traj.eval(0.5, 1).unwrap().x - 35.0 / 16.0).abs() < 1e-12);
}

#[test]
fn allocation_examples() {
    let limits = DynamicsLimits::new(5.0, 5.0).unwrap();
    let knots = allocate_segment_times(&[rest(0.0, 0.0, 0.0), rest(10.0, 0.0, 0.0)], &limits).unwrap();
    assert!(knots[1] >= 2.0);
    let knots = allocate_segment_times(&[rest(1.0, 1.0, 1.0), rest(1.0, 1.0, 1.0)], &limits).unwrap();
    assert!((knots[1] - 0.1).abs() < 1e-12);
    let knots =
        allocate_segment_times(&[rest(0.0, 0.0, 0.0), rest(5.0, 0.0, 0.0), rest(10.0, 0.0, 0.0)], &limits).unwrap();
    assert!(((knots[1] - knots[0]) - (knots[2] - knots[1])).abs() < 1e-12);
}

#[test]
fn duration_examples() {
    let seg = [[0.0; COEFFS]; 3];
    let p = PiecewisePolynomial::new(vec![0.0, 2.0, 5.0], vec![seg, seg]).unwrap();
    assert_eq!(dyntraj::poly::poly_duration(&p), 5.0);
    let p = PiecewisePolynomial::new(vec![3.0, 4.0], vec![seg]).unwrap();
    assert_eq!(dyntraj::poly::poly_duration(&p), 1.0);
}

#[test]
fn constant_polynomial() {
    let p = PiecewisePolynomial::constant(Vec3::new(1.0, 2.0, 3.0), 0.0, 1.0).unwrap();
    assert_eq!(p.eval(0.3, 0).unwrap(), Vec3::new(1.0, 2.0, 3.0));
    assert_eq!(p.eval(0.3, 1).unwrap(), Vec3::zeros());
    assert!(p.eval(0.3, 5).is_err());
}

#[test]
fn snap_cost_is_locally_optimal() {
    let wps = [
        rest(0.0, 0.0, 1.0),
        rest(3.0, 2.0, 1.5),
        rest(6.0, -1.0, 2.0),
        rest(8.0, 1.0, 1.0),
        rest(11.0, 0.0, 1.2),
    ];
    let knots = [0.0, 1.3, 2.9, 4.0, 5.6];
    let traj = solve_min_snap(&wps, &knots).unwrap();
    let optimum = oracle_cost(traj.coeffs(), &knots);
    assert!((optimum - traj.snap_cost()).abs() <= 1e-9 * optimum);

    let a = constraint_matrix(&knots);
    let basis = null_space(&a);
    assert_eq!(basis.ncols(), 2 * (knots.len() - 1) - 2);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let mut coeffs = traj.coeffs().to_vec();
        for axis in 0..3 {
            let w = DVector::from_fn(basis.ncols(), |_, _| rng.gen_range(-1.0..1.0));
            let delta = &basis * w;
            let delta = delta.scale(1e-3 / delta.norm());
            assert!((&a * &delta).norm() < 1e-9);
            for (s, seg) in coeffs.iter_mut().enumerate() {
                for i in 0..COEFFS {
                    seg[axis][i] += delta[s * COEFFS + i];
                }
            }
        }
        let perturbed = oracle_cost(&coeffs, &knots);
        assert!(perturbed >= optimum * (1.0 - 1e-12), "{perturbed} < {optimum}");
    }
}

#[test]
fn per_axis_solves_superpose() {
    let pts = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 2.0, 1.5), Vec3::new(6.0, -1.0, 2.0), Vec3::new(8.0, 1.0, 1.0)];
    let knots = [0.0, 1.0, 2.5, 3.2];
    let full = solve_min_snap(&pts.map(WaypointConstraint::position), &knots).unwrap();
    for axis in 0..3 {
        let single = pts.map(|p| {
            let mut q = Vec3::zeros();
            q[axis] = p[axis];
            WaypointConstraint::position(q)
        });
        let one = solve_min_snap(&single, &knots).unwrap();
        for (a, b) in full.coeffs().iter().zip(one.coeffs()) {
            for i in 0..COEFFS {
                assert!((a[axis][i] - b[axis][i]).abs() < 1e-9 * (1.0 + a[axis][i].abs()));
            }
        }
    }
}

fn waypoint_strategy() -> impl Strategy<Value = Vec<WaypointConstraint>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, 0.0..5.0f64), 2..9)
        .prop_map(|pts| pts.into_iter().map(|(x, y, z)| rest(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solutions_interpolate_and_are_c4(wps in waypoint_strategy(), v in 2.0..20.0f64, a in 2.0..20.0f64) {
        let limits = DynamicsLimits::new(v, a).unwrap();
        let traj = plan(&wps, &limits).unwrap();
        for (w, &k) in wps.iter().zip(traj.knots()) {
            prop_assert!((traj.eval(k, 0).unwrap() - w.position).norm() <= 1e-6);
        }
        for end in [traj.start(), traj.end()] {
            for order in 1..=2 {
                prop_assert!(traj.eval(end, order).unwrap().norm() <= 1e-6);
            }
        }
        for s in 0..traj.segment_count() - 1 {
            let dur = traj.knots()[s + 1] - traj.knots()[s];
            for order in 0..=4 {
                let left = traj.eval_segment(s, dur, order);
                let right = traj.eval_segment(s + 1, 0.0, order);
                let scale = 1.0 + left.norm().max(right.norm());
                prop_assert!((left - right).norm() <= 1e-6 * scale, "order {} at joint {}", order, s);
            }
        }
    }

    #[test]
    fn shifting_knots_shifts_evaluation(wps in waypoint_strategy(), dt in -50.0..50.0f64, f in 0.0..1.0f64) {
        let limits = DynamicsLimits::new(5.0, 5.0).unwrap();
        let traj = plan(&wps, &limits).unwrap();
        let moved = traj.shifted(dt);
        let t = traj.start() + f * traj.duration();
        // Exact up to the rounding of the shifted local time.
        for order in 0..=4 {
            let (a, b) = (moved.eval(t + dt, order).unwrap(), traj.eval(t, order).unwrap());
            prop_assert!((a - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn allocation_respects_kinematic_bounds(wps in waypoint_strategy(), v in 0.5..20.0f64, a in 0.5..20.0f64) {
        let limits = DynamicsLimits::new(v, a).unwrap();
        let knots = allocate_segment_times(&wps, &limits).unwrap();
        prop_assert_eq!(knots[0], 0.0);
        for (w, k) in wps.windows(2).zip(knots.windows(2)) {
            let d = (w[1].position - w[0].position).norm();
            let dur = k[1] - k[0];
            prop_assert!(dur > 0.0);
            prop_assert!(dur >= d / v - 1e-12);
            prop_assert!(dur >= (2.0 * d / a).sqrt() - 1e-12);
        }
    }
}

#[test]
fn duplicate_knots_are_reported() {
    let err = solve_min_snap(&[rest(0.0, 0.0, 0.0), rest(1.0, 0.0, 0.0), rest(2.0, 0.0, 0.0)], &[0.0, 1.0, 1.0]);
    assert!(err.is_err());
}

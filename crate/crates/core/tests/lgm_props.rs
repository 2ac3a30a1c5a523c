use dyntraj::lgm::{eval_lgm, lgm_mass_fraction, make_lgm, sum_modifiers};
use dyntraj::{GaussianModifier, TrajError, Vec3};
use proptest::prelude::*;

/// `erf` from its Maclaurin series; converges quickly for |x| < 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn modifier() -> impl Strategy<Value = GaussianModifier> {
    (vec3(), -20.0..20.0f64, 0.05..10.0f64).prop_map(|(amplitude, center, width)| GaussianModifier {
        amplitude,
        center,
        width,
        waypoint_id: 0,
    })
}

#[test]
fn construction_examples() {
    let m = make_lgm(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), 10.0, 6.5, 3).unwrap();
    assert_eq!(m.amplitude, Vec3::new(1.0, 0.0, 0.0));
    assert_eq!(m.center, 10.0);
    assert!((m.width - 1.0).abs() < 1e-15);
    assert_eq!(m.waypoint_id, 3);

    let m = make_lgm(Vec3::new(4.0, 5.0, 6.0), Vec3::new(4.0, 5.0, 6.0), 10.0, 6.5, 0).unwrap();
    assert_eq!(m.amplitude, Vec3::zeros());

    let m = make_lgm(Vec3::zeros(), Vec3::x(), 10.0, 9.3, 0).unwrap();
    assert!((m.width - 0.2).abs() < 1e-12);

    assert_eq!(make_lgm(Vec3::zeros(), Vec3::x(), 10.0, 10.0, 4), Err(TrajError::TooLate { id: 4 }));
}

#[test]
fn evaluation_examples() {
    let m = GaussianModifier {
        amplitude: Vec3::new(1.0, 0.0, 0.0),
        center: 2.0,
        width: 1.0,
        waypoint_id: 0,
    };
    assert_eq!(eval_lgm(&m, 2.0, 0).unwrap(), m.amplitude);
    assert_eq!(eval_lgm(&m, 2.0, 1).unwrap(), Vec3::zeros());
    let v = eval_lgm(&m, 3.0, 1).unwrap();
    assert!((v.x - -(-0.5f64).exp()).abs() < 1e-15);
    assert!((v.x - -0.6065).abs() < 1e-4);
    let at_creation = eval_lgm(&m, 2.0 - 3.5, 0).unwrap().norm();
    assert!((at_creation - (-6.125f64).exp()).abs() < 1e-15);
    assert!((at_creation - 2.187e-3).abs() < 1e-6);
    assert!(matches!(eval_lgm(&m, 0.0, 3), Err(TrajError::InvalidOrder { .. })));
}

#[test]
fn mass_fraction_examples() {
    let oracle = erf_series(3.5 / 2f64.sqrt());
    assert!((lgm_mass_fraction(3.5) - oracle).abs() < 1e-12);
    assert!((lgm_mass_fraction(3.5) - 0.999535).abs() < 1e-6);
    assert_eq!(lgm_mass_fraction(f64::INFINITY), 1.0);
    assert_eq!(lgm_mass_fraction(0.0), 0.0);
    for hw in [0.1, 0.5, 1.0, 2.0, 2.5] {
        let (got, want) = (lgm_mass_fraction(hw), erf_series(hw / 2f64.sqrt()));
        assert!((got - want).abs() < 1e-12, "{hw}: {got} vs {want} ({:e})", got - want);
    }
}

#[test]
fn sixty_four_stacked_modifiers_sum() {
    let mods: Vec<GaussianModifier> = (0..64)
        .map(|i| {
            let f = i as f64;
            GaussianModifier {
                amplitude: Vec3::new((0.3 * f).sin(), (0.7 * f).cos(), 0.01 * f - 0.3),
                center: 0.15 * f,
                width: 0.1 + 0.02 * f,
                waypoint_id: i,
            }
        })
        .collect();
    for t in [-1.0, 0.0, 2.345, 4.8, 9.6, 12.0] {
        let s = sum_modifiers(&mods, t);
        // Brute force straight from the Gaussian and its closed-form derivatives.
        let (mut p, mut v, mut a) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
        for m in &mods {
            let d = t - m.center;
            let s2 = m.width * m.width;
            let g = (-d * d / (2.0 * s2)).exp();
            p += m.amplitude * g;
            v += m.amplitude * (-d / s2 * g);
            a += m.amplitude * ((d * d / (s2 * s2) - 1.0 / s2) * g);
        }
        for (got, want) in [(s.position, p), (s.velocity, v), (s.acceleration, a)] {
            assert!((got - want).norm() <= 1e-12 * want.norm().max(1e-300), "{got} vs {want}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn creation_value_is_fixed_fraction(a in vec3(), t_w in -50.0..50.0f64, lead in 1e-3..20.0f64, after in any::<bool>()) {
        prop_assume!(a.norm() > 1e-6);
        let t_mod = if after { t_w + lead } else { t_w - lead };
        let m = make_lgm(Vec3::zeros(), a, t_w, t_mod, 0).unwrap();
        let ratio = eval_lgm(&m, t_mod, 0).unwrap().norm() / a.norm();
        prop_assert!((ratio - (-6.125f64).exp()).abs() <= 1e-12 * (-6.125f64).exp());
        prop_assert!(ratio <= 0.0022);
    }

    #[test]
    fn symmetric_about_center(m in modifier(), d in 0.0..30.0f64) {
        let (l, r) = (m.center - d, m.center + d);
        // Offsets from the center round differently on each side; allow for
        // that rounding times the next derivative's scale.
        let tol = |k: i32| 1e-12 * m.amplitude.norm() / m.width.powi(k + 1);
        let e = |k: usize| eval_lgm(&m, l, k).unwrap() - eval_lgm(&m, r, k).unwrap();
        prop_assert!(e(0).norm() <= tol(0));
        prop_assert!(e(2).norm() <= tol(2));
        let odd = eval_lgm(&m, l, 1).unwrap() + eval_lgm(&m, r, 1).unwrap();
        prop_assert!(odd.norm() <= tol(1));
    }

    #[test]
    fn derivatives_match_finite_differences(m in modifier(), u in -4.0..4.0f64) {
        let t = m.center + u * m.width;
        let h = 1e-4 * m.width;
        let p = |t| eval_lgm(&m, t, 0).unwrap();
        let v = eval_lgm(&m, t, 1).unwrap();
        let a = eval_lgm(&m, t, 2).unwrap();
        let fd_v = (p(t + h) - p(t - h)) / (2.0 * h);
        let fd_a = (p(t + h) - 2.0 * p(t) + p(t - h)) / (h * h);
        let scale_v = m.amplitude.norm() / m.width;
        let scale_a = m.amplitude.norm() / (m.width * m.width);
        prop_assert!((v - fd_v).norm() <= 1e-6 * scale_v.max(1e-12));
        prop_assert!((a - fd_a).norm() <= 1e-5 * scale_a.max(1e-12));
    }

    #[test]
    fn peak_is_the_amplitude(m in modifier(), d in 1e-6..30.0f64) {
        prop_assert_eq!(eval_lgm(&m, m.center, 0).unwrap(), m.amplitude);
        let off = eval_lgm(&m, m.center + d, 0).unwrap().norm();
        prop_assert!(off <= m.amplitude.norm());
        if m.amplitude.norm() > 0.0 && d > 1e-3 * m.width {
            prop_assert!(off < m.amplitude.norm());
        }
    }

    #[test]
    fn sum_is_linear(mods in prop::collection::vec(modifier(), 1..12), t in -30.0..30.0f64) {
        let s = sum_modifiers(&mods, t);
        let mut p = Vec3::zeros();
        for m in &mods {
            p += eval_lgm(m, t, 0).unwrap();
        }
        prop_assert!((s.position - p).norm() <= 1e-12 * (1.0 + p.norm()));
    }
}

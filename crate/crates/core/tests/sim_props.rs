use dyntraj::sim::{check_gate_pass, gate_position, run_race, Gate, GateCrossing, RaceConfig, VehicleState};
use dyntraj::Vec3;
use proptest::prelude::*;

const SEEDS: u64 = 20;

/// The circuit with gates just wider than a point, so that every gate that
/// moves after the last replan is missed unless a modifier follows it.
fn tight_circuit(seed: u64, inflation: f64, gate_speed: f64) -> RaceConfig {
    let mut c = RaceConfig::circuit(20.0, inflation, seed);
    c.pass_tolerance = 0.0;
    for g in &mut c.gates {
        g.half_width = 0.05;
        g.speed = gate_speed;
    }
    c
}

fn mean_success(configs: impl Iterator<Item = RaceConfig>) -> f64 {
    let rates: Vec<f64> = configs.map(|c| run_race(&c).unwrap().success_rate).collect();
    rates.iter().sum::<f64>() / rates.len() as f64
}

fn unit_gate(amplitude: f64, speed: f64, phase: f64) -> Gate {
    Gate {
        id: 0,
        center: Vec3::new(5.0, 0.0, 1.0),
        normal: Vec3::x(),
        half_width: 0.5,
        axis: Vec3::y(),
        amplitude,
        speed,
        phase,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    /// Straight-line motion through a static gate: the interpolated
    /// crossing is exact.
    #[test]
    fn crossing_is_interpolated_exactly(
        x0 in 3.0..4.99f64,
        x1 in 5.01..7.0f64,
        y0 in -1.0..1.0f64,
        y1 in -1.0..1.0f64,
        t0 in 0.0..100.0f64,
        dt in 1e-3..0.1f64,
    ) {
        let g = unit_gate(0.0, 0.0, 0.0);
        let a = VehicleState { position: Vec3::new(x0, y0, 1.0), velocity: Vec3::zeros(), t: t0 };
        let b = VehicleState { position: Vec3::new(x1, y1, 1.0), velocity: Vec3::zeros(), t: t0 + dt };
        let f = (5.0 - x0) / (x1 - x0);
        let t = t0 + f * dt;
        let y = y0 + f * (y1 - y0);
        let (got_t, offset, passed) = match check_gate_pass(&a, &b, &g, 0.0) {
            GateCrossing::Pass { t, offset, .. } => (t, offset, true),
            GateCrossing::Miss { t, offset, .. } => (t, offset, false),
            GateCrossing::NoCrossing => panic!("crossing not detected"),
        };
        prop_assert!((got_t - t).abs() <= 1e-9);
        prop_assert!((offset - y.abs()).abs() <= 1e-9);
        prop_assert_eq!(passed, y.abs() <= 0.5);
        // Moving backwards through the plane is a crossing too; moving
        // alongside it is not.
        prop_assert!(!matches!(check_gate_pass(&b, &a, &g, 0.0), GateCrossing::NoCrossing));
        let c = VehicleState { position: Vec3::new(x0, y1, 1.0), ..b };
        prop_assert!(matches!(check_gate_pass(&a, &c, &g, 0.0), GateCrossing::NoCrossing));
    }

    #[test]
    fn gate_stays_within_amplitude(amplitude in 0.0..3.0f64, speed in 0.0..2.0f64, phase in 0.0..50.0f64, t in 0.0..500.0f64) {
        let g = unit_gate(amplitude, speed, phase);
        let d = gate_position(&g, t) - g.center;
        prop_assert!(d.norm() <= amplitude + 1e-12);
        prop_assert!(d.cross(&g.axis).norm() <= 1e-12);
        if speed > 0.0 && amplitude > 0.0 {
            let p = 4.0 * amplitude / speed;
            prop_assert!((gate_position(&g, t + p) - gate_position(&g, t)).norm() <= 1e-9 * (1.0 + t));
        }
    }
}

#[test]
fn moving_gate_crossing_uses_gate_position_at_crossing() {
    let g = unit_gate(1.0, 1.0, 0.0);
    // The gate slides from y = 0 to y = 0.2 while the vehicle crosses.
    let a = VehicleState {
        position: Vec3::new(4.9, 0.1, 1.0),
        velocity: Vec3::zeros(),
        t: 0.0,
    };
    let b = VehicleState {
        position: Vec3::new(5.1, 0.1, 1.0),
        velocity: Vec3::zeros(),
        t: 0.2,
    };
    let GateCrossing::Pass { t, offset, .. } = check_gate_pass(&a, &b, &g, 0.0) else {
        panic!("expected a pass");
    };
    assert!((t - 0.1).abs() < 1e-12);
    assert!(offset.abs() < 1e-12);
}

#[test]
fn success_falls_with_gate_speed() {
    let speeds = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let rates: Vec<f64> = speeds
        .iter()
        .map(|&s| mean_success((0..SEEDS).map(|seed| tight_circuit(seed, 0.0, s))))
        .collect();
    // One gate event of the 400 flown per speed.
    let slack = 1.0 / (SEEDS as f64 * 20.0);
    for w in rates.windows(2) {
        assert!(w[1] <= w[0] + slack, "{rates:?}");
    }
    assert_eq!(rates[0], 1.0);
    assert!(rates[rates.len() - 1] < rates[0], "{rates:?}");
}

#[test]
fn disabling_modifiers_never_helps() {
    let mut better = 0;
    for seed in 0..SEEDS {
        let on = tight_circuit(seed, 1.0, 0.1);
        let off = RaceConfig {
            lgm_enabled: false,
            ..on.clone()
        };
        let (on, off) = (run_race(&on).unwrap(), run_race(&off).unwrap());
        assert!(on.success_rate >= off.success_rate, "seed {seed}: {} < {}", on.success_rate, off.success_rate);
        assert_eq!(off.lgms_applied, 0);
        if on.success_rate > off.success_rate {
            better += 1;
        }
    }
    assert!(better >= SEEDS / 2, "modifiers helped on only {better} seeds");
}

#[test]
fn speeds_stay_near_the_limit() {
    for limit in [5.0, 10.0, 20.0] {
        for seed in 0..3 {
            let r = run_race(&RaceConfig::circuit(limit, 0.5, seed)).unwrap();
            assert!(!r.speed_sanity_exceeded, "limit {limit}, seed {seed}: {}", r.max_speed);
            assert!(r.reference_max_speed <= 1.25 * limit);
            assert!(r.mean_speed > 0.0 && r.mean_speed <= r.max_speed);
            assert_eq!(r.solver_failures, 0);
        }
    }
}

use std::f64::consts::PI;

use erecon_core::dynamics::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn run(sys: &DynamicSystem, r0: f64, v0: f64, dt: f64, steps: usize) -> Vec<DynamicState> {
    let c = newmark_coefficients(0.25, 0.5, dt).unwrap();
    let mut s = DynamicState::initial(sys, DVector::from_element(1, r0), DVector::from_element(1, v0)).unwrap();
    let mut out = vec![s.clone()];
    for _ in 0..steps {
        s = newmark_step(&s, sys, &c).unwrap();
        out.push(s.clone());
    }
    out
}

#[test]
fn undamped_energy_drift_over_ten_periods() {
    let sys = DynamicSystem::sdof(1.0, 0.0, (2.0 * PI).powi(2), Force::Zero).unwrap();
    let states = run(&sys, 1.0, 0.0, 1e-3, 10_000);
    let e0 = sys.energy(&states[0]);
    let drift = states.iter().map(|s| (sys.energy(s) - e0).abs() / e0).fold(0.0, f64::max);
    assert!(drift < 1e-3, "drift {drift}");
}

#[test]
fn default_scenario_rises_then_saturates() {
    let sc = ImpactScenario::default();
    let seq = generate_sequence(&sc).unwrap();
    assert_eq!(seq.len(), sc.frame_count());
    assert_eq!(seq.frames()[0].dims(), (sc.frame_height, sc.frame_width));
    let obj = seq.objectives();
    let peak = obj.iter().cloned().fold(f64::MIN, f64::max);
    assert!(obj[0] < 0.1 * peak);
    assert!(obj.iter().all(|o| o.is_finite() && *o >= 0.0));
    // The last quarter stays near its own mean.
    let tail = &obj[3 * obj.len() / 4..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(tail.iter().all(|o| (o - mean).abs() < 0.25 * peak));
}

#[test]
fn generation_is_deterministic() {
    let sc = ImpactScenario {
        duration: 4e-3,
        frame_height: 16,
        frame_width: 16,
        ..Default::default()
    };
    let a = generate_sequence(&sc).unwrap();
    let b = generate_sequence(&sc).unwrap();
    assert_eq!(a.frames(), b.frames());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn response_is_linear_in_initial_conditions(
        r0 in -2.0f64..2.0, v0 in -2.0f64..2.0, scale in -3.0f64..3.0,
        k in 1.0f64..50.0, c in 0.0f64..1.0,
    ) {
        let sys = DynamicSystem::sdof(1.0, c, k, Force::Zero).unwrap();
        let a = run(&sys, r0, v0, 1e-2, 50);
        let b = run(&sys, scale * r0, scale * v0, 1e-2, 50);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((scale * x.displacement[0] - y.displacement[0]).abs() <= 1e-9 * (1.0 + y.displacement[0].abs()));
        }
    }

    #[test]
    fn average_acceleration_never_gains_energy(
        r0 in -2.0f64..2.0, v0 in -2.0f64..2.0, k in 1.0f64..100.0, dt in 1e-3f64..0.5,
    ) {
        let sys = DynamicSystem::sdof(1.0, 0.0, k, Force::Zero).unwrap();
        let states = run(&sys, r0, v0, dt, 40);
        let e0 = sys.energy(&states[0]);
        for s in &states {
            prop_assert!((sys.energy(s) - e0).abs() <= 1e-9 * (1.0 + e0));
        }
    }

    #[test]
    fn deviator_is_traceless(v in proptest::collection::vec(-500.0f64..500.0, 6)) {
        let m = nalgebra::Matrix3::new(v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2]);
        let d = deviatoric_stress(&m).unwrap();
        prop_assert!(d.trace().abs() <= 1e-9 * (1.0 + m.norm()));
    }

    #[test]
    fn material_stress_is_odd_and_monotone(e1 in 0.0f64..0.05, de in 1e-6f64..0.02) {
        let mat = Material1D::aluminium_6061_t6();
        prop_assert!((mat.stress(-e1) + mat.stress(e1)).abs() < 1e-9);
        prop_assert!(mat.stress(e1 + de) >= mat.stress(e1) - 1e-9);
    }
}

#[test]
fn mass_must_be_square_and_match() {
    let m = DMatrix::identity(2, 2);
    let k = DMatrix::identity(3, 3);
    assert!(DynamicSystem::new(m.clone(), m, k, Force::Zero).is_err());
}

use core::f64::consts::PI;

use drlqr_core::pendulum::{
    pendulum_step, run_episode, sample_ball, stage_cost, wrap_angle, CemOptions, PendulumParams, PendulumState,
    PlanMethod, DEFAULT_DT,
};
use drlqr_core::rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn wrapped_angle_lies_in_half_open_interval(psi in -100.0f64..100.0) {
        let w = wrap_angle(psi);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!((libm::sin(w) - libm::sin(psi)).abs() < 1e-9);
    }

    #[test]
    fn stage_cost_is_nonnegative(psi in -10.0f64..10.0, vel in -20.0f64..20.0, tau in -5.0f64..5.0) {
        let c = stage_cost(PendulumState::new(psi, vel), tau);
        prop_assert!(c >= 0.0);
        if c == 0.0 {
            prop_assert!(wrap_angle(psi) == 0.0 && vel == 0.0 && tau == 0.0);
        }
    }

    #[test]
    fn equilibria_are_fixed_points(m in 0.1f64..5.0, l in 0.1f64..5.0, g in 0.1f64..20.0) {
        let p = PendulumParams::new(m, l, g).unwrap();
        for s in [PendulumState::upright(), PendulumState::downward()] {
            prop_assert_eq!(pendulum_step(s, 0.0, &p, DEFAULT_DT), s);
        }
    }

    #[test]
    fn ball_samples_stay_inside_and_positive(radius in 0.0f64..3.0, seed in any::<u64>()) {
        let center = PendulumParams::new(1.2, 0.8, 9.0).unwrap();
        let pts = sample_ball(&center, radius, 15, &mut rng::stream(seed, &[])).unwrap();
        prop_assert_eq!(pts.len(), 15);
        for p in pts {
            prop_assert!(p.m > 0.0 && p.l > 0.0 && p.g > 0.0);
            prop_assert!(p.distance(&center) <= radius + 1e-12);
        }
    }
}

#[test]
fn zero_radius_domain_randomization_equals_certainty_equivalence() {
    let truth = PendulumParams::truth();
    let estimate = PendulumParams::new(1.3, 0.9, 9.0).unwrap();
    let opts = CemOptions { population: 24, iterations: 3, model_samples: 4, ..CemOptions::default() };
    for seed in 0..3 {
        let ce = run_episode(PlanMethod::Ce, &truth, &estimate, 0.0, 15, &opts, seed).unwrap();
        let dr = run_episode(PlanMethod::Dr, &truth, &estimate, 0.0, 15, &opts, seed).unwrap();
        assert_eq!(ce, dr);
    }
}

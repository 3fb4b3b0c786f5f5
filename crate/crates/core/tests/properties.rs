use proptest::prelude::*;

use quadsec_core::control::{mix, FrameGeometry, PidGains, PidState};
use quadsec_core::estimator::AxisFilter;
use quadsec_core::plant::{step_dynamics, PlantParams, TrueState};
use quadsec_core::{wrap_pi, EulerAngles, Quaternion, Vec3};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn pid_output_and_integral_stay_bounded(
        kp in 0.0..5.0f64,
        ki in 0.01..5.0f64,
        kd in 0.0..0.5f64,
        imax in 0.0..2.0f64,
        lim in 0.1..3.0f64,
        errors in prop::collection::vec(-50.0..50.0f64, 1..200),
    ) {
        let g = PidGains { kp, ki, kd, kff: 0.0, imax, out_min: -lim, out_max: lim };
        let mut s = PidState::default();
        for e in errors {
            let u = s.step(&g, e, 0.0, 0.0025, false);
            prop_assert!((-lim..=lim).contains(&u));
            prop_assert!((ki * s.integral).abs() <= imax * (1.0 + 1e-12));
        }
    }

    #[test]
    fn frozen_integral_does_not_move(e in -10.0..10.0f64, seed_int in -0.5..0.5f64) {
        let g = PidGains { ki: 1.0, imax: 1.0, ..PidGains::default() };
        let mut s = PidState { integral: seed_int, ..PidState::default() };
        s.step(&g, e, 0.0, 0.01, true);
        prop_assert_eq!(s.integral, seed_int);
    }

    #[test]
    fn mixer_respects_limits(thrust in -1.0..2.0f64, tau in vec3(2.0), lo in 0.0..0.3f64, span in 0.1..0.7f64) {
        let hi = lo + span;
        let m = mix(thrust, tau, FrameGeometry::QuadX, (lo, hi));
        let raw = mix(thrust, tau, FrameGeometry::QuadX, (f64::NEG_INFINITY, f64::INFINITY));
        for i in 0..4 {
            prop_assert!(m.motors[i] >= lo && m.motors[i] <= hi);
            prop_assert_eq!(m.saturated[i], raw.motors[i] < lo || raw.motors[i] > hi);
            if !m.saturated[i] {
                prop_assert_eq!(m.motors[i], raw.motors[i]);
            }
        }
    }

    #[test]
    fn kf_covariance_stays_symmetric_psd(
        sigma_acc in 0.01..5.0f64,
        sigma_pos in 0.01..5.0f64,
        steps in prop::collection::vec((-20.0..20.0f64, -100.0..100.0f64, any::<bool>()), 1..300),
    ) {
        let mut f = AxisFilter::for_axis(0.0, 0.0, sigma_acc, sigma_pos, 0.01);
        for (u, z, measure) in steps {
            f.predict(u, 0.01).unwrap();
            if measure {
                f.update(z, None).unwrap();
            }
            let p = f.p;
            let scale = p[0][0].abs().max(p[1][1].abs()).max(1e-12);
            prop_assert!((p[0][1] - p[1][0]).abs() <= 1e-9 * scale);
            prop_assert!(p[0][0] >= 0.0 && p[1][1] >= 0.0);
            prop_assert!(p[0][0] * p[1][1] - p[0][1] * p[1][0] >= -1e-9 * scale * scale);
        }
    }

    #[test]
    fn wrap_pi_range_and_congruence(a in -1e4..1e4f64) {
        let w = wrap_pi(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        let k = (a - w) / std::f64::consts::TAU;
        prop_assert!((k - k.round()).abs() < 1e-9);
    }

    #[test]
    fn euler_round_trip(r in -3.0..3.0f64, p in -1.5..1.5f64, y in -3.0..3.0f64) {
        let q = Quaternion::from_euler(EulerAngles::new(r, p, y));
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
        let e = q.to_euler();
        prop_assert!(wrap_pi(e.roll - r).abs() < 1e-9);
        prop_assert!((e.pitch - p).abs() < 1e-9);
        prop_assert!(wrap_pi(e.yaw - y).abs() < 1e-9);
    }
}

#[test]
fn quaternion_norm_holds_over_100k_steps() {
    let p = PlantParams { ground: None, ..PlantParams::default() };
    let mut s = TrueState::at_rest(Vec3::new(0.0, 0.0, -1e6), Quaternion::IDENTITY);
    let h = p.hover_command();
    let mut worst: f64 = 0.0;
    for k in 0..100_000 {
        // slow, mixed-sign torques so the body tumbles on all axes
        let t = k as f64 * 0.0025;
        let d = [0.05 * (1.3 * t).sin(), 0.04 * (0.7 * t).cos(), 0.03 * (2.1 * t).sin()];
        let u = [h + d[0] + d[1] + d[2], h - d[0] - d[1] + d[2], h + d[0] - d[1] - d[2], h - d[0] + d[1] - d[2]];
        s = step_dynamics(&s, &u, &p, 0.0025).unwrap().state;
        worst = worst.max((s.attitude.norm() - 1.0).abs());
    }
    assert!(worst < 1e-12, "norm drift {worst:e}");
    assert!(s.rates.norm() > 0.1, "body never rotated");
}

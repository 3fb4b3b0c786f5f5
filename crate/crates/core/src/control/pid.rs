use serde::{Deserialize, Serialize};

/// Gains and limits of one PID+FF loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub kff: f64,
    /// Bound on the magnitude of the integral contribution `ki * sum(e dt)`.
    pub imax: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl PidGains {
    pub fn p(kp: f64) -> Self {
        PidGains { kp, ..PidGains::default() }
    }

    pub fn with_limits(mut self, out_min: f64, out_max: f64) -> Self {
        self.out_min = out_min;
        self.out_max = out_max;
        self
    }

    pub fn with_imax(mut self, imax: f64) -> Self {
        self.imax = imax;
        self
    }
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 0.0,
            kff: 0.0,
            imax: f64::INFINITY,
            out_min: f64::NEG_INFINITY,
            out_max: f64::INFINITY,
        }
    }
}

/// Persistent loop memory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Running `sum(e * dt)`.
    pub integral: f64,
    pub prev_error: f64,
    pub has_prev: bool,
}

impl PidState {
    /// One controller evaluation. With `freeze_integral` the accumulator is
    /// held (anti-windup while the actuator is saturated).
    pub fn step(&mut self, g: &PidGains, e: f64, target: f64, dt: f64, freeze_integral: bool) -> f64 {
        debug_assert!(dt > 0.0);
        if g.ki != 0.0 && !freeze_integral {
            self.integral += e * dt;
        }
        if g.ki != 0.0 {
            let bound = g.imax / g.ki.abs();
            self.integral = self.integral.clamp(-bound, bound);
        }
        let d = if self.has_prev { (e - self.prev_error) / dt } else { 0.0 };
        self.prev_error = e;
        self.has_prev = true;
        let out = g.kp * e + g.ki * self.integral + g.kd * d + g.kff * target;
        out.clamp(g.out_min, g.out_max)
    }

    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}

/// Functional form of [`PidState::step`].
pub fn pid_step(g: &PidGains, s: PidState, e: f64, target: f64, dt: f64) -> (f64, PidState) {
    let mut s = s;
    let out = s.step(g, e, target, dt, false);
    (out, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_output() {
        let (u, _) = pid_step(&PidGains { kp: 1.0, ki: 1.0, kd: 1.0, kff: 1.0, ..Default::default() }, PidState::default(), 0.0, 0.0, 0.01);
        assert_eq!(u, 0.0);
    }

    #[test]
    fn two_step_direct_summation() {
        let g = PidGains { kp: 1.0, ki: 0.1, kd: 0.01, ..Default::default() };
        let (u0, s) = pid_step(&g, PidState::default(), 1.0, 0.0, 0.01);
        // first step: no derivative
        assert!((u0 - (1.0 + 0.1 * 0.01)).abs() < 1e-15);
        let (u1, _) = pid_step(&g, s, 0.5, 0.0, 0.01);
        let expect = 0.5 + 0.1 * (1.0 + 0.5) * 0.01 + 0.01 * (0.5 - 1.0) / 0.01;
        assert!((u1 - expect).abs() < 1e-12);
        assert!((u1 - 0.0015).abs() < 1e-12);
    }

    #[test]
    fn pure_feed_forward() {
        let g = PidGains { kff: 2.0, ..Default::default() };
        assert_eq!(pid_step(&g, PidState::default(), 0.0, 3.0, 0.01).0, 6.0);
    }

    #[test]
    fn integrator_clamp_and_output_limits() {
        let g = PidGains { ki: 2.0, imax: 0.5, ..Default::default() }.with_limits(-0.3, 0.3);
        let mut s = PidState::default();
        for _ in 0..1000 {
            let u = s.step(&g, 1.0, 0.0, 0.01, false);
            assert!(u <= 0.3);
            assert!((s.integral * g.ki).abs() <= g.imax + 1e-15);
        }
    }

    #[test]
    fn freeze_holds_accumulator() {
        let g = PidGains { ki: 1.0, ..Default::default() };
        let mut s = PidState::default();
        s.step(&g, 1.0, 0.0, 0.1, false);
        let held = s.integral;
        s.step(&g, 1.0, 0.0, 0.1, true);
        assert_eq!(s.integral, held);
    }
}

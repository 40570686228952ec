//! The structured baseline law: P-PID cascades for altitude and the three
//! attitude channels, plus the mixed-sensitivity weighting functions the
//! synthesis shapes them with.
//!
//! Every channel has the same architecture: an outer proportional loop on
//! the kinematic variable (altitude or angle) commands a rate, and an inner
//! PID on the rate error produces the virtual control (vertical force or
//! moment). The altitude channel carries an explicit −mg gravity
//! feedforward so its PID only handles deviations.

use nalgebra::{Complex, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::vehicle::{RigidBodyState, VirtualControl};

/// Parallel-form PID gains with a first-order derivative filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter corner, rad/s.
    pub n_filter: f64,
    /// Symmetric output saturation; also the anti-windup clamp level.
    pub output_limit: f64,
}

/// Mutable state of one PID loop.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integrator: f64,
    /// State of the derivative filter.
    pub filter: f64,
    initialized: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One discrete PID update: proportional + integral + filtered derivative,
/// with clamping anti-windup (the integrator freezes whenever the output is
/// saturated and the error would push it further into saturation).
pub fn pid_step(gains: &PidGains, state: &mut PidState, error: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    if !state.initialized {
        // Start the filter on the signal so the first derivative is zero.
        state.filter = error;
        state.initialized = true;
    }
    // Backward-Euler derivative filter: unconditionally stable for any N·dt.
    let a = gains.n_filter * dt;
    let filter_next = (state.filter + a * error) / (1.0 + a);
    let derivative = gains.n_filter * (error - filter_next);
    state.filter = filter_next;

    let unsat = gains.kp * error + gains.ki * state.integrator + gains.kd * derivative;
    let output = unsat.clamp(-gains.output_limit, gains.output_limit);
    let saturated = unsat != output;
    if !(saturated && error * unsat > 0.0) {
        state.integrator += error * dt;
    }
    (gains.kp * error + gains.ki * state.integrator + gains.kd * derivative)
        .clamp(-gains.output_limit, gains.output_limit)
}

/// Gains of one P-PID cascade loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopGains {
    /// Outer proportional gain (kinematic variable → rate command).
    pub outer_p: f64,
    pub inner: PidGains,
    /// Symmetric limit on the inner-loop rate command.
    pub rate_limit: f64,
}

/// One cascade loop: outer P plus inner PID with state.
#[derive(Debug, Clone)]
pub struct CascadeLoop {
    pub gains: LoopGains,
    pub state: PidState,
}

impl CascadeLoop {
    pub fn new(gains: LoopGains) -> Self {
        Self {
            gains,
            state: PidState::default(),
        }
    }

    /// Steps the cascade: `value` tracks `command`, `rate` is its measured
    /// derivative. Returns the inner PID output.
    pub fn step(&mut self, command: f64, value: f64, rate: f64, dt: f64) -> f64 {
        self.step_with_ff(command, 0.0, value, rate, dt)
    }

    /// Same as [`step`](Self::step) with a rate-command feedforward added
    /// ahead of the rate limit, so ramping commands track without the
    /// steady lag `rate / outer_p`.
    pub fn step_with_ff(
        &mut self,
        command: f64,
        rate_ff: f64,
        value: f64,
        rate: f64,
        dt: f64,
    ) -> f64 {
        let rate_cmd = (self.gains.outer_p * (command - value) + rate_ff)
            .clamp(-self.gains.rate_limit, self.gains.rate_limit);
        pid_step(&self.gains.inner, &mut self.state, rate_cmd - rate, dt)
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }
}

/// Tuned gains for the four baseline loops, as written/read by the gains
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub altitude: LoopGains,
    pub roll: LoopGains,
    pub pitch: LoopGains,
    pub yaw: LoopGains,
}

impl ControllerGains {
    /// Gains produced by the shipped mixed-sensitivity tuning run with the
    /// default weights (bandwidth 0.8 rad/s altitude, 4.3 rad/s attitude).
    pub fn tuned_default() -> Self {
        Self {
            altitude: LoopGains {
                outer_p: 8.17507897188923582e-1,
                inner: PidGains {
                    kp: 7.84256496991346381e1,
                    ki: 1.25099025359872385e2,
                    kd: 1.40323680196814747e-3,
                    n_filter: 50.0,
                    output_limit: 60.0,
                },
                rate_limit: 5.0,
            },
            roll: LoopGains {
                outer_p: 4.35850223698447525,
                inner: PidGains {
                    kp: 2.17992219827087297e1,
                    ki: 1.87473308939195277e2,
                    kd: 1.08708392303038578e-2,
                    n_filter: 50.0,
                    output_limit: 35.0,
                },
                rate_limit: 2.0,
            },
            pitch: LoopGains {
                outer_p: 4.36268116219628066,
                inner: PidGains {
                    kp: 4.30242728930768621e1,
                    ki: 3.69695006495256735e2,
                    kd: 7.95371066271958853e-3,
                    n_filter: 50.0,
                    output_limit: 40.0,
                },
                rate_limit: 2.0,
            },
            yaw: LoopGains {
                outer_p: 4.64237860541661540,
                inner: PidGains {
                    kp: 6.46437612201492442e1,
                    ki: 5.55936346735682037e1,
                    kd: 1.12847755951583292e-2,
                    n_filter: 50.0,
                    output_limit: 0.7,
                },
                rate_limit: 2.0,
            },
        }
    }
}

/// The complete baseline law: altitude cascade with gravity feedforward and
/// the three attitude cascades.
#[derive(Debug, Clone)]
pub struct BaselineController {
    pub altitude: CascadeLoop,
    pub roll: CascadeLoop,
    pub pitch: CascadeLoop,
    pub yaw: CascadeLoop,
    /// Vehicle weight mg for the F_az feedforward, N.
    pub weight: f64,
}

impl BaselineController {
    pub fn new(gains: &ControllerGains, weight: f64) -> Self {
        Self {
            altitude: CascadeLoop::new(gains.altitude),
            roll: CascadeLoop::new(gains.roll),
            pitch: CascadeLoop::new(gains.pitch),
            yaw: CascadeLoop::new(gains.yaw),
            weight,
        }
    }

    /// Altitude cascade step: outer P on altitude error commands a vertical
    /// velocity, the inner PID on the body heave velocity produces F_az
    /// (negative up) including the −mg feedforward.
    pub fn altitude_step(&mut self, h_cmd: f64, state: &RigidBodyState, dt: f64) -> f64 {
        // Inner variable is the body heave velocity w (positive down), so the
        // outer command is the negated climb-rate demand.
        let w_cmd = (-self.altitude.gains.outer_p * (h_cmd - state.altitude()))
            .clamp(-self.altitude.gains.rate_limit, self.altitude.gains.rate_limit);
        let e_w = w_cmd - state.velocity.z;
        pid_step(&self.altitude.gains.inner, &mut self.altitude.state, e_w, dt) - self.weight
    }

    /// Attitude cascade step: per-axis outer P on the angle error and inner
    /// PID on the body rate, producing the three moment demands.
    pub fn attitude_step(&mut self, att_cmd: &Vector3<f64>, state: &RigidBodyState, dt: f64) -> Vector3<f64> {
        self.attitude_step_with_ff(att_cmd, &Vector3::zeros(), state, dt)
    }

    /// Attitude cascade step with per-axis angular-rate feedforward added to
    /// the outer-loop rate command.
    pub fn attitude_step_with_ff(
        &mut self,
        att_cmd: &Vector3<f64>,
        rate_ff: &Vector3<f64>,
        state: &RigidBodyState,
        dt: f64,
    ) -> Vector3<f64> {
        Vector3::new(
            self.roll
                .step_with_ff(att_cmd.x, rate_ff.x, state.attitude.x, state.rates.x, dt),
            self.pitch
                .step_with_ff(att_cmd.y, rate_ff.y, state.attitude.y, state.rates.y, dt),
            self.yaw
                .step_with_ff(att_cmd.z, rate_ff.z, state.attitude.z, state.rates.z, dt),
        )
    }

    /// Full baseline step producing the virtual control vector.
    pub fn step(
        &mut self,
        h_cmd: f64,
        att_cmd: &Vector3<f64>,
        state: &RigidBodyState,
        dt: f64,
    ) -> VirtualControl {
        let f_az = self.altitude_step(h_cmd, state, dt);
        let m = self.attitude_step(att_cmd, state, dt);
        Vector4::new(f_az, m.x, m.y, m.z)
    }

    pub fn reset(&mut self) {
        self.altitude.reset();
        self.roll.reset();
        self.pitch.reset();
        self.yaw.reset();
    }
}

/// Parameters of the mixed-sensitivity weighting functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingParams {
    /// Peak bound M of the sensitivity weight (overshoot requirement).
    pub m_peak: f64,
    /// Steady-state error bound A.
    pub a_err: f64,
    /// Target closed-loop bandwidth ω_b, rad/s.
    pub omega_b: f64,
    /// Reference amplitude bound r_max for the control weight.
    pub r_max: f64,
    /// Control authority bound u_max.
    pub u_max: f64,
    /// Actuator bandwidth ω_a, rad/s.
    pub omega_a: f64,
}

impl WeightingParams {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.m_peak > 1.0
            && self.a_err > 0.0
            && self.a_err < 1.0
            && self.omega_b > 0.0
            && self.omega_a > 0.0
            && self.u_max > 0.0
            && self.r_max > 0.0)
        {
            return Err(crate::Error::Scenario {
                field: "weighting".into(),
                message: "require M > 1, 0 < A < 1, omega_b > 0, omega_a > 0, r_max > 0, u_max > 0"
                    .into(),
            });
        }
        Ok(())
    }
}

/// Sensitivity weight `Ws(s) = (s/M + ω_b) / (s + A·ω_b)` at s = jω.
pub fn ws_response(p: &WeightingParams, omega: f64) -> Complex<f64> {
    let s = Complex::new(0.0, omega);
    (s / p.m_peak + p.omega_b) / (s + p.a_err * p.omega_b)
}

/// Control-sensitivity weight
/// `Wr(s) = ((r_max/u_max)·s + ω_a·10⁻³) / (s + ω_a)` at s = jω.
pub fn wr_response(p: &WeightingParams, omega: f64) -> Complex<f64> {
    let s = Complex::new(0.0, omega);
    (s * (p.r_max / p.u_max) + p.omega_a * 1e-3) / (s + p.omega_a)
}

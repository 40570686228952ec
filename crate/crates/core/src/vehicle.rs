//! Vehicle parameters, actuator command/health representations and the
//! fault-event timeline driving effectiveness updates.
//!
//! Actuator ordering is fixed throughout the crate:
//!
//! ```text
//! [Thr_1a, Thr_1b, Thr_2a, Thr_2b, Thr_3a, Thr_3b, Thr_4a, Thr_4b, δ_a, δ_e, δ_r]
//! ```
//!
//! Throttles are in percent (0..100), surface deflections in radians.

use nalgebra::{Matrix3, SVector, Vector3, Vector4};

use crate::{Error, Result};

/// Number of allocated actuators: eight vertical rotors + three surfaces.
pub const NUM_ACTUATORS: usize = 11;
/// Number of vertical rotors.
pub const NUM_ROTORS: usize = 8;

/// Zero-based index of the aileron entry.
pub const IDX_AILERON: usize = 8;
/// Zero-based index of the elevator entry.
pub const IDX_ELEVATOR: usize = 9;
/// Zero-based index of the rudder entry.
pub const IDX_RUDDER: usize = 10;

/// The 11-element actuator command vector.
pub type ActuatorVector = SVector<f64, NUM_ACTUATORS>;

/// The 4-element virtual control vector `[F_az, M_ax, M_ay, M_az]`
/// output by the baseline law and consumed by the allocator.
pub type VirtualControl = Vector4<f64>;

/// Physical parameters of the dual-system UAV.
///
/// Internal unit for surface limits is radians; the scenario loader accepts
/// degrees with an explicit unit tag and converts on load.
#[derive(Debug, Clone)]
pub struct VehicleParams {
    /// Mass, kg.
    pub mass: f64,
    /// Inertia tensor, kg·m². Diagonal J_x, J_y, J_z plus the J_xz product.
    pub inertia: Matrix3<f64>,
    /// Wing span b, m.
    pub wing_span: f64,
    /// Wing area S, m².
    pub wing_area: f64,
    /// Mean aerodynamic chord c̄, m.
    pub mean_chord: f64,
    /// Cruise speed V_a, m/s.
    pub cruise_speed: f64,
    /// Rotor thrust coefficient, N per % throttle.
    pub k_t: f64,
    /// Rotor torque coefficient, N·m per % throttle.
    pub k_m: f64,
    /// Lateral rotor lever arm l_f, m.
    pub lever_f: f64,
    /// Longitudinal lever arms l_1..l_4, m.
    pub lever_1: f64,
    pub lever_2: f64,
    pub lever_3: f64,
    pub lever_4: f64,
    /// Aileron deflection limit (symmetric), rad.
    pub aileron_limit: f64,
    /// Elevator deflection limit (symmetric), rad.
    pub elevator_limit: f64,
    /// Rudder deflection limit (symmetric), rad.
    pub rudder_limit: f64,
    /// Maximum throttle, %.
    pub throttle_max: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 6.4,
            inertia: Matrix3::new(
                0.3724, 0.0, 0.0083, //
                0.0, 0.7237, 0.0, //
                0.0083, 0.0, 1.0868,
            ),
            wing_span: 2.25,
            wing_area: 0.5625,
            mean_chord: 0.25,
            cruise_speed: 15.0,
            k_t: 0.164,
            k_m: 1.89e-3,
            // The rotor lever arms are not published for this airframe; the
            // defaults are consistent with the 2.25 m span and keep the
            // hover-symmetry balance l_1 + l_2 = l_3 + l_4.
            lever_f: 0.6,
            lever_1: 0.9,
            lever_2: 0.45,
            lever_3: 0.45,
            lever_4: 0.9,
            aileron_limit: 0.55,
            elevator_limit: 0.5,
            rudder_limit: 0.69,
            throttle_max: 100.0,
            gravity: 9.81,
        }
    }
}

impl VehicleParams {
    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0) {
            return fail("mass must be positive");
        }
        for i in 0..3 {
            if !(self.inertia[(i, i)] > 0.0) {
                return fail("diagonal inertia entries must be positive");
            }
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 {
            return fail("inertia tensor must be symmetric");
        }
        if !(self.k_t > 0.0 && self.k_m > 0.0) {
            return fail("k_T and k_M must be positive");
        }
        for l in [
            self.lever_f,
            self.lever_1,
            self.lever_2,
            self.lever_3,
            self.lever_4,
        ] {
            if !(l > 0.0) {
                return fail("lever arms must be positive");
            }
        }
        for lim in [
            self.aileron_limit,
            self.elevator_limit,
            self.rudder_limit,
            self.throttle_max,
        ] {
            if !(lim > 0.0) {
                return fail("actuator limits must be positive");
            }
        }
        if !(self.wing_area > 0.0 && self.wing_span > 0.0 && self.mean_chord > 0.0) {
            return fail("wing geometry must be positive");
        }
        Ok(())
    }

    /// Lower actuator bounds in the fixed ordering.
    pub fn lower_bounds(&self) -> ActuatorVector {
        let mut lb = ActuatorVector::zeros();
        lb[IDX_AILERON] = -self.aileron_limit;
        lb[IDX_ELEVATOR] = -self.elevator_limit;
        lb[IDX_RUDDER] = -self.rudder_limit;
        lb
    }

    /// Upper actuator bounds in the fixed ordering.
    pub fn upper_bounds(&self) -> ActuatorVector {
        let mut ub = ActuatorVector::zeros();
        for i in 0..NUM_ROTORS {
            ub[i] = self.throttle_max;
        }
        ub[IDX_AILERON] = self.aileron_limit;
        ub[IDX_ELEVATOR] = self.elevator_limit;
        ub[IDX_RUDDER] = self.rudder_limit;
        ub
    }
}

/// Per-actuator effectiveness plus the per-channel loss factors used by the
/// linear analysis path.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivenessState {
    /// Diagonal of the actuator effectiveness matrix W; 1 = healthy, 0 = failed.
    pub w: ActuatorVector,
    /// Channel loss factors Γ = [γ_T, γ_L, γ_M, γ_N], each in [0, 0.5].
    pub gamma: Vector4<f64>,
}

impl EffectivenessState {
    /// All-healthy state.
    pub fn healthy() -> Self {
        Self {
            w: ActuatorVector::repeat(1.0),
            gamma: Vector4::zeros(),
        }
    }
}

impl Default for EffectivenessState {
    fn default() -> Self {
        Self::healthy()
    }
}

/// A single effectiveness change at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultEvent {
    /// Injection time, s.
    pub time: f64,
    /// Zero-based actuator index (0..11).
    pub actuator: usize,
    /// Effectiveness after the event, in [0, 1].
    pub new_effectiveness: f64,
}

/// Checks that an event list is sorted by time with valid indices and levels.
pub fn validate_fault_events(events: &[FaultEvent]) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for e in events {
        if e.time < prev {
            return Err(Error::UnsortedFaults(e.time, prev));
        }
        prev = e.time;
        if e.actuator >= NUM_ACTUATORS {
            return Err(Error::Scenario {
                field: "faults.actuator".into(),
                message: format!("index {} out of range 0..{NUM_ACTUATORS}", e.actuator),
            });
        }
        if !(0.0..=1.0).contains(&e.new_effectiveness) {
            return Err(Error::Scenario {
                field: "faults.effectiveness".into(),
                message: format!("{} not in [0, 1]", e.new_effectiveness),
            });
        }
    }
    Ok(())
}

/// Effectiveness state at time `t`: all events with `time <= t` applied
/// (piecewise constant, right-continuous), everything else healthy.
///
/// `events` must be sorted by time; see [`validate_fault_events`].
pub fn effectiveness_at(events: &[FaultEvent], t: f64) -> EffectivenessState {
    let mut state = EffectivenessState::healthy();
    for e in events {
        if e.time > t {
            break;
        }
        state.w[e.actuator] = e.new_effectiveness;
    }
    state
}

/// Clips every actuator entry to its bound. A projection: idempotent, and a
/// no-op on feasible inputs.
pub fn clamp_actuators(u: &ActuatorVector, params: &VehicleParams) -> ActuatorVector {
    let lb = params.lower_bounds();
    let ub = params.upper_bounds();
    let mut out = *u;
    for i in 0..NUM_ACTUATORS {
        out[i] = out[i].clamp(lb[i], ub[i]);
    }
    out
}

/// Rigid-body simulation state. Position is NED (altitude H = −z),
/// velocity is body-frame, attitude is Euler 3-2-1.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    /// Position in NED, m.
    pub position: Vector3<f64>,
    /// Body-frame velocity [u, v, w], m/s.
    pub velocity: Vector3<f64>,
    /// Euler angles [φ, θ, ψ], rad, wrapped to (−π, π].
    pub attitude: Vector3<f64>,
    /// Body rates [p, q, r], rad/s.
    pub rates: Vector3<f64>,
}

impl RigidBodyState {
    /// State at rest at a given altitude.
    pub fn at_altitude(h: f64) -> Self {
        Self {
            position: Vector3::new(0.0, 0.0, -h),
            velocity: Vector3::zeros(),
            attitude: Vector3::zeros(),
            rates: Vector3::zeros(),
        }
    }

    /// Altitude above the NED origin, m.
    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    /// Airspeed proxy: magnitude of the body-frame velocity, m/s.
    pub fn airspeed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.rates.iter().all(|v| v.is_finite())
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sym_fault_events() -> Vec<FaultEvent> {
        vec![
            FaultEvent {
                time: 22.0,
                actuator: 1,
                new_effectiveness: 0.0,
            },
            FaultEvent {
                time: 22.0,
                actuator: 3,
                new_effectiveness: 0.0,
            },
            FaultEvent {
                time: 22.0,
                actuator: IDX_ELEVATOR,
                new_effectiveness: 0.5,
            },
        ]
    }

    #[test]
    fn effectiveness_no_events_is_identity() {
        let s = effectiveness_at(&[], 10.0);
        assert_eq!(s.w, ActuatorVector::repeat(1.0));
    }

    #[test]
    fn effectiveness_before_injection_is_identity() {
        let s = effectiveness_at(&sym_fault_events(), 21.9);
        assert_eq!(s.w, ActuatorVector::repeat(1.0));
    }

    #[test]
    fn effectiveness_right_continuous_at_injection() {
        let s = effectiveness_at(&sym_fault_events(), 22.0);
        let expected = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0];
        for (i, &e) in expected.iter().enumerate() {
            assert_eq!(s.w[i], e, "actuator {i}");
        }
    }

    #[test]
    fn unsorted_events_rejected() {
        let mut events = sym_fault_events();
        events.insert(
            0,
            FaultEvent {
                time: 30.0,
                actuator: 0,
                new_effectiveness: 0.5,
            },
        );
        assert!(matches!(
            validate_fault_events(&events),
            Err(Error::UnsortedFaults(..))
        ));
    }

    #[test]
    fn clamp_upper_throttle() {
        let p = VehicleParams::default();
        let mut u = ActuatorVector::zeros();
        u[0] = 120.0;
        let c = clamp_actuators(&u, &p);
        assert_eq!(c[0], 100.0);
    }

    #[test]
    fn clamp_elevator_lower() {
        let p = VehicleParams::default();
        let mut u = ActuatorVector::zeros();
        u[IDX_ELEVATOR] = -0.6;
        let c = clamp_actuators(&u, &p);
        assert_eq!(c[IDX_ELEVATOR], -0.5);
    }

    #[test]
    fn clamp_is_projection() {
        let p = VehicleParams::default();
        let mut u = ActuatorVector::zeros();
        u[0] = 47.85;
        u[IDX_AILERON] = 0.1;
        let once = clamp_actuators(&u, &p);
        assert_eq!(once, u, "feasible input unchanged");
        let mut v = ActuatorVector::repeat(500.0);
        v[IDX_RUDDER] = -3.0;
        let c1 = clamp_actuators(&v, &p);
        let c2 = clamp_actuators(&c1, &p);
        assert_eq!(c1, c2, "idempotent");
    }

    #[test]
    fn default_params_validate() {
        VehicleParams::default().validate().unwrap();
        assert_relative_eq!(
            VehicleParams::default().mass * VehicleParams::default().gravity,
            62.784,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = VehicleParams::default();
        p.mass = -1.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::default();
        p.k_t = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(
            wrap_angle(3.0 * std::f64::consts::PI),
            std::f64::consts::PI,
            epsilon = 1e-12
        );
        assert_relative_eq!(wrap_angle(-0.1), -0.1, epsilon = 1e-12);
        assert!(wrap_angle(7.0) <= std::f64::consts::PI);
    }
}

//! Maps actuator commands to forces and moments: linear rotor models,
//! airspeed-dependent surface moments and the 4×11 allocation matrix.
//!
//! Rotor layout (top view, x forward, y right): arms 1 and 4 carry the
//! left-side rotors, arms 2 and 3 the right-side ones; the `a` rotor of each
//! arm sits at the outer longitudinal station. The resulting sign pattern for
//! the moment rows is balanced: with all throttles equal, roll, pitch and yaw
//! contributions cancel exactly (the defaults satisfy l1 + l2 = l3 + l4).

use nalgebra::SMatrix;

use crate::vehicle::{
    ActuatorVector, EffectivenessState, VehicleParams, VirtualControl, IDX_AILERON, IDX_ELEVATOR,
    IDX_RUDDER, NUM_ACTUATORS, NUM_ROTORS,
};
use crate::{Error, Result};

/// Sea-level ISA air density, kg/m³.
pub const AIR_DENSITY: f64 = 1.225;

/// Roll-row sign per rotor (moment = sign · k_T · l_f · Thr).
///
/// Layout: rotors 1 and 3 are the left-side front and rear pairs, rotors 2
/// and 4 the right-side pairs; `a`/`b` are the outer/inner longitudinal
/// stations of each pair (arms via [`pitch_arm`]).
pub const ROTOR_ROLL_SIGN: [f64; NUM_ROTORS] = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
/// Pitch-row sign per rotor; the lever arm is given by [`pitch_arm`].
pub const ROTOR_PITCH_SIGN: [f64; NUM_ROTORS] = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
/// Yaw-row sign per rotor (reaction torque = sign · k_M · Thr); the two
/// rotors of each longitudinal pair counter-rotate, and left/right pairs
/// mirror each other.
pub const ROTOR_YAW_SIGN: [f64; NUM_ROTORS] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];

/// Longitudinal lever arm of rotor `i` in the fixed ordering.
pub fn pitch_arm(params: &VehicleParams, i: usize) -> f64 {
    match i {
        0 | 2 => params.lever_1,
        1 | 3 => params.lever_2,
        4 | 6 => params.lever_3,
        5 | 7 => params.lever_4,
        _ => panic!("rotor index {i} out of range"),
    }
}

/// Control-surface axis selector for [`surface_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceAxis {
    Roll,
    Pitch,
    Yaw,
}

/// Dimensionless control-surface derivatives (per rad) and the air density
/// they are evaluated with.
///
/// The standard convention applies: aileron produces roll, elevator pitch,
/// rudder yaw. Constant-in-airspeed defaults keep the oracle checks analytic;
/// all three are overridable from the scenario document.
#[derive(Debug, Clone)]
pub struct SurfaceDerivatives {
    /// Roll moment per rad of aileron, C_l_δa.
    pub c_l_da: f64,
    /// Pitch moment per rad of elevator, C_m_δe (negative by convention:
    /// trailing-edge-down elevator pitches the nose down).
    pub c_m_de: f64,
    /// Yaw moment per rad of rudder, C_n_δr.
    pub c_n_dr: f64,
    /// Air density ρ, kg/m³.
    pub rho: f64,
}

impl Default for SurfaceDerivatives {
    fn default() -> Self {
        Self {
            c_l_da: 0.12,
            c_m_de: -0.6,
            c_n_dr: -0.08,
            rho: AIR_DENSITY,
        }
    }
}

impl SurfaceDerivatives {
    /// Dynamic pressure q(V) = ½ρV².
    pub fn dynamic_pressure(&self, airspeed: f64) -> f64 {
        0.5 * self.rho * airspeed * airspeed
    }

    /// Per-radian roll moment gain of the aileron at airspeed `v`, N·m/rad.
    pub fn aileron_gain(&self, v: f64, params: &VehicleParams) -> f64 {
        self.dynamic_pressure(v) * params.wing_area * params.wing_span * self.c_l_da
    }

    /// Per-radian pitch moment gain of the elevator at airspeed `v`, N·m/rad.
    pub fn elevator_gain(&self, v: f64, params: &VehicleParams) -> f64 {
        self.dynamic_pressure(v) * params.wing_area * params.mean_chord * self.c_m_de
    }

    /// Per-radian yaw moment gain of the rudder at airspeed `v`, N·m/rad.
    pub fn rudder_gain(&self, v: f64, params: &VehicleParams) -> f64 {
        self.dynamic_pressure(v) * params.wing_area * params.wing_span * self.c_n_dr
    }
}

/// The airspeed-dependent 4×11 allocation matrix.
///
/// Row order `[F_az, M_ax, M_ay, M_az]`, columns in the fixed actuator
/// ordering. Rotor columns are airspeed-independent; surface columns scale
/// with dynamic pressure and vanish at V = 0.
#[derive(Debug, Clone)]
pub struct AllocationMatrix {
    pub b: SMatrix<f64, 4, NUM_ACTUATORS>,
    /// Airspeed the surface columns were evaluated at, m/s.
    pub airspeed_used: f64,
}

/// Linear rotor model: thrust and reaction torque from commanded throttle.
pub fn rotor_force_moment(throttle: f64, k_t: f64, k_m: f64) -> (f64, f64) {
    (k_t * throttle, k_m * throttle)
}

/// Moment produced by one control surface at airspeed `v`.
pub fn surface_moment(
    deflection: f64,
    v: f64,
    derivs: &SurfaceDerivatives,
    params: &VehicleParams,
    axis: SurfaceAxis,
) -> f64 {
    let gain = match axis {
        SurfaceAxis::Roll => derivs.aileron_gain(v, params),
        SurfaceAxis::Pitch => derivs.elevator_gain(v, params),
        SurfaceAxis::Yaw => derivs.rudder_gain(v, params),
    };
    gain * deflection
}

/// Builds the allocation matrix at airspeed `v`.
pub fn build_allocation_matrix(
    params: &VehicleParams,
    derivs: &SurfaceDerivatives,
    v: f64,
) -> Result<AllocationMatrix> {
    if v < 0.0 {
        return Err(Error::Dimension(format!("negative airspeed {v}")));
    }
    let mut b = SMatrix::<f64, 4, NUM_ACTUATORS>::zeros();
    for i in 0..NUM_ROTORS {
        b[(0, i)] = -params.k_t;
        b[(1, i)] = ROTOR_ROLL_SIGN[i] * params.k_t * params.lever_f;
        b[(2, i)] = ROTOR_PITCH_SIGN[i] * params.k_t * pitch_arm(params, i);
        b[(3, i)] = ROTOR_YAW_SIGN[i] * params.k_m;
    }
    b[(1, IDX_AILERON)] = derivs.aileron_gain(v, params);
    b[(2, IDX_ELEVATOR)] = derivs.elevator_gain(v, params);
    b[(3, IDX_RUDDER)] = derivs.rudder_gain(v, params);
    Ok(AllocationMatrix {
        b,
        airspeed_used: v,
    })
}

/// Achieved wrench `B·W·u` for a command under the given effectiveness.
pub fn effector_wrench(
    alloc: &AllocationMatrix,
    eff: &EffectivenessState,
    u: &ActuatorVector,
) -> VirtualControl {
    alloc.b * u.component_mul(&eff.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn rotor_model_anchors() {
        assert_eq!(rotor_force_moment(0.0, 0.164, 1.89e-3), (0.0, 0.0));
        let (f, _) = rotor_force_moment(100.0, 0.164, 1.89e-3);
        assert_relative_eq!(f, 16.4, epsilon = 1e-12);
        // static force balance: mg = 8 * k_T * Thr for m = 6.4 kg
        let (f, _) = rotor_force_moment(47.85, 0.164, 1.89e-3);
        assert_relative_eq!(f, 7.8474, epsilon = 1e-10);
        assert_relative_eq!(8.0 * f, 6.4 * 9.81, epsilon = 0.01);
    }

    #[test]
    fn surface_moment_zero_cases() {
        let p = params();
        let d = SurfaceDerivatives::default();
        assert_eq!(surface_moment(0.3, 0.0, &d, &p, SurfaceAxis::Roll), 0.0);
        assert_eq!(surface_moment(0.0, 20.0, &d, &p, SurfaceAxis::Yaw), 0.0);
    }

    #[test]
    fn surface_moment_matches_hand_computation() {
        let p = params();
        let d = SurfaceDerivatives::default();
        // q·S·c̄·C_m_δe·δ_e evaluated directly
        let q = 0.5 * 1.225 * 15.0 * 15.0;
        let expected = q * 0.5625 * 0.25 * (-0.6) * 0.1;
        assert_relative_eq!(
            surface_moment(0.1, 15.0, &d, &p, SurfaceAxis::Pitch),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn allocation_matrix_rows() {
        let p = params();
        let d = SurfaceDerivatives::default();
        let m = build_allocation_matrix(&p, &d, 0.0).unwrap();
        for i in 0..NUM_ROTORS {
            assert_eq!(m.b[(0, i)], -0.164);
        }
        // total max vertical force
        let max_f: f64 = (0..NUM_ROTORS).map(|i| -m.b[(0, i)] * 100.0).sum();
        assert_relative_eq!(max_f, 131.2, epsilon = 1e-10);
        // surface columns vanish at V = 0
        assert_eq!(m.b[(1, IDX_AILERON)], 0.0);
        assert_eq!(m.b[(2, IDX_ELEVATOR)], 0.0);
        assert_eq!(m.b[(3, IDX_RUDDER)], 0.0);
        // yaw row sums to zero over the rotor columns
        let yaw_sum: f64 = (0..NUM_ROTORS).map(|i| m.b[(3, i)]).sum();
        assert_relative_eq!(yaw_sum, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn allocation_matrix_full_rank_at_zero_airspeed() {
        let p = params();
        let d = SurfaceDerivatives::default();
        let m = build_allocation_matrix(&p, &d, 0.0).unwrap();
        let dm = DMatrix::from_fn(4, NUM_ACTUATORS, |r, c| m.b[(r, c)]);
        assert_eq!(dm.rank(1e-9), 4);
    }

    #[test]
    fn hover_symmetry_zero_moments() {
        let p = params();
        let d = SurfaceDerivatives::default();
        let m = build_allocation_matrix(&p, &d, 0.0).unwrap();
        let mut u = ActuatorVector::zeros();
        for i in 0..NUM_ROTORS {
            u[i] = 47.85;
        }
        let w = effector_wrench(&m, &EffectivenessState::healthy(), &u);
        assert_relative_eq!(w[0], -8.0 * 0.164 * 47.85, epsilon = 1e-10);
        assert_relative_eq!(w[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(w[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(w[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dead_rotor_mismatch_equals_column_contribution() {
        let p = params();
        let d = SurfaceDerivatives::default();
        let m = build_allocation_matrix(&p, &d, 5.0).unwrap();
        let mut u = ActuatorVector::zeros();
        for i in 0..NUM_ROTORS {
            u[i] = 47.85;
        }
        let healthy = effector_wrench(&m, &EffectivenessState::healthy(), &u);
        let mut faulty = EffectivenessState::healthy();
        faulty.w[1] = 0.0; // rotor 1b dead
        let degraded = effector_wrench(&m, &faulty, &u);
        let column = m.b.column(1) * u[1];
        assert_relative_eq!((healthy - degraded - column).norm(), 0.0, epsilon = 1e-12);
    }

    /// The matrix builder must agree with the scalar per-actuator models.
    #[test]
    fn matrix_consistent_with_scalar_models() {
        let p = params();
        let d = SurfaceDerivatives::default();
        let v = 11.3;
        let m = build_allocation_matrix(&p, &d, v).unwrap();
        let mut u = ActuatorVector::zeros();
        for i in 0..NUM_ROTORS {
            u[i] = 10.0 + 7.0 * i as f64;
        }
        u[IDX_AILERON] = 0.2;
        u[IDX_ELEVATOR] = -0.3;
        u[IDX_RUDDER] = 0.4;
        let wrench = effector_wrench(&m, &EffectivenessState::healthy(), &u);

        let mut expected = VirtualControl::zeros();
        for i in 0..NUM_ROTORS {
            let (thrust, torque) = rotor_force_moment(u[i], p.k_t, p.k_m);
            expected[0] += -thrust;
            expected[1] += ROTOR_ROLL_SIGN[i] * thrust * p.lever_f;
            expected[2] += ROTOR_PITCH_SIGN[i] * thrust * pitch_arm(&p, i);
            expected[3] += ROTOR_YAW_SIGN[i] * torque;
        }
        expected[1] += surface_moment(u[IDX_AILERON], v, &d, &p, SurfaceAxis::Roll);
        expected[2] += surface_moment(u[IDX_ELEVATOR], v, &d, &p, SurfaceAxis::Pitch);
        expected[3] += surface_moment(u[IDX_RUDDER], v, &d, &p, SurfaceAxis::Yaw);

        assert_relative_eq!(wrench, expected, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn wrench_is_linear_in_commands(
            a in -2.0..2.0f64,
            b in -2.0..2.0f64,
            seed in proptest::array::uniform11(-50.0..50.0f64),
            seed2 in proptest::array::uniform11(-50.0..50.0f64),
            v in 0.0..20.0f64,
        ) {
            let p = params();
            let d = SurfaceDerivatives::default();
            let m = build_allocation_matrix(&p, &d, v).unwrap();
            let w = EffectivenessState::healthy();
            let u1 = ActuatorVector::from_row_slice(&seed);
            let u2 = ActuatorVector::from_row_slice(&seed2);
            let lhs = effector_wrench(&m, &w, &(a * u1 + b * u2));
            let rhs = a * effector_wrench(&m, &w, &u1) + b * effector_wrench(&m, &w, &u2);
            prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
        }

        #[test]
        fn surface_moment_monotone_in_airspeed(v1 in 0.1..30.0f64, dv in 0.1..10.0f64) {
            let p = params();
            let d = SurfaceDerivatives::default();
            let lo = surface_moment(0.2, v1, &d, &p, SurfaceAxis::Roll).abs();
            let hi = surface_moment(0.2, v1 + dv, &d, &p, SurfaceAxis::Roll).abs();
            prop_assert!(hi > lo);
        }
    }
}

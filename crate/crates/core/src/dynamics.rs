//! 6-DOF nonlinear rigid-body simulation with fault-scaled effector
//! wrenches, hover trim, and the decoupled linear design model used by
//! synthesis and stability analysis.

use nalgebra::{Matrix3, Vector3};

use crate::effectors::{pitch_arm, SurfaceDerivatives, ROTOR_PITCH_SIGN, ROTOR_ROLL_SIGN, ROTOR_YAW_SIGN};
use crate::vehicle::{
    wrap_angle, ActuatorVector, EffectivenessState, RigidBodyState, VehicleParams, IDX_AILERON,
    IDX_ELEVATOR, IDX_RUDDER, NUM_ROTORS,
};
use crate::{Error, Result};

/// Wing aerodynamic model: linear lift curve with a flat-plateau stall and a
/// parabolic drag polar. The surface derivatives live in
/// [`SurfaceDerivatives`]; reference geometry comes from [`VehicleParams`].
#[derive(Debug, Clone)]
pub struct AeroModel {
    /// Zero-alpha lift coefficient.
    pub c_l0: f64,
    /// Lift-curve slope, per rad.
    pub c_l_alpha: f64,
    /// Stall angle, rad; the lift curve is flat beyond it.
    pub alpha_stall: f64,
    /// Parasite drag coefficient.
    pub c_d0: f64,
    /// Induced-drag factor k in C_D = C_D0 + k·C_L².
    pub k_induced: f64,
    pub surfaces: SurfaceDerivatives,
}

impl Default for AeroModel {
    fn default() -> Self {
        Self {
            c_l0: 0.3,
            c_l_alpha: 4.5,
            alpha_stall: 12f64.to_radians(),
            c_d0: 0.035,
            k_induced: 0.05,
            surfaces: SurfaceDerivatives::default(),
        }
    }
}

impl AeroModel {
    /// Lift coefficient at angle of attack `alpha`.
    pub fn lift_coeff(&self, alpha: f64) -> f64 {
        self.c_l0 + self.c_l_alpha * alpha.clamp(-self.alpha_stall, self.alpha_stall)
    }

    /// Drag coefficient from the drag polar.
    pub fn drag_coeff(&self, alpha: f64) -> f64 {
        let cl = self.lift_coeff(alpha);
        self.c_d0 + self.k_induced * cl * cl
    }
}

/// The four decoupled channel plants of the linear design model: loss-scaled
/// double integrators, plus the gravity offset on the heave channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// F_az → ẇ gain, (1 − γ_T)/m.
    pub heave_gain: f64,
    /// M_ax → ṗ gain, (1 − γ_L)/J_x.
    pub roll_gain: f64,
    /// M_ay → q̇ gain, (1 − γ_M)/J_y.
    pub pitch_gain: f64,
    /// M_az → ṙ gain, (1 − γ_N)/J_z.
    pub yaw_gain: f64,
    /// Gravity offset entering the heave equation, m/s².
    pub gravity: f64,
}

/// Linearizes the heave and attitude channels about hover with the given
/// channel loss factors. The inertia cross product and gravity-attitude
/// coupling are dropped, matching the decoupled design model.
pub fn linearize_heave_attitude(
    params: &VehicleParams,
    gamma: &nalgebra::Vector4<f64>,
) -> LinearModel {
    LinearModel {
        heave_gain: (1.0 - gamma[0]) / params.mass,
        roll_gain: (1.0 - gamma[1]) / params.inertia[(0, 0)],
        pitch_gain: (1.0 - gamma[2]) / params.inertia[(1, 1)],
        yaw_gain: (1.0 - gamma[3]) / params.inertia[(2, 2)],
        gravity: params.gravity,
    }
}

/// Hover trim: the equal throttle setting balancing gravity, with level
/// attitude and zero rates.
pub fn trim_hover(params: &VehicleParams) -> Result<(f64, RigidBodyState)> {
    let throttle = params.mass * params.gravity / (NUM_ROTORS as f64 * params.k_t);
    if throttle > params.throttle_max {
        return Err(Error::Infeasible(format!(
            "hover requires {throttle:.2} % throttle (max {} %)",
            params.throttle_max
        )));
    }
    Ok((throttle, RigidBodyState::at_altitude(0.0)))
}

/// Rotation matrix from body to NED for Euler 3-2-1 angles.
pub fn body_to_ned(att: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = att.x.sin_cos();
    let (st, ct) = att.y.sin_cos();
    let (ss, cs) = att.z.sin_cos();
    Matrix3::new(
        ct * cs,
        sp * st * cs - cp * ss,
        cp * st * cs + sp * ss,
        ct * ss,
        sp * st * ss + cp * cs,
        cp * st * ss - sp * cs,
        -st,
        sp * ct,
        cp * ct,
    )
}

/// Total body-frame force and moment on the vehicle: gravity, effectiveness-
/// scaled vertical-rotor thrust and torque, scripted horizontal-rotor thrust
/// along body x, wing lift and drag, and effectiveness-scaled surface
/// moments.
pub fn total_wrench(
    state: &RigidBodyState,
    u: &ActuatorVector,
    eff: &EffectivenessState,
    params: &VehicleParams,
    aero: &AeroModel,
    horiz_thrust: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();

    // Gravity in body axes.
    let r = body_to_ned(&state.attitude);
    force += r.transpose() * Vector3::new(0.0, 0.0, params.mass * params.gravity);

    // Vertical rotors: thrust along −z_b, moments from the same sign tables
    // the allocation matrix is built from.
    for i in 0..NUM_ROTORS {
        let thr = u[i] * eff.w[i];
        let thrust = params.k_t * thr;
        let torque = params.k_m * thr;
        force.z -= thrust;
        moment.x += ROTOR_ROLL_SIGN[i] * thrust * params.lever_f;
        moment.y += ROTOR_PITCH_SIGN[i] * thrust * pitch_arm(params, i);
        moment.z += ROTOR_YAW_SIGN[i] * torque;
    }

    // Horizontal rotors (scripted, not allocated).
    force.x += horiz_thrust;

    // Wing lift and drag in the symmetry plane; drag opposes the full
    // velocity vector.
    let v = state.velocity.norm();
    if v > 1e-9 {
        let alpha = state.velocity.z.atan2(state.velocity.x);
        let q_dyn = 0.5 * aero.surfaces.rho * v * v;
        let lift = q_dyn * params.wing_area * aero.lift_coeff(alpha);
        let drag = q_dyn * params.wing_area * aero.drag_coeff(alpha);
        let v_hat = state.velocity / v;
        force += -drag * v_hat;
        force += lift * Vector3::new(alpha.sin(), 0.0, -alpha.cos());
    }

    // Control-surface moments, effectiveness-scaled.
    let s = &aero.surfaces;
    moment.x += s.aileron_gain(v, params) * u[IDX_AILERON] * eff.w[IDX_AILERON];
    moment.y += s.elevator_gain(v, params) * u[IDX_ELEVATOR] * eff.w[IDX_ELEVATOR];
    moment.z += s.rudder_gain(v, params) * u[IDX_RUDDER] * eff.w[IDX_RUDDER];

    (force, moment)
}

/// Pitch attitude close enough to ±π/2 for the Euler kinematics to be
/// near-singular.
pub fn near_gimbal_lock(state: &RigidBodyState) -> bool {
    state.attitude.y.cos().abs() < 0.05
}

#[derive(Clone, Copy)]
struct Derivative {
    d_pos: Vector3<f64>,
    d_vel: Vector3<f64>,
    d_att: Vector3<f64>,
    d_rates: Vector3<f64>,
}

fn derivative<F>(state: &RigidBodyState, wrench: &F, params: &VehicleParams) -> Derivative
where
    F: Fn(&RigidBodyState) -> (Vector3<f64>, Vector3<f64>),
{
    let (force, moment) = wrench(state);
    let r = body_to_ned(&state.attitude);
    let omega = state.rates;
    let d_vel = force / params.mass - omega.cross(&state.velocity);
    let j = params.inertia;
    let d_rates = j
        .try_inverse()
        .expect("inertia tensor invertible")
        * (moment - omega.cross(&(j * omega)));
    let (sp, cp) = state.attitude.x.sin_cos();
    let (st, ct) = state.attitude.y.sin_cos();
    // Guard the Euler kinematics away from the exact singularity.
    let ct = if ct.abs() < 1e-6 { 1e-6 * ct.signum() } else { ct };
    let tt = st / ct;
    let d_att = Vector3::new(
        omega.x + (omega.y * sp + omega.z * cp) * tt,
        omega.y * cp - omega.z * sp,
        (omega.y * sp + omega.z * cp) / ct,
    );
    Derivative {
        d_pos: r * state.velocity,
        d_vel,
        d_att,
        d_rates,
    }
}

fn advanced(state: &RigidBodyState, d: &Derivative, dt: f64) -> RigidBodyState {
    RigidBodyState {
        position: state.position + d.d_pos * dt,
        velocity: state.velocity + d.d_vel * dt,
        attitude: state.attitude + d.d_att * dt,
        rates: state.rates + d.d_rates * dt,
    }
}

/// Classical fourth-order Runge–Kutta step of the rigid-body dynamics under
/// the given wrench function. Attitude angles are wrapped after the step.
pub fn step_rk4<F>(
    state: &RigidBodyState,
    wrench: &F,
    params: &VehicleParams,
    dt: f64,
) -> RigidBodyState
where
    F: Fn(&RigidBodyState) -> (Vector3<f64>, Vector3<f64>),
{
    let k1 = derivative(state, wrench, params);
    let k2 = derivative(&advanced(state, &k1, 0.5 * dt), wrench, params);
    let k3 = derivative(&advanced(state, &k2, 0.5 * dt), wrench, params);
    let k4 = derivative(&advanced(state, &k3, dt), wrench, params);
    let sixth = dt / 6.0;
    let mut next = RigidBodyState {
        position: state.position
            + (k1.d_pos + 2.0 * k2.d_pos + 2.0 * k3.d_pos + k4.d_pos) * sixth,
        velocity: state.velocity
            + (k1.d_vel + 2.0 * k2.d_vel + 2.0 * k3.d_vel + k4.d_vel) * sixth,
        attitude: state.attitude
            + (k1.d_att + 2.0 * k2.d_att + 2.0 * k3.d_att + k4.d_att) * sixth,
        rates: state.rates
            + (k1.d_rates + 2.0 * k2.d_rates + 2.0 * k3.d_rates + k4.d_rates) * sixth,
    };
    next.attitude.apply(|a| *a = wrap_angle(*a));
    next
}

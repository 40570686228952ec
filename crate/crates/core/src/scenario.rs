//! Scenario configuration, the transition-mission state machine, closed-loop
//! execution wiring controller → allocator → simulator, metrics, CSV export
//! and run comparison.
//!
//! A scenario document is TOML with unit-tagged field names (`_m`, `_s`,
//! `_deg`, …); unknown or mistagged fields are fatal parse errors. Loading
//! materializes every default so the canonical echo written next to the
//! outputs is a complete record of the experiment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::allocator::{wls_allocate_bounded, AllocatorConfig, DesiredPolicy};
use crate::control::{BaselineController, ControllerGains};
use crate::dynamics::{step_rk4, total_wrench, trim_hover, AeroModel};
use crate::effectors::{build_allocation_matrix, SurfaceDerivatives};
use crate::vehicle::{
    effectiveness_at, validate_fault_events, ActuatorVector, EffectivenessState, FaultEvent,
    RigidBodyState, VehicleParams, VirtualControl, NUM_ACTUATORS, NUM_ROTORS,
};
use crate::{Error, Result};

/// Actuator names accepted in scenario documents, in the canonical column
/// order.
pub const ACTUATOR_NAMES: [&str; NUM_ACTUATORS] = [
    "rotor_1a", "rotor_1b", "rotor_2a", "rotor_2b", "rotor_3a", "rotor_3b", "rotor_4a",
    "rotor_4b", "aileron", "elevator", "rudder",
];

/// Index of an actuator name, if valid.
pub fn actuator_index(name: &str) -> Option<usize> {
    ACTUATOR_NAMES.iter().position(|&n| n == name)
}

fn scenario_err(field: &str, message: impl Into<String>) -> Error {
    Error::Scenario {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration layer (serde; unit-tagged field names)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub mass_kg: f64,
    pub j_x_kgm2: f64,
    pub j_y_kgm2: f64,
    pub j_z_kgm2: f64,
    pub j_xz_kgm2: f64,
    pub wing_span_m: f64,
    pub wing_area_m2: f64,
    pub mean_chord_m: f64,
    pub cruise_speed_mps: f64,
    pub thrust_coeff_n_per_pct: f64,
    pub torque_coeff_nm_per_pct: f64,
    pub lever_f_m: f64,
    pub lever_1_m: f64,
    pub lever_2_m: f64,
    pub lever_3_m: f64,
    pub lever_4_m: f64,
    pub aileron_limit_deg: f64,
    pub elevator_limit_deg: f64,
    pub rudder_limit_deg: f64,
    pub throttle_max_pct: f64,
    pub gravity_mps2: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        VehicleConfig::from_params(&VehicleParams::default())
    }
}

impl VehicleConfig {
    pub fn from_params(p: &VehicleParams) -> Self {
        Self {
            mass_kg: p.mass,
            j_x_kgm2: p.inertia[(0, 0)],
            j_y_kgm2: p.inertia[(1, 1)],
            j_z_kgm2: p.inertia[(2, 2)],
            j_xz_kgm2: p.inertia[(0, 2)],
            wing_span_m: p.wing_span,
            wing_area_m2: p.wing_area,
            mean_chord_m: p.mean_chord,
            cruise_speed_mps: p.cruise_speed,
            thrust_coeff_n_per_pct: p.k_t,
            torque_coeff_nm_per_pct: p.k_m,
            lever_f_m: p.lever_f,
            lever_1_m: p.lever_1,
            lever_2_m: p.lever_2,
            lever_3_m: p.lever_3,
            lever_4_m: p.lever_4,
            aileron_limit_deg: p.aileron_limit.to_degrees(),
            elevator_limit_deg: p.elevator_limit.to_degrees(),
            rudder_limit_deg: p.rudder_limit.to_degrees(),
            throttle_max_pct: p.throttle_max,
            gravity_mps2: p.gravity,
        }
    }

    pub fn to_params(&self) -> Result<VehicleParams> {
        let params = VehicleParams {
            mass: self.mass_kg,
            inertia: Matrix3::new(
                self.j_x_kgm2, 0.0, self.j_xz_kgm2, //
                0.0, self.j_y_kgm2, 0.0, //
                self.j_xz_kgm2, 0.0, self.j_z_kgm2,
            ),
            wing_span: self.wing_span_m,
            wing_area: self.wing_area_m2,
            mean_chord: self.mean_chord_m,
            cruise_speed: self.cruise_speed_mps,
            k_t: self.thrust_coeff_n_per_pct,
            k_m: self.torque_coeff_nm_per_pct,
            lever_f: self.lever_f_m,
            lever_1: self.lever_1_m,
            lever_2: self.lever_2_m,
            lever_3: self.lever_3_m,
            lever_4: self.lever_4_m,
            aileron_limit: self.aileron_limit_deg.to_radians(),
            elevator_limit: self.elevator_limit_deg.to_radians(),
            rudder_limit: self.rudder_limit_deg.to_radians(),
            throttle_max: self.throttle_max_pct,
            gravity: self.gravity_mps2,
        };
        params
            .validate()
            .map_err(|e| scenario_err("vehicle", e.to_string()))?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeroConfig {
    pub c_l0: f64,
    pub c_l_alpha_per_rad: f64,
    pub alpha_stall_deg: f64,
    pub c_d0: f64,
    pub k_induced: f64,
    pub c_roll_aileron_per_rad: f64,
    pub c_pitch_elevator_per_rad: f64,
    pub c_yaw_rudder_per_rad: f64,
    pub air_density_kgpm3: f64,
}

impl Default for AeroConfig {
    fn default() -> Self {
        AeroConfig::from_model(&AeroModel::default())
    }
}

impl AeroConfig {
    pub fn from_model(a: &AeroModel) -> Self {
        Self {
            c_l0: a.c_l0,
            c_l_alpha_per_rad: a.c_l_alpha,
            alpha_stall_deg: a.alpha_stall.to_degrees(),
            c_d0: a.c_d0,
            k_induced: a.k_induced,
            c_roll_aileron_per_rad: a.surfaces.c_l_da,
            c_pitch_elevator_per_rad: a.surfaces.c_m_de,
            c_yaw_rudder_per_rad: a.surfaces.c_n_dr,
            air_density_kgpm3: a.surfaces.rho,
        }
    }

    pub fn to_model(&self) -> Result<AeroModel> {
        if !(self.air_density_kgpm3 > 0.0) {
            return Err(scenario_err(
                "aero.air_density_kgpm3",
                "air density must be positive",
            ));
        }
        if !(self.alpha_stall_deg > 0.0) {
            return Err(scenario_err(
                "aero.alpha_stall_deg",
                "stall angle must be positive",
            ));
        }
        Ok(AeroModel {
            c_l0: self.c_l0,
            c_l_alpha: self.c_l_alpha_per_rad,
            alpha_stall: self.alpha_stall_deg.to_radians(),
            c_d0: self.c_d0,
            k_induced: self.k_induced,
            surfaces: SurfaceDerivatives {
                c_l_da: self.c_roll_aileron_per_rad,
                c_m_de: self.c_pitch_elevator_per_rad,
                c_n_dr: self.c_yaw_rudder_per_rad,
                rho: self.air_density_kgpm3,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorTomlConfig {
    /// Diagonal of the actuator preference weight W1 (length 11).
    pub w1: Vec<f64>,
    /// Diagonal of the channel priority weight W2 (length 4).
    pub w2: Vec<f64>,
    pub gamma: f64,
    /// `"trim"` (rotors prefer the hover trim throttle, surfaces neutral),
    /// `"zero"`, or `"previous"`.
    pub preference: String,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for AllocatorTomlConfig {
    fn default() -> Self {
        let c = AllocatorConfig::default();
        Self {
            w1: c.w1.iter().copied().collect(),
            w2: c.w2.iter().copied().collect(),
            gamma: c.gamma,
            preference: "trim".into(),
            max_iterations: c.max_iterations,
            tolerance: c.tolerance,
        }
    }
}

impl AllocatorTomlConfig {
    pub fn to_config(&self, params: &VehicleParams) -> Result<AllocatorConfig> {
        if self.w1.len() != NUM_ACTUATORS {
            return Err(scenario_err(
                "allocator.w1",
                format!("expected {} entries, got {}", NUM_ACTUATORS, self.w1.len()),
            ));
        }
        if self.w2.len() != 4 {
            return Err(scenario_err(
                "allocator.w2",
                format!("expected 4 entries, got {}", self.w2.len()),
            ));
        }
        let u_desired = match self.preference.as_str() {
            "trim" => {
                let (trim_throttle, _) = trim_hover(params)?;
                let mut u_d = ActuatorVector::zeros();
                for i in 0..crate::vehicle::NUM_ROTORS {
                    u_d[i] = trim_throttle;
                }
                DesiredPolicy::Explicit(u_d)
            }
            "zero" => DesiredPolicy::Zero,
            "previous" => DesiredPolicy::Previous,
            other => {
                return Err(scenario_err(
                    "allocator.preference",
                    format!("unknown preference `{other}` (expected `trim`, `zero` or `previous`)"),
                ))
            }
        };
        let cfg = AllocatorConfig {
            w1: ActuatorVector::from_row_slice(&self.w1),
            w2: Vector4::from_row_slice(&self.w2),
            gamma: self.gamma,
            u_desired,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mission timeline and transition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    /// Altitude set point held throughout, m.
    pub hover_altitude_m: f64,
    /// Time the forward-thrust script starts, s.
    pub transition_start_s: f64,
    /// Airspeed at which transition completes and the rotors retire, m/s.
    pub critical_airspeed_mps: f64,
    /// Scripted forward-rotor cruise thrust, N.
    pub cruise_thrust_n: f64,
    /// Ramp time of the forward-thrust script, s.
    pub thrust_ramp_s: f64,
    /// Fixed-wing altitude-to-pitch outer gain, rad of pitch per m of error.
    pub fw_altitude_gain_rad_per_m: f64,
    /// Fixed-wing pitch-command magnitude limit, deg.
    pub fw_pitch_limit_deg: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            hover_altitude_m: 30.0,
            transition_start_s: 20.0,
            critical_airspeed_mps: 14.0,
            cruise_thrust_n: 16.0,
            thrust_ramp_s: 3.0,
            fw_altitude_gain_rad_per_m: 0.05,
            fw_pitch_limit_deg: 20.0,
        }
    }
}

/// One fault event as written in a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub time_s: f64,
    /// One of [`ACTUATOR_NAMES`].
    pub actuator: String,
    /// Remaining effectiveness in [0, 1]; 0 is a complete failure.
    pub effectiveness: f64,
}

/// The full scenario document. Every field has a default except the name,
/// so a minimal document is just a name plus the faults of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub control_tick_s: f64,
    #[serde(default = "default_dt")]
    pub physics_dt_s: f64,
    /// Whether the allocator is told the true effectiveness (the online
    /// reallocation arm) or assumes all actuators healthy (the baseline arm).
    #[serde(default = "default_true")]
    pub reallocation: bool,
    /// Reserved for stochastic extensions (turbulence); recorded for
    /// provenance, unused by the deterministic simulator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub aero: AeroConfig,
    #[serde(default)]
    pub allocator: AllocatorTomlConfig,
    /// Absent → the shipped mixed-sensitivity-tuned gains.
    #[serde(default)]
    pub gains: Option<ControllerGains>,
}

fn default_duration() -> f64 {
    60.0
}
fn default_tick() -> f64 {
    0.01
}
fn default_dt() -> f64 {
    0.002
}
fn default_true() -> bool {
    true
}

// ---------------------------------------------------------------------------
// Validated runtime scenario
// ---------------------------------------------------------------------------

/// A fully validated scenario with every default materialized.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: VehicleParams,
    pub aero: AeroModel,
    pub allocator: AllocatorConfig,
    pub gains: ControllerGains,
    pub mission: MissionConfig,
    pub faults: Vec<FaultEvent>,
    pub reallocation: bool,
    pub duration: f64,
    pub control_tick: f64,
    pub physics_dt: f64,
    pub seed: u64,
}

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<Scenario> {
    let config: ScenarioConfig =
        toml::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    Scenario::from_config(config)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Scenario> {
        if config.name.is_empty() {
            return Err(scenario_err("name", "scenario name must not be empty"));
        }
        if !(config.duration_s > 0.0) {
            return Err(scenario_err("duration_s", "duration must be positive"));
        }
        if !(config.control_tick_s > 0.0) || !(config.physics_dt_s > 0.0) {
            return Err(scenario_err(
                "control_tick_s",
                "control tick and physics step must be positive",
            ));
        }
        let ratio = config.control_tick_s / config.physics_dt_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(scenario_err(
                "physics_dt_s",
                format!(
                    "control tick {} s must be an integer multiple of the physics step {} s",
                    config.control_tick_s, config.physics_dt_s
                ),
            ));
        }
        let m = &config.mission;
        if !(m.hover_altitude_m > 0.0) {
            return Err(scenario_err(
                "mission.hover_altitude_m",
                "hover altitude must be positive",
            ));
        }
        if m.transition_start_s < 0.0 {
            return Err(scenario_err(
                "mission.transition_start_s",
                "transition start must be non-negative",
            ));
        }
        if !(m.critical_airspeed_mps > 0.0) {
            return Err(scenario_err(
                "mission.critical_airspeed_mps",
                "critical airspeed must be positive",
            ));
        }
        if m.cruise_thrust_n < 0.0 || !(m.thrust_ramp_s > 0.0) {
            return Err(scenario_err(
                "mission.cruise_thrust_n",
                "thrust script needs non-negative thrust and a positive ramp time",
            ));
        }
        let mut faults = Vec::with_capacity(config.faults.len());
        for (i, f) in config.faults.iter().enumerate() {
            let field = |suffix: &str| format!("faults[{i}].{suffix}");
            let actuator = actuator_index(&f.actuator).ok_or_else(|| {
                scenario_err(
                    &field("actuator"),
                    format!("unknown actuator `{}`", f.actuator),
                )
            })?;
            if !(0.0..=config.duration_s).contains(&f.time_s) {
                return Err(scenario_err(
                    &field("time_s"),
                    format!(
                        "fault time {} s outside the run duration {} s",
                        f.time_s, config.duration_s
                    ),
                ));
            }
            if !(0.0..=1.0).contains(&f.effectiveness) {
                return Err(scenario_err(
                    &field("effectiveness"),
                    "effectiveness must be in [0, 1]",
                ));
            }
            faults.push(FaultEvent {
                time: f.time_s,
                actuator,
                new_effectiveness: f.effectiveness,
            });
        }
        validate_fault_events(&faults)?;
        let params = config.vehicle.to_params()?;
        Ok(Scenario {
            allocator: config.allocator.to_config(&params)?,
            params,
            aero: config.aero.to_model()?,
            gains: config
                .gains
                .clone()
                .unwrap_or_else(ControllerGains::tuned_default),
            mission: config.mission,
            faults,
            reallocation: config.reallocation,
            duration: config.duration_s,
            control_tick: config.control_tick_s,
            physics_dt: config.physics_dt_s,
            seed: config.seed,
            name: config.name,
        })
    }

    /// The scenario re-expressed as a complete document with all defaults
    /// materialized.
    pub fn to_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: self.name.clone(),
            duration_s: self.duration,
            control_tick_s: self.control_tick,
            physics_dt_s: self.physics_dt,
            reallocation: self.reallocation,
            seed: self.seed,
            mission: self.mission.clone(),
            faults: self
                .faults
                .iter()
                .map(|f| FaultConfig {
                    time_s: f.time,
                    actuator: ACTUATOR_NAMES[f.actuator].to_string(),
                    effectiveness: f.new_effectiveness,
                })
                .collect(),
            vehicle: VehicleConfig::from_params(&self.params),
            aero: AeroConfig::from_model(&self.aero),
            allocator: AllocatorTomlConfig {
                w1: self.allocator.w1.iter().copied().collect(),
                w2: self.allocator.w2.iter().copied().collect(),
                gamma: self.allocator.gamma,
                preference: match self.allocator.u_desired {
                    DesiredPolicy::Previous => "previous".into(),
                    DesiredPolicy::Explicit(_) => "trim".into(),
                    DesiredPolicy::Zero => "zero".into(),
                },
                max_iterations: self.allocator.max_iterations,
                tolerance: self.allocator.tolerance,
            },
            gains: Some(self.gains.clone()),
        }
    }

    /// Canonical echo of the scenario for provenance.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(&self.to_config()).expect("scenario config serializes")
    }
}

// ---------------------------------------------------------------------------
// Mission state machine
// ---------------------------------------------------------------------------

/// Flight mode of the transition mission; the index never decreases within
/// a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MissionMode {
    Multicopter = 0,
    Transition = 1,
    FixedWing = 2,
}

impl MissionMode {
    pub fn as_index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(MissionMode::Multicopter),
            1 => Some(MissionMode::Transition),
            2 => Some(MissionMode::FixedWing),
            _ => None,
        }
    }
}

/// One-way mode progression: multicopter until the transition start time,
/// transition until the airspeed reaches the critical value, fixed-wing
/// thereafter.
pub fn mission_mode(
    t: f64,
    airspeed: f64,
    current: MissionMode,
    mission: &MissionConfig,
) -> MissionMode {
    let mut mode = current;
    if mode == MissionMode::Multicopter && t >= mission.transition_start_s {
        mode = MissionMode::Transition;
    }
    if mode == MissionMode::Transition && airspeed >= mission.critical_airspeed_mps {
        mode = MissionMode::FixedWing;
    }
    mode
}

/// Scripted forward-rotor thrust: zero before the transition start, then a
/// linear ramp to the cruise value.
pub fn scripted_thrust(mission: &MissionConfig, t: f64) -> f64 {
    if t < mission.transition_start_s {
        0.0
    } else {
        let ramp = ((t - mission.transition_start_s) / mission.thrust_ramp_s).min(1.0);
        mission.cruise_thrust_n * ramp
    }
}

/// Fixed-wing pitch command: a lift-balance feedforward (the angle of attack
/// at which wing lift carries the weight at the current airspeed) plus a
/// small proportional altitude correction.
pub fn fixed_wing_pitch_command(
    state: &RigidBodyState,
    mission: &MissionConfig,
    params: &VehicleParams,
    aero: &AeroModel,
) -> f64 {
    let v = state.airspeed().max(mission.critical_airspeed_mps);
    let q = 0.5 * aero.surfaces.rho * v * v;
    let c_l_req = params.mass * params.gravity / (q * params.wing_area);
    let alpha_ff = ((c_l_req - aero.c_l0) / aero.c_l_alpha).clamp(-aero.alpha_stall, aero.alpha_stall);
    let correction = mission.fw_altitude_gain_rad_per_m * (mission.hover_altitude_m - state.altitude());
    let limit = mission.fw_pitch_limit_deg.to_radians();
    (alpha_ff + correction).clamp(-limit, limit)
}

/// Pitch command during the transition phase: the fixed-wing lift-balance
/// command faded in quadratically with airspeed, so the wing picks up the
/// load progressively and the command is continuous at the mode switch.
pub fn transition_pitch_command(
    state: &RigidBodyState,
    mission: &MissionConfig,
    params: &VehicleParams,
    aero: &AeroModel,
) -> f64 {
    let frac = (state.airspeed() / mission.critical_airspeed_mps).clamp(0.0, 1.0);
    frac * frac * fixed_wing_pitch_command(state, mission, params, aero)
}

/// The pitch command in effect for a given mode; shared by the run loop and
/// the metrics so deviations are measured against the command actually flown.
pub fn pitch_command(
    mode: MissionMode,
    state: &RigidBodyState,
    mission: &MissionConfig,
    params: &VehicleParams,
    aero: &AeroModel,
) -> f64 {
    match mode {
        MissionMode::Multicopter => 0.0,
        MissionMode::Transition => transition_pitch_command(state, mission, params, aero),
        MissionMode::FixedWing => fixed_wing_pitch_command(state, mission, params, aero),
    }
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

/// One control-tick record of the closed-loop run.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub airspeed: f64,
    pub mode: MissionMode,
    /// Virtual control demanded by the baseline law.
    pub v: VirtualControl,
    /// Allocated actuator command.
    pub u: ActuatorVector,
    /// Achieved wrench B·W·u under the true effectiveness.
    pub wrench: VirtualControl,
    /// True effectiveness diagonal at this tick.
    pub w: ActuatorVector,
    /// Active-set iterations of the allocation solve.
    pub iterations: usize,
}

/// Fixed-rate closed-loop trace; possibly truncated by divergence.
#[derive(Debug, Clone)]
pub struct Trace {
    pub tick: f64,
    pub rows: Vec<TraceRow>,
    /// True if the run was truncated because the state diverged.
    pub diverged: bool,
}

/// Runs a scenario: per control tick the baseline law produces the virtual
/// control, the allocator maps it to actuators using its *believed*
/// effectiveness, and the plant integrates with the *true* effectiveness.
pub fn run_scenario(s: &Scenario) -> Result<Trace> {
    let (trim_throttle, _) = trim_hover(&s.params)?;
    let mut controller = BaselineController::new(&s.gains, s.params.mass * s.params.gravity);
    let mut state = RigidBodyState::at_altitude(s.mission.hover_altitude_m);
    let mut u = ActuatorVector::zeros();
    for i in 0..NUM_ROTORS {
        u[i] = trim_throttle;
    }
    let mut mode = MissionMode::Multicopter;
    let heading_ref = state.attitude.z;

    let substeps = (s.control_tick / s.physics_dt).round() as usize;
    let ticks = (s.duration / s.control_tick).round() as usize;
    let nominal_lb = s.params.lower_bounds();
    let nominal_ub = s.params.upper_bounds();
    // Fixed-wing mode retires the vertical rotors by pinning their bounds.
    let mut fw_lb = nominal_lb;
    let mut fw_ub = nominal_ub;
    for i in 0..NUM_ROTORS {
        fw_lb[i] = 0.0;
        fw_ub[i] = 0.0;
    }

    let mut rows = Vec::with_capacity(ticks + 1);
    let mut theta_cmd_prev: Option<f64> = None;
    let mut diverged = false;
    for k in 0..=ticks {
        let t = k as f64 * s.control_tick;
        if !state.is_finite() || state_norm(&state) > 1e6 {
            diverged = true;
            break;
        }
        let airspeed = state.airspeed();
        mode = mission_mode(t, airspeed, mode, &s.mission);

        // Baseline law. Attitude commands: wings level, hold the initial
        // heading; pitch level in rotor-borne flight, lift-balance command
        // in fixed-wing flight where altitude is held by pitch instead of
        // rotor thrust.
        let dt = s.control_tick;
        let theta_cmd = pitch_command(mode, &state, &s.mission, &s.params, &s.aero);
        let att_cmd = Vector3::new(0.0, theta_cmd, heading_ref);
        // Pitch-rate feedforward from the command's own ramp rate, so the
        // pitch-over schedule tracks without a steady proportional lag.
        let theta_ff = match theta_cmd_prev {
            Some(prev) => (theta_cmd - prev) / dt,
            None => 0.0,
        };
        theta_cmd_prev = Some(theta_cmd);
        let rate_ff = Vector3::new(0.0, theta_ff, 0.0);
        let v_cmd = if mode == MissionMode::FixedWing {
            let moments = controller.attitude_step_with_ff(&att_cmd, &rate_ff, &state, dt);
            VirtualControl::new(0.0, moments.x, moments.y, moments.z)
        } else {
            let f_az = controller.altitude_step(s.mission.hover_altitude_m, &state, dt);
            let moments = controller.attitude_step_with_ff(&att_cmd, &rate_ff, &state, dt);
            VirtualControl::new(f_az, moments.x, moments.y, moments.z)
        };

        let w_true = effectiveness_at(&s.faults, t);
        let w_believed = if s.reallocation {
            w_true.clone()
        } else {
            EffectivenessState::healthy()
        };
        let alloc = build_allocation_matrix(&s.params, &s.aero.surfaces, airspeed)?;
        let (lb, ub) = if mode == MissionMode::FixedWing {
            (&fw_lb, &fw_ub)
        } else {
            (&nominal_lb, &nominal_ub)
        };
        let result =
            wls_allocate_bounded(&alloc, &w_believed, &v_cmd, lb, ub, &s.allocator, Some(&u))?;
        u = result.u;

        rows.push(TraceRow {
            t,
            state: state.clone(),
            airspeed,
            mode,
            v: v_cmd,
            u,
            wrench: alloc.b * u.component_mul(&w_true.w),
            w: w_true.w,
            iterations: result.iterations,
        });

        if k == ticks {
            break;
        }
        // Physics sub-steps: zero-order-held actuators, true effectiveness.
        for j in 0..substeps {
            let t_sub = t + j as f64 * s.physics_dt;
            let w_sub = effectiveness_at(&s.faults, t_sub);
            let thrust = scripted_thrust(&s.mission, t_sub);
            let wrench_fn = |st: &RigidBodyState| {
                total_wrench(st, &u, &w_sub, &s.params, &s.aero, thrust)
            };
            state = step_rk4(&state, &wrench_fn, &s.params, s.physics_dt);
        }
    }
    Ok(Trace {
        tick: s.control_tick,
        rows,
        diverged,
    })
}

fn state_norm(state: &RigidBodyState) -> f64 {
    (state.position.norm_squared()
        + state.velocity.norm_squared()
        + state.rates.norm_squared())
    .sqrt()
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Deviation and activity metrics over one window of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    /// Max |H − H_cmd|, m.
    pub max_altitude_dev_m: f64,
    /// Max |φ|, deg.
    pub max_roll_deg: f64,
    /// Max |θ − θ_cmd|, deg.
    pub max_pitch_dev_deg: f64,
    /// Max |ψ − ψ₀|, deg.
    pub max_yaw_dev_deg: f64,
    /// Total variation of each virtual-control channel.
    pub virtual_tv: [f64; 4],
    /// RMS of ‖achieved wrench − demanded virtual control‖.
    pub residual_rms: f64,
    /// Fraction of ticks each actuator spends at a nominal bound.
    pub saturation_fraction: [f64; NUM_ACTUATORS],
    /// RMS deflection per actuator over the window.
    pub actuator_rms: [f64; NUM_ACTUATORS],
}

/// Metrics of one run: whole-run window, post-fault window (if the scenario
/// has faults), transition duration and the truncation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub whole: WindowMetrics,
    pub post_fault: Option<WindowMetrics>,
    /// Time from transition start to fixed-wing entry; `None` if the run
    /// never completed the transition.
    pub transition_duration_s: Option<f64>,
    /// True if the trace was truncated by divergence.
    pub partial: bool,
}

fn window_metrics(rows: &[TraceRow], s: &Scenario) -> WindowMetrics {
    let lb = s.params.lower_bounds();
    let ub = s.params.upper_bounds();
    let mut m = WindowMetrics {
        max_altitude_dev_m: 0.0,
        max_roll_deg: 0.0,
        max_pitch_dev_deg: 0.0,
        max_yaw_dev_deg: 0.0,
        virtual_tv: [0.0; 4],
        residual_rms: 0.0,
        saturation_fraction: [0.0; NUM_ACTUATORS],
        actuator_rms: [0.0; NUM_ACTUATORS],
    };
    if rows.is_empty() {
        return m;
    }
    let sat_tol = 1e-9;
    let mut residual_sq = 0.0;
    for (k, row) in rows.iter().enumerate() {
        let theta_cmd = pitch_command(row.mode, &row.state, &s.mission, &s.params, &s.aero);
        m.max_altitude_dev_m = m
            .max_altitude_dev_m
            .max((row.state.altitude() - s.mission.hover_altitude_m).abs());
        m.max_roll_deg = m.max_roll_deg.max(row.state.attitude.x.abs().to_degrees());
        m.max_pitch_dev_deg = m
            .max_pitch_dev_deg
            .max((row.state.attitude.y - theta_cmd).abs().to_degrees());
        m.max_yaw_dev_deg = m.max_yaw_dev_deg.max(row.state.attitude.z.abs().to_degrees());
        residual_sq += (row.wrench - row.v).norm_squared();
        for i in 0..NUM_ACTUATORS {
            if row.u[i] <= lb[i] + sat_tol || row.u[i] >= ub[i] - sat_tol {
                m.saturation_fraction[i] += 1.0;
            }
            m.actuator_rms[i] += row.u[i] * row.u[i];
        }
        if k + 1 < rows.len() {
            let dv = rows[k + 1].v - row.v;
            for c in 0..4 {
                m.virtual_tv[c] += dv[c].abs();
            }
        }
    }
    let n = rows.len() as f64;
    m.residual_rms = (residual_sq / n).sqrt();
    for i in 0..NUM_ACTUATORS {
        m.saturation_fraction[i] /= n;
        m.actuator_rms[i] = (m.actuator_rms[i] / n).sqrt();
    }
    m
}

/// Computes the run metrics on the whole-run and fault-to-end windows.
pub fn compute_metrics(trace: &Trace, s: &Scenario) -> Metrics {
    let whole = window_metrics(&trace.rows, s);
    let post_fault = s.faults.first().map(|f| {
        let start = trace.rows.partition_point(|r| r.t < f.time);
        window_metrics(&trace.rows[start..], s)
    });
    let transition_duration_s = trace
        .rows
        .iter()
        .find(|r| r.mode == MissionMode::FixedWing)
        .map(|r| r.t - s.mission.transition_start_s);
    Metrics {
        whole,
        post_fault,
        transition_duration_s,
        partial: trace.diverged,
    }
}

// ---------------------------------------------------------------------------
// Run comparison
// ---------------------------------------------------------------------------

/// A labeled run handed to [`compare_runs`].
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub label: String,
    pub tick: f64,
    pub metrics: Metrics,
}

/// Side-by-side comparison of runs sharing a scenario skeleton.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<LabeledRun>,
    /// Attitude-deviation ratios [roll, pitch, yaw, altitude] of each run
    /// relative to the first (reference) run.
    pub deviation_ratios: Vec<[f64; 4]>,
}

/// Builds the comparison table; rejects mismatched tick rates.
pub fn compare_runs(runs: Vec<LabeledRun>) -> Result<Comparison> {
    let Some(first) = runs.first() else {
        return Err(Error::TraceMismatch("no runs to compare".into()));
    };
    for r in &runs[1..] {
        if (r.tick - first.tick).abs() > 1e-12 {
            return Err(Error::TraceMismatch(format!(
                "tick rate of `{}` ({} s) differs from `{}` ({} s)",
                r.label, r.tick, first.label, first.tick
            )));
        }
    }
    let reference = &first.metrics.whole;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::NAN };
    let deviation_ratios = runs
        .iter()
        .map(|r| {
            let w = &r.metrics.whole;
            [
                ratio(w.max_roll_deg, reference.max_roll_deg),
                ratio(w.max_pitch_dev_deg, reference.max_pitch_dev_deg),
                ratio(w.max_yaw_dev_deg, reference.max_yaw_dev_deg),
                ratio(w.max_altitude_dev_m, reference.max_altitude_dev_m),
            ]
        })
        .collect();
    Ok(Comparison {
        runs,
        deviation_ratios,
    })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "run", "alt_dev_m", "roll_deg", "pitch_deg", "yaw_deg", "resid_rms", "trans_s"
        );
        for r in &self.runs {
            let w = &r.metrics.whole;
            let trans = r
                .metrics
                .transition_duration_s
                .map(|d| format!("{d:.2}"))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "{:<24} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>10}",
                r.label,
                w.max_altitude_dev_m,
                w.max_roll_deg,
                w.max_pitch_dev_deg,
                w.max_yaw_dev_deg,
                w.residual_rms,
                trans
            );
        }
        let _ = writeln!(
            out,
            "\ndeviation ratios vs `{}`:",
            self.runs.first().map(|r| r.label.as_str()).unwrap_or("")
        );
        let _ = writeln!(
            out,
            "{:<24} {:>12} {:>12} {:>12} {:>12}",
            "run", "roll", "pitch", "yaw", "altitude"
        );
        for (r, ratios) in self.runs.iter().zip(&self.deviation_ratios) {
            let _ = writeln!(
                out,
                "{:<24} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                r.label, ratios[0], ratios[1], ratios[2], ratios[3]
            );
        }
        out
    }

    /// CSV form of the comparison table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run,max_altitude_dev_m,max_roll_deg,max_pitch_dev_deg,max_yaw_dev_deg,\
             residual_rms,transition_duration_s,ratio_roll,ratio_pitch,ratio_yaw,ratio_altitude\n",
        );
        for (r, ratios) in self.runs.iter().zip(&self.deviation_ratios) {
            let w = &r.metrics.whole;
            let trans = r
                .metrics
                .transition_duration_s
                .map(|d| format!("{d:.16e}"))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.label,
                w.max_altitude_dev_m,
                w.max_roll_deg,
                w.max_pitch_dev_deg,
                w.max_yaw_dev_deg,
                w.residual_rms,
                trans,
                ratios[0],
                ratios[1],
                ratios[2],
                ratios[3],
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// CSV export / import
// ---------------------------------------------------------------------------

/// 3-2-1 Euler angles → quaternion (w, x, y, z).
pub fn euler_to_quaternion(att: &Vector3<f64>) -> [f64; 4] {
    let (hr, hp, hy) = (att.x * 0.5, att.y * 0.5, att.z * 0.5);
    let (sr, cr) = hr.sin_cos();
    let (sp, cp) = hp.sin_cos();
    let (sy, cy) = hy.sin_cos();
    [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]
}

/// Quaternion (w, x, y, z) → 3-2-1 Euler angles.
pub fn quaternion_to_euler(q: &[f64; 4]) -> Vector3<f64> {
    let [w, x, y, z] = *q;
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    Vector3::new(roll, pitch, yaw)
}

/// Column names of the trace CSV, with units, in order.
pub fn csv_header() -> String {
    let mut cols: Vec<String> = vec![
        "t_s", "x_m", "y_m", "z_m", "u_mps", "v_mps", "w_mps", "qw", "qx", "qy", "qz",
        "p_radps", "q_radps", "r_radps", "airspeed_mps", "mode", "v_faz_n", "v_mx_nm",
        "v_my_nm", "v_mz_nm",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for name in ACTUATOR_NAMES {
        let unit = if name.starts_with("rotor") { "pct" } else { "rad" };
        cols.push(format!("u_{name}_{unit}"));
    }
    for c in ["faz_n", "mx_nm", "my_nm", "mz_nm"] {
        cols.push(format!("ach_{c}"));
    }
    for name in ACTUATOR_NAMES {
        cols.push(format!("w_{name}"));
    }
    cols.push("alloc_iters".into());
    cols.join(",")
}

/// Serializes a trace to CSV with 17-significant-digit floats.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut out = csv_header();
    out.push('\n');
    for row in &trace.rows {
        let q = euler_to_quaternion(&row.state.attitude);
        let mut fields: Vec<String> = Vec::with_capacity(47);
        let push = |fields: &mut Vec<String>, x: f64| fields.push(format!("{x:.16e}"));
        push(&mut fields, row.t);
        for v in [&row.state.position, &row.state.velocity] {
            for c in 0..3 {
                push(&mut fields, v[c]);
            }
        }
        for x in q {
            push(&mut fields, x);
        }
        for c in 0..3 {
            push(&mut fields, row.state.rates[c]);
        }
        push(&mut fields, row.airspeed);
        fields.push(format!("{}", row.mode.as_index()));
        for c in 0..4 {
            push(&mut fields, row.v[c]);
        }
        for i in 0..NUM_ACTUATORS {
            push(&mut fields, row.u[i]);
        }
        for c in 0..4 {
            push(&mut fields, row.wrench[c]);
        }
        for i in 0..NUM_ACTUATORS {
            push(&mut fields, row.w[i]);
        }
        fields.push(format!("{}", row.iterations));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes a trace CSV to `path`.
pub fn export_csv(trace: &Trace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a trace CSV produced by [`export_csv`] back into a [`Trace`].
///
/// The attitude is reconstructed from the quaternion columns; the trace is
/// marked non-diverged (truncation is not recorded in the CSV itself).
pub fn import_csv(text: &str) -> Result<Trace> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::TraceMismatch("empty trace file".into()))?;
    if header != csv_header() {
        return Err(Error::TraceMismatch(
            "trace header does not match the expected column schema".into(),
        ));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = 47;
        if fields.len() != expected {
            return Err(Error::TraceMismatch(format!(
                "row {}: expected {expected} fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| {
                Error::TraceMismatch(format!("row {}: bad float `{}`", lineno + 2, fields[i]))
            })
        };
        let q = [f(7)?, f(8)?, f(9)?, f(10)?];
        let mode_idx: usize = fields[15].parse().map_err(|_| {
            Error::TraceMismatch(format!("row {}: bad mode `{}`", lineno + 2, fields[15]))
        })?;
        let mode = MissionMode::from_index(mode_idx).ok_or_else(|| {
            Error::TraceMismatch(format!("row {}: mode index {mode_idx} out of range", lineno + 2))
        })?;
        let mut v = VirtualControl::zeros();
        let mut u = ActuatorVector::zeros();
        let mut wrench = VirtualControl::zeros();
        let mut w = ActuatorVector::zeros();
        for c in 0..4 {
            v[c] = f(16 + c)?;
            wrench[c] = f(31 + c)?;
        }
        for i in 0..NUM_ACTUATORS {
            u[i] = f(20 + i)?;
            w[i] = f(35 + i)?;
        }
        let iterations: usize = fields[46].parse().map_err(|_| {
            Error::TraceMismatch(format!(
                "row {}: bad iteration count `{}`",
                lineno + 2,
                fields[46]
            ))
        })?;
        rows.push(TraceRow {
            t: f(0)?,
            state: RigidBodyState {
                position: Vector3::new(f(1)?, f(2)?, f(3)?),
                velocity: Vector3::new(f(4)?, f(5)?, f(6)?),
                attitude: quaternion_to_euler(&q),
                rates: Vector3::new(f(11)?, f(12)?, f(13)?),
            },
            airspeed: f(14)?,
            mode,
            v,
            u,
            wrench,
            w,
            iterations,
        });
    }
    let tick = if rows.len() >= 2 {
        rows[1].t - rows[0].t
    } else {
        0.0
    };
    for pair in rows.windows(2) {
        if pair[1].t <= pair[0].t {
            return Err(Error::TraceMismatch(
                "trace timestamps must be strictly increasing".into(),
            ));
        }
    }
    Ok(Trace {
        tick,
        rows,
        diverged: false,
    })
}

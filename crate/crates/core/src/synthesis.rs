//! Fixed-structure mixed-sensitivity tuning of the P-PID gains and
//! posterior robust-stability verification over the actuator-loss box.
//!
//! Each channel of the design model is a double integrator `x¨ = k_g·u`
//! closed by the P-PID cascade. The tuner minimizes
//! `max(‖Ws·S‖∞, ‖Wr·R‖∞)` per loop with a derivative-free simplex search;
//! a cost below one means every frequency-domain design requirement is met.
//! Robust stability over the loss box Γ ∈ [0, 0.5]⁴ is verified by an
//! exhaustive eigenvalue sweep of the closed-loop state matrices, the
//! verdict-level substitute for a structured-singular-value analysis.

use nalgebra::{Complex, DMatrix, Matrix4, Vector4};

use crate::control::{wr_response, ws_response, ControllerGains, LoopGains, PidGains, WeightingParams};
use crate::vehicle::VehicleParams;
use crate::{Error, Result};

/// Cost assigned to destabilizing gain sets, plus the instability measure.
const INSTABILITY_PENALTY: f64 = 1e3;

/// One tuning target: a channel plant, the controller structure constants
/// and the weighting functions, evaluated on a fixed frequency grid.
#[derive(Debug, Clone)]
pub struct LoopDefinition {
    pub name: String,
    /// Double-integrator plant gain k_g (1/m or 1/J).
    pub plant_gain: f64,
    pub weighting: WeightingParams,
    /// Log-spaced evaluation grid, rad/s.
    pub grid: Vec<f64>,
    /// Derivative filter corner carried into the tuned gains, rad/s.
    pub n_filter: f64,
    /// Rate-command limit carried into the tuned gains.
    pub rate_limit: f64,
    /// Virtual-control output limit carried into the tuned gains.
    pub output_limit: f64,
    /// Upper bound on the inner rate-loop crossover k_g·(kp + kd·N), rad/s.
    /// Keeps the tuned gains implementable at the 100 Hz control rate (the
    /// zero-order-hold phase lag at crossover stays below ~17°).
    pub max_rate_crossover: f64,
}

/// Log-spaced grid over [lo, hi] rad/s.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.log10(), hi.log10());
    (0..points)
        .map(|k| 10f64.powf(llo + (lhi - llo) * k as f64 / (points - 1) as f64))
        .collect()
}

impl LoopDefinition {
    /// The four standard loops: altitude at 0.8 rad/s bandwidth, attitude
    /// channels at 4.3 rad/s, all sharing M = 1.096, A = 0.001 and
    /// ω_a = 5 rad/s. The control-weight ratio r_max/u_max uses the full
    /// hover-attainable virtual-control authority per channel (rotor
    /// columns at V = 0) for u_max and a typical regulation-deviation
    /// magnitude for r_max.
    pub fn standard_set(params: &VehicleParams) -> [LoopDefinition; 4] {
        let grid = log_grid(1e-3, 1e3, 400);
        let common = |omega_b: f64, r_max: f64, u_max: f64| WeightingParams {
            m_peak: 1.096,
            a_err: 0.001,
            omega_b,
            r_max,
            u_max,
            omega_a: 5.0,
        };
        [
            LoopDefinition {
                name: "altitude".into(),
                plant_gain: 1.0 / params.mass,
                weighting: common(0.8, 2.0, 131.2),
                grid: grid.clone(),
                n_filter: 50.0,
                rate_limit: 5.0,
                output_limit: 60.0,
                max_rate_crossover: 60.0,
            },
            LoopDefinition {
                name: "roll".into(),
                plant_gain: 1.0 / params.inertia[(0, 0)],
                weighting: common(4.3, 0.1, 39.36),
                grid: grid.clone(),
                n_filter: 50.0,
                rate_limit: 2.0,
                output_limit: 35.0,
                max_rate_crossover: 60.0,
            },
            LoopDefinition {
                name: "pitch".into(),
                plant_gain: 1.0 / params.inertia[(1, 1)],
                weighting: common(4.3, 0.1, 44.28),
                grid: grid.clone(),
                n_filter: 50.0,
                rate_limit: 2.0,
                output_limit: 40.0,
                max_rate_crossover: 60.0,
            },
            LoopDefinition {
                name: "yaw".into(),
                // Yaw authority from the rotor reaction torques is tiny
                // (4·k_M·100 ≈ 0.76 N·m), so the admissible reference step
                // for the control weight is correspondingly small.
                plant_gain: 1.0 / params.inertia[(2, 2)],
                weighting: common(4.3, 0.002, 0.756),
                grid,
                n_filter: 50.0,
                rate_limit: 2.0,
                output_limit: 0.7,
                max_rate_crossover: 60.0,
            },
        ]
    }
}

/// Sensitivity and control-sensitivity of the cascade-closed channel at
/// s = jω, by complex block algebra.
///
/// Imaginary-axis poles on a grid point are dodged by evaluating at
/// ω·(1 + 1e−9).
pub fn closed_loop_response(
    loop_def: &LoopDefinition,
    gains: &LoopGains,
    omega: f64,
) -> (Complex<f64>, Complex<f64>) {
    let (s, r, _) = channel_tf(loop_def.plant_gain, gains, loop_def.n_filter, omega);
    (s, r)
}

/// (S, R, T) of the generic channel: plant k_g/s², outer P, inner PID.
fn channel_tf(k_g: f64, gains: &LoopGains, n: f64, omega: f64) -> (Complex<f64>, Complex<f64>, Complex<f64>) {
    // DC limits with integral action: perfect tracking, zero control.
    let omega = if omega <= 0.0 { 1e-9 } else { omega };
    let eval = |w: f64| {
        let s = Complex::new(0.0, w);
        let g = &gains.inner;
        let ci = g.kp + g.ki / s + g.kd * n * s / (s + n);
        let den = s * s + k_g * ci * (gains.outer_p + s);
        (s, ci, den)
    };
    let (mut s, mut ci, mut den) = eval(omega);
    let scale = omega * omega + k_g * ci.norm() * (gains.outer_p + omega);
    if den.norm() < 1e-12 * scale.max(1.0) {
        // pole sits on this grid point; evaluate at a perturbed frequency
        let (s2, ci2, den2) = eval(omega * (1.0 + 1e-9));
        s = s2;
        ci = ci2;
        den = den2;
    }
    let t = k_g * ci * gains.outer_p / den;
    let sens = (s * s + k_g * ci * s) / den;
    let r = s * s * t / k_g;
    (sens, r, t)
}

/// Peak magnitude over the grid, refined by three levels of local grid
/// subdivision around the maximizer.
pub fn hinf_norm_grid<F: Fn(f64) -> f64>(magnitude: F, grid: &[f64]) -> f64 {
    assert!(grid.len() >= 2, "grid must have at least 2 points");
    let mut best_idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &w) in grid.iter().enumerate() {
        let m = magnitude(w);
        if m > best {
            best = m;
            best_idx = i;
        }
    }
    let mut lo = grid[best_idx.saturating_sub(1)];
    let mut hi = grid[(best_idx + 1).min(grid.len() - 1)];
    for _ in 0..3 {
        let mut local_best = best;
        let mut local_w = 0.5 * (lo + hi);
        let n = 20;
        for k in 0..=n {
            let w = lo + (hi - lo) * k as f64 / n as f64;
            let m = magnitude(w);
            if m > local_best {
                local_best = m;
                local_w = w;
            }
        }
        best = local_best;
        let span = (hi - lo) / n as f64;
        lo = (local_w - span).max(lo);
        hi = (local_w + span).min(hi);
    }
    best
}

/// Coefficients (s⁴…s⁰) of the closed-loop characteristic polynomial of one
/// channel.
fn char_poly(k_g: f64, gains: &LoopGains, n: f64) -> [f64; 5] {
    let g = &gains.inner;
    let kp_hf = g.kp + g.kd * n;
    [
        1.0,
        n + k_g * kp_hf,
        k_g * ((g.kp * n + g.ki) + gains.outer_p * kp_hf),
        k_g * (g.ki * n + gains.outer_p * (g.kp * n + g.ki)),
        k_g * gains.outer_p * g.ki * n,
    ]
}

/// Max real part of the roots of a monic-normalizable polynomial, via the
/// companion matrix.
fn max_root_real_part(coeffs: &[f64]) -> f64 {
    let lead = coeffs[0];
    let n = coeffs.len() - 1;
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        companion[(0, i)] = -coeffs[i + 1] / lead;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Mixed-sensitivity cost `max(‖Ws·S‖∞, ‖Wr·R‖∞)`; below one means all
/// design requirements are met. Destabilizing gains are penalized by
/// `1e3 + max Re(pole)` so the tuner is steered back to the stable set.
pub fn mixed_sensitivity_cost(gains: &LoopGains, loop_def: &LoopDefinition) -> f64 {
    if !gains_finite(gains) {
        return INSTABILITY_PENALTY * 10.0;
    }
    let max_re = max_root_real_part(&char_poly(loop_def.plant_gain, gains, loop_def.n_filter));
    if max_re >= -1e-9 {
        return INSTABILITY_PENALTY + max_re.max(0.0);
    }
    let ws_s = hinf_norm_grid(
        |w| {
            let (s, _) = closed_loop_response(loop_def, gains, w);
            (ws_response(&loop_def.weighting, w) * s).norm()
        },
        &loop_def.grid,
    );
    let wr_r = hinf_norm_grid(
        |w| {
            let (_, r) = closed_loop_response(loop_def, gains, w);
            (wr_response(&loop_def.weighting, w) * r).norm()
        },
        &loop_def.grid,
    );
    ws_s.max(wr_r)
}

fn gains_finite(g: &LoopGains) -> bool {
    [g.outer_p, g.inner.kp, g.inner.ki, g.inner.kd]
        .iter()
        .all(|x| x.is_finite() && *x > 0.0)
}

fn loop_gains_from_vec(x: &Vector4<f64>, loop_def: &LoopDefinition) -> LoopGains {
    // decision variables live in log space, so positivity is structural
    LoopGains {
        outer_p: x[0].exp(),
        inner: PidGains {
            kp: x[1].exp(),
            ki: x[2].exp(),
            kd: x[3].exp(),
            n_filter: loop_def.n_filter,
            output_limit: loop_def.output_limit,
        },
        rate_limit: loop_def.rate_limit,
    }
}

/// Deterministic Nelder–Mead over ℝ⁴ (standard reflection/expansion/
/// contraction/shrink coefficients).
fn nelder_mead<F: Fn(&Vector4<f64>) -> f64>(
    cost: &F,
    x0: Vector4<f64>,
    step: f64,
    budget: usize,
) -> (Vector4<f64>, f64, usize) {
    let n = 4;
    let mut simplex: Vec<(Vector4<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0, cost(&x0)));
    for i in 0..n {
        let mut x = x0;
        x[i] += step;
        simplex.push((x, cost(&x)));
    }
    let mut evals = n + 1;
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vector4<f64> =
            simplex[..n].iter().map(|(x, _)| x).sum::<Vector4<f64>>() / n as f64;
        let reflected = centroid + (centroid - simplex[n].0);
        let fr = cost(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = centroid + 2.0 * (centroid - simplex[n].0);
            let fe = cost(&expanded);
            evals += 1;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = centroid + 0.5 * (simplex[n].0 - centroid);
            let fc = cost(&contracted);
            evals += 1;
            if fc < simplex[n].1 {
                simplex[n] = (contracted, fc);
            } else {
                let best_x = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let x = best_x + 0.5 * (item.0 - best_x);
                    item.1 = cost(&x);
                    item.0 = x;
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, evals)
}

/// Derivative-free mixed-sensitivity tuning of one loop: Nelder–Mead with
/// five restarts from scaled initial simplexes; fully deterministic.
pub fn tune_fixed_structure(
    loop_def: &LoopDefinition,
    initial: Option<&LoopGains>,
    budget: usize,
) -> Result<(LoopGains, f64)> {
    let x0 = match initial {
        Some(g) => Vector4::new(
            g.outer_p.ln(),
            g.inner.kp.ln(),
            g.inner.ki.ln(),
            g.inner.kd.ln(),
        ),
        None => {
            // pole-placement style starting point: inner rate loop about
            // three times faster than the outer bandwidth
            let wb = loop_def.weighting.omega_b;
            let wi = 3.0 * wb;
            let kp = wi / loop_def.plant_gain;
            Vector4::new((0.5 * wb).ln(), kp.ln(), (0.4 * wb * kp).ln(), (0.02 * kp).ln())
        }
    };
    let cost = |x: &Vector4<f64>| {
        let g = loop_gains_from_vec(x, loop_def);
        let crossover = loop_def.plant_gain * (g.inner.kp + g.inner.kd * g.inner.n_filter);
        // soft barrier steering the search inside the implementable set
        let mut penalty = 10.0 * (crossover / loop_def.max_rate_crossover - 1.0).max(0.0);
        // Ws is blind to integral action (the double-integrator plant alone
        // zeroes the DC error), but constant input disturbances — the very
        // faults this controller must ride through — need ki > 0. Keep the
        // integral corner ki/kp at or above a fifth of the loop bandwidth.
        let corner = g.inner.ki / g.inner.kp;
        let corner_floor = 0.2 * loop_def.weighting.omega_b;
        penalty += 10.0 * (corner_floor / corner - 1.0).max(0.0).min(100.0);
        // ... and below twice the bandwidth, or saturation transients wind
        // the integrator up faster than the loop can unwind it.
        let corner_cap = 2.0 * loop_def.weighting.omega_b;
        penalty += 10.0 * (corner / corner_cap - 1.0).max(0.0).min(100.0);
        mixed_sensitivity_cost(&g, loop_def) + penalty
    };
    let per_restart = (budget / 5).max(50);
    let mut best: Option<(Vector4<f64>, f64)> = None;
    for (k, step) in [0.4, 0.8, 0.2, 1.4, 0.1].into_iter().enumerate() {
        let start = match &best {
            // later restarts re-polish from the incumbent
            Some((x, _)) if k >= 3 => *x,
            _ => x0,
        };
        let (x, f, _) = nelder_mead(&cost, start, step, per_restart);
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    let (x, f) = best.expect("at least one restart ran");
    if f >= INSTABILITY_PENALTY {
        return Err(Error::TuningFailed(loop_def.name.clone()));
    }
    Ok((loop_gains_from_vec(&x, loop_def), f))
}

/// Tunes all four standard loops.
pub fn tune_all(params: &VehicleParams, budget_per_loop: usize) -> Result<(ControllerGains, [f64; 4])> {
    let defs = LoopDefinition::standard_set(params);
    let mut gains = Vec::with_capacity(4);
    let mut costs = [0.0; 4];
    for (i, def) in defs.iter().enumerate() {
        let (g, c) = tune_fixed_structure(def, None, budget_per_loop)?;
        costs[i] = c;
        gains.push(g);
    }
    Ok((
        ControllerGains {
            altitude: gains[0],
            roll: gains[1],
            pitch: gains[2],
            yaw: gains[3],
        },
        costs,
    ))
}

/// Closed-loop state matrix of one channel with plant gain `k_g` scaled by
/// the loss factor. States: [x, ẋ, integrator, derivative-filter].
pub fn channel_state_matrix(k_g: f64, gains: &LoopGains, n: f64) -> Matrix4<f64> {
    let g = &gains.inner;
    let kp_hf = g.kp + g.kd * n;
    let kpo = gains.outer_p;
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -k_g * kp_hf * kpo,
        -k_g * kp_hf,
        k_g * g.ki,
        -k_g * g.kd * n, //
        -kpo, -1.0, 0.0, 0.0, //
        -n * kpo, -n, 0.0, -n,
    )
}

fn max_re_eig4(a: &Matrix4<f64>) -> f64 {
    DMatrix::from_fn(4, 4, |r, c| a[(r, c)])
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One evaluated point of the loss-box grid.
#[derive(Debug, Clone, Copy)]
pub struct GammaPoint {
    /// [γ_T, γ_L, γ_M, γ_N].
    pub gamma: [f64; 4],
    /// Max real eigenvalue part of the closed-loop state matrix there.
    pub max_re: f64,
}

/// Result of the eigenvalue sweep over the loss box.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub points: Vec<GammaPoint>,
    pub worst: GammaPoint,
    pub margin: f64,
    pub robustly_stable: bool,
}

/// Sweeps a uniform grid over Γ ∈ [0, 0.5]⁴ (`gamma_steps` per axis) with
/// the gains held fixed, recording the max real eigenvalue part of the
/// closed-loop state matrix at every point. The verdict is "robustly
/// stable" iff every point clears the margin.
pub fn robust_stability_grid(
    gains: &ControllerGains,
    params: &VehicleParams,
    gamma_steps: usize,
    margin: f64,
) -> StabilityReport {
    assert!(gamma_steps >= 2, "need at least two grid steps per axis");
    let plant_gains = [
        1.0 / params.mass,
        1.0 / params.inertia[(0, 0)],
        1.0 / params.inertia[(1, 1)],
        1.0 / params.inertia[(2, 2)],
    ];
    let loop_gains = [&gains.altitude, &gains.roll, &gains.pitch, &gains.yaw];
    let levels: Vec<f64> = (0..gamma_steps)
        .map(|k| 0.5 * k as f64 / (gamma_steps - 1) as f64)
        .collect();
    // The channels are decoupled, so per-channel eigenvalues can be
    // computed once per loss level and combined per grid point.
    let mut per_channel = [[0.0; 64]; 4];
    for (c, (&kg, lg)) in plant_gains.iter().zip(loop_gains).enumerate() {
        for (l, &gamma) in levels.iter().enumerate() {
            let a = channel_state_matrix((1.0 - gamma) * kg, lg, lg.inner.n_filter);
            per_channel[c][l] = max_re_eig4(&a);
        }
    }
    let mut points = Vec::with_capacity(gamma_steps.pow(4));
    for i0 in 0..gamma_steps {
        for i1 in 0..gamma_steps {
            for i2 in 0..gamma_steps {
                for i3 in 0..gamma_steps {
                    let idx = [i0, i1, i2, i3];
                    let max_re = idx
                        .iter()
                        .enumerate()
                        .map(|(c, &l)| per_channel[c][l])
                        .fold(f64::NEG_INFINITY, f64::max);
                    points.push(GammaPoint {
                        gamma: [levels[i0], levels[i1], levels[i2], levels[i3]],
                        max_re,
                    });
                }
            }
        }
    }
    let worst = *points
        .iter()
        .max_by(|a, b| a.max_re.total_cmp(&b.max_re))
        .expect("grid non-empty");
    StabilityReport {
        robustly_stable: points.iter().all(|p| p.max_re < -margin),
        points,
        worst,
        margin,
    }
}

/// Step-response summary of one linear channel under its cascade law.
#[derive(Debug, Clone, Copy)]
pub struct StepResponse {
    /// 2 %-band settling time, s.
    pub settling_time: f64,
    /// Fractional overshoot (0.2 = 20 %).
    pub overshoot: f64,
}

/// Unit-step response of the closed linear channel, integrated with RK4.
pub fn channel_step_response(k_g: f64, gains: &LoopGains, duration: f64) -> StepResponse {
    let n = gains.inner.n_filter;
    let a = channel_state_matrix(k_g, gains, n);
    let g = &gains.inner;
    let b = Vector4::new(
        0.0,
        k_g * (g.kp + g.kd * n) * gains.outer_p,
        gains.outer_p,
        n * gains.outer_p,
    );
    let dt = 1e-3;
    let steps = (duration / dt).round() as usize;
    let mut x = Vector4::zeros();
    let deriv = |x: &Vector4<f64>| a * x + b;
    let mut peak = 0.0f64;
    let mut last_outside = 0.0f64;
    for k in 0..steps {
        let k1 = deriv(&x);
        let k2 = deriv(&(x + 0.5 * dt * k1));
        let k3 = deriv(&(x + 0.5 * dt * k2));
        let k4 = deriv(&(x + dt * k3));
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = (k + 1) as f64 * dt;
        peak = peak.max(x[0]);
        if (x[0] - 1.0).abs() > 0.02 {
            last_outside = t;
        }
    }
    StepResponse {
        settling_time: last_outside,
        overshoot: (peak - 1.0).max(0.0),
    }
}

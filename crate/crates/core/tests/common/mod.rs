//! Independent reference solvers used to cross-check the active-set
//! allocator: exhaustive bound-pattern enumeration (exact, small problems)
//! and a diagonally preconditioned accelerated projected-gradient method
//! (large problems), plus a KKT certificate checker.

use nalgebra::{DMatrix, DVector, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vtol_ftc::allocator::{
    active_set_bls, stack_problem, wls_allocate_bounded, AllocatorConfig, DesiredPolicy,
};
use vtol_ftc::effectors::{build_allocation_matrix, SurfaceDerivatives};
use vtol_ftc::vehicle::{
    ActuatorVector, EffectivenessState, VehicleParams, VirtualControl, NUM_ACTUATORS,
};

/// Objective ‖A u − b‖² of the stacked least-squares form.
pub fn objective(a: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (a * u - b).norm_squared()
}

/// Exact global minimum of `min ‖A u − b‖²  s.t. lb ≤ u ≤ ub` by
/// enumerating all 3ⁿ lower/upper/free bound patterns. Exponential — only
/// for n ≤ ~8.
pub fn enumerate_box_ls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let n = a.ncols();
    assert!(n <= 8, "pattern enumeration is exponential in n");
    let mut best: Option<(DVector<f64>, f64)> = None;
    // Pattern digit per variable: 0 = free, 1 = at lower, 2 = at upper.
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut digits = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            digits.push(c % 3);
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| digits[i] == 0).collect();
        let mut u = DVector::zeros(n);
        for i in 0..n {
            u[i] = match digits[i] {
                1 => lb[i],
                2 => ub[i],
                _ => 0.0,
            };
        }
        if !free.is_empty() {
            let mut rhs = b.clone();
            for i in 0..n {
                if digits[i] != 0 {
                    rhs -= a.column(i) * u[i];
                }
            }
            let a_free = a.select_columns(free.iter());
            let svd = a_free.svd(true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
            let z = svd
                .solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
                .expect("svd solve");
            for (k, &i) in free.iter().enumerate() {
                u[i] = z[k];
            }
        }
        // Candidate must be feasible; the optimum's own pattern always is.
        let feasible = (0..n).all(|i| u[i] >= lb[i] - 1e-9 && u[i] <= ub[i] + 1e-9);
        if !feasible {
            continue;
        }
        let f = objective(a, b, &u);
        if best.as_ref().map_or(true, |(_, fb)| f < *fb) {
            best = Some((u, f));
        }
    }
    best.expect("the all-at-lower pattern is always feasible")
}

/// Accelerated projected gradient (FISTA with adaptive restart) on the
/// Jacobi-scaled problem, run until the projected-gradient step is below
/// `1e-10` relative or the iteration cap. Returns (u, objective).
pub fn projected_gradient_box_ls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    x0: &DVector<f64>,
    max_iters: usize,
) -> (DVector<f64>, f64) {
    let n = a.ncols();
    // Jacobi preconditioning: scale columns to unit norm. The box maps
    // through the positive diagonal, so projection stays trivial.
    let mut d = DVector::zeros(n);
    for i in 0..n {
        d[i] = a.column(i).norm().max(1e-300);
    }
    let a_s = {
        let mut m = a.clone();
        for i in 0..n {
            let mut col = m.column_mut(i);
            col /= d[i];
        }
        m
    };
    let lb_s = DVector::from_fn(n, |i, _| lb[i] * d[i]);
    let ub_s = DVector::from_fn(n, |i, _| ub[i] * d[i]);
    let proj = |x: &mut DVector<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lb_s[i], ub_s[i]);
        }
    };

    let h = a_s.transpose() * &a_s;
    let lmax = h
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let step = 1.0 / lmax;
    let atb = a_s.transpose() * b;
    let grad = |x: &DVector<f64>| &h * x - &atb;

    let mut x = DVector::from_fn(n, |i, _| x0[i] * d[i]);
    proj(&mut x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let scale = 1.0 + x.amax().max(ub_s.amax().max(lb_s.amax()));
    let mut f_prev = f64::INFINITY;
    for _ in 0..max_iters {
        let g = grad(&y);
        let mut x_next = &y - step * &g;
        proj(&mut x_next);
        // Projected-gradient stationarity at the new iterate.
        let g_new = grad(&x_next);
        let mut pg = x_next.clone();
        pg.zip_zip_apply(&g_new, &lb_s, |xi, gi, l| *xi = (*xi - step * gi).max(l));
        for i in 0..n {
            pg[i] = pg[i].min(ub_s[i]);
        }
        let stat = (&pg - &x_next).amax() / step;
        if stat < 1e-10 * scale {
            x = x_next;
            break;
        }
        let f_new = objective(&a_s, b, &x_next);
        // Adaptive restart on non-monotone progress.
        if f_new > f_prev {
            t = 1.0;
            y = x_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_next + ((t - 1.0) / t_next) * (&x_next - &x);
            proj(&mut y);
            t = t_next;
        }
        f_prev = f_new;
        x = x_next;
    }
    let u = DVector::from_fn(n, |i, _| x[i] / d[i]);
    let f = objective(a, b, &u);
    (u, f)
}

/// Runs `n` seeded random small (4+6)×6 box least-squares instances through
/// the active-set solver and checks each against the exhaustive bound-pattern
/// enumeration (objective within 1e-6 relative), feasibility to 1e-9 and the
/// KKT certificate. Returns the first failure as an error string.
pub fn run_enumeration_suite(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst in 0..n {
        let cols = 6;
        let rows = 4 + cols;
        let scale = 10f64.powf(rng.gen_range(-0.5..1.0));
        let mut a = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0) * scale);
        // Random diagonal effectiveness including exact zeros on the
        // wrench block, mirroring failed actuators.
        for c in 0..cols {
            let w: f64 = if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            };
            for r in 0..4 {
                a[(r, c)] *= w;
            }
        }
        let b = DVector::from_fn(rows, |_, _| rng.gen_range(-1.0..1.0) * scale * 20.0);
        let mut lb = DVector::zeros(cols);
        let mut ub = DVector::zeros(cols);
        for i in 0..cols {
            let lo = rng.gen_range(-60.0..30.0);
            let width = if rng.gen_bool(0.05) {
                0.0 // pinned variable
            } else {
                rng.gen_range(0.5..120.0)
            };
            lb[i] = lo;
            ub[i] = lo + width;
        }
        let u0 = DVector::from_fn(cols, |i, _| rng.gen_range(lb[i] - 10.0..ub[i] + 10.0));

        let sol = active_set_bls(&a, &b, &lb, &ub, &u0, 100, 1e-9)
            .map_err(|e| format!("enum instance {inst}: solver error {e}"))?;
        for i in 0..cols {
            if sol.u[i] < lb[i] - 1e-9 || sol.u[i] > ub[i] + 1e-9 {
                return Err(format!(
                    "enum instance {inst}: u[{i}] = {} outside [{}, {}]",
                    sol.u[i], lb[i], ub[i]
                ));
            }
        }
        let f_solver = objective(&a, &b, &sol.u);
        let (_, f_ref) = enumerate_box_ls(&a, &b, &lb, &ub);
        if (f_solver - f_ref).abs() > 1e-6 * f_ref.max(1.0) {
            return Err(format!(
                "enum instance {inst}: objective {f_solver:.12e} vs reference {f_ref:.12e}"
            ));
        }
        kkt_certificate(&a, &b, &lb, &ub, &sol.u)
            .map_err(|e| format!("enum instance {inst}: KKT violation: {e}"))?;
    }
    Ok(())
}

/// Runs `n` seeded random full-size (4×11) allocation instances through the
/// weighted-least-squares allocator and checks each against the projected-
/// gradient reference (objective within 1e-6 relative), feasibility to 1e-9
/// and the KKT certificate on the stacked problem.
pub fn run_wls_suite(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = VehicleParams::default();
    let derivs = SurfaceDerivatives::default();
    for inst in 0..n {
        let v_air = rng.gen_range(0.0..20.0);
        let alloc = build_allocation_matrix(&params, &derivs, v_air)
            .map_err(|e| format!("wls instance {inst}: {e}"))?;

        let mut eff = EffectivenessState::healthy();
        for i in 0..NUM_ACTUATORS {
            eff.w[i] = if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            };
        }

        let authority = [150.0, 45.0, 50.0, 1.0];
        let v = VirtualControl::from_fn(|r, _| rng.gen_range(-1.0..1.0) * authority[r]);

        let mut lb = params.lower_bounds();
        let mut ub = params.upper_bounds();
        if rng.gen_bool(0.2) {
            // Fixed-wing style: rotor channels pinned to zero.
            for i in 0..vtol_ftc::vehicle::NUM_ROTORS {
                lb[i] = 0.0;
                ub[i] = 0.0;
            }
        }
        let rand_in_box = |rng: &mut ChaCha8Rng| {
            let mut u = ActuatorVector::zeros();
            for i in 0..NUM_ACTUATORS {
                u[i] = rng.gen_range(lb[i]..=ub[i]);
            }
            u
        };

        let mut cfg = AllocatorConfig::default();
        for i in 0..NUM_ACTUATORS {
            cfg.w1[i] = rng.gen_range(0.3..3.0);
        }
        cfg.w2 = Vector4::from_fn(|_, _| rng.gen_range(0.5..2.0));
        cfg.gamma = 10f64.powf(rng.gen_range(3.0..6.0));
        cfg.u_desired = match rng.gen_range(0..3) {
            0 => DesiredPolicy::Zero,
            1 => DesiredPolicy::Previous,
            _ => DesiredPolicy::Explicit(rand_in_box(&mut rng)),
        };
        let u_prev = if rng.gen_bool(0.7) {
            Some(rand_in_box(&mut rng))
        } else {
            None
        };

        let res = wls_allocate_bounded(&alloc, &eff, &v, &lb, &ub, &cfg, u_prev.as_ref())
            .map_err(|e| format!("wls instance {inst}: solver error {e}"))?;
        for i in 0..NUM_ACTUATORS {
            if res.u[i] < lb[i] - 1e-9 || res.u[i] > ub[i] + 1e-9 {
                return Err(format!(
                    "wls instance {inst}: u[{i}] = {} outside [{}, {}]",
                    res.u[i], lb[i], ub[i]
                ));
            }
        }

        // Reference solve on the identical stacked problem.
        let u_d = match &cfg.u_desired {
            DesiredPolicy::Zero => ActuatorVector::zeros(),
            DesiredPolicy::Previous => u_prev.unwrap_or_else(ActuatorVector::zeros),
            DesiredPolicy::Explicit(x) => *x,
        };
        let (a, b) = stack_problem(&alloc, &eff, &v, &u_d, &cfg);
        let to_d = |x: &ActuatorVector| DVector::from_row_slice(x.as_slice());
        let (dlb, dub) = (to_d(&lb), to_d(&ub));
        let x0 = to_d(&u_d);
        let (_, f_ref) = projected_gradient_box_ls(&a, &b, &dlb, &dub, &x0, 400_000);

        let du = to_d(&res.u);
        let f_solver = objective(&a, &b, &du);
        if (f_solver - f_ref).abs() > 1e-6 * f_ref.max(1.0) {
            return Err(format!(
                "wls instance {inst}: objective {f_solver:.12e} vs reference {f_ref:.12e}"
            ));
        }
        kkt_certificate(&a, &b, &dlb, &dub, &du)
            .map_err(|e| format!("wls instance {inst}: KKT violation: {e}"))?;
    }
    Ok(())
}

/// KKT certificate for `min ‖A u − b‖²` over a box: free components of the
/// gradient vanish (relative to ‖AᵀA‖₂) and bound multipliers have the
/// correct sign. Returns an error description on violation.
pub fn kkt_certificate(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(), String> {
    let n = a.ncols();
    let h = a.transpose() * a;
    let hnorm = h
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let g = 2.0 * (&h * u - a.transpose() * b);
    let g_tol = 1e-6 * hnorm.max(1.0);
    let b_tol = g_tol;
    let bound_tol = 1e-9 * (1.0 + u.amax());
    for i in 0..n {
        let at_lower = u[i] <= lb[i] + bound_tol;
        let at_upper = u[i] >= ub[i] - bound_tol;
        if at_lower && at_upper {
            continue; // pinned variable: any gradient is allowed
        }
        if at_lower {
            if g[i] < -b_tol {
                return Err(format!(
                    "var {i} at lower bound has descent gradient {:.3e}",
                    g[i]
                ));
            }
        } else if at_upper {
            if g[i] > b_tol {
                return Err(format!(
                    "var {i} at upper bound has ascent gradient {:.3e}",
                    g[i]
                ));
            }
        } else if g[i].abs() > g_tol {
            return Err(format!(
                "free var {i} gradient {:.3e} exceeds tolerance {:.3e}",
                g[i], g_tol
            ));
        }
    }
    Ok(())
}

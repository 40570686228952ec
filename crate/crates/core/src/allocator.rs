//! Online weighted-least-squares control allocation.
//!
//! The allocation problem trades allocation error against deviation from a
//! desired actuator position,
//!
//! ```text
//!     min  ‖W1 (u − u_d)‖² + γ ‖W2 (B W u − v)‖²,   lb ≤ u ≤ ub
//! ```
//!
//! with γ ≫ 1 so the allocation-error term dominates. The two-term objective
//! is stacked into a single bounded least-squares problem and solved by a
//! primal active-set method: the working set of bounds is treated as
//! equalities, the free-variable subproblem is a (possibly rank-deficient)
//! least-squares step, and each iteration either fixes one blocking bound or
//! releases one bound whose multiplier has the wrong sign. The problem is
//! convex, so the method terminates at the global minimizer.

use nalgebra::{DMatrix, DVector, Vector4};

use crate::effectors::AllocationMatrix;
use crate::vehicle::{
    ActuatorVector, EffectivenessState, VehicleParams, VirtualControl, NUM_ACTUATORS,
};
use crate::{Error, Result};

/// Which bound a variable in the working set sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Lower,
    Upper,
}

/// Termination status of the active-set solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    IterationLimit,
}

/// Desired-actuator-position policy for the ‖W1(u − u_d)‖ term.
#[derive(Debug, Clone, PartialEq)]
pub enum DesiredPolicy {
    /// u_d = 0 (minimum-deflection preference).
    Zero,
    /// u_d = previous allocation (minimum-change preference).
    Previous,
    /// Explicit fixed vector.
    Explicit(ActuatorVector),
}

/// Weights, priorities and solver settings for the allocator.
#[derive(Debug, Clone)]
pub struct AllocatorConfig {
    /// Diagonal of the actuator preference weight W1.
    pub w1: ActuatorVector,
    /// Diagonal of the channel priority weight W2.
    pub w2: Vector4<f64>,
    /// Allocation-error emphasis γ ≫ 1.
    pub gamma: f64,
    /// Policy for u_d.
    pub u_desired: DesiredPolicy,
    /// Active-set iteration cap.
    pub max_iterations: usize,
    /// Optimality tolerance for the gradient sign tests.
    pub tolerance: f64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        // Rotors are the preferred effectors; the aerodynamic surfaces carry
        // a higher preference weight so they stay near neutral unless the
        // rotors cannot realize the demanded wrench (saturation or failures).
        let mut w1 = ActuatorVector::repeat(1.0);
        for i in crate::vehicle::NUM_ROTORS..NUM_ACTUATORS {
            w1[i] = 25.0;
        }
        Self {
            w1,
            w2: Vector4::repeat(1.0),
            gamma: 1e6,
            u_desired: DesiredPolicy::Zero,
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w1.iter().any(|&x| x <= 0.0) || self.w2.iter().any(|&x| x <= 0.0) {
            return Err(Error::Scenario {
                field: "allocator.weights".into(),
                message: "diagonal weights must be positive".into(),
            });
        }
        if self.gamma < 1e3 {
            return Err(Error::Scenario {
                field: "allocator.gamma".into(),
                message: format!("gamma = {} must be >= 1e3", self.gamma),
            });
        }
        if self.tolerance <= 0.0 {
            return Err(Error::Scenario {
                field: "allocator.tolerance".into(),
                message: "tolerance must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Outcome of one allocation solve.
#[derive(Debug, Clone)]
pub struct AllocationResult {
    pub u: ActuatorVector,
    /// B W u − v.
    pub residual: VirtualControl,
    /// Value of the two-term objective at `u`.
    pub cost: f64,
    pub iterations: usize,
    /// Bounds active at the solution.
    pub active_set: Vec<(usize, Bound)>,
    pub status: SolveStatus,
}

/// Stacks the two-term objective into a single least-squares pair `(A, b)`
/// with `A = [√γ·W2·B·W ; W1]` and `b = [√γ·W2·v ; W1·u_d]`, so that
/// `‖A u − b‖²` equals the allocation objective.
pub fn stack_problem(
    alloc: &AllocationMatrix,
    eff: &EffectivenessState,
    v: &VirtualControl,
    u_d: &ActuatorVector,
    cfg: &AllocatorConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let sg = cfg.gamma.sqrt();
    let mut a = DMatrix::zeros(4 + NUM_ACTUATORS, NUM_ACTUATORS);
    let mut b = DVector::zeros(4 + NUM_ACTUATORS);
    for r in 0..4 {
        for c in 0..NUM_ACTUATORS {
            a[(r, c)] = sg * cfg.w2[r] * alloc.b[(r, c)] * eff.w[c];
        }
        b[r] = sg * cfg.w2[r] * v[r];
    }
    for i in 0..NUM_ACTUATORS {
        a[(4 + i, i)] = cfg.w1[i];
        b[4 + i] = cfg.w1[i] * u_d[i];
    }
    (a, b)
}

/// Raw active-set solution over a box.
#[derive(Debug, Clone)]
pub struct BlsSolution {
    pub u: DVector<f64>,
    pub active_set: Vec<(usize, Bound)>,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
    /// lb == ub: permanently pinned (e.g. retired rotors in fixed-wing mode).
    Fixed,
}

/// Solves `min ‖A u − b‖²` subject to `lb ≤ u ≤ ub` by the active-set method.
///
/// `u0` must be feasible; the working set is seeded from the bounds active at
/// `u0`, which makes warm starting cheap. The free-variable subproblem is a
/// minimum-norm least-squares step (singular values below
/// `1e-12 · σ_max` are treated as zero, so fault-zeroed columns are routine).
/// On the iteration cap the best feasible iterate so far is returned, never
/// an infeasible point.
pub fn active_set_bls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    u0: &DVector<f64>,
    max_iterations: usize,
    tolerance: f64,
) -> Result<BlsSolution> {
    let n = a.ncols();
    if b.len() != a.nrows() || lb.len() != n || ub.len() != n || u0.len() != n {
        return Err(Error::Dimension(format!(
            "active_set_bls: A is {}x{}, b {}, lb {}, ub {}, u0 {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            lb.len(),
            ub.len(),
            u0.len()
        )));
    }
    for i in 0..n {
        if lb[i] > ub[i] {
            return Err(Error::Dimension(format!(
                "active_set_bls: lb[{i}] = {} must be <= ub[{i}] = {}",
                lb[i], ub[i]
            )));
        }
    }

    let mut u = u0.clone();
    let mut state = vec![VarState::Free; n];
    for i in 0..n {
        u[i] = u[i].clamp(lb[i], ub[i]);
        if lb[i] == ub[i] {
            u[i] = lb[i];
            state[i] = VarState::Fixed;
        } else if u[i] <= lb[i] {
            u[i] = lb[i];
            state[i] = VarState::AtLower;
        } else if u[i] >= ub[i] {
            u[i] = ub[i];
            state[i] = VarState::AtUpper;
        }
    }

    // Gradient sign threshold scaled by the problem size.
    let grad_scale = a.iter().map(|x| x * x).sum::<f64>().max(1.0);
    let g_tol = tolerance * grad_scale;

    let mut iterations = 0usize;
    let status = loop {
        // Solve the free-variable least-squares subproblem.
        let free: Vec<usize> = (0..n)
            .filter(|&i| state[i] == VarState::Free)
            .collect();
        let target = if free.is_empty() {
            u.clone()
        } else {
            let mut rhs = b.clone();
            for i in 0..n {
                if state[i] != VarState::Free {
                    rhs -= a.column(i) * u[i];
                }
            }
            let a_free = a.select_columns(free.iter());
            let svd = a_free.svd(true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
            let z = svd
                .solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE))
                .expect("SVD solve with computed factors");
            let mut target = u.clone();
            for (k, &i) in free.iter().enumerate() {
                target[i] = z[k];
            }
            target
        };

        // Feasibility line search from u toward the subproblem optimum.
        let mut alpha = 1.0f64;
        let mut blocking: Option<(usize, Bound)> = None;
        for &i in &free {
            let d = target[i] - u[i];
            if d > 0.0 && target[i] > ub[i] {
                let step = (ub[i] - u[i]) / d;
                if step < alpha - 1e-15 {
                    alpha = step;
                    blocking = Some((i, Bound::Upper));
                }
            } else if d < 0.0 && target[i] < lb[i] {
                let step = (lb[i] - u[i]) / d;
                if step < alpha - 1e-15 {
                    alpha = step;
                    blocking = Some((i, Bound::Lower));
                }
            }
        }

        match blocking {
            Some((idx, bound)) => {
                for &i in &free {
                    u[i] = (u[i] + alpha * (target[i] - u[i])).clamp(lb[i], ub[i]);
                }
                u[idx] = match bound {
                    Bound::Lower => lb[idx],
                    Bound::Upper => ub[idx],
                };
                state[idx] = match bound {
                    Bound::Lower => VarState::AtLower,
                    Bound::Upper => VarState::AtUpper,
                };
                iterations += 1;
            }
            None => {
                // Full step accepted: the free set is at its optimum.
                for &i in &free {
                    u[i] = target[i].clamp(lb[i], ub[i]);
                }
                // KKT sign test on the active bounds.
                let grad = a.transpose() * (a * &u - b) * 2.0;
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    let violation = match state[i] {
                        VarState::Free | VarState::Fixed => 0.0,
                        // At a lower bound the gradient must be >= 0.
                        VarState::AtLower => -grad[i],
                        // At an upper bound the gradient must be <= 0.
                        VarState::AtUpper => grad[i],
                    };
                    if violation > g_tol && worst.map_or(true, |(_, w)| violation > w) {
                        worst = Some((i, violation));
                    }
                }
                match worst {
                    Some((idx, _)) => {
                        state[idx] = VarState::Free;
                        iterations += 1;
                    }
                    None => break SolveStatus::Optimal,
                }
            }
        }

        if iterations >= max_iterations {
            break SolveStatus::IterationLimit;
        }
    };

    let active_set = (0..n)
        .filter_map(|i| match state[i] {
            VarState::Free => None,
            VarState::AtLower | VarState::Fixed => Some((i, Bound::Lower)),
            VarState::AtUpper => Some((i, Bound::Upper)),
        })
        .collect();

    Ok(BlsSolution {
        u,
        active_set,
        iterations,
        status,
    })
}

/// Evaluates the two-term allocation objective at `u`.
pub fn allocation_cost(
    alloc: &AllocationMatrix,
    eff: &EffectivenessState,
    v: &VirtualControl,
    u_d: &ActuatorVector,
    cfg: &AllocatorConfig,
    u: &ActuatorVector,
) -> f64 {
    let pref = (u - u_d).component_mul(&cfg.w1);
    let res = (alloc.b * u.component_mul(&eff.w) - v).component_mul(&cfg.w2);
    pref.norm_squared() + cfg.gamma * res.norm_squared()
}

/// One full allocation solve: stack the objective, warm start from the
/// previous command (projected into the bounds), run the active-set method.
///
/// Saturation is a valid answer and never an error; the iteration-limit
/// status is propagated in the result.
pub fn wls_allocate(
    alloc: &AllocationMatrix,
    eff: &EffectivenessState,
    v: &VirtualControl,
    params: &VehicleParams,
    cfg: &AllocatorConfig,
    u_prev: Option<&ActuatorVector>,
) -> Result<AllocationResult> {
    wls_allocate_bounded(
        alloc,
        eff,
        v,
        &params.lower_bounds(),
        &params.upper_bounds(),
        cfg,
        u_prev,
    )
}

/// [`wls_allocate`] with explicit bounds (used by the mission logic to
/// retire the rotor columns in fixed-wing mode).
pub fn wls_allocate_bounded(
    alloc: &AllocationMatrix,
    eff: &EffectivenessState,
    v: &VirtualControl,
    lb: &ActuatorVector,
    ub: &ActuatorVector,
    cfg: &AllocatorConfig,
    u_prev: Option<&ActuatorVector>,
) -> Result<AllocationResult> {
    let u_d = match &cfg.u_desired {
        DesiredPolicy::Zero => ActuatorVector::zeros(),
        DesiredPolicy::Previous => u_prev.copied().unwrap_or_else(ActuatorVector::zeros),
        DesiredPolicy::Explicit(v) => *v,
    };
    let (a, b) = stack_problem(alloc, eff, v, &u_d, cfg);
    let start = u_prev.copied().unwrap_or(u_d);
    let to_d = |x: &ActuatorVector| DVector::from_row_slice(x.as_slice());
    let sol = active_set_bls(
        &a,
        &b,
        &to_d(lb),
        &to_d(ub),
        &to_d(&start),
        cfg.max_iterations,
        cfg.tolerance,
    )?;
    let u = ActuatorVector::from_row_slice(sol.u.as_slice());
    let residual = alloc.b * u.component_mul(&eff.w) - v;
    let cost = allocation_cost(alloc, eff, v, &u_d, cfg, &u);
    Ok(AllocationResult {
        u,
        residual,
        cost,
        iterations: sol.iterations,
        active_set: sol.active_set,
        status: sol.status,
    })
}

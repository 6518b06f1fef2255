//! Ground-truth solvers for micro instances.
//!
//! Two independent oracles cross-check the production solvers:
//!
//! * [`lp_solve`] transcribes the constrained primal exactly as a linear
//!   program over occupation mass c[k][x][u] and stop mass s[k][x], solved
//!   by a two-phase simplex. Its dual multipliers are a discrete value field
//!   J[k][x] and end potential ψ[x] satisfying the HJB inequalities.
//! * [`enumerate_policies`] evaluates every deterministic Markov policy by
//!   plain backward substitution (no maximization inside), then takes the
//!   pointwise maximum — a brute-force replacement for the QVI recursion.
//!
//! Both are deliberately slow and deliberately simple; their only job is to
//! be obviously correct at guard sizes.

mod simplex;

pub use simplex::{LpOutcome, LpSolution};

use crate::config::ProblemConfig;
use crate::hjb::Potential;
use crate::lattice::TransitionKernel;
use crate::model::LagrangianSpec;
use crate::transport::OccupationMeasure;
use crate::{Error, Result};

const MAX_LP_VARS: usize = 2000;
const MAX_POLICIES: u64 = 1_000_000;

/// Optimal point of the occupation-measure LP with its certified duals.
#[derive(Debug, Clone)]
pub struct LpResult {
    /// Σ L(t_k,x,u)·Δt·c[k][x][u] at the optimum.
    pub objective: f64,
    /// Continuing mass c[k][x][u], k = 0..K−1.
    pub occupation: OccupationMeasure,
    /// Stop mass s[k][x], k = 0..K.
    pub stop_mass: Vec<Vec<f64>>,
    /// Dual value field J[k][x] (negated flow-row multipliers).
    pub value_duals: Vec<Vec<f64>>,
    /// Dual end potential ψ[x] (marginal-row multipliers).
    pub psi_duals: Vec<f64>,
    /// Σψν − ΣJ[0]μ; equals `objective` by strong duality.
    pub dual_objective: f64,
}

/// Outcome of [`lp_solve`]: either the optimum or a Farkas certificate
/// proving ν is unreachable from μ in K steps.
#[derive(Debug, Clone)]
pub enum OracleOutcome {
    Optimal(LpResult),
    /// Multipliers (flow rows then marginal rows) with Aᵀy ≤ 0, bᵀy > 0.
    Infeasible { certificate: Vec<f64> },
}

/// Solves the exact discrete primal
///
///   min Σ L·Δt·c   subject to   Σ_u c[0][x][u] + s[0][x] = μ[x],
///   Σ_u c[k][x][u] + s[k][x] = Σ_{x',u} P(x|x',u)·c[k−1][x'][u]  (1 ≤ k ≤ K,
///   with c[K] ≡ 0),  Σ_k s[k][x] = ν[x],  c, s ≥ 0.
pub fn lp_solve(config: &ProblemConfig) -> Result<OracleOutcome> {
    config.validate()?;
    let kernel = config.kernel()?;
    let lattice = kernel.lattice;
    let nodes = lattice.num_nodes();
    let steps = lattice.num_steps; // K
    let num_ctrl = kernel.num_controls();
    let n_c = steps * nodes * num_ctrl;
    let n_s = (steps + 1) * nodes;
    let n = n_c + n_s;
    if n > MAX_LP_VARS {
        return Err(Error::Structural(format!(
            "LP oracle refused: instance has {n} variables, guard is {MAX_LP_VARS}"
        )));
    }
    let c_idx = |k: usize, x: usize, u: usize| (k * nodes + x) * num_ctrl + u;
    let s_idx = |k: usize, x: usize| n_c + k * nodes + x;
    let flow_row = |k: usize, x: usize| k * nodes + x;
    let marg_row = |x: usize| (steps + 1) * nodes + x;
    let m = (steps + 1) * nodes + nodes;

    let mut a = vec![vec![0.0; n]; m];
    let mut b = vec![0.0; m];
    for x in 0..nodes {
        b[flow_row(0, x)] = config.mu.weights[x];
        b[marg_row(x)] = config.nu.weights[x];
    }
    for k in 0..=steps {
        for x in 0..nodes {
            let row = flow_row(k, x);
            if k < steps {
                for u in 0..num_ctrl {
                    a[row][c_idx(k, x, u)] = 1.0;
                }
            }
            a[row][s_idx(k, x)] += 1.0;
            a[marg_row(x)][s_idx(k, x)] = 1.0;
        }
        if k >= 1 {
            // Inflow −Σ P(x|x',u)·c[k−1][x'][u].
            for xp in 0..nodes {
                for u in 0..num_ctrl {
                    let col = c_idx(k - 1, xp, u);
                    for &(y, p) in &kernel.row(xp, u).entries {
                        a[flow_row(k, y)][col] -= p;
                    }
                }
            }
        }
    }
    let mut cost = vec![0.0; n];
    for k in 0..steps {
        let t = lattice.time(k);
        for x in 0..nodes {
            let coord = lattice.coord(x);
            for u in 0..num_ctrl {
                cost[c_idx(k, x, u)] =
                    config.lagrangian.eval(t, &coord, &kernel.controls[u])? * lattice.dt;
            }
        }
    }

    match simplex::solve(&a, &b, &cost)? {
        LpOutcome::Infeasible { certificate } => Ok(OracleOutcome::Infeasible { certificate }),
        LpOutcome::Optimal(sol) => {
            let mut occupation = OccupationMeasure::zeros(steps, nodes, num_ctrl);
            for k in 0..steps {
                for x in 0..nodes {
                    for u in 0..num_ctrl {
                        occupation.weights[k][x][u] = sol.x[c_idx(k, x, u)];
                    }
                }
            }
            let stop_mass: Vec<Vec<f64>> = (0..=steps)
                .map(|k| (0..nodes).map(|x| sol.x[s_idx(k, x)]).collect())
                .collect();
            let value_duals: Vec<Vec<f64>> = (0..=steps)
                .map(|k| (0..nodes).map(|x| -sol.duals[flow_row(k, x)]).collect())
                .collect();
            let psi_duals: Vec<f64> = (0..nodes).map(|x| sol.duals[marg_row(x)]).collect();
            let dual_objective = psi_duals
                .iter()
                .zip(&config.nu.weights)
                .map(|(p, w)| p * w)
                .sum::<f64>()
                - value_duals[0]
                    .iter()
                    .zip(&config.mu.weights)
                    .map(|(j, w)| j * w)
                    .sum::<f64>();
            Ok(OracleOutcome::Optimal(LpResult {
                objective: sol.objective,
                occupation,
                stop_mass,
                value_duals,
                psi_duals,
                dual_objective,
            }))
        }
    }
}

/// Exact value of the inner problem by exhausting every deterministic Markov
/// policy: for each of the (|U_h|+1)^(K·#nodes) decision tables, evaluates
/// E[ψ(X_τ) − Σ L·Δt] by backward substitution, then keeps the pointwise
/// maximum over policies at every (k, x).
pub fn enumerate_policies(
    kernel: &TransitionKernel,
    lagrangian: &LagrangianSpec,
    psi: &Potential,
) -> Result<Vec<Vec<f64>>> {
    let lattice = kernel.lattice;
    let nodes = lattice.num_nodes();
    let steps = lattice.num_steps;
    let num_ctrl = kernel.num_controls();
    if psi.len() != nodes {
        return Err(Error::Structural(format!(
            "potential has {} values for a {nodes}-node lattice",
            psi.len()
        )));
    }
    let slots = steps * nodes;
    let choices = (num_ctrl + 1) as u64;
    let mut total: u64 = 1;
    for _ in 0..slots {
        total = total.saturating_mul(choices);
        if total > MAX_POLICIES {
            return Err(Error::Structural(format!(
                "policy enumeration refused: {choices}^{slots} policies exceed the \
                 {MAX_POLICIES} guard"
            )));
        }
    }

    // Precompute run costs L(t_k, x, u)·Δt once.
    let mut run_cost = vec![vec![vec![0.0; num_ctrl]; nodes]; steps];
    for k in 0..steps {
        let t = lattice.time(k);
        for x in 0..nodes {
            let coord = lattice.coord(x);
            for u in 0..num_ctrl {
                run_cost[k][x][u] =
                    lagrangian.eval(t, &coord, &kernel.controls[u])? * lattice.dt;
            }
        }
    }

    let mut best = vec![vec![f64::NEG_INFINITY; nodes]; steps + 1];
    best[steps].copy_from_slice(&psi.values);
    // decision[k*nodes+x]: 0 = stop, 1+u = continue with control u.
    let mut decision = vec![0u32; slots];
    let mut value = vec![vec![0.0; nodes]; steps + 1];
    value[steps].copy_from_slice(&psi.values);
    loop {
        for k in (0..steps).rev() {
            for x in 0..nodes {
                value[k][x] = match decision[k * nodes + x] {
                    0 => psi.values[x],
                    d => {
                        let u = (d - 1) as usize;
                        let next = &value[k + 1];
                        -run_cost[k][x][u] + kernel.expectation(x, u, next)
                    }
                };
            }
        }
        for k in 0..steps {
            for x in 0..nodes {
                if value[k][x] > best[k][x] {
                    best[k][x] = value[k][x];
                }
            }
        }
        // Mixed-radix increment over the decision table.
        let mut pos = 0;
        loop {
            if pos == slots {
                return Ok(best);
            }
            decision[pos] += 1;
            if decision[pos] as u64 == choices {
                decision[pos] = 0;
                pos += 1;
            } else {
                break;
            }
        }
    }
}

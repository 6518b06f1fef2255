//! Outer optimization over the end potential ψ.
//!
//! The dual objective sup_ψ { Σψ·ν − ΣJ_ψ[0]·μ } is concave in ψ, and
//! ν − ρ_marg(ψ) is a supergradient, where ρ_marg is the stopped marginal of
//! the forward pass under the ψ-optimal policy. The loop is plain projected
//! subgradient ascent with diminishing (or fixed) steps, best-iterate
//! tracking, and a gauge fix that removes the constant-shift null direction
//! (ψ, J) → (ψ+κ, J+κ) by subtracting the μ-weighted mean of ψ.

use crate::hjb::{self, Policy, Potential, ValueField};
use crate::lattice::{build_kernel, TransitionKernel};
use crate::model::GridMeasure;
use crate::transport::{self, ForwardResult};
use crate::config::{ProblemConfig, StepRule};
use crate::{Error, Result};

/// One row of the convergence history.
#[derive(Debug, Clone, Copy)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub dual_value: f64,
    pub marginal_residual: f64,
    pub gap_adj: f64,
}

/// Summary of a completed (or halted) outer solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub dual_value: f64,
    pub primal_cost: f64,
    /// L1 distance ‖ρ_marg − ν‖₁ at the returned iterate.
    pub marginal_residual: f64,
    /// gap + ‖ψ‖∞·marginal_residual; nonnegative up to 1e−9 by weak duality.
    pub gap_adj: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary_mass: f64,
    pub terminal_mass: f64,
    pub history: Vec<HistoryEntry>,
}

/// Everything the outer solve returns: the best iterate's potential, value
/// field, policy, primal pair, and the report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub psi: Potential,
    pub value: ValueField,
    pub policy: Policy,
    pub forward: ForwardResult,
    pub report: SolveReport,
}

/// Dual objective Σψ·ν − ΣJ[0]·μ for a potential and its backward solve.
pub fn dual_value(psi: &Potential, value: &ValueField, mu: &GridMeasure, nu: &GridMeasure) -> f64 {
    let target: f64 = psi.values.iter().zip(&nu.weights).map(|(p, w)| p * w).sum();
    let source: f64 = value.values[0].iter().zip(&mu.weights).map(|(j, w)| j * w).sum();
    target - source
}

/// Adjusted duality gap: primal cost − dual value, corrected for the
/// marginal mismatch of a non-converged iterate. Weak duality on the
/// discrete problem guarantees gap_adj ≥ 0 up to roundoff.
pub fn duality_gap_adjusted(
    primal_cost: f64,
    dual: f64,
    psi: &Potential,
    marginal_residual: f64,
) -> f64 {
    let psi_inf = psi.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    primal_cost - dual + psi_inf * marginal_residual
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Subtracts the μ-weighted mean so the constant null direction is pinned.
fn anchor(psi: &mut Potential, mu: &GridMeasure) {
    let mean: f64 = psi.values.iter().zip(&mu.weights).map(|(p, w)| p * w).sum();
    for v in &mut psi.values {
        *v -= mean;
    }
}

struct Iterate {
    psi: Potential,
    value: ValueField,
    policy: Policy,
    forward: ForwardResult,
    dual: f64,
    residual: f64,
    cost: f64,
}

fn evaluate(
    kernel: &TransitionKernel,
    config: &ProblemConfig,
    psi: Potential,
) -> Result<Iterate> {
    let (value, policy) = hjb::solve_qvi(kernel, &config.lagrangian, &psi)?;
    let forward = transport::forward_propagate(kernel, &policy, &config.mu)?;
    let dual = dual_value(&psi, &value, &config.mu, &config.nu);
    let residual = l1_distance(&forward.stopping.marginal, &config.nu.weights);
    let cost = transport::primal_cost(&config.lagrangian, kernel, &forward.occupation)?;
    Ok(Iterate { psi, value, policy, forward, dual, residual, cost })
}

/// Runs the subgradient ascent from ψ₀. Returns the best iterate by marginal
/// residual; `converged` means the residual met `eps_marginal`.
pub fn ascend(config: &ProblemConfig, psi0: &Potential) -> Result<Solution> {
    config.validate()?;
    let lattice = config.lattice()?;
    let kernel = build_kernel(&lattice, &config.control_vectors()?)?;
    let mut psi = psi0.clone();
    if psi.len() != lattice.num_nodes() {
        return Err(Error::Structural(format!(
            "initial potential has {} values for a {}-node lattice",
            psi.len(),
            lattice.num_nodes()
        )));
    }
    let eps = config.solver.eps_marginal;
    let max_iter = config.solver.max_iter;
    let mut history = Vec::new();
    let mut best: Option<Iterate> = None;
    let mut initial_residual = f64::INFINITY;
    let mut diverging_streak = 0usize;
    let mut iterations = 0usize;
    for n in 1..=max_iter {
        iterations = n;
        anchor(&mut psi, &config.mu);
        if config.solver.norm_every > 0 && n % config.solver.norm_every == 0 {
            psi = hjb::normalize_potential(&kernel, &config.lagrangian, &psi, 100_000)?;
        }
        let it = evaluate(&kernel, config, psi.clone())?;
        let gap_adj = duality_gap_adjusted(it.cost, it.dual, &it.psi, it.residual);
        history.push(HistoryEntry {
            iteration: n,
            dual_value: it.dual,
            marginal_residual: it.residual,
            gap_adj,
        });
        if n == 1 {
            initial_residual = it.residual.max(1e-30);
        }
        if it.residual > 10.0 * initial_residual {
            diverging_streak += 1;
            if diverging_streak >= 100 {
                return Err(Error::Numerical(format!(
                    "marginal residual diverged: {} > 10× initial {} for 100 consecutive \
                     iterations (after {n} iterations)",
                    it.residual, initial_residual
                )));
            }
        } else {
            diverging_streak = 0;
        }
        let current_marginal = it.forward.stopping.marginal.clone();
        let is_best = best.as_ref().map_or(true, |b| it.residual < b.residual);
        let done = it.residual <= eps;
        if is_best {
            best = Some(it);
        }
        if done || n == max_iter {
            break;
        }
        let step = match config.solver.step_rule {
            StepRule::Fixed => config.solver.step0,
            StepRule::Sqrt => config.solver.step0 / (n as f64).sqrt(),
        };
        // supergradient step ψ ← ψ + σ(ν − ρ_marg)
        for (v, (nu_w, rho_w)) in psi
            .values
            .iter_mut()
            .zip(config.nu.weights.iter().zip(current_marginal.iter()))
        {
            *v += step * (nu_w - rho_w);
        }
    }
    let best = best.expect("at least one iterate");
    let gap_adj = duality_gap_adjusted(best.cost, best.dual, &best.psi, best.residual);
    let report = SolveReport {
        dual_value: best.dual,
        primal_cost: best.cost,
        marginal_residual: best.residual,
        gap_adj,
        iterations,
        converged: best.residual <= eps,
        boundary_mass: best.forward.boundary_mass,
        terminal_mass: best.forward.terminal_mass,
        history,
    };
    Ok(Solution {
        psi: best.psi,
        value: best.value,
        policy: best.policy,
        forward: best.forward,
        report,
    })
}

//! Forward Fokker-Planck propagation with stopping.
//!
//! Pushes the source mass μ forward through the transition kernel under a
//! stop/continue policy: stopped mass deposits into the stopping distribution
//! ρ, continuing mass accumulates into the occupation measure η and scatters
//! through the kernel row of its control. All remaining mass stops at the
//! horizon. Total mass (alive + stopped) is conserved at every step.

use crate::hjb::{Decision, Policy};
use crate::lattice::TransitionKernel;
use crate::model::{GridMeasure, LagrangianSpec, SpaceTimeMeasure};
use crate::{norm, Error, Result};

/// Mass continuing from (k, x) with control u; only Continue branches carry
/// weight (policies from the DP are deterministic), so c[k][x][·] is either
/// all zero or a single nonzero entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    /// c[k][x][ctrl], k ∈ 0..K (nothing continues from k = K).
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl OccupationMeasure {
    pub fn zeros(num_steps: usize, num_nodes: usize, num_controls: usize) -> Self {
        OccupationMeasure { weights: vec![vec![vec![0.0; num_controls]; num_nodes]; num_steps] }
    }

    pub fn total(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|s| s.iter())
            .flat_map(|n| n.iter())
            .sum()
    }
}

/// The joint law ρ of (stopping step, stopped node), plus its spatial
/// marginal which the outer solver matches against ν.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingDistribution {
    pub rho: SpaceTimeMeasure,
    pub marginal: Vec<f64>,
}

/// Output of a forward pass with diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub occupation: OccupationMeasure,
    pub stopping: StoppingDistribution,
    /// Alive mass m[k][x] before the stop/continue split at step k.
    pub alive: Vec<Vec<f64>>,
    /// Mass that continued through boundary-clipped kernel rows, summed over
    /// steps. Large values mean the box radius R is too small.
    pub boundary_mass: f64,
    /// Mass forced to stop by the horizon truncation at k = K.
    pub terminal_mass: f64,
    /// Worst |alive + stopped − 1| observed across steps.
    pub conservation_drift: f64,
}

/// Propagates μ forward under the policy. Stopped mass deposits into ρ at its
/// (step, node); continuing mass scatters through the kernel.
pub fn forward_propagate(
    kernel: &TransitionKernel,
    policy: &Policy,
    mu: &GridMeasure,
) -> Result<ForwardResult> {
    let lat = &kernel.lattice;
    let nodes = lat.num_nodes();
    let steps = lat.num_steps;
    if mu.len() != nodes {
        return Err(Error::Structural(format!(
            "source measure has {} weights but the lattice has {nodes} nodes",
            mu.len()
        )));
    }
    if policy.decisions.len() != steps + 1 || policy.decisions.iter().any(|s| s.len() != nodes) {
        return Err(Error::Structural("policy shape does not match the lattice".into()));
    }
    if !mu.is_probability() {
        return Err(Error::Config(format!("source measure must have mass 1, got {}", mu.total)));
    }
    let mut occupation = OccupationMeasure::zeros(steps, nodes, kernel.num_controls());
    let mut rho = SpaceTimeMeasure::zeros(steps, nodes);
    let mut alive = vec![vec![0.0; nodes]; steps + 1];
    alive[0].copy_from_slice(&mu.weights);
    let mut stopped_so_far = 0.0;
    let mut boundary_mass = 0.0;
    let mut conservation_drift = 0.0_f64;
    for k in 0..steps {
        let (head, tail) = alive.split_at_mut(k + 1);
        let current = &head[k];
        let next = &mut tail[0];
        for x in 0..nodes {
            let m = current[x];
            if m == 0.0 {
                continue;
            }
            match policy.decisions[k][x] {
                Decision::Stop => {
                    rho.weights[k][x] += m;
                    stopped_so_far += m;
                }
                Decision::Continue(ctrl) => {
                    occupation.weights[k][x][ctrl] = m;
                    let row = kernel.row(x, ctrl);
                    if row.clipped {
                        boundary_mass += m;
                    }
                    for &(y, p) in &row.entries {
                        next[y] += p * m;
                    }
                }
            }
        }
        let alive_next: f64 = next.iter().sum();
        conservation_drift = conservation_drift.max((alive_next + stopped_so_far - 1.0).abs());
    }
    // horizon truncation: everything still alive stops at k = K
    let mut terminal_mass = 0.0;
    for x in 0..nodes {
        let m = alive[steps][x];
        if m > 0.0 {
            rho.weights[steps][x] += m;
            terminal_mass += m;
        }
    }
    let marginal = rho.spatial_marginal();
    Ok(ForwardResult {
        occupation,
        stopping: StoppingDistribution { rho, marginal },
        alive,
        boundary_mass,
        terminal_mass,
        conservation_drift,
    })
}

/// Discrete primal transport cost Σ L(t_k, x, u)·Δt·c[k][x][u].
pub fn primal_cost(
    lagrangian: &LagrangianSpec,
    kernel: &TransitionKernel,
    eta: &OccupationMeasure,
) -> Result<f64> {
    let lat = &kernel.lattice;
    let mut cost = 0.0;
    for (k, slice) in eta.weights.iter().enumerate() {
        let t = lat.time(k);
        for (x, per_ctrl) in slice.iter().enumerate() {
            let coord = lat.coord(x);
            for (ci, &w) in per_ctrl.iter().enumerate() {
                if w > 0.0 {
                    cost += lagrangian.eval(t, &coord, &kernel.controls[ci])? * lat.dt * w;
                }
            }
        }
    }
    Ok(cost)
}

/// Result of the second-moment inequality ∫|y|²ρ ≤ ∫|x|²μ + C·cost.
#[derive(Debug, Clone, Copy)]
pub struct MomentBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    /// Failure signals a solver bug, not a user error.
    pub pass: bool,
}

/// Explicit constant for the moment bound, computed conservatively from the
/// declared coercivity constants on the box. Bounded controls:
/// (d + 2Rū + √d·h·ū)/c; superlinear drift: (d + sup_box H(·,·,2x)⁺ +
/// √d·h·u_max)/c + 1. The h-terms absorb the chain's extra per-step variance
/// h|u_j|Δt relative to unit diffusion.
pub fn moment_bound_constant(
    lagrangian: &LagrangianSpec,
    kernel: &TransitionKernel,
) -> Result<f64> {
    let lat = &kernel.lattice;
    let c = lagrangian.coercivity.0;
    let d = lat.dim as f64;
    let r = lat.radius();
    let sqrt_d = d.sqrt();
    if let Some(ub) = lagrangian.u_bound {
        return Ok((d + 2.0 * r * ub + sqrt_d * lat.h * ub) / c);
    }
    // sup over the box and horizon of H(t, x, 2x), scanned on grid nodes;
    // H(t,·,2x) is monotone in g so the endpoints of [0,T] suffice
    let mut h_max = 0.0_f64;
    for node in 0..lat.num_nodes() {
        let x = lat.coord(node);
        let z = [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]];
        for t in [0.0, lat.horizon()] {
            h_max = h_max.max(lagrangian.hamiltonian(t, &x, &z)?.value);
        }
    }
    let u_max = kernel.controls.iter().map(norm).fold(0.0, f64::max);
    Ok((d + h_max + sqrt_d * lat.h * u_max) / c + 1.0)
}

/// Evaluates both sides of the moment bound for a completed forward pass.
pub fn check_moment_bound(
    mu: &GridMeasure,
    stopping: &StoppingDistribution,
    cost: f64,
    lagrangian: &LagrangianSpec,
    kernel: &TransitionKernel,
) -> Result<MomentBoundReport> {
    let lat = &kernel.lattice;
    let second_moment = |weights: &[f64]| -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(node, w)| {
                let x = lat.coord(node);
                w * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
            })
            .sum()
    };
    let lhs = second_moment(&stopping.marginal);
    let base = second_moment(&mu.weights);
    let constant = moment_bound_constant(lagrangian, kernel)?;
    let rhs = base + constant * cost;
    Ok(MomentBoundReport { lhs, rhs, constant, pass: lhs <= rhs + 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{Decision, Policy};
    use crate::lattice::{build_kernel, build_lattice};
    use crate::model::{LagrangianSpec, TimeProfile};

    fn dirac_center(kernel: &TransitionKernel) -> GridMeasure {
        GridMeasure::dirac(kernel.lattice.num_nodes(), kernel.lattice.num_nodes() / 2)
    }

    #[test]
    fn stop_everywhere_deposits_mu_at_step_zero() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = GridMeasure::new(vec![0.2, 0.1, 0.4, 0.1, 0.2]).unwrap();
        let policy = Policy::stop_everywhere(lat.num_steps, lat.num_nodes());
        let fwd = forward_propagate(&kernel, &policy, &mu).unwrap();
        assert_eq!(fwd.stopping.rho.weights[0], mu.weights);
        assert_eq!(fwd.occupation.total(), 0.0);
        assert_eq!(fwd.terminal_mass, 0.0);
        assert!((fwd.stopping.rho.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn one_kernel_row_spread() {
        // continue once with u = 0 from δ₀, then stop
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = dirac_center(&kernel);
        let mut policy = Policy::stop_everywhere(lat.num_steps, lat.num_nodes());
        policy.decisions[0][2] = Decision::Continue(0);
        let fwd = forward_propagate(&kernel, &policy, &mu).unwrap();
        assert_eq!(fwd.stopping.rho.weights[1][1], 0.25);
        assert_eq!(fwd.stopping.rho.weights[1][2], 0.5);
        assert_eq!(fwd.stopping.rho.weights[1][3], 0.25);
        assert!((fwd.stopping.rho.total() - 1.0).abs() < 1e-15);
        assert_eq!(fwd.conservation_drift, 0.0);
    }

    #[test]
    fn primal_cost_single_term() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = dirac_center(&kernel);
        let mut policy = Policy::stop_everywhere(lat.num_steps, lat.num_nodes());
        policy.decisions[0][2] = Decision::Continue(0);
        let fwd = forward_propagate(&kernel, &policy, &mu).unwrap();
        let lag = LagrangianSpec::quadratic(1.0, TimeProfile::Constant);
        let cost = primal_cost(&lag, &kernel, &fwd.occupation).unwrap();
        // L(u=0) = 1, Δt = 0.5, mass 1
        assert!((cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_occupation_has_zero_cost() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let eta = OccupationMeasure::zeros(2, 5, 1);
        let lag = LagrangianSpec::quadratic(1.0, TimeProfile::Constant);
        assert_eq!(primal_cost(&lag, &kernel, &eta).unwrap(), 0.0);
    }

    #[test]
    fn moment_bound_immediate_stop_is_equality() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = GridMeasure::new(vec![0.25, 0.0, 0.5, 0.0, 0.25]).unwrap();
        let policy = Policy::stop_everywhere(lat.num_steps, lat.num_nodes());
        let fwd = forward_propagate(&kernel, &policy, &mu).unwrap();
        let lag = LagrangianSpec::quadratic(1.0, TimeProfile::Constant);
        let report = check_moment_bound(&mu, &fwd.stopping, 0.0, &lag, &kernel).unwrap();
        assert!(report.pass);
        assert!((report.lhs - report.rhs).abs() < 1e-14);
    }

    #[test]
    fn moment_bound_one_step_diffusion() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = dirac_center(&kernel);
        let mut policy = Policy::stop_everywhere(lat.num_steps, lat.num_nodes());
        policy.decisions[0][2] = Decision::Continue(0);
        let fwd = forward_propagate(&kernel, &policy, &mu).unwrap();
        let lag = LagrangianSpec::quadratic(1.0, TimeProfile::Constant);
        let cost = primal_cost(&lag, &kernel, &fwd.occupation).unwrap();
        let report = check_moment_bound(&mu, &fwd.stopping, cost, &lag, &kernel).unwrap();
        // lhs = d·Δt = 0.5 from the diffusion spread
        assert!((report.lhs - 0.5).abs() < 1e-15);
        assert!(report.constant >= 1.0);
        assert!(report.pass, "lhs={} rhs={}", report.lhs, report.rhs);
    }

    #[test]
    fn policy_shape_mismatch_is_structural() {
        let lat = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let kernel = build_kernel(&lat, &[[0.0; 3]]).unwrap();
        let mu = dirac_center(&kernel);
        let policy = Policy::stop_everywhere(7, 5);
        assert!(matches!(
            forward_propagate(&kernel, &policy, &mu),
            Err(Error::Structural(_))
        ));
    }
}

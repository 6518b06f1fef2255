//! Euler–Maruyama simulation of the controlled SDE with barrier stopping,
//! plus the statistical checks that tie the sampled paths back to the
//! deterministic pipeline: stopped-distribution agreement, cost agreement,
//! and the martingale property of the verification theorem.
//!
//! The simulated process deliberately uses Gaussian increments rather than
//! kernel-sampled jumps: it tests the continuum-SDE reading of the policy
//! against the chain-based forward answer, so every comparison carries an
//! O(√Δt + h) discretization allowance alongside the statistical bound.
//! Control and barrier are looked up at the nearest lattice node — the same
//! discrete policy the forward propagator used, with no interpolation.

use crate::hjb::{self, Decision, Policy, Potential, ValueField};
use crate::lattice::TransitionKernel;
use crate::model::{GridMeasure, LagrangianSpec};
use crate::transport::StoppingDistribution;
use crate::{Error, Result, Vec3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Z-value of the two-sided 99% normal confidence interval.
const Z_99: f64 = 2.575_829_303_548_901;

/// One simulated path's summary.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// Step index at which the path stopped (K at the forced horizon stop).
    pub stop_step: usize,
    /// Nearest lattice node of the stopped position.
    pub stop_node: usize,
    pub stop_position: Vec3,
    /// Accumulated Σ L(t_j, X_j, u_j)·Δt up to the stop.
    pub running_cost: f64,
    /// M_{t∧τ} = J(k∧τ, X_{k∧τ}) − Σ_{j<k∧τ} L·Δt at each checkpoint.
    pub m_samples: Vec<f64>,
    /// Nearest node at each checkpoint time t∧τ (frozen after the stop).
    pub checkpoint_nodes: Vec<usize>,
}

/// A batch of simulated paths sharing one policy and one seed.
#[derive(Debug, Clone)]
pub struct PathBatch {
    /// Time-step indices at which M was recorded (always includes 0 and K).
    pub checkpoints: Vec<usize>,
    pub paths: Vec<PathRecord>,
    pub seed: u64,
}

impl PathBatch {
    /// Empirical stopped spatial histogram (per lattice node, mass 1/N each).
    pub fn stopped_histogram(&self, num_nodes: usize) -> Vec<f64> {
        let mut hist = vec![0.0; num_nodes];
        let w = 1.0 / self.paths.len() as f64;
        for p in &self.paths {
            hist[p.stop_node] += w;
        }
        hist
    }

    pub fn mean_cost(&self) -> f64 {
        self.paths.iter().map(|p| p.running_cost).sum::<f64>() / self.paths.len() as f64
    }

    fn cost_std_error(&self) -> f64 {
        let n = self.paths.len() as f64;
        let mean = self.mean_cost();
        let var = self
            .paths
            .iter()
            .map(|p| (p.running_cost - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }
}

fn sample_initial(mu: &GridMeasure, rng: &mut impl Rng) -> usize {
    let target: f64 = rng.gen::<f64>() * mu.total;
    let mut acc = 0.0;
    for (node, &w) in mu.weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return node;
        }
    }
    mu.weights.len() - 1
}

/// Simulates N paths of X_{n+1} = X_n + u*(t_n, ⌊X_n⌉)·Δt + √Δt·ξ_n, stopping
/// each at its first barrier entry (or at k = K), fully reproducible given
/// the seed. Records M_{t∧τ} at 5 evenly spaced checkpoints.
pub fn simulate(
    kernel: &TransitionKernel,
    lagrangian: &LagrangianSpec,
    policy: &Policy,
    value: &ValueField,
    psi: &Potential,
    mu: &GridMeasure,
    n: usize,
    seed: u64,
) -> Result<PathBatch> {
    let lattice = kernel.lattice;
    let nodes = lattice.num_nodes();
    let steps = lattice.num_steps;
    if n == 0 {
        return Err(Error::Domain("montecarlo: need at least one path".into()));
    }
    if psi.len() != nodes || mu.len() != nodes {
        return Err(Error::Structural(
            "montecarlo: potential/measure size does not match the lattice".into(),
        ));
    }
    if policy.num_steps() != steps || value.num_steps() != steps {
        return Err(Error::Structural(
            "montecarlo: policy/value horizon does not match the lattice".into(),
        ));
    }
    if !mu.is_probability() {
        return Err(Error::Domain("montecarlo: μ must be a probability".into()));
    }
    let barrier = hjb::extract_barrier(value, psi);
    let checkpoints: Vec<usize> = if steps <= 4 {
        (0..=steps).collect()
    } else {
        let mut c: Vec<usize> = (0..=4).map(|i| i * steps / 4).collect();
        c.dedup();
        c
    };
    let sqrt_dt = lattice.dt.sqrt();
    let radius = lattice.radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(n);
    for _ in 0..n {
        let start = sample_initial(mu, &mut rng);
        let mut x = lattice.coord(start);
        let mut cost = 0.0;
        let mut m_samples = Vec::with_capacity(checkpoints.len());
        let mut checkpoint_nodes = Vec::with_capacity(checkpoints.len());
        let mut stopped: Option<(usize, usize, Vec3)> = None;
        let mut ck = 0;
        for k in 0..=steps {
            let node = lattice.nearest_node(&x);
            let hit = stopped.is_none()
                && (k == steps
                    || barrier[k][node]
                    || policy.decisions[k][node] == Decision::Stop);
            if hit {
                stopped = Some((k, node, x));
            }
            if ck < checkpoints.len() && checkpoints[ck] == k {
                // After τ the process and its cost are frozen, so M is too.
                let (mk, mnode) = match stopped {
                    Some((ks, ns, _)) if ks < k => (psi.values[ns], ns),
                    _ => (value.values[k][node], node),
                };
                m_samples.push(mk - cost);
                checkpoint_nodes.push(mnode);
                ck += 1;
            }
            if stopped.is_some() {
                if ck == checkpoints.len() {
                    break;
                }
                continue;
            }
            let u_idx = match policy.decisions[k][node] {
                Decision::Continue(u) => u,
                Decision::Stop => unreachable!("barrier and policy disagree"),
            };
            let u = kernel.controls[u_idx];
            cost += lagrangian.eval(lattice.time(k), &x, &u)? * lattice.dt;
            for j in 0..lattice.dim {
                let xi: f64 = rng.sample(StandardNormal);
                x[j] = (x[j] + u[j] * lattice.dt + sqrt_dt * xi).clamp(-radius, radius);
            }
        }
        let (stop_step, stop_node, stop_position) =
            stopped.expect("every path stops by k = K");
        paths.push(PathRecord {
            stop_step,
            stop_node,
            stop_position,
            running_cost: cost,
            m_samples,
            checkpoint_nodes,
        });
    }
    Ok(PathBatch { checkpoints, paths, seed })
}

/// Discretization allowance O(√Δt + h) scaled by the certified upper
/// coercivity constant over the truncated domain; reported alongside every
/// statistical bound so the tolerance provenance is visible.
pub fn discretization_allowance(lagrangian: &LagrangianSpec, kernel: &TransitionKernel) -> f64 {
    let lattice = kernel.lattice;
    let u_max = kernel.controls.iter().map(crate::norm).fold(0.0, f64::max);
    let r = lattice.radius();
    let (_, c_upper) = lagrangian.coercivity;
    (lattice.dt.sqrt() + lattice.h)
        * c_upper
        * (1.0 + u_max.powf(lagrangian.p) + r.powf(lagrangian.q))
}

/// Comparison of the empirical stopped histogram against ρ_marg.
#[derive(Debug, Clone)]
pub struct DistributionReport {
    pub l1_distance: f64,
    /// 3·(√(#bins/N) + allowance).
    pub bound: f64,
    pub allowance: f64,
    /// Per-bin (observed − expected)/σ under the binomial model.
    pub z_scores: Vec<f64>,
    /// The bound exceeds the maximum possible L1 distance: the sample is too
    /// small for the comparison to have any power.
    pub low_power: bool,
    pub pass: bool,
}

pub fn verify_distribution(
    batch: &PathBatch,
    rho: &StoppingDistribution,
    allowance: f64,
) -> Result<DistributionReport> {
    let expected = &rho.marginal;
    let hist = batch.stopped_histogram(expected.len());
    let n = batch.paths.len() as f64;
    let bins = expected.len() as f64;
    let l1_distance: f64 = hist
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let bound = 3.0 * ((bins / n).sqrt() + allowance);
    let z_scores = expected
        .iter()
        .zip(&hist)
        .map(|(&p, &f)| {
            let var = n * p * (1.0 - p);
            if var > 0.0 {
                (f - p) * n / var.sqrt()
            } else {
                // Degenerate bin: any observed mass is an exact violation.
                f * n
            }
        })
        .collect();
    Ok(DistributionReport {
        l1_distance,
        bound,
        allowance,
        z_scores,
        low_power: bound >= 2.0,
        pass: l1_distance <= bound,
    })
}

/// One checkpoint-pair martingale increment with its 99% CI.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleIncrement {
    pub from_step: usize,
    pub to_step: usize,
    pub mean: f64,
    pub half_width: f64,
}

impl MartingaleIncrement {
    pub fn contains_zero(&self) -> bool {
        self.mean.abs() <= self.half_width
    }

    /// Supermartingale one-sided sanity: the CI's lower edge is below 0.
    pub fn lower_edge_below_zero(&self) -> bool {
        self.mean - self.half_width < 0.0
    }
}

#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub increments: Vec<MartingaleIncrement>,
    /// Every increment CI contains 0 (two-sided test for the optimal batch).
    pub pass_two_sided: bool,
    /// Every increment CI contains 0 or lies below it.
    pub pass: bool,
}

/// Tests E[M_{t∧τ} − M_{s∧τ}] = 0 for consecutive checkpoint pairs.
pub fn martingale_test(batch: &PathBatch) -> Result<MartingaleReport> {
    let n = batch.paths.len() as f64;
    let mut increments = Vec::new();
    for w in 0..batch.checkpoints.len().saturating_sub(1) {
        let diffs: Vec<f64> = batch
            .paths
            .iter()
            .map(|p| p.m_samples[w + 1] - p.m_samples[w])
            .collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        increments.push(MartingaleIncrement {
            from_step: batch.checkpoints[w],
            to_step: batch.checkpoints[w + 1],
            mean,
            half_width: Z_99 * (var / n).sqrt(),
        });
    }
    let pass_two_sided = increments.iter().all(MartingaleIncrement::contains_zero);
    let pass = increments
        .iter()
        .all(|i| i.contains_zero() || i.lower_edge_below_zero());
    Ok(MartingaleReport { increments, pass_two_sided, pass })
}

/// Empirical mean cost vs the forward propagator's primal cost, within
/// 3 standard errors plus the discretization allowance.
#[derive(Debug, Clone, Copy)]
pub struct CostReport {
    pub empirical_mean: f64,
    pub std_error: f64,
    pub reference: f64,
    pub allowance: f64,
    pub pass: bool,
}

pub fn cost_consistency(batch: &PathBatch, primal_cost: f64, allowance: f64) -> CostReport {
    let empirical_mean = batch.mean_cost();
    let std_error = batch.cost_std_error();
    CostReport {
        empirical_mean,
        std_error,
        reference: primal_cost,
        allowance,
        pass: (empirical_mean - primal_cost).abs() <= 3.0 * std_error + allowance,
    }
}

//! Problem configuration: the validated bundle of Lagrangian, measures,
//! grid, control grid, and solver parameters, plus TOML parsing and measure
//! CSV loading for the CLI.
//!
//! Config file layout (TOML):
//!
//! ```toml
//! [lagrangian]
//! kind = "power_law"          # or "bounded_control"
//! p = 2.0
//! q = 2.0
//! a_u = 0.5
//! a_x = 0.0
//! a_0 = 1.0
//! time_profile = "constant"   # "strictly_increasing" | "strictly_decreasing"
//! time_rate = 1.0             # profile slope, monotone profiles only
//! u_bound = 1.0               # bounded_control only
//! c = 0.1                     # certified coercivity lower constant
//! C = 10.0                    # certified coercivity upper constant
//!
//! [grid]
//! d = 1
//! h = 0.2
//! dt = 0.01
//! T = 1.0
//! R = 2.0
//!
//! [controls]
//! per_axis = 3
//! max = 1.0
//!
//! [measures]
//! mu_file = "mu.csv"          # CSV: node coordinates, weight
//! nu_file = "nu.csv"
//!
//! [solver]
//! eps_gap = 1e-6
//! eps_marginal = 1e-4
//! eps_mass = 1e-3
//! step0 = 1.0
//! step_rule = "sqrt"          # or "fixed"
//! max_iter = 10000
//! norm_every = 0              # 0 = never re-normalize
//!
//! [mc]
//! n = 100000
//! seed = 7
//! ```

use crate::lattice::{build_kernel, build_lattice, cfl_number, Lattice};
use crate::model::{ControlGrid, GridMeasure, LagrangianKind, LagrangianSpec, TimeProfile};
use crate::{Error, Result, Vec3};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed,
    /// σ_n = step0 / √n.
    Sqrt,
}

#[derive(Debug, Clone, Copy)]
pub struct GridParams {
    pub dim: usize,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub box_radius: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ControlParams {
    pub per_axis: usize,
    pub max: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    pub eps_gap: f64,
    pub eps_marginal: f64,
    pub eps_mass: f64,
    pub step0: f64,
    pub step_rule: StepRule,
    pub max_iter: usize,
    /// Re-normalize ψ every this many ascent iterations; 0 disables.
    pub norm_every: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            eps_gap: 1e-6,
            eps_marginal: 1e-4,
            eps_mass: 1e-3,
            step0: 1.0,
            step_rule: StepRule::Sqrt,
            max_iter: 10_000,
            norm_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct McParams {
    pub n: usize,
    pub seed: u64,
}

/// The fully validated problem instance.
#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub lagrangian: LagrangianSpec,
    pub mu: GridMeasure,
    pub nu: GridMeasure,
    pub grid: GridParams,
    pub controls: ControlParams,
    pub solver: SolverParams,
    pub mc: Option<McParams>,
}

impl ProblemConfig {
    pub fn lattice(&self) -> Result<Lattice> {
        build_lattice(
            self.grid.dim,
            self.grid.h,
            self.grid.dt,
            self.grid.horizon,
            self.grid.box_radius,
        )
    }

    /// The finite control grid U_h, restricted to the control ball for
    /// bounded-control Lagrangians.
    pub fn control_vectors(&self) -> Result<Vec<Vec3>> {
        let grid = ControlGrid::regular(self.grid.dim, self.controls.per_axis, self.controls.max)?;
        let grid = match (&self.lagrangian.kind, self.lagrangian.u_bound) {
            (LagrangianKind::BoundedControl, Some(ub)) => grid.restrict_to_ball(ub)?,
            _ => grid,
        };
        Ok(grid.vectors)
    }

    /// Checks every cross-field invariant, reporting all failures together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let lattice = match self.lattice() {
            Ok(l) => Some(l),
            Err(e) => {
                problems.push(format!("grid: {e}"));
                None
            }
        };
        if let Err(e) = self.lagrangian.validate(self.grid.horizon, self.grid.box_radius) {
            problems.push(format!("lagrangian: {e}"));
        }
        match self.control_vectors() {
            Ok(vectors) => {
                if let Some(lat) = &lattice {
                    let cfl = cfl_number(lat, &vectors);
                    if cfl > 1.0 + 1e-12 {
                        problems.push(format!(
                            "grid/controls: CFL number dt·(d/h² + max|u|₁/h) = {cfl:.6} exceeds 1 \
                             (h={}, dt={}, max|u|₁={})",
                            lat.h,
                            lat.dt,
                            vectors
                                .iter()
                                .map(|u| u.iter().map(|v| v.abs()).sum::<f64>())
                                .fold(0.0, f64::max)
                        ));
                    }
                }
            }
            Err(e) => problems.push(format!("controls: {e}")),
        }
        if let Some(lat) = &lattice {
            for (name, measure) in [("mu", &self.mu), ("nu", &self.nu)] {
                if measure.len() != lat.num_nodes() {
                    problems.push(format!(
                        "measures.{name}: {} weights for a {}-node lattice",
                        measure.len(),
                        lat.num_nodes()
                    ));
                    continue;
                }
                if !measure.is_probability() {
                    problems.push(format!(
                        "measures.{name}: total mass {} is not 1",
                        measure.total
                    ));
                }
                let offending: Vec<usize> = (0..measure.len())
                    .filter(|&n| measure.weights[n] > 0.0 && lat.is_boundary(n))
                    .collect();
                if !offending.is_empty() {
                    problems.push(format!(
                        "measures.{name}: support touches the box boundary at nodes {offending:?} \
                         (enlarge R)"
                    ));
                }
            }
        }
        if self.solver.step0 <= 0.0 {
            problems.push("solver.step0 must be positive".into());
        }
        if self.solver.max_iter == 0 {
            problems.push("solver.max_iter must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Convenience: validated kernel for this configuration.
    pub fn kernel(&self) -> Result<crate::lattice::TransitionKernel> {
        build_kernel(&self.lattice()?, &self.control_vectors()?)
    }
}

// ---------------------------------------------------------------------------
// TOML front-end
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    lagrangian: RawLagrangian,
    grid: RawGrid,
    controls: RawControls,
    measures: RawMeasures,
    solver: Option<RawSolver>,
    mc: Option<RawMc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLagrangian {
    kind: String,
    p: Option<f64>,
    q: Option<f64>,
    a_u: f64,
    a_x: f64,
    a_0: f64,
    time_profile: Option<String>,
    time_rate: Option<f64>,
    u_bound: Option<f64>,
    c: Option<f64>,
    #[serde(rename = "C")]
    c_upper: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    d: usize,
    h: f64,
    dt: f64,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "R")]
    box_radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControls {
    per_axis: usize,
    max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasures {
    mu_file: String,
    nu_file: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eps_gap: Option<f64>,
    eps_marginal: Option<f64>,
    eps_mass: Option<f64>,
    step0: Option<f64>,
    step_rule: Option<String>,
    max_iter: Option<usize>,
    norm_every: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n: usize,
    seed: u64,
}

fn parse_profile(raw: &RawLagrangian) -> Result<TimeProfile> {
    let name = raw.time_profile.as_deref().unwrap_or("constant");
    let rate = raw.time_rate.unwrap_or(1.0);
    match name {
        "constant" => Ok(TimeProfile::Constant),
        "strictly_increasing" => Ok(TimeProfile::StrictlyIncreasing { rate }),
        "strictly_decreasing" => Ok(TimeProfile::StrictlyDecreasing { rate }),
        other => Err(Error::Config(format!(
            "lagrangian.time_profile: unknown profile {other:?} (expected constant, \
             strictly_increasing, or strictly_decreasing)"
        ))),
    }
}

fn build_lagrangian(raw: &RawLagrangian, grid: &GridParams) -> Result<LagrangianSpec> {
    let kind = match raw.kind.as_str() {
        "power_law" => LagrangianKind::PowerLaw,
        "bounded_control" => LagrangianKind::BoundedControl,
        other => {
            return Err(Error::Config(format!(
                "lagrangian.kind: unknown kind {other:?} (expected power_law or bounded_control)"
            )))
        }
    };
    let mut spec = LagrangianSpec {
        kind,
        p: raw.p.unwrap_or(2.0),
        q: raw.q.unwrap_or(2.0),
        a_u: raw.a_u,
        a_x: raw.a_x,
        a_0: raw.a_0,
        time_profile: parse_profile(raw)?,
        u_bound: raw.u_bound,
        coercivity: (1.0, 1.0),
    };
    spec.coercivity = match (raw.c, raw.c_upper) {
        (Some(c), Some(cc)) => (c, cc),
        _ => spec.suggest_coercivity(grid.horizon, grid.box_radius),
    };
    Ok(spec)
}

/// Reads a measure CSV (`x[,y[,z]],weight` with a header row), mapping each
/// row onto its lattice node. Coordinates must land on nodes within 1e−9·h.
pub fn load_measure_csv(path: &Path, lattice: &Lattice) -> Result<GridMeasure> {
    GridMeasure::new(load_node_values_csv(path, lattice)?)
}

/// Reads per-node values (`x[,y[,z]],value` with a header row) without any
/// sign restriction; unlisted nodes get 0. Used for measures and potentials.
pub fn load_node_values_csv(path: &Path, lattice: &Lattice) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut weights = vec![0.0; lattice.num_nodes()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if record.len() != lattice.dim + 1 {
            return Err(Error::Config(format!(
                "{}: row {} has {} fields, expected {} coordinates + weight",
                path.display(),
                line + 2,
                record.len(),
                lattice.dim
            )));
        }
        let mut x = [0.0; 3];
        for j in 0..lattice.dim {
            x[j] = record[j].parse::<f64>().map_err(|e| {
                Error::Config(format!("{}: row {}: bad coordinate: {e}", path.display(), line + 2))
            })?;
        }
        let w: f64 = record[lattice.dim].parse().map_err(|e| {
            Error::Config(format!("{}: row {}: bad weight: {e}", path.display(), line + 2))
        })?;
        let node = lattice.nearest_node(&x);
        let coord = lattice.coord(node);
        for j in 0..lattice.dim {
            if (coord[j] - x[j]).abs() > 1e-9 * lattice.h.max(1.0) {
                return Err(Error::Config(format!(
                    "{}: row {}: point {:?} is not a lattice node (nearest is {:?})",
                    path.display(),
                    line + 2,
                    &x[..lattice.dim],
                    &coord[..lattice.dim]
                )));
            }
        }
        weights[node] += w;
    }
    Ok(weights)
}

/// Parses and fully validates a configuration file. Measure paths are
/// resolved relative to the config file's directory.
pub fn parse_config(path: &Path) -> Result<ProblemConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let grid = GridParams {
        dim: raw.grid.d,
        h: raw.grid.h,
        dt: raw.grid.dt,
        horizon: raw.grid.horizon,
        box_radius: raw.grid.box_radius,
    };
    let lattice = build_lattice(grid.dim, grid.h, grid.dt, grid.horizon, grid.box_radius)?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mu = load_measure_csv(&base.join(&raw.measures.mu_file), &lattice)?;
    let nu = load_measure_csv(&base.join(&raw.measures.nu_file), &lattice)?;
    let lagrangian = build_lagrangian(&raw.lagrangian, &grid)?;
    let defaults = SolverParams::default();
    let solver = match &raw.solver {
        None => defaults,
        Some(s) => SolverParams {
            eps_gap: s.eps_gap.unwrap_or(defaults.eps_gap),
            eps_marginal: s.eps_marginal.unwrap_or(defaults.eps_marginal),
            eps_mass: s.eps_mass.unwrap_or(defaults.eps_mass),
            step0: s.step0.unwrap_or(defaults.step0),
            step_rule: match s.step_rule.as_deref() {
                None | Some("sqrt") => StepRule::Sqrt,
                Some("fixed") => StepRule::Fixed,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "solver.step_rule: unknown rule {other:?} (expected sqrt or fixed)"
                    )))
                }
            },
            max_iter: s.max_iter.unwrap_or(defaults.max_iter),
            norm_every: s.norm_every.unwrap_or(defaults.norm_every),
        },
    };
    let mc = raw.mc.as_ref().map(|m| McParams { n: m.n, seed: m.seed });
    let config = ProblemConfig { lagrangian, mu, nu, grid, controls: ControlParams {
        per_axis: raw.controls.per_axis,
        max: raw.controls.max,
    }, solver, mc };
    config.validate()?;
    Ok(config)
}

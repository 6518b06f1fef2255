//! Command suite and result emission.
//!
//! Every command reads a TOML problem configuration and emits CSV artifacts
//! with a header row, fixed column order, and floats at 17 significant
//! digits. Exit codes: 0 success, 1 configuration error, 2 numerical
//! non-convergence, 3 infeasibility certificate.

use crate::config::{load_node_values_csv, parse_config};
use crate::hjb::{self, Decision, Policy, Potential};
use crate::lattice::{Lattice, TransitionKernel};
use crate::oracle::{self, OracleOutcome};
use crate::transport;
use crate::{dualsolve, montecarlo, Error, Result};
use clap::{Parser, Subcommand};
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "stoptrans", version, about = "Stochastic mass transport with controlled drift and free stopping time")]
struct Cli {
    /// Directory for CSV artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: dual ascent, then all artifacts.
    Solve { config: PathBuf },
    /// Single backward obstacle solve for a given potential.
    Hjb {
        config: PathBuf,
        /// Potential CSV (node coordinates, value).
        #[arg(long)]
        psi: PathBuf,
    },
    /// Single forward propagation under a given policy.
    Forward {
        config: PathBuf,
        /// Policy CSV (k, node, action) with action = `stop` or a control index.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Exact LP solve (guarded sizes) compared against the ascent solver.
    Oracle { config: PathBuf },
    /// Monte-Carlo simulation and statistical verification.
    Mc {
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Supersolution residuals, Hölder diagnostic, moment-bound report.
    Diag {
        config: PathBuf,
        #[arg(long)]
        psi: PathBuf,
    },
}

/// Entry point for the binary; maps errors onto the exit-code contract.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Same as [`run`] with explicit arguments (testable).
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exit codes itself.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Structural(_) | Error::Domain(_) | Error::Io(_) => 1,
        Error::Numerical(_) => 2,
        Error::Infeasible(_) => 3,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Solve { config } => cmd_solve(config, &cli.out),
        Command::Hjb { config, psi } => cmd_hjb(config, psi, &cli.out),
        Command::Forward { config, policy } => cmd_forward(config, policy, &cli.out),
        Command::Oracle { config } => cmd_oracle(config, &cli.out),
        Command::Mc { config, n, seed } => cmd_mc(config, *n, *seed, &cli.out),
        Command::Diag { config, psi } => cmd_diag(config, psi, &cli.out),
    }
}

// ---------------------------------------------------------------------------
// Emission helpers: 17 significant digits, header row, fixed column order.
// ---------------------------------------------------------------------------

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn open(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn coord_header(dim: usize) -> &'static str {
    match dim {
        1 => "x",
        2 => "x,y",
        _ => "x,y,z",
    }
}

fn coord_fields(lattice: &Lattice, node: usize) -> String {
    let c = lattice.coord(node);
    c[..lattice.dim]
        .iter()
        .map(|v| fmt(*v))
        .collect::<Vec<_>>()
        .join(",")
}

fn write_potential(dir: &Path, name: &str, lattice: &Lattice, psi: &Potential) -> Result<()> {
    let mut w = open(dir, name)?;
    writeln!(w, "node,{},psi", coord_header(lattice.dim))?;
    for node in 0..lattice.num_nodes() {
        writeln!(w, "{node},{},{}", coord_fields(lattice, node), fmt(psi.values[node]))?;
    }
    Ok(())
}

fn write_space_time(
    dir: &Path,
    name: &str,
    lattice: &Lattice,
    col: &str,
    values: &[Vec<f64>],
) -> Result<()> {
    let mut w = open(dir, name)?;
    writeln!(w, "k,node,{},{col}", coord_header(lattice.dim))?;
    for (k, row) in values.iter().enumerate() {
        for (node, v) in row.iter().enumerate() {
            writeln!(w, "{k},{node},{},{}", coord_fields(lattice, node), fmt(*v))?;
        }
    }
    Ok(())
}

fn write_barrier(
    dir: &Path,
    lattice: &Lattice,
    barrier: &[Vec<bool>],
) -> Result<()> {
    let mut w = open(dir, "barrier.csv")?;
    writeln!(w, "k,node,{},stopped", coord_header(lattice.dim))?;
    for (k, row) in barrier.iter().enumerate() {
        for (node, &b) in row.iter().enumerate() {
            writeln!(w, "{k},{node},{},{}", coord_fields(lattice, node), b as u8)?;
        }
    }
    Ok(())
}

fn write_report(dir: &Path, name: &str, rows: &[(&str, String)]) -> Result<()> {
    let mut w = open(dir, name)?;
    writeln!(w, "key,value")?;
    for (k, v) in rows {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

fn write_solution_artifacts(
    dir: &Path,
    lattice: &Lattice,
    sol: &dualsolve::Solution,
) -> Result<()> {
    write_potential(dir, "psi.csv", lattice, &sol.psi)?;
    write_space_time(dir, "J.csv", lattice, "J", &sol.value.values)?;
    write_barrier(dir, lattice, &hjb::extract_barrier(&sol.value, &sol.psi))?;
    write_space_time(dir, "m.csv", lattice, "mass", &sol.forward.alive)?;
    write_space_time(dir, "rho.csv", lattice, "mass", &sol.forward.stopping.rho.weights)?;
    let mut w = open(dir, "history.csv")?;
    writeln!(w, "iteration,dual_value,marginal_residual,gap_adj")?;
    for h in &sol.report.history {
        writeln!(
            w,
            "{},{},{},{}",
            h.iteration,
            fmt(h.dual_value),
            fmt(h.marginal_residual),
            fmt(h.gap_adj)
        )?;
    }
    drop(w);
    let r = &sol.report;
    write_report(
        dir,
        "report.csv",
        &[
            ("dual_value", fmt(r.dual_value)),
            ("primal_cost", fmt(r.primal_cost)),
            ("marginal_residual", fmt(r.marginal_residual)),
            ("gap_adj", fmt(r.gap_adj)),
            ("iterations", r.iterations.to_string()),
            ("converged", r.converged.to_string()),
            ("boundary_mass", fmt(r.boundary_mass)),
            ("terminal_mass", fmt(r.terminal_mass)),
        ],
    )
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn load_potential(path: &Path, lattice: &Lattice) -> Result<Potential> {
    Potential::new(load_node_values_csv(path, lattice)?)
}

fn load_policy(path: &Path, lattice: &Lattice, kernel: &TransitionKernel) -> Result<Policy> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let steps = lattice.num_steps;
    let nodes = lattice.num_nodes();
    let mut policy = Policy::stop_everywhere(steps, nodes);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let ctx = |msg: &dyn Display| {
            Error::Config(format!("{}: row {}: {msg}", path.display(), line + 2))
        };
        if record.len() != 3 {
            return Err(ctx(&"expected columns k,node,action"));
        }
        let k: usize = record[0].parse().map_err(|e| ctx(&e))?;
        let node: usize = record[1].parse().map_err(|e| ctx(&e))?;
        if k > steps || node >= nodes {
            return Err(ctx(&format!("(k={k}, node={node}) outside the lattice")));
        }
        policy.decisions[k][node] = if record[2].eq_ignore_ascii_case("stop") {
            Decision::Stop
        } else {
            let u: usize = record[2].parse().map_err(|e| ctx(&e))?;
            if u >= kernel.num_controls() {
                return Err(ctx(&format!("control index {u} out of range")));
            }
            if k == steps {
                return Err(ctx(&"k = K row must stop"));
            }
            Decision::Continue(u)
        };
    }
    Ok(policy)
}

fn cmd_solve(config: &Path, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let lattice = cfg.lattice()?;
    let psi0 = Potential::constant(lattice.num_nodes(), 0.0);
    let sol = dualsolve::ascend(&cfg, &psi0)?;
    write_solution_artifacts(out, &lattice, &sol)?;
    let r = &sol.report;
    println!(
        "solve: dual={} primal={} residual={} gap_adj={} iterations={} converged={}",
        fmt(r.dual_value),
        fmt(r.primal_cost),
        fmt(r.marginal_residual),
        fmt(r.gap_adj),
        r.iterations,
        r.converged
    );
    if cfg.solver.eps_mass > 0.0 && r.boundary_mass > cfg.solver.eps_mass {
        println!(
            "warning: boundary occupancy mass {} exceeds eps_mass {}; enlarge R",
            fmt(r.boundary_mass),
            cfg.solver.eps_mass
        );
    }
    if !r.converged {
        eprintln!(
            "numerical error: marginal residual {} did not reach eps_marginal {} in {} iterations",
            fmt(r.marginal_residual),
            cfg.solver.eps_marginal,
            r.iterations
        );
        return Ok(2);
    }
    Ok(0)
}

fn cmd_hjb(config: &Path, psi_path: &Path, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let kernel = cfg.kernel()?;
    let psi = load_potential(psi_path, &kernel.lattice)?;
    let (value, _policy) = hjb::solve_qvi(&kernel, &cfg.lagrangian, &psi)?;
    write_potential(out, "psi.csv", &kernel.lattice, &psi)?;
    write_space_time(out, "J.csv", &kernel.lattice, "J", &value.values)?;
    write_barrier(out, &kernel.lattice, &hjb::extract_barrier(&value, &psi))?;
    let j0: f64 = value.values[0]
        .iter()
        .zip(&cfg.mu.weights)
        .map(|(j, w)| j * w)
        .sum();
    println!("hjb: E_mu[J(0,.)]={}", fmt(j0));
    Ok(0)
}

fn cmd_forward(config: &Path, policy_path: &Path, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let kernel = cfg.kernel()?;
    let policy = load_policy(policy_path, &kernel.lattice, &kernel)?;
    let fwd = transport::forward_propagate(&kernel, &policy, &cfg.mu)?;
    let cost = transport::primal_cost(&cfg.lagrangian, &kernel, &fwd.occupation)?;
    write_space_time(out, "m.csv", &kernel.lattice, "mass", &fwd.alive)?;
    write_space_time(out, "rho.csv", &kernel.lattice, "mass", &fwd.stopping.rho.weights)?;
    println!(
        "forward: cost={} stopped_mass={} boundary_mass={} terminal_mass={}",
        fmt(cost),
        fmt(fwd.stopping.rho.total()),
        fmt(fwd.boundary_mass),
        fmt(fwd.terminal_mass)
    );
    Ok(0)
}

fn cmd_oracle(config: &Path, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let lattice = cfg.lattice()?;
    let lp = match oracle::lp_solve(&cfg)? {
        OracleOutcome::Infeasible { certificate } => {
            let strength: f64 = certificate.iter().map(|v| v.abs()).fold(0.0, f64::max);
            write_report(
                out,
                "oracle.csv",
                &[("status", "infeasible".into()), ("certificate_max_abs", fmt(strength))],
            )?;
            return Err(Error::Infeasible(format!(
                "target marginal unreachable; Farkas certificate with max |y| = {}",
                fmt(strength)
            )));
        }
        OracleOutcome::Optimal(lp) => lp,
    };
    let psi0 = Potential::constant(lattice.num_nodes(), 0.0);
    let sol = dualsolve::ascend(&cfg, &psi0)?;
    let r = &sol.report;
    write_report(
        out,
        "oracle.csv",
        &[
            ("status", "optimal".into()),
            ("lp_objective", fmt(lp.objective)),
            ("lp_dual_objective", fmt(lp.dual_objective)),
            ("ascend_primal", fmt(r.primal_cost)),
            ("ascend_dual", fmt(r.dual_value)),
            ("ascend_residual", fmt(r.marginal_residual)),
            ("primal_vs_lp", fmt(r.primal_cost - lp.objective)),
            ("dual_vs_lp", fmt(r.dual_value - lp.objective)),
        ],
    )?;
    println!(
        "oracle: lp={} lp_dual={} ascend_primal={} ascend_dual={}",
        fmt(lp.objective),
        fmt(lp.dual_objective),
        fmt(r.primal_cost),
        fmt(r.dual_value)
    );
    Ok(0)
}

fn cmd_mc(config: &Path, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let (n, seed) = match (n.or(cfg.mc.map(|m| m.n)), seed.or(cfg.mc.map(|m| m.seed))) {
        (Some(n), Some(seed)) => (n, seed),
        _ => {
            return Err(Error::Config(
                "mc: pass --n and --seed or set the [mc] section".into(),
            ))
        }
    };
    let kernel = cfg.kernel()?;
    let psi0 = Potential::constant(kernel.lattice.num_nodes(), 0.0);
    let sol = dualsolve::ascend(&cfg, &psi0)?;
    let batch = montecarlo::simulate(
        &kernel,
        &cfg.lagrangian,
        &sol.policy,
        &sol.value,
        &sol.psi,
        &cfg.mu,
        n,
        seed,
    )?;
    let allowance = montecarlo::discretization_allowance(&cfg.lagrangian, &kernel);
    let dist = montecarlo::verify_distribution(&batch, &sol.forward.stopping, allowance)?;
    let mart = montecarlo::martingale_test(&batch)?;
    let cost = montecarlo::cost_consistency(&batch, sol.report.primal_cost, allowance);
    let mut rows: Vec<(&str, String)> = vec![
        ("paths", n.to_string()),
        ("seed", seed.to_string()),
        ("l1_distance", fmt(dist.l1_distance)),
        ("l1_bound", fmt(dist.bound)),
        ("allowance", fmt(dist.allowance)),
        ("low_power", dist.low_power.to_string()),
        ("distribution_pass", dist.pass.to_string()),
        ("mean_cost", fmt(cost.empirical_mean)),
        ("cost_std_error", fmt(cost.std_error)),
        ("primal_cost", fmt(cost.reference)),
        ("cost_pass", cost.pass.to_string()),
        ("martingale_pass", mart.pass.to_string()),
        ("martingale_pass_two_sided", mart.pass_two_sided.to_string()),
    ];
    let ci_rows: Vec<(String, String)> = mart
        .increments
        .iter()
        .map(|i| {
            (
                format!("martingale_{}_{}", i.from_step, i.to_step),
                format!("{} +/- {}", fmt(i.mean), fmt(i.half_width)),
            )
        })
        .collect();
    for (k, v) in &ci_rows {
        rows.push((k.as_str(), v.clone()));
    }
    write_report(out, "mc_summary.csv", &rows)?;
    println!(
        "mc: distribution_pass={} cost_pass={} martingale_pass={} (l1={} <= {})",
        dist.pass,
        cost.pass,
        mart.pass,
        fmt(dist.l1_distance),
        fmt(dist.bound)
    );
    if !(dist.pass && cost.pass && mart.pass) {
        return Err(Error::Numerical(
            "montecarlo verification failed; see mc_summary.csv".into(),
        ));
    }
    Ok(0)
}

fn cmd_diag(config: &Path, psi_path: &Path, out: &Path) -> Result<i32> {
    let cfg = parse_config(config)?;
    let kernel = cfg.kernel()?;
    let lattice = kernel.lattice;
    let psi = load_potential(psi_path, &lattice)?;
    let supers = hjb::check_supersolution(&kernel, &cfg.lagrangian, &psi, 1e-10)?;
    let delta = if lattice.dim == 1 {
        1.0
    } else {
        (2.0 - cfg.lagrangian.p).clamp(0.1, 1.0)
    };
    let coords: Vec<_> = (0..lattice.num_nodes()).map(|n| lattice.coord(n)).collect();
    let holder = hjb::holder_diagnostic(&psi, &coords, delta, lattice.dim, cfg.lagrangian.p);
    let (_value, policy) = hjb::solve_qvi(&kernel, &cfg.lagrangian, &psi)?;
    let fwd = transport::forward_propagate(&kernel, &policy, &cfg.mu)?;
    let cost = transport::primal_cost(&cfg.lagrangian, &kernel, &fwd.occupation)?;
    let moment =
        transport::check_moment_bound(&cfg.mu, &fwd.stopping, cost, &cfg.lagrangian, &kernel)?;
    let mut w = open(out, "supersolution.csv")?;
    writeln!(w, "node,{},residual", coord_header(lattice.dim))?;
    for (node, r) in supers.residuals.iter().enumerate() {
        writeln!(w, "{node},{},{}", coord_fields(&lattice, node), fmt(*r))?;
    }
    drop(w);
    write_report(
        out,
        "diag.csv",
        &[
            ("supersolution_max_residual", fmt(supers.max_residual)),
            ("supersolution_violations", supers.violations.len().to_string()),
            ("holder_delta", fmt(holder.delta)),
            ("holder_seminorm", fmt(holder.seminorm)),
            ("holder_quadratic", fmt(holder.quadratic)),
            ("holder_in_theorem_regime", holder.in_theorem_regime.to_string()),
            ("moment_lhs", fmt(moment.lhs)),
            ("moment_rhs", fmt(moment.rhs)),
            ("moment_constant", fmt(moment.constant)),
            ("moment_pass", moment.pass.to_string()),
        ],
    )?;
    println!(
        "diag: supersolution_max_residual={} violations={} moment_pass={}",
        fmt(supers.max_residual),
        supers.violations.len(),
        moment.pass
    );
    Ok(0)
}

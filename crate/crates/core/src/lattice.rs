//! Space-time grid on [0,T] × [−R,R]^d and the controlled Markov-chain
//! transition kernel approximating the generator ½Δ + u·∇.
//!
//! The kernel is the standard upwind splitting: with u_j = u_j⁺ − u_j⁻,
//!
//! ```text
//! P(x + h e_j | x, u) = Δt (1/(2h²) + u_j⁺/h)
//! P(x − h e_j | x, u) = Δt (1/(2h²) + u_j⁻/h)
//! P(x | x, u)         = 1 − Σ outflow
//! ```
//!
//! which matches the first moment of the drift exactly and keeps every
//! probability nonnegative under the CFL condition
//! Δt·(d/h² + |u|₁/h) ≤ 1. Mass that would leave the box is folded back onto
//! the boundary node (reflecting clip) and the row is flagged.

use crate::{Error, Result, Vec3};

/// The space-time lattice. An odd node count per axis keeps the origin on
/// the grid; node ordering is row-major over the per-axis indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    /// Spatial step h.
    pub h: f64,
    /// Time step Δt.
    pub dt: f64,
    pub nodes_per_axis: usize,
    /// Number of time steps K (K·Δt = T).
    pub num_steps: usize,
}

impl Lattice {
    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis.pow(self.dim as u32)
    }

    pub fn radius(&self) -> f64 {
        self.h * (self.nodes_per_axis - 1) as f64 / 2.0
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.num_steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        self.dt * step as f64
    }

    /// Per-axis index decomposition of a flat node index.
    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let mut rem = node;
        let mut idx = [0usize; 3];
        for j in (0..self.dim).rev() {
            idx[j] = rem % self.nodes_per_axis;
            rem /= self.nodes_per_axis;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize; 3]) -> usize {
        let mut out = 0;
        for j in 0..self.dim {
            out = out * self.nodes_per_axis + idx[j];
        }
        out
    }

    pub fn coord(&self, node: usize) -> Vec3 {
        let idx = self.multi_index(node);
        let mut x = [0.0; 3];
        let half = (self.nodes_per_axis - 1) as f64 / 2.0;
        for j in 0..self.dim {
            x[j] = (idx[j] as f64 - half) * self.h;
        }
        x
    }

    /// Neighbor one step along `axis` (dir = ±1), or None past the boundary.
    pub fn neighbor(&self, node: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut idx = self.multi_index(node);
        let i = idx[axis] as i64 + dir;
        if i < 0 || i >= self.nodes_per_axis as i64 {
            return None;
        }
        idx[axis] = i as usize;
        Some(self.flat_index(&idx))
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.dim).any(|j| idx[j] == 0 || idx[j] == self.nodes_per_axis - 1)
    }

    /// Nearest lattice node to a point, clamping to the box.
    pub fn nearest_node(&self, x: &Vec3) -> usize {
        let half = (self.nodes_per_axis - 1) as f64 / 2.0;
        let mut idx = [0usize; 3];
        for j in 0..self.dim {
            let raw = (x[j] / self.h + half).round();
            idx[j] = raw.clamp(0.0, (self.nodes_per_axis - 1) as f64) as usize;
        }
        self.flat_index(&idx)
    }
}

/// Builds the lattice from (d, h, Δt, T, R), rejecting inconsistent steps.
pub fn build_lattice(dim: usize, h: f64, dt: f64, horizon: f64, box_radius: f64) -> Result<Lattice> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!("dimension {dim} not in 1..=3")));
    }
    if h <= 0.0 || dt <= 0.0 || horizon <= 0.0 || box_radius <= 0.0 {
        return Err(Error::Config("h, dt, T, R must all be positive".into()));
    }
    let steps = horizon / dt;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
        return Err(Error::Config(format!(
            "horizon T={horizon} is not an integer multiple of dt={dt}"
        )));
    }
    let half_nodes = box_radius / h;
    if (half_nodes - half_nodes.round()).abs() > 1e-9 * half_nodes.max(1.0) {
        return Err(Error::Config(format!(
            "box radius R={box_radius} is not an integer multiple of h={h}"
        )));
    }
    Ok(Lattice {
        dim,
        h,
        dt,
        nodes_per_axis: 2 * half_nodes.round() as usize + 1,
        num_steps: steps.round() as usize,
    })
}

/// One sparse kernel row: transition probabilities out of a (node, control)
/// pair, plus whether boundary clipping folded mass back.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    /// (target node, probability); the center entry is included.
    pub entries: Vec<(usize, f64)>,
    pub clipped: bool,
}

/// The full controlled transition kernel: one row per (node, control).
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub lattice: Lattice,
    pub controls: Vec<Vec3>,
    rows: Vec<KernelRow>,
}

impl TransitionKernel {
    pub fn row(&self, node: usize, control: usize) -> &KernelRow {
        &self.rows[node * self.controls.len() + control]
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    /// Σ_y P(y|x,u)·values[y].
    pub fn expectation(&self, node: usize, control: usize, values: &[f64]) -> f64 {
        self.row(node, control)
            .entries
            .iter()
            .map(|&(y, p)| p * values[y])
            .sum()
    }

    /// Writes the kernel in a sparse text form: node, control, neighbor,
    /// probability — one line per entry.
    pub fn dump_sparse(&self, out: &mut dyn std::io::Write) -> Result<()> {
        writeln!(out, "node,control,neighbor,probability")?;
        for node in 0..self.lattice.num_nodes() {
            for ctrl in 0..self.controls.len() {
                for &(y, p) in &self.row(node, ctrl).entries {
                    writeln!(out, "{node},{ctrl},{y},{p:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

/// CFL bound for the upwind kernel: Δt·(d/h² + max|u|₁/h).
pub fn cfl_number(lattice: &Lattice, controls: &[Vec3]) -> f64 {
    let max_l1 = controls
        .iter()
        .map(|u| u.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    lattice.dt * (lattice.dim as f64 / (lattice.h * lattice.h) + max_l1 / lattice.h)
}

/// Builds the upwind kernel; fails (rather than emit negative probabilities)
/// when the CFL condition is violated.
pub fn build_kernel(lattice: &Lattice, controls: &[Vec3]) -> Result<TransitionKernel> {
    if controls.is_empty() {
        return Err(Error::Config("empty control grid".into()));
    }
    let cfl = cfl_number(lattice, controls);
    if cfl > 1.0 + 1e-12 {
        let worst = controls
            .iter()
            .cloned()
            .max_by(|a, b| {
                let na: f64 = a.iter().map(|v| v.abs()).sum();
                let nb: f64 = b.iter().map(|v| v.abs()).sum();
                na.partial_cmp(&nb).unwrap()
            })
            .unwrap();
        return Err(Error::Config(format!(
            "CFL violation: dt·(d/h² + |u|₁/h) = {cfl:.6} > 1 for h={}, dt={}, u={:?}",
            lattice.h, lattice.dt, worst
        )));
    }
    let h = lattice.h;
    let dt = lattice.dt;
    let diffusion = dt / (2.0 * h * h);
    let mut rows = Vec::with_capacity(lattice.num_nodes() * controls.len());
    for node in 0..lattice.num_nodes() {
        for u in controls {
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * lattice.dim + 1);
            let mut outflow = 0.0;
            let mut stay_extra = 0.0; // clipped mass folded back
            let mut clipped = false;
            for axis in 0..lattice.dim {
                let up = u[axis].max(0.0);
                let un = (-u[axis]).max(0.0);
                let p_plus = diffusion + dt * up / h;
                let p_minus = diffusion + dt * un / h;
                outflow += p_plus + p_minus;
                match lattice.neighbor(node, axis, 1) {
                    Some(y) => entries.push((y, p_plus)),
                    None => {
                        stay_extra += p_plus;
                        clipped = true;
                    }
                }
                match lattice.neighbor(node, axis, -1) {
                    Some(y) => entries.push((y, p_minus)),
                    None => {
                        stay_extra += p_minus;
                        clipped = true;
                    }
                }
            }
            let stay = 1.0 - outflow + stay_extra;
            debug_assert!(stay >= -1e-12);
            entries.push((node, stay.max(0.0)));
            rows.push(KernelRow { entries, clipped });
        }
    }
    Ok(TransitionKernel { lattice: *lattice, controls: controls.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_counts_1d() {
        let l = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        assert_eq!(l.num_nodes(), 5);
        assert_eq!(l.num_steps, 2);
        let coords: Vec<f64> = (0..5).map(|n| l.coord(n)[0]).collect();
        assert_eq!(coords, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(l.radius(), 2.0);
    }

    #[test]
    fn lattice_counts_2d() {
        let l = build_lattice(2, 1.0, 0.25, 0.25, 1.0).unwrap();
        assert_eq!(l.num_nodes(), 9);
        assert_eq!(l.num_steps, 1);
        assert_eq!(l.coord(4), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn lattice_rejects_non_integer_steps() {
        assert!(matches!(build_lattice(1, 0.3, 0.5, 1.0, 2.0), Err(Error::Config(_))));
        assert!(matches!(build_lattice(1, 1.0, 0.3, 1.0, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn nearest_node_clamps_to_box() {
        let l = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        assert_eq!(l.nearest_node(&[0.4, 0.0, 0.0]), 2);
        assert_eq!(l.nearest_node(&[0.6, 0.0, 0.0]), 3);
        assert_eq!(l.nearest_node(&[10.0, 0.0, 0.0]), 4);
        assert_eq!(l.nearest_node(&[-10.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn kernel_zero_drift_row() {
        let l = build_lattice(1, 1.0, 0.5, 1.0, 2.0).unwrap();
        let k = build_kernel(&l, &[[0.0; 3]]).unwrap();
        let row = k.row(2, 0);
        assert!(!row.clipped);
        let mut probs = std::collections::HashMap::new();
        for &(y, p) in &row.entries {
            probs.insert(y, p);
        }
        assert_eq!(probs[&1], 0.25);
        assert_eq!(probs[&3], 0.25);
        assert_eq!(probs[&2], 0.5);
    }

    #[test]
    fn kernel_drift_row_and_first_moment() {
        let l = build_lattice(1, 1.0, 0.25, 1.0, 2.0).unwrap();
        let k = build_kernel(&l, &[[1.0, 0.0, 0.0]]).unwrap();
        let row = k.row(2, 0);
        let mut probs = std::collections::HashMap::new();
        for &(y, p) in &row.entries {
            probs.insert(y, p);
        }
        assert_eq!(probs[&3], 0.375);
        assert_eq!(probs[&1], 0.125);
        assert_eq!(probs[&2], 0.5);
        // E[ΔX] = 0.375 − 0.125 = 0.25 = u·Δt
        let mean: f64 = row.entries.iter().map(|&(y, p)| p * (l.coord(y)[0] - l.coord(2)[0])).sum();
        assert_eq!(mean, 0.25);
    }

    #[test]
    fn kernel_rejects_cfl_violation() {
        let l = build_lattice(1, 1.0, 0.75, 1.5, 2.0).unwrap();
        let err = build_kernel(&l, &[[1.0, 0.0, 0.0]]).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("CFL"), "{msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn boundary_rows_fold_back_and_flag() {
        let l = build_lattice(1, 1.0, 0.5, 1.0, 1.0).unwrap();
        let k = build_kernel(&l, &[[0.0; 3]]).unwrap();
        let row = k.row(0, 0);
        assert!(row.clipped);
        let total: f64 = row.entries.iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        // the would-be exit probability sits on the boundary node itself
        let stay: f64 = row
            .entries
            .iter()
            .filter(|&&(y, _)| y == 0)
            .map(|&(_, p)| p)
            .sum();
        assert_eq!(stay, 0.75);
    }

    #[test]
    fn rows_are_stochastic_2d() {
        let l = build_lattice(2, 0.5, 0.1, 0.5, 1.0).unwrap();
        let controls = [[0.5, -0.5, 0.0], [0.0, 0.0, 0.0]];
        let k = build_kernel(&l, &controls).unwrap();
        for node in 0..l.num_nodes() {
            for ctrl in 0..2 {
                let row = k.row(node, ctrl);
                let total: f64 = row.entries.iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-14);
                assert!(row.entries.iter().all(|&(_, p)| p >= 0.0));
            }
        }
    }
}

//! Leapfrog FDTD solver for u_tt = c²Δu on [-1,1]² with Neumann data
//! ∂_ν u = f and zero initial state.

use crate::error::{Error, Result};
use crate::grid::{BoundaryIndexMap, BoundaryTrace, Grid, SpaceTag};
use crate::persist;
use crate::speed::SpeedField;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Abort threshold for |u|.
pub const BLOWUP: f64 = 1e12;

/// How the Neumann datum enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Boundary nodes follow the wave equation with mirrored ghost values
    /// u_{-1} = u_1 + 2dx f. Symmetric, so the discrete ND map is reciprocal.
    #[default]
    Ghost,
    /// Interior update, then u_0 = (4u_1 - u_2 + 2dx f)/3 per side; corners
    /// average their two side formulas.
    OneSided,
}

/// Nodal Neumann data f(l, b), b in boundary rank order.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannSource {
    grid: Grid,
    values: Vec<f64>,
}

impl NeumannSource {
    pub fn zeros(grid: Grid) -> NeumannSource {
        NeumannSource { values: vec![0.0; grid.n_full()], grid }
    }
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<NeumannSource> {
        if values.len() != grid.n_full() {
            return Err(Error::Shape(format!(
                "source needs {} values, got {}",
                grid.n_full(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite source value".into()));
        }
        Ok(NeumannSource { grid, values })
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn get(&self, l: usize, b: usize) -> f64 {
        self.values[l * self.grid.n_side() + b]
    }
    pub fn add(&mut self, l: usize, b: usize, v: f64) {
        let n = self.grid.n_side();
        self.values[l * n + b] += v;
    }
    pub fn level(&self, l: usize) -> &[f64] {
        let n = self.grid.n_side();
        &self.values[l * n..(l + 1) * n]
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, Default)]
pub struct Record {
    pub dirichlet_trace: bool,
    pub snapshot_levels: Vec<usize>,
}

impl Record {
    pub fn trace() -> Record {
        Record { dirichlet_trace: true, snapshot_levels: Vec::new() }
    }
    pub fn snapshots(levels: &[usize]) -> Record {
        Record { dirichlet_trace: false, snapshot_levels: levels.to_vec() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct WaveOutput {
    /// full-time Dirichlet trace
    pub trace: Option<BoundaryTrace>,
    /// (level, nodal values index i*(I+1)+j), in requested order
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl WaveOutput {
    pub fn snapshot(&self, level: usize) -> Option<&[f64]> {
        self.snapshots
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, u)| u.as_slice())
    }
}

/// Interior body force h(l, out) writes h(t_l, x_i, y_j) into `out`.
pub type Forcing<'a> = &'a dyn Fn(usize, &mut [f64]);

#[derive(Clone, Copy, Default)]
pub struct SolverOptions<'a> {
    pub closure: Closure,
    pub forcing: Option<Forcing<'a>>,
}

pub fn solve_ibvp(
    speed: &SpeedField,
    source: &NeumannSource,
    grid: &Grid,
    record: &Record,
) -> Result<WaveOutput> {
    solve_ibvp_with(speed, source, grid, record, SolverOptions::default())
}

pub fn solve_ibvp_with(
    speed: &SpeedField,
    source: &NeumannSource,
    grid: &Grid,
    record: &Record,
    opts: SolverOptions<'_>,
) -> Result<WaveOutput> {
    if !speed.matches(grid) {
        return Err(Error::Shape(format!(
            "speed field has I={}, grid has I={}",
            speed.i, grid.i
        )));
    }
    if !source.grid.same_shape(grid) {
        return Err(Error::Shape("source defined on a different grid".into()));
    }
    if opts.closure == Closure::OneSided && grid.i < 3 {
        return Err(Error::InvalidGrid("one-sided closure needs I >= 3".into()));
    }
    grid.check_cfl(speed.c_max)?;
    for &s in &record.snapshot_levels {
        if s > grid.l {
            return Err(Error::InvalidArgument(format!(
                "snapshot level {s} beyond L={}",
                grid.l
            )));
        }
    }

    let ni = grid.i + 1;
    let nn = ni * ni;
    let bmap = BoundaryIndexMap::new(grid);
    let nodes: Vec<usize> = bmap.nodes().iter().map(|&(i, j)| i * ni + j).collect();
    let mult: Vec<f64> = (0..nodes.len())
        .map(|r| bmap.side_bits(r).count_ones() as f64)
        .collect();
    let lam: Vec<f64> = speed
        .values
        .iter()
        .map(|c| (c * grid.dt / grid.dx).powi(2))
        .collect();
    let dt2 = grid.dt * grid.dt;
    let two_dx = 2.0 * grid.dx;

    let mut prev = vec![0.0; nn];
    let mut cur = vec![0.0; nn];
    let mut next = vec![0.0; nn];
    let mut force = vec![0.0; nn];
    let mut src_term = vec![0.0; nn];

    let mut out = WaveOutput::default();
    let mut trace = if record.dirichlet_trace {
        Some(vec![0.0; grid.n_full()])
    } else {
        None
    };
    let mut snaps: Vec<Option<Vec<f64>>> = vec![None; record.snapshot_levels.len()];
    store_snapshots(&record.snapshot_levels, &mut snaps, 0, &cur);

    for l in 0..grid.l {
        let half = if l == 0 { 0.5 } else { 1.0 };
        if let Some(h) = opts.forcing {
            force.iter_mut().for_each(|v| *v = 0.0);
            h(l, &mut force);
        }
        match opts.closure {
            Closure::Ghost => {
                src_term.iter_mut().for_each(|v| *v = 0.0);
                let f = source.level(l);
                for (r, &k) in nodes.iter().enumerate() {
                    src_term[k] = mult[r] * two_dx * f[r];
                }
                ghost_step(grid.i, &cur, &prev, &mut next, &lam, &src_term, half);
            }
            Closure::OneSided => {
                interior_step(grid.i, &cur, &prev, &mut next, &lam, half);
                one_sided_boundary(grid.i, &mut next, source.level(l + 1), &bmap, two_dx);
            }
        }
        if opts.forcing.is_some() {
            let c = half * dt2;
            match opts.closure {
                Closure::Ghost => {
                    for k in 0..nn {
                        next[k] += c * force[k];
                    }
                }
                Closure::OneSided => {
                    for a in 1..grid.i {
                        for b in 1..grid.i {
                            next[a * ni + b] += c * force[a * ni + b];
                        }
                    }
                }
            }
        }
        let mut peak = 0.0f64;
        for v in &next {
            // NaN must propagate
            if !(v.abs() <= peak) {
                peak = v.abs();
            }
        }
        if !(peak <= BLOWUP) {
            return Err(Error::Unstable { level: l + 1, value: peak });
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if let Some(tr) = trace.as_mut() {
            let n = nodes.len();
            for (r, &k) in nodes.iter().enumerate() {
                tr[(l + 1) * n + r] = cur[k];
            }
        }
        store_snapshots(&record.snapshot_levels, &mut snaps, l + 1, &cur);
    }

    if let Some(tr) = trace {
        out.trace = Some(BoundaryTrace::new(*grid, SpaceTag::Full, tr)?);
    }
    out.snapshots = record
        .snapshot_levels
        .iter()
        .zip(snaps)
        .map(|(&l, s)| (l, s.expect("every requested level is visited")))
        .collect();
    Ok(out)
}

fn store_snapshots(levels: &[usize], snaps: &mut [Option<Vec<f64>>], l: usize, u: &[f64]) {
    for (k, &want) in levels.iter().enumerate() {
        if want == l {
            snaps[k] = Some(u.to_vec());
        }
    }
}

/// next = 2cur - prev + λ(Δ_ghost cur + src), scaled by `half` on the first step
/// where prev is eliminated via u¹ = u⁻¹.
fn ghost_step(
    i: usize,
    cur: &[f64],
    prev: &[f64],
    next: &mut [f64],
    lam: &[f64],
    src: &[f64],
    half: f64,
) {
    let ni = i + 1;
    let first = half < 1.0;
    for a in 0..ni {
        let am = if a == 0 { 1 } else { a - 1 };
        let ap = if a == i { i - 1 } else { a + 1 };
        let row = a * ni;
        let interior_row = a > 0 && a < i;
        for b in 0..ni {
            let k = row + b;
            let lap = if interior_row && b > 0 && b < i {
                cur[k - ni] + cur[k + ni] + cur[k - 1] + cur[k + 1] - 4.0 * cur[k]
            } else {
                let bm = if b == 0 { 1 } else { b - 1 };
                let bp = if b == i { i - 1 } else { b + 1 };
                cur[am * ni + b] + cur[ap * ni + b] + cur[row + bm] + cur[row + bp] - 4.0 * cur[k]
                    + src[k]
            };
            next[k] = if first {
                cur[k] + 0.5 * lam[k] * lap
            } else {
                2.0 * cur[k] - prev[k] + lam[k] * lap
            };
        }
    }
}

fn interior_step(i: usize, cur: &[f64], prev: &[f64], next: &mut [f64], lam: &[f64], half: f64) {
    let ni = i + 1;
    let first = half < 1.0;
    for a in 1..i {
        for b in 1..i {
            let k = a * ni + b;
            let lap = cur[k - ni] + cur[k + ni] + cur[k - 1] + cur[k + 1] - 4.0 * cur[k];
            next[k] = if first {
                cur[k] + 0.5 * lam[k] * lap
            } else {
                2.0 * cur[k] - prev[k] + lam[k] * lap
            };
        }
    }
}

fn one_sided_boundary(i: usize, u: &mut [f64], f: &[f64], bmap: &BoundaryIndexMap, two_dx: f64) {
    let ni = i + 1;
    let at = |a: usize, b: usize| a * ni + b;
    let fv = |a: usize, b: usize| f[bmap.rank(a, b).expect("boundary node")];
    for j in 1..i {
        u[at(0, j)] = (4.0 * u[at(1, j)] - u[at(2, j)] + two_dx * fv(0, j)) / 3.0;
        u[at(i, j)] = (4.0 * u[at(i - 1, j)] - u[at(i - 2, j)] + two_dx * fv(i, j)) / 3.0;
        u[at(j, 0)] = (4.0 * u[at(j, 1)] - u[at(j, 2)] + two_dx * fv(j, 0)) / 3.0;
        u[at(j, i)] = (4.0 * u[at(j, i - 1)] - u[at(j, i - 2)] + two_dx * fv(j, i)) / 3.0;
    }
    for (ca, cb) in [(0usize, 0usize), (0, i), (i, 0), (i, i)] {
        let (a1, a2) = if ca == 0 { (1, 2) } else { (i - 1, i - 2) };
        let (b1, b2) = if cb == 0 { (1, 2) } else { (i - 1, i - 2) };
        let g = two_dx * fv(ca, cb);
        let along_x = (4.0 * u[at(a1, cb)] - u[at(a2, cb)] + g) / 3.0;
        let along_y = (4.0 * u[at(ca, b1)] - u[at(ca, b2)] + g) / 3.0;
        u[at(ca, cb)] = 0.5 * (along_x + along_y);
    }
}

/// Σ w_j w_k u v c⁻² dx², the discrete L²(Ω, c⁻²dx) pairing.
pub fn interior_snapshot_inner_product(
    u: &[f64],
    v: &[f64],
    speed: &SpeedField,
    grid: &Grid,
) -> Result<f64> {
    let nn = grid.n_nodes();
    if u.len() != nn || v.len() != nn || !speed.matches(grid) {
        return Err(Error::Shape(format!(
            "snapshot pairing needs {nn} values on matching grids"
        )));
    }
    let w = grid.area_weights();
    Ok((0..nn)
        .map(|k| w[k] * u[k] * v[k] / (speed.values[k] * speed.values[k]))
        .sum())
}

/// Write each snapshot as an (I+1)x(I+1) container `frame_<level>.bctm`.
pub fn dump_snapshots(dir: &Path, grid: &Grid, out: &WaveOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (l, u) in &out.snapshots {
        let p = dir.join(format!("frame_{l:05}.bctm"));
        persist::write_matrix(&p, grid.i + 1, grid.i + 1, u)?;
    }
    Ok(())
}

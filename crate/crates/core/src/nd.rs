//! Discrete Neumann-to-Dirichlet map on the inversion grid.
//!
//! Data are simulated on a grid `factor` times finer. A coarse nodal source
//! is the tensor hat (piecewise linear along the perimeter and in time)
//! around its node, and the fine Dirichlet trace is restricted back by full
//! weighting along the perimeter, pointwise in time. By time invariance only
//! two responses per boundary node are needed: the half hat at t=0 (column
//! block 0) and the full hat at t_1, whose shifts fill every later column
//! block. The matrix is kept in that kernel form; noise and masks are applied
//! lazily per entry so the N_full² dense matrix is never required.

use crate::error::{Error, Result};
use crate::grid::{BoundaryIndexMap, Grid, OperatorMatrix, Side, SpaceTag};
use crate::persist;
use crate::speed::SpeedField;
use crate::wave::{solve_ibvp_with, Closure, NeumannSource, Record, SolverOptions};
use faer::Mat;
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Responses of the coarse nodal sources, layout `[d][receiver][source]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NdKernel {
    pub grid: Grid,
    pub fine: Grid,
    pub factor: usize,
    pub closure: Closure,
    /// Λ[k,0] = g0[k]
    pub g0: Vec<f64>,
    /// Λ[k,s] = g1[k-s] for 1 <= s <= k
    pub g1: Vec<f64>,
}

impl NdKernel {
    fn n(&self) -> usize {
        self.grid.n_side()
    }

    /// Clean block Λ[k,s], or None where causality makes it zero.
    pub fn block(&self, k: usize, s: usize) -> Option<&[f64]> {
        let n2 = self.n() * self.n();
        if s == 0 {
            Some(&self.g0[k * n2..(k + 1) * n2])
        } else if k >= s {
            let d = k - s;
            Some(&self.g1[d * n2..(d + 1) * n2])
        } else {
            None
        }
    }

    pub fn clean_entry(&self, m: usize, c: usize) -> f64 {
        let n = self.n();
        self.block(m / n, c / n)
            .map(|b| b[(m % n) * n + c % n])
            .unwrap_or(0.0)
    }

    /// RMS over all N_full² entries of the clean matrix.
    pub fn rms(&self) -> f64 {
        let n2 = self.n() * self.n();
        let l = self.grid.l;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let mut total = 0.0;
        for k in 0..=l {
            total += sq(&self.g0[k * n2..(k + 1) * n2]);
        }
        for d in 0..l {
            total += (l - d) as f64 * sq(&self.g1[d * n2..(d + 1) * n2]);
        }
        let nf = self.grid.n_full() as f64;
        (total / (nf * nf)).sqrt()
    }

    pub fn save(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let n = self.n();
        let rows = (self.grid.l + 1) * n;
        persist::write_matrix(&dir.join("g0.bctm"), rows, n, &self.g0)?;
        persist::write_matrix(&dir.join("g1.bctm"), rows, n, &self.g1)?;
        let side = serde_json::json!({
            "kind": "nd_kernel",
            "layout": "block d occupies rows d*4I..(d+1)*4I; entry (receiver, source)",
            "grid": self.grid,
            "fine": self.fine,
            "factor": self.factor,
            "closure": self.closure,
            "meta": meta,
        });
        persist::write_sidecar(&dir.join("g0.bctm"), &side)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<NdKernel> {
        let side = persist::read_sidecar(&dir.join("g0.bctm"))?;
        let grid: Grid = serde_json::from_value(side["grid"].clone())?;
        let fine: Grid = serde_json::from_value(side["fine"].clone())?;
        let factor = side["factor"]
            .as_u64()
            .ok_or_else(|| Error::Format("sidecar lacks factor".into()))? as usize;
        let closure: Closure = serde_json::from_value(side["closure"].clone())?;
        let g0 = persist::read_matrix(&dir.join("g0.bctm"))?;
        let g1 = persist::read_matrix(&dir.join("g1.bctm"))?;
        let n = grid.n_side();
        for m in [&g0, &g1] {
            if m.rows != (grid.l + 1) * n || m.cols != n {
                return Err(Error::Format("kernel shape does not match its grid".into()));
            }
        }
        Ok(NdKernel { grid, fine, factor, closure, g0: g0.data, g1: g1.data })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
    Constant,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// fraction of the clean RMS (gaussian) or absolute offset (constant)
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> NoiseSpec {
        NoiseSpec::default()
    }
    pub fn gaussian(level: f64, seed: u64) -> NoiseSpec {
        NoiseSpec { kind: NoiseKind::Gaussian, level, seed }
    }
    pub fn constant(level: f64) -> NoiseSpec {
        NoiseSpec { kind: NoiseKind::Constant, level, seed: 0 }
    }
    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None || self.level == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// zero rows and columns of removed nodes
    #[default]
    SourcesAndReceivers,
    /// zero rows only: no measurements on removed sides
    Receivers,
    /// zero columns only
    Sources,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub removed_sides: Vec<Side>,
    #[serde(default)]
    pub mode: MaskMode,
}

impl MaskSpec {
    pub fn new(removed_sides: &[Side], mode: MaskMode) -> MaskSpec {
        MaskSpec { removed_sides: removed_sides.to_vec(), mode }
    }

    pub fn is_empty(&self) -> bool {
        self.removed_sides.is_empty()
    }

    /// Per spatial boundary node: removed iff every side it lies on is
    /// removed (corners need both).
    pub fn removed_nodes(&self, grid: &Grid) -> Vec<bool> {
        let bits: u8 = self.removed_sides.iter().fold(0, |a, s| a | s.bit());
        let map = BoundaryIndexMap::new(grid);
        (0..grid.n_side())
            .map(|r| {
                let sb = map.side_bits(r);
                sb & bits == sb
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLayer {
    pub spec: NoiseSpec,
    pub sigma_ref: f64,
}

/// ND matrix with lazily applied noise and mask. Mask zeros are applied
/// after noise.
#[derive(Clone, Debug)]
pub struct NdMatrix {
    kernel: Arc<NdKernel>,
    noise: Vec<NoiseLayer>,
    row_keep: Vec<bool>,
    col_keep: Vec<bool>,
    support: Vec<bool>,
    pub speed_desc: String,
}

impl NdMatrix {
    pub fn from_kernel(kernel: NdKernel, speed_desc: impl Into<String>) -> NdMatrix {
        let n = kernel.grid.n_side();
        NdMatrix {
            kernel: Arc::new(kernel),
            noise: Vec::new(),
            row_keep: vec![true; n],
            col_keep: vec![true; n],
            support: vec![true; n],
            speed_desc: speed_desc.into(),
        }
    }
    pub fn kernel(&self) -> &NdKernel {
        &self.kernel
    }
    pub fn grid(&self) -> &Grid {
        &self.kernel.grid
    }
    pub fn noise_layers(&self) -> &[NoiseLayer] {
        &self.noise
    }
    pub fn row_keep(&self) -> &[bool] {
        &self.row_keep
    }
    pub fn col_keep(&self) -> &[bool] {
        &self.col_keep
    }
    /// Spatial nodes on sides that no mask removed; controls live here.
    pub fn support(&self) -> &[bool] {
        &self.support
    }
    pub fn is_masked(&self) -> bool {
        self.support.iter().any(|k| !k)
    }
    pub fn is_zero(&self) -> bool {
        self.row_keep.iter().all(|k| !k) || self.col_keep.iter().all(|k| !k)
    }

    /// Final block Λ[k,s] (row-major n×n) into `out`; returns false when the
    /// block is identically zero.
    pub fn block_into(&self, k: usize, s: usize, out: &mut [f64]) -> bool {
        let n = self.grid().n_side();
        debug_assert_eq!(out.len(), n * n);
        let mut nonzero = match self.kernel.block(k, s) {
            Some(b) => {
                out.copy_from_slice(b);
                true
            }
            None => {
                out.iter_mut().for_each(|v| *v = 0.0);
                false
            }
        };
        for layer in &self.noise {
            match layer.spec.kind {
                NoiseKind::None => {}
                NoiseKind::Constant => {
                    out.iter_mut().for_each(|v| *v += layer.spec.level);
                    nonzero = true;
                }
                NoiseKind::Gaussian => {
                    let scale = layer.spec.level * layer.sigma_ref;
                    for r in 0..n {
                        let mut g = GaussianStream::at(layer.spec.seed, k * n + r, s * n);
                        for v in &mut out[r * n..(r + 1) * n] {
                            *v += scale * g.next();
                        }
                    }
                    nonzero = true;
                }
            }
        }
        if nonzero {
            for r in 0..n {
                if !self.row_keep[r] {
                    out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                for c in 0..n {
                    if !self.col_keep[c] {
                        out[r * n + c] = 0.0;
                    }
                }
            }
        }
        nonzero
    }

    pub fn entry(&self, m: usize, c: usize) -> f64 {
        let n = self.grid().n_side();
        if !self.row_keep[m % n] || !self.col_keep[c % n] {
            return 0.0;
        }
        let mut v = self.kernel.clean_entry(m, c);
        for layer in &self.noise {
            match layer.spec.kind {
                NoiseKind::None => {}
                NoiseKind::Constant => v += layer.spec.level,
                NoiseKind::Gaussian => {
                    v += layer.spec.level
                        * layer.sigma_ref
                        * GaussianStream::at(layer.spec.seed, m, c).next()
                }
            }
        }
        v
    }

    /// Dense N_full×N_full matrix. Only sensible on small grids.
    pub fn to_dense(&self) -> OperatorMatrix {
        let g = *self.grid();
        let n = g.n_side();
        let nb = g.l + 1;
        let mut mat = Mat::<f64>::zeros(g.n_full(), g.n_full());
        let mut buf = vec![0.0; n * n];
        for k in 0..nb {
            for s in 0..nb {
                if self.block_into(k, s, &mut buf) {
                    for r in 0..n {
                        for c in 0..n {
                            mat[(k * n + r, s * n + c)] = buf[r * n + c];
                        }
                    }
                }
            }
        }
        OperatorMatrix::new(g, SpaceTag::Full, SpaceTag::Full, mat).expect("shape from grid")
    }

    pub fn describe(&self) -> serde_json::Value {
        let g = self.grid();
        let k = self.kernel();
        serde_json::json!({
            "speed": self.speed_desc,
            "coarse": {"I": g.i, "L": g.l, "T": g.t, "dt": g.dt},
            "fine": {"I": k.fine.i, "L": k.fine.l, "dt": k.fine.dt},
            "closure": k.closure,
            "noise": self.noise,
            "removed_receivers": self.row_keep.iter().filter(|k| !**k).count(),
            "removed_sources": self.col_keep.iter().filter(|k| !**k).count(),
        })
    }
}

/// Standard normals keyed by (seed, row, column). Each entry owns four
/// 32-bit words of the ChaCha stream `row`, so values do not depend on the
/// order in which entries are visited.
struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    fn at(seed: u64, row: usize, col: usize) -> GaussianStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        rng.set_word_pos(4 * col as u128);
        GaussianStream { rng }
    }

    fn next(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        box_muller(a, b)
    }
}

/// Standard normal from two uniform words, cosine branch of Box-Muller.
pub(crate) fn box_muller(a: u64, b: u64) -> f64 {
    let u1 = ((a >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn apply_noise(nd: &NdMatrix, spec: NoiseSpec) -> Result<NdMatrix> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {}", spec.level)));
    }
    let mut out = nd.clone();
    if spec.is_none() {
        return Ok(out);
    }
    let sigma_ref = match spec.kind {
        NoiseKind::Gaussian => nd.kernel.rms(),
        _ => 0.0,
    };
    out.noise.push(NoiseLayer { spec, sigma_ref });
    Ok(out)
}

pub fn apply_mask(nd: &NdMatrix, mask: &MaskSpec) -> NdMatrix {
    let mut out = nd.clone();
    let removed = mask.removed_nodes(nd.grid());
    for (r, &gone) in removed.iter().enumerate() {
        if !gone {
            continue;
        }
        out.support[r] = false;
        if mask.mode != MaskMode::Sources {
            out.row_keep[r] = false;
        }
        if mask.mode != MaskMode::Receivers {
            out.col_keep[r] = false;
        }
    }
    out
}

/// Tensor hat of a coarse boundary node on the fine boundary: (fine rank, weight).
pub(crate) fn perimeter_hat(coarse: &Grid, fine_map: &BoundaryIndexMap, factor: usize, ci: usize, cj: usize) -> Vec<(usize, f64)> {
    let fi = ci * factor;
    let fj = cj * factor;
    let top = coarse.i * factor;
    let mut w = vec![(fine_map.rank(fi, fj).expect("coarse boundary node"), 1.0)];
    let on_x = ci == 0 || ci == coarse.i;
    let on_y = cj == 0 || cj == coarse.i;
    for d in 1..factor {
        let wt = 1.0 - d as f64 / factor as f64;
        let mut push = |a: isize, b: isize| {
            if a >= 0 && b >= 0 && a as usize <= top && b as usize <= top {
                w.push((fine_map.rank(a as usize, b as usize).expect("perimeter"), wt));
            }
        };
        let (a, b, d) = (fi as isize, fj as isize, d as isize);
        if on_x {
            push(a, b - d);
            push(a, b + d);
        }
        if on_y {
            push(a - d, b);
            push(a + d, b);
        }
    }
    w
}

/// Assemble with the default refinement factor 2 and ghost closure.
pub fn assemble_nd_map(speed_fine: &SpeedField, grid_fine: &Grid, grid_coarse: &Grid) -> Result<NdMatrix> {
    if grid_coarse.i == 0 || grid_fine.i % grid_coarse.i != 0 {
        return Err(Error::InvalidGrid(format!(
            "fine I={} is not a multiple of coarse I={}",
            grid_fine.i, grid_coarse.i
        )));
    }
    let factor = grid_fine.i / grid_coarse.i;
    let want = grid_coarse.refined(factor)?;
    if !want.same_shape(grid_fine) {
        return Err(Error::InvalidGrid(format!(
            "fine grid must have L={} and T={} for coarse L={}",
            want.l, want.t, grid_coarse.l
        )));
    }
    let kernel = assemble_kernel(speed_fine, grid_coarse, factor, Closure::Ghost)?;
    Ok(NdMatrix::from_kernel(kernel, "custom"))
}

/// 8I forward solves on the refined grid (two per coarse boundary node).
pub fn assemble_kernel(speed_fine: &SpeedField, coarse: &Grid, factor: usize, closure: Closure) -> Result<NdKernel> {
    if factor == 0 {
        return Err(Error::InvalidGrid("refinement factor 0".into()));
    }
    let fine = coarse.refined(factor)?;
    if speed_fine.i != fine.i {
        return Err(Error::Shape(format!(
            "speed sampled on I={}, fine grid has I={}",
            speed_fine.i, fine.i
        )));
    }
    fine.check_cfl(speed_fine.c_max)?;
    let n = coarse.n_side();
    let nb = coarse.l + 1;
    let cmap = BoundaryIndexMap::new(coarse);
    let fmap = BoundaryIndexMap::new(&fine);
    let hats: Vec<Vec<(usize, f64)>> = cmap
        .nodes()
        .iter()
        .map(|&(i, j)| perimeter_hat(coarse, &fmap, factor, i, j))
        .collect();
    let pf = factor as f64;

    let column = |b: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut full = NeumannSource::zeros(fine);
        let mut head = NeumannSource::zeros(fine);
        for &(fr, w) in &hats[b] {
            for q in 1..2 * factor {
                let t = 1.0 - (q as f64 - pf).abs() / pf;
                full.add(q, fr, w * t);
            }
            for q in 0..factor {
                head.add(q, fr, w * (1.0 - q as f64 / pf));
            }
        }
        let opts = SolverOptions { closure, forcing: None };
        let rec = Record::trace();
        let t1 = solve_ibvp_with(speed_fine, &full, &fine, &rec, opts)?.trace.expect("trace");
        let t0 = solve_ibvp_with(speed_fine, &head, &fine, &rec, opts)?.trace.expect("trace");
        let mut c0 = vec![0.0; nb * n];
        let mut c1 = vec![0.0; nb * n];
        for d in 0..nb {
            let lv0 = t0.level(factor * d);
            let lv1 = t1.level(factor + factor * d);
            for (r, hat) in hats.iter().enumerate() {
                let mut a = 0.0;
                let mut c = 0.0;
                for &(fr, w) in hat {
                    a += w * lv0[fr];
                    c += w * lv1[fr];
                }
                c0[d * n + r] = a / pf;
                c1[d * n + r] = c / pf;
            }
        }
        Ok((c0, c1))
    };

    let threads = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1).min(n);
    let mut cols: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; n];
    if threads <= 1 {
        for (b, slot) in cols.iter_mut().enumerate() {
            *slot = Some(column(b)?);
        }
    } else {
        let chunk = n.div_ceil(threads);
        let results: Vec<Result<Vec<(usize, (Vec<f64>, Vec<f64>))>>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let column = &column;
                    sc.spawn(move || {
                        (t * chunk..((t + 1) * chunk).min(n))
                            .map(|b| column(b).map(|c| (b, c)))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread")).collect()
        });
        for r in results {
            for (b, c) in r? {
                cols[b] = Some(c);
            }
        }
    }

    let n2 = n * n;
    let mut g0 = vec![0.0; nb * n2];
    let mut g1 = vec![0.0; nb * n2];
    for (b, col) in cols.into_iter().enumerate() {
        let (c0, c1) = col.expect("all columns solved");
        for d in 0..nb {
            for r in 0..n {
                g0[d * n2 + r * n + b] = c0[d * n + r];
                g1[d * n2 + r * n + b] = c1[d * n + r];
            }
        }
    }
    Ok(NdKernel { grid: *coarse, fine, factor, closure, g0, g1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hat_weights_sum_to_factor() {
        let coarse = Grid::with_steps(4, 6, 1.0).unwrap();
        let fine = coarse.refined(2).unwrap();
        let fmap = BoundaryIndexMap::new(&fine);
        let corner: f64 = perimeter_hat(&coarse, &fmap, 2, 0, 0).iter().map(|p| p.1).sum();
        let side: f64 = perimeter_hat(&coarse, &fmap, 2, 0, 2).iter().map(|p| p.1).sum();
        assert_eq!(corner, 2.0);
        assert_eq!(side, 2.0);
    }

    #[test]
    fn gaussian_stream_is_random_access() {
        let mut seq = GaussianStream::at(7, 3, 10);
        let a = seq.next();
        let b = seq.next();
        assert_eq!(a, GaussianStream::at(7, 3, 10).next());
        assert_eq!(b, GaussianStream::at(7, 3, 11).next());
        assert_ne!(a, GaussianStream::at(8, 3, 10).next());
    }

    #[test]
    fn gaussian_moments() {
        let mut g = GaussianStream::at(1, 0, 0);
        let xs: Vec<f64> = (0..20000).map(|_| g.next()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }
}

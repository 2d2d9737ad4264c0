//! Space-time lattice, boundary enumeration and quadrature.
//!
//! The simulated horizon is [0, 2T] with `l` intervals. The half-time space
//! is the first `lh = ceil((l+1)/2)` time levels.

use crate::error::{Error, Result};
use faer::Mat;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Courant limit for the 5-point leapfrog scheme in 2-D.
pub const CFL_LIMIT: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// spatial intervals per axis
    pub i: usize,
    /// time intervals over [0, 2T]
    pub l: usize,
    /// half horizon
    pub t: f64,
    pub dx: f64,
    pub dt: f64,
    /// number of half-time levels
    pub lh: usize,
}

impl Grid {
    /// CFL-derived grid. `l` is the smallest even count with
    /// `c_max*dt/dx <= sqrt(2)/2`.
    pub fn new(i: usize, t: f64, c_max: f64) -> Result<Grid> {
        if i < 2 {
            return Err(Error::InvalidGrid(format!("I = {i} < 2")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidGrid(format!("T = {t} must be positive")));
        }
        if !(c_max > 0.0 && c_max.is_finite()) {
            return Err(Error::InvalidGrid(format!("c_max = {c_max} must be positive")));
        }
        let dx = 2.0 / i as f64;
        let dt_raw = CFL_LIMIT * dx / c_max;
        let mut l = (2.0 * t / dt_raw - 1e-9).ceil().max(2.0) as usize;
        if l % 2 == 1 {
            l += 1;
        }
        Self::with_steps(i, l, t)
    }

    /// Grid with an explicit time-interval count (no CFL adjustment).
    pub fn with_steps(i: usize, l: usize, t: f64) -> Result<Grid> {
        if i < 2 {
            return Err(Error::InvalidGrid(format!("I = {i} < 2")));
        }
        if l < 1 {
            return Err(Error::InvalidGrid("L must be at least 1".into()));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidGrid(format!("T = {t} must be positive")));
        }
        Ok(Grid {
            i,
            l,
            t,
            dx: 2.0 / i as f64,
            dt: 2.0 * t / l as f64,
            lh: (l + 2) / 2,
        })
    }

    /// Fine grid used for data simulation: `factor` times finer in space and
    /// time, running one coarse step past 2T so shifted hats fit.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::InvalidGrid("refinement factor 0".into()));
        }
        Grid::with_steps(self.i * factor, factor * (self.l + 1), self.t + 0.5 * self.dt)
    }

    /// Boundary nodes per time slice.
    pub fn n_side(&self) -> usize {
        4 * self.i
    }
    pub fn n_full(&self) -> usize {
        self.n_side() * (self.l + 1)
    }
    pub fn n_half(&self) -> usize {
        self.n_side() * self.lh
    }
    pub fn n_nodes(&self) -> usize {
        (self.i + 1) * (self.i + 1)
    }
    pub fn levels(&self, space: SpaceTag) -> usize {
        match space {
            SpaceTag::Full => self.l + 1,
            SpaceTag::Half => self.lh,
        }
    }
    pub fn len(&self, space: SpaceTag) -> usize {
        self.levels(space) * self.n_side()
    }
    pub fn time(&self, l: usize) -> f64 {
        l as f64 * self.dt
    }
    pub fn coord(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.dx
    }
    pub fn courant(&self, c_max: f64) -> f64 {
        c_max * self.dt / self.dx
    }
    pub fn check_cfl(&self, c_max: f64) -> Result<()> {
        let ratio = self.courant(c_max);
        if ratio > CFL_LIMIT + 1e-12 {
            return Err(Error::Cfl { ratio, limit: CFL_LIMIT });
        }
        Ok(())
    }

    /// Trapezoid weights τ_l·dx over the levels of `space`.
    pub fn boundary_weights(&self, space: SpaceTag) -> Vec<f64> {
        let nl = self.levels(space);
        let n = self.n_side();
        let mut w = Vec::with_capacity(nl * n);
        for l in 0..nl {
            let tau = if l == 0 || l + 1 == nl { 0.5 * self.dt } else { self.dt };
            w.extend(std::iter::repeat_n(tau * self.dx, n));
        }
        w
    }

    /// Tensor trapezoid weights w_j w_k dx² on the (I+1)² nodes, index i*(I+1)+j.
    pub fn area_weights(&self) -> Vec<f64> {
        let w1 = trapezoid_weights(self.i + 1, self.dx);
        let mut w = Vec::with_capacity(self.n_nodes());
        for a in &w1 {
            for b in &w1 {
                w.push(a * b);
            }
        }
        w
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.i == other.i && self.l == other.l && (self.t - other.t).abs() <= 1e-12 * self.t
    }
}

/// 1-D composite trapezoid weights h·(1/2, 1, …, 1, 1/2).
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| if k == 0 || k + 1 == n { 0.5 * h } else { h })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "x-")]
    XMinus,
    #[serde(rename = "x+")]
    XPlus,
    #[serde(rename = "y-")]
    YMinus,
    #[serde(rename = "y+")]
    YPlus,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::XMinus, Side::XPlus, Side::YMinus, Side::YPlus];

    pub fn bit(self) -> u8 {
        match self {
            Side::XMinus => 1,
            Side::XPlus => 2,
            Side::YMinus => 4,
            Side::YPlus => 8,
        }
    }
    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::XMinus => (-1.0, 0.0),
            Side::XPlus => (1.0, 0.0),
            Side::YMinus => (0.0, -1.0),
            Side::YPlus => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::XMinus => "x-",
            Side::XPlus => "x+",
            Side::YMinus => "y-",
            Side::YPlus => "y+",
        })
    }
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Side> {
        match s.trim().replace(' ', "").as_str() {
            "x-" | "x=-1" => Ok(Side::XMinus),
            "x+" | "x=1" | "x=+1" => Ok(Side::XPlus),
            "y-" | "y=-1" => Ok(Side::YMinus),
            "y+" | "y=1" | "y=+1" => Ok(Side::YPlus),
            other => Err(Error::InvalidArgument(format!("unknown side '{other}'"))),
        }
    }
}

/// Lexicographic enumeration of boundary nodes (l, i, j).
#[derive(Clone, Debug)]
pub struct BoundaryIndexMap {
    i: usize,
    levels: usize,
    nodes: Vec<(usize, usize)>,
    rank: Vec<Option<usize>>,
    sides: Vec<u8>,
}

impl BoundaryIndexMap {
    /// Map over the full time range of `grid`.
    pub fn new(grid: &Grid) -> BoundaryIndexMap {
        let i_max = grid.i;
        let mut nodes = Vec::with_capacity(4 * i_max);
        let mut rank = vec![None; (i_max + 1) * (i_max + 1)];
        let mut sides = Vec::with_capacity(4 * i_max);
        for i in 0..=i_max {
            for j in 0..=i_max {
                let mut s = 0u8;
                if i == 0 {
                    s |= Side::XMinus.bit();
                }
                if i == i_max {
                    s |= Side::XPlus.bit();
                }
                if j == 0 {
                    s |= Side::YMinus.bit();
                }
                if j == i_max {
                    s |= Side::YPlus.bit();
                }
                if s != 0 {
                    rank[i * (i_max + 1) + j] = Some(nodes.len());
                    nodes.push((i, j));
                    sides.push(s);
                }
            }
        }
        BoundaryIndexMap { i: i_max, levels: grid.l + 1, nodes, rank, sides }
    }

    pub fn n_side(&self) -> usize {
        self.nodes.len()
    }
    pub fn len(&self) -> usize {
        self.levels * self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Spatial boundary nodes of one slice in lexicographic order.
    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }
    /// Rank of spatial node (i, j) within a slice.
    pub fn rank(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.i || j > self.i {
            return None;
        }
        self.rank[i * (self.i + 1) + j]
    }
    pub fn index(&self, l: usize, i: usize, j: usize) -> Option<usize> {
        if l >= self.levels {
            return None;
        }
        self.rank(i, j).map(|r| l * self.nodes.len() + r)
    }
    pub fn triple(&self, idx: usize) -> Option<(usize, usize, usize)> {
        if idx >= self.len() {
            return None;
        }
        let n = self.nodes.len();
        let (i, j) = self.nodes[idx % n];
        Some((idx / n, i, j))
    }
    /// Sides containing the node of the given rank (corners have two).
    pub fn sides(&self, rank: usize) -> Vec<Side> {
        Side::ALL
            .into_iter()
            .filter(|s| self.sides[rank] & s.bit() != 0)
            .collect()
    }
    pub fn side_bits(&self, rank: usize) -> u8 {
        self.sides[rank]
    }
    pub fn is_corner(&self, rank: usize) -> bool {
        self.sides[rank].count_ones() == 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Full,
    Half,
}

/// Stacked boundary values, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    pub values: Vec<f64>,
    pub space: SpaceTag,
    pub grid: Grid,
}

impl BoundaryTrace {
    pub fn new(grid: Grid, space: SpaceTag, values: Vec<f64>) -> Result<BoundaryTrace> {
        let want = grid.len(space);
        if values.len() != want {
            return Err(Error::Shape(format!(
                "{space:?} trace needs {want} values, got {}",
                values.len()
            )));
        }
        Ok(BoundaryTrace { values, space, grid })
    }
    pub fn zeros(grid: Grid, space: SpaceTag) -> BoundaryTrace {
        BoundaryTrace { values: vec![0.0; grid.len(space)], space, grid }
    }
    /// Same spatial vector at every level.
    pub fn replicate(grid: Grid, space: SpaceTag, spatial: &[f64]) -> Result<BoundaryTrace> {
        if spatial.len() != grid.n_side() {
            return Err(Error::Shape(format!(
                "spatial vector needs {} values, got {}",
                grid.n_side(),
                spatial.len()
            )));
        }
        let mut values = Vec::with_capacity(grid.len(space));
        for _ in 0..grid.levels(space) {
            values.extend_from_slice(spatial);
        }
        Ok(BoundaryTrace { values, space, grid })
    }
    pub fn level(&self, l: usize) -> &[f64] {
        let n = self.grid.n_side();
        &self.values[l * n..(l + 1) * n]
    }
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Σ w_n a_n b_n with trapezoid-in-time, uniform-dx-in-space weights.
pub fn boundary_inner_product(a: &BoundaryTrace, b: &BoundaryTrace) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::Shape(format!(
            "space mismatch: {:?} vs {:?}",
            a.space, b.space
        )));
    }
    if !a.grid.same_shape(&b.grid) {
        return Err(Error::Shape("traces live on different grids".into()));
    }
    Ok(weighted_dot(&a.grid, a.space, &a.values, &b.values))
}

/// Weighted pairing on raw slices (lengths must match the space).
pub fn weighted_dot(grid: &Grid, space: SpaceTag, a: &[f64], b: &[f64]) -> f64 {
    let n = grid.n_side();
    let nl = grid.levels(space);
    debug_assert_eq!(a.len(), nl * n);
    debug_assert_eq!(b.len(), nl * n);
    let mut total = 0.0;
    for l in 0..nl {
        let tau = if l == 0 || l + 1 == nl { 0.5 * grid.dt } else { grid.dt };
        let s: f64 = a[l * n..(l + 1) * n]
            .iter()
            .zip(&b[l * n..(l + 1) * n])
            .map(|(x, y)| x * y)
            .sum();
        total += tau * s;
    }
    total * grid.dx
}

/// Dense matrix tagged with its row and column boundary spaces.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub mat: Mat<f64>,
    pub row_space: SpaceTag,
    pub col_space: SpaceTag,
    pub grid: Grid,
}

impl OperatorMatrix {
    pub fn new(grid: Grid, row_space: SpaceTag, col_space: SpaceTag, mat: Mat<f64>) -> Result<Self> {
        if mat.nrows() != grid.len(row_space) || mat.ncols() != grid.len(col_space) {
            return Err(Error::Shape(format!(
                "{}x{} matrix does not fit {row_space:?}x{col_space:?} ({}x{})",
                mat.nrows(),
                mat.ncols(),
                grid.len(row_space),
                grid.len(col_space)
            )));
        }
        Ok(OperatorMatrix { mat, row_space, col_space, grid })
    }
    pub fn nrows(&self) -> usize {
        self.mat.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.mat.ncols()
    }
    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (r, c) = (self.nrows(), self.ncols());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.mat[(i, j)]);
            }
        }
        out
    }
    pub fn frobenius(&self) -> f64 {
        self.mat.norm_l2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grid_sizes_round_up_to_even() {
        // floor would give 282/322 and break CFL
        assert_eq!(Grid::new(50, 4.0, 1.0).unwrap().l, 284);
        assert_eq!(Grid::new(25, 4.0, 1.0).unwrap().l, 142);
        assert_eq!(Grid::new(15, 1.95, 1.0).unwrap().l, 42);
        let g = Grid::new(50, 4.0, 1.14).unwrap();
        assert!(g.courant(1.14) <= CFL_LIMIT + 1e-12);
        assert_eq!(g.l % 2, 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Grid::new(1, 1.0, 1.0).is_err());
        assert!(Grid::new(4, 0.0, 1.0).is_err());
        assert!(Grid::new(4, 1.0, -1.0).is_err());
    }

    #[test]
    fn i2_ordering() {
        let g = Grid::with_steps(2, 2, 1.0).unwrap();
        let m = BoundaryIndexMap::new(&g);
        assert_eq!(
            m.nodes(),
            &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)]
        );
        assert_eq!(m.index(1, 0, 0), Some(8));
        assert_eq!(m.index(1, 1, 1), None);
        assert!(m.is_corner(0));
        assert_eq!(m.sides(0), vec![Side::XMinus, Side::YMinus]);
    }

    #[test]
    fn constant_pairing_is_perimeter_times_span() {
        let g = Grid::new(15, 1.95, 1.0).unwrap();
        let a = BoundaryTrace::replicate(g, SpaceTag::Half, &vec![1.0; g.n_side()]).unwrap();
        let v = boundary_inner_product(&a, &a).unwrap();
        let span = (g.lh - 1) as f64 * g.dt;
        assert!((v - 8.0 * span).abs() < 1e-12);
    }

    #[test]
    fn side_parse() {
        assert_eq!("y=-1".parse::<Side>().unwrap(), Side::YMinus);
        assert_eq!("x+".parse::<Side>().unwrap(), Side::XPlus);
        assert!("z".parse::<Side>().is_err());
    }
}

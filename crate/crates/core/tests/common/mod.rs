#![allow(dead_code)]

use bcmap::grid::OperatorMatrix;
use bcmap::harmonic::{boundary_traces, CornerNormal, HarmonicFn};
use bcmap::nd::{assemble_kernel, NdMatrix};
use bcmap::operators::{assemble_b_many, assemble_k, OperatorSet};
use bcmap::wave::Closure;
use bcmap::{BoundaryTrace, Grid, SpeedField};

/// Inversion grid I=15, T=1.95, c ≡ 1 (L = 42), fine factor 2.
pub struct Desk {
    pub grid: Grid,
    pub speed_fine: SpeedField,
    pub nd: NdMatrix,
    pub ops: OperatorSet,
    pub k: OperatorMatrix,
}

pub const FACTOR: usize = 2;

pub fn desk() -> Desk {
    let grid = Grid::new(15, 1.95, 1.0).unwrap();
    assert_eq!(grid.l, 42);
    let speed_fine = SpeedField::constant(15 * FACTOR, 1.0).unwrap();
    let kernel = assemble_kernel(&speed_fine, &grid, FACTOR, Closure::Ghost).unwrap();
    let nd = NdMatrix::from_kernel(kernel, "c=1");
    let ops = OperatorSet::new(&grid);
    let k = assemble_k(&nd, &ops).unwrap();
    Desk { grid, speed_fine, nd, ops, k }
}

impl Desk {
    pub fn b_of(&self, phis: &[HarmonicFn]) -> Vec<BoundaryTrace> {
        let tr: Vec<_> = phis
            .iter()
            .map(|p| boundary_traces(p, &self.grid, CornerNormal::SideAverage).unwrap())
            .collect();
        let refs: Vec<_> = tr.iter().map(|t| (&t.dirichlet, &t.neumann)).collect();
        assemble_b_many(&self.nd, &self.ops, &refs).unwrap()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

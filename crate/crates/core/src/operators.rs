//! Boundary-control operators J, R, Pt, the connecting operator K and the
//! wave-harmonic operator B.

use crate::error::{Error, Result};
use crate::grid::{BoundaryTrace, Grid, OperatorMatrix, SpaceTag};
use crate::nd::NdMatrix;
use faer::Mat;

/// Block matrix whose blocks are scalar multiples of the 4I×4I identity.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockScalar {
    pub grid: Grid,
    pub row_space: SpaceTag,
    pub col_space: SpaceTag,
    /// block coefficients, row-major
    pub coef: Vec<f64>,
}

impl BlockScalar {
    pub fn block_rows(&self) -> usize {
        self.grid.levels(self.row_space)
    }
    pub fn block_cols(&self) -> usize {
        self.grid.levels(self.col_space)
    }
    pub fn c(&self, r: usize, k: usize) -> f64 {
        self.coef[r * self.block_cols() + k]
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_side();
        let (br, bc) = (self.block_rows(), self.block_cols());
        if x.len() != bc * n {
            return Err(Error::Shape(format!("operand length {} != {}", x.len(), bc * n)));
        }
        let mut y = vec![0.0; br * n];
        for r in 0..br {
            for k in 0..bc {
                let c = self.c(r, k);
                if c != 0.0 {
                    for (yi, xi) in y[r * n..(r + 1) * n].iter_mut().zip(&x[k * n..(k + 1) * n]) {
                        *yi += c * xi;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn apply_trace(&self, x: &BoundaryTrace) -> Result<BoundaryTrace> {
        if x.space != self.col_space {
            return Err(Error::Shape(format!(
                "operator takes {:?} traces, got {:?}",
                self.col_space, x.space
            )));
        }
        BoundaryTrace::new(self.grid, self.row_space, self.apply(&x.values)?)
    }

    pub fn to_dense(&self) -> OperatorMatrix {
        let n = self.grid.n_side();
        let mut m = Mat::<f64>::zeros(self.grid.len(self.row_space), self.grid.len(self.col_space));
        for r in 0..self.block_rows() {
            for k in 0..self.block_cols() {
                let c = self.c(r, k);
                if c != 0.0 {
                    for q in 0..n {
                        m[(r * n + q, k * n + q)] = c;
                    }
                }
            }
        }
        OperatorMatrix::new(self.grid, self.row_space, self.col_space, m).expect("shape from grid")
    }
}

/// Trapezoid rule for ∫_{t_l}^{t_{L-l}}: block row l is (dt/2)(1,2,…,2,1)
/// over columns l..=L-l; a single-node range gives a zero row.
pub fn trapezoid_pattern(l_total: usize, dt: f64) -> Vec<f64> {
    let lh = (l_total + 2) / 2;
    let cols = l_total + 1;
    let mut c = vec![0.0; lh * cols];
    for l in 0..lh {
        let hi = l_total - l;
        if hi > l {
            for k in l..=hi {
                c[l * cols + k] = if k == l || k == hi { 0.5 * dt } else { dt };
            }
        }
    }
    c
}

/// J f(t) = ½∫_t^{2T-t} f: half the trapezoid pattern.
pub fn assemble_j(grid: &Grid) -> BlockScalar {
    let coef = trapezoid_pattern(grid.l, grid.dt).into_iter().map(|v| 0.5 * v).collect();
    BlockScalar { grid: *grid, row_space: SpaceTag::Half, col_space: SpaceTag::Full, coef }
}

/// Time reversal on the half space.
pub fn assemble_r(grid: &Grid) -> BlockScalar {
    let lh = grid.lh;
    let mut coef = vec![0.0; lh * lh];
    for l in 0..lh {
        coef[l * lh + (lh - 1 - l)] = 1.0;
    }
    BlockScalar { grid: *grid, row_space: SpaceTag::Half, col_space: SpaceTag::Half, coef }
}

/// Restriction to the first Lh levels: [I | 0].
pub fn assemble_pt(grid: &Grid) -> BlockScalar {
    let lh = grid.lh;
    let cols = grid.l + 1;
    let mut coef = vec![0.0; lh * cols];
    for l in 0..lh {
        coef[l * cols + l] = 1.0;
    }
    BlockScalar { grid: *grid, row_space: SpaceTag::Half, col_space: SpaceTag::Full, coef }
}

#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub grid: Grid,
    pub j: BlockScalar,
    pub r: BlockScalar,
    pub pt: BlockScalar,
}

impl OperatorSet {
    pub fn new(grid: &Grid) -> OperatorSet {
        OperatorSet {
            grid: *grid,
            j: assemble_j(grid),
            r: assemble_r(grid),
            pt: assemble_pt(grid),
        }
    }
}

/// K = J Λ Ptᵗ − R Λ_T R J Ptᵗ with Λ_T = Pt Λ Ptᵗ.
pub fn assemble_k(nd: &NdMatrix, ops: &OperatorSet) -> Result<OperatorMatrix> {
    let g = *nd.grid();
    if !g.same_shape(&ops.grid) {
        return Err(Error::Shape("ND map and operators use different grids".into()));
    }
    let n = g.n_side();
    let n2 = n * n;
    let lh = g.lh;
    let nb = g.l + 1;
    let mut k_mat = Mat::<f64>::zeros(g.n_half(), g.n_half());
    let mut buf = vec![0.0; n2];
    let mut acc = vec![0.0; lh * n2];

    // J Λ Ptᵗ, one column block at a time
    for s in 0..lh {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..nb {
            if !nd.block_into(k, s, &mut buf) {
                continue;
            }
            for l in 0..lh {
                let c = ops.j.c(l, k);
                if c != 0.0 {
                    axpy(&mut acc[l * n2..(l + 1) * n2], c, &buf);
                }
            }
        }
        for l in 0..lh {
            let blk = &acc[l * n2..(l + 1) * n2];
            for c in 0..n {
                let col = k_mat.col_mut(s * n + c);
                let col = col.try_as_col_major_mut().expect("contiguous column").as_slice_mut();
                for r in 0..n {
                    col[l * n + r] += blk[r * n + c];
                }
            }
        }
    }

    // R Λ_T R J Ptᵗ: block (l,s) = Σ_m Λ[lh-1-l, lh-1-m] J[m,s]
    for a in 0..lh {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for b in 0..lh {
            if !nd.block_into(a, b, &mut buf) {
                continue;
            }
            let m = lh - 1 - b;
            for s in 0..lh {
                let c = ops.j.c(m, s);
                if c != 0.0 {
                    axpy(&mut acc[s * n2..(s + 1) * n2], c, &buf);
                }
            }
        }
        let l = lh - 1 - a;
        for s in 0..lh {
            let blk = &acc[s * n2..(s + 1) * n2];
            for c in 0..n {
                let col = k_mat.col_mut(s * n + c);
                let col = col.try_as_col_major_mut().expect("contiguous column").as_slice_mut();
                for r in 0..n {
                    col[l * n + r] -= blk[r * n + c];
                }
            }
        }
    }
    OperatorMatrix::new(g, SpaceTag::Half, SpaceTag::Half, k_mat)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Λ_T applied to several half-time vectors in one sweep over the blocks.
pub fn lambda_t_apply_many(nd: &NdMatrix, vs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let g = nd.grid();
    let n = g.n_side();
    let lh = g.lh;
    for v in vs {
        if v.len() != g.n_half() {
            return Err(Error::Shape(format!("half vector length {} != {}", v.len(), g.n_half())));
        }
    }
    let mut out = vec![vec![0.0; g.n_half()]; vs.len()];
    let mut buf = vec![0.0; n * n];
    for a in 0..lh {
        for b in 0..lh {
            if !nd.block_into(a, b, &mut buf) {
                continue;
            }
            for (v, o) in vs.iter().zip(out.iter_mut()) {
                let x = &v[b * n..(b + 1) * n];
                let y = &mut o[a * n..(a + 1) * n];
                for r in 0..n {
                    let row = &buf[r * n..(r + 1) * n];
                    y[r] += row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
                }
            }
        }
    }
    Ok(out)
}

/// Λ applied to a full-time vector.
pub fn lambda_apply(nd: &NdMatrix, v: &[f64]) -> Result<Vec<f64>> {
    let g = nd.grid();
    let n = g.n_side();
    let nb = g.l + 1;
    if v.len() != g.n_full() {
        return Err(Error::Shape(format!("full vector length {} != {}", v.len(), g.n_full())));
    }
    let mut out = vec![0.0; g.n_full()];
    let mut buf = vec![0.0; n * n];
    for k in 0..nb {
        for s in 0..nb {
            if !nd.block_into(k, s, &mut buf) {
                continue;
            }
            let x = &v[s * n..(s + 1) * n];
            for r in 0..n {
                out[k * n + r] += buf[r * n..(r + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }
    Ok(out)
}

/// Bφ = J d − R Λ_T R J n for full-time Dirichlet and Neumann traces.
pub fn assemble_b_apply(
    nd: &NdMatrix,
    ops: &OperatorSet,
    dirichlet: &BoundaryTrace,
    neumann: &BoundaryTrace,
) -> Result<BoundaryTrace> {
    Ok(assemble_b_many(nd, ops, &[(dirichlet, neumann)])?.remove(0))
}

pub fn assemble_b_many(
    nd: &NdMatrix,
    ops: &OperatorSet,
    traces: &[(&BoundaryTrace, &BoundaryTrace)],
) -> Result<Vec<BoundaryTrace>> {
    let g = *nd.grid();
    let mut jd = Vec::with_capacity(traces.len());
    let mut rjn = Vec::with_capacity(traces.len());
    for (d, nrm) in traces {
        if d.space != SpaceTag::Full || nrm.space != SpaceTag::Full {
            return Err(Error::Shape("B takes full-time traces".into()));
        }
        jd.push(ops.j.apply(&d.values)?);
        rjn.push(ops.r.apply(&ops.j.apply(&nrm.values)?)?);
    }
    let refs: Vec<&[f64]> = rjn.iter().map(|v| v.as_slice()).collect();
    let lt = lambda_t_apply_many(nd, &refs)?;
    let mut out = Vec::with_capacity(traces.len());
    for (mut a, w) in jd.into_iter().zip(lt) {
        let rw = ops.r.apply(&w)?;
        for (x, y) in a.iter_mut().zip(rw) {
            *x -= y;
        }
        out.push(BoundaryTrace::new(g, SpaceTag::Half, a)?);
    }
    Ok(out)
}

/// ‖K − Kᵗ‖_F / ‖K‖_F
pub fn asymmetry(k: &OperatorMatrix) -> f64 {
    let m = &k.mat;
    let mut num = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let d = m[(i, j)] - m[(j, i)];
            num += d * d;
        }
    }
    num.sqrt() / m.norm_l2()
}

/// ‖Λ − R Λ* R‖_F / ‖Λ‖_F over all blocks. With `weighted`, Λ* is the
/// adjoint under the time quadrature weights, D⁻¹ΛᵗD; otherwise Λᵗ.
pub fn adjoint_residual(nd: &NdMatrix, weighted: bool) -> f64 {
    let g = nd.grid();
    let n = g.n_side();
    let l = g.l;
    let tau = |k: usize| if k == 0 || k == l { 0.5 } else { 1.0 };
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=l {
        for s in 0..=l {
            let nz_a = nd.block_into(k, s, &mut a);
            let nz_b = nd.block_into(l - s, l - k, &mut b);
            if !nz_a && !nz_b {
                continue;
            }
            let f = if weighted { tau(l - s) / tau(l - k) } else { 1.0 };
            for r in 0..n {
                for c in 0..n {
                    let x = a[r * n + c];
                    let d = x - f * b[c * n + r];
                    num += d * d;
                    den += x * x;
                }
            }
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_rows_odd_and_even() {
        let g = Grid::with_steps(2, 3, 1.5).unwrap();
        let p = trapezoid_pattern(3, g.dt);
        let h = 0.5 * g.dt;
        assert_eq!(p, vec![h, 2.0 * h, 2.0 * h, h, 0.0, h, h, 0.0]);
        let p4 = trapezoid_pattern(4, 1.0);
        assert_eq!(&p4[10..15], &[0.0; 5]);
    }

    #[test]
    fn j_of_one_is_t_minus_t_l() {
        let g = Grid::new(5, 1.3, 1.0).unwrap();
        let j = assemble_j(&g);
        let y = j.apply(&vec![1.0; g.n_full()]).unwrap();
        for l in 0..g.lh {
            assert!((y[l * g.n_side()] - (g.t - g.time(l))).abs() < 1e-12);
        }
    }
}

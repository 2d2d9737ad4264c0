//! Regularized control solves, boundary pairings and the c⁻² system.

use crate::error::{Error, Result};
use crate::grid::{boundary_inner_product, BoundaryTrace, Grid, OperatorMatrix, SpaceTag};
use crate::harmonic::{
    boundary_traces, default_family, relative_error_percent, CornerNormal, HarmonicFn, ProductBasis,
    PROJECTION_CUTOFF,
};
use crate::nd::NdMatrix;
use crate::operators::{assemble_b_many, assemble_k, asymmetry, OperatorSet};
use crate::speed::SpeedField;
use faer::linalg::matmul::triangular::{matmul, BlockStructure};
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side as FaerSide};
use serde::{Deserialize, Serialize};

/// Cholesky factorization of KᵗK + α for a fixed K.
pub struct ControlSolver {
    k: Mat<f64>,
    grid: Grid,
    llt: Option<faer::linalg::solvers::Llt<f64>>,
    pub alpha_rel: f64,
    pub alpha: f64,
    pub sigma_max_sq: f64,
}

#[derive(Clone, Debug)]
pub struct ControlSolution {
    pub f_alpha: BoundaryTrace,
    pub alpha: f64,
    pub residual: f64,
    pub harmonic: Option<usize>,
}

impl ControlSolver {
    /// `support`, when given, zeroes the control columns at boundary nodes
    /// outside it.
    pub fn new(k: &OperatorMatrix, alpha_rel: f64, support: Option<&[bool]>) -> Result<ControlSolver> {
        if !(alpha_rel > 0.0 && alpha_rel.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha_rel must be positive, got {alpha_rel}")));
        }
        if k.row_space != SpaceTag::Half || k.col_space != SpaceTag::Half {
            return Err(Error::Shape("K must act on the half-time space".into()));
        }
        let grid = k.grid;
        let n = k.ncols();
        let mut kk = k.mat.clone();
        for j in 0..n {
            for i in 0..n {
                if !kk[(i, j)].is_finite() {
                    return Err(Error::Linalg(format!("K has a non-finite entry at ({i},{j})")));
                }
            }
        }
        if let Some(sup) = support {
            let ns = grid.n_side();
            if sup.len() != ns {
                return Err(Error::Shape(format!("support length {} != {ns}", sup.len())));
            }
            for j in 0..n {
                if !sup[j % ns] {
                    kk.col_mut(j).fill(0.0);
                }
            }
        }
        let mut normal = Mat::<f64>::zeros(n, n);
        matmul(
            normal.as_mut(),
            BlockStructure::TriangularLower,
            Accum::Replace,
            kk.transpose(),
            BlockStructure::Rectangular,
            kk.as_ref(),
            BlockStructure::Rectangular,
            1.0,
            Par::Seq,
        );
        for j in 0..n {
            for i in 0..j {
                normal[(i, j)] = normal[(j, i)];
            }
        }
        let sigma_max_sq = power_iteration(&normal);
        let alpha = alpha_rel * sigma_max_sq;
        let llt = if sigma_max_sq > 0.0 {
            let mut reg = normal;
            for d in 0..n {
                reg[(d, d)] += alpha;
            }
            Some(
                reg.llt(FaerSide::Lower)
                    .map_err(|e| Error::Linalg(format!("cholesky of KᵗK+α failed: {e:?}")))?,
            )
        } else {
            None
        };
        Ok(ControlSolver { k: kk, grid, llt, alpha_rel, alpha, sigma_max_sq })
    }

    pub fn is_degenerate(&self) -> bool {
        self.llt.is_none()
    }

    /// Solves (KᵗK+α) f = Kᵗ r for every right-hand side.
    pub fn solve_many(&self, rhs: &[&BoundaryTrace]) -> Result<Vec<ControlSolution>> {
        let n = self.k.ncols();
        for r in rhs {
            if r.space != SpaceTag::Half || r.values.len() != n {
                return Err(Error::Shape("control rhs must be a half-time trace".into()));
            }
        }
        let b = Mat::from_fn(n, rhs.len(), |i, j| rhs[j].values[i]);
        let ktb = self.k.transpose() * &b;
        let f = match &self.llt {
            Some(llt) => llt.solve(&ktb),
            None => Mat::zeros(n, rhs.len()),
        };
        let mut out = Vec::with_capacity(rhs.len());
        for j in 0..rhs.len() {
            let fj: Vec<f64> = (0..n).map(|i| f[(i, j)]).collect();
            let residual = self.residual(&fj, &(0..n).map(|i| ktb[(i, j)]).collect::<Vec<_>>());
            out.push(ControlSolution {
                f_alpha: BoundaryTrace::new(self.grid, SpaceTag::Half, fj)?,
                alpha: self.alpha,
                residual,
                harmonic: None,
            });
        }
        Ok(out)
    }

    pub fn solve(&self, rhs: &BoundaryTrace) -> Result<ControlSolution> {
        Ok(self.solve_many(&[rhs])?.remove(0))
    }

    fn residual(&self, f: &[f64], ktb: &[f64]) -> f64 {
        let nb: f64 = ktb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nb == 0.0 {
            return 0.0;
        }
        let n = f.len();
        let fv = Mat::from_fn(n, 1, |i, _| f[i]);
        let af = self.k.transpose() * (&self.k * &fv);
        let r: f64 = (0..n)
            .map(|i| (af[(i, 0)] + self.alpha * f[i] - ktb[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        r / nb
    }
}

fn power_iteration(a: &Mat<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Mat::<f64>::from_fn(n, 1, |i, _| 1.0 + (i % 7) as f64 / 7.0);
    v = &v * (1.0 / v.norm_l2());
    let mut lambda = 0.0;
    for _ in 0..300 {
        let w = a * &v;
        // Rayleigh quotient, error quadratic in the eigenvector error
        let rq = (v.transpose() * &w)[(0, 0)];
        let nw = w.norm_l2();
        if nw == 0.0 {
            return 0.0;
        }
        let done = (rq - lambda).abs() <= 1e-14 * rq.abs();
        lambda = rq;
        v = w * (1.0 / nw);
        if done {
            break;
        }
    }
    lambda
}

/// α = alpha_rel·σ_max(K)², f = (KᵗK+α)⁻¹Kᵗ rhs.
pub fn solve_control(k: &OperatorMatrix, rhs: &BoundaryTrace, alpha_rel: f64) -> Result<ControlSolution> {
    ControlSolver::new(k, alpha_rel, None)?.solve(rhs)
}

/// (f_α, Bφ) with boundary quadrature weights.
pub fn pair_value(f: &ControlSolution, b_phi: &BoundaryTrace) -> Result<f64> {
    boundary_inner_product(&f.f_alpha, b_phi)
}

/// Rows w·ψφ over the lattice and right-hand side of pairings.
#[derive(Clone, Debug)]
pub struct CSystem {
    pub grid: Grid,
    pub products: Vec<Vec<f64>>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

pub fn assemble_c_system(pairs: &[(Vec<f64>, f64)], grid: &Grid) -> Result<CSystem> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("c⁻² system needs at least one pair".into()));
    }
    let w = grid.area_weights();
    let mut products = Vec::with_capacity(pairs.len());
    let mut rows = Vec::with_capacity(pairs.len());
    let mut rhs = Vec::with_capacity(pairs.len());
    for (p, v) in pairs {
        if p.len() != w.len() {
            return Err(Error::Shape(format!("product grid length {} != {}", p.len(), w.len())));
        }
        rows.push(p.iter().zip(&w).map(|(a, b)| a * b).collect());
        products.push(p.clone());
        rhs.push(*v);
    }
    Ok(CSystem { grid: *grid, products, rows, rhs })
}

/// Norm whose minimizer is sought among solutions of the c⁻² system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionNorm {
    /// trapezoid L²: returns an element of span{ψφ}
    #[default]
    Quadrature,
    /// plain ‖x‖₂ over the lattice values
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSolveOptions {
    pub norm: SolutionNorm,
    /// Tikhonov weight relative to the largest dual eigenvalue
    pub beta_rel: f64,
    /// dual eigenvalues below cutoff·λ_max are dropped
    pub cutoff: f64,
}

impl Default for CSolveOptions {
    fn default() -> Self {
        CSolveOptions { norm: SolutionNorm::Quadrature, beta_rel: 0.0, cutoff: DEFAULT_SYSTEM_CUTOFF }
    }
}

pub const DEFAULT_SYSTEM_CUTOFF: f64 = 1e-6;

/// Minimum-norm Tikhonov solution through the small dual system.
pub fn solve_c_system(sys: &CSystem, opts: &CSolveOptions) -> Result<Vec<f64>> {
    if !(opts.beta_rel >= 0.0) || !(opts.cutoff >= 0.0) {
        return Err(Error::InvalidArgument("beta and cutoff must be nonnegative".into()));
    }
    let m = sys.rows.len();
    let w = sys.grid.area_weights();
    // x = M⁻¹Aᵗ y with M = W (quadrature) or I; dual matrix A M⁻¹ Aᵗ
    let back: &Vec<Vec<f64>> = match opts.norm {
        SolutionNorm::Quadrature => &sys.products,
        SolutionNorm::Euclidean => &sys.rows,
    };
    let dual = Mat::from_fn(m, m, |r, c| sys.rows[r].iter().zip(&back[c]).map(|(a, b)| a * b).sum::<f64>());
    let dual = Mat::from_fn(m, m, |r, c| 0.5 * (dual[(r, c)] + dual[(c, r)]));
    let eig = dual
        .self_adjoint_eigen(FaerSide::Lower)
        .map_err(|e| Error::Linalg(format!("dual eigendecomposition: {e:?}")))?;
    let s: Vec<f64> = (0..m).map(|k| eig.S()[k]).collect();
    let u = eig.U();
    let lmax = s.iter().cloned().fold(0.0f64, f64::max);
    let mut y = vec![0.0; m];
    if lmax > 0.0 {
        for k in 0..m {
            if s[k] <= opts.cutoff * lmax {
                continue;
            }
            let proj: f64 = (0..m).map(|r| u[(r, k)] * sys.rhs[r]).sum();
            let c = proj / (s[k] + opts.beta_rel * lmax);
            for r in 0..m {
                y[r] += c * u[(r, k)];
            }
        }
    }
    let mut x = vec![0.0; w.len()];
    for (yk, row) in y.iter().zip(back) {
        for (xi, v) in x.iter_mut().zip(row) {
            *xi += yk * v;
        }
    }
    Ok(x)
}

/// c = max(c⁻², floor)^(-1/2); also returns how many nodes hit the floor.
pub fn recover_speed(c_inv_sq: &[f64], floor: f64) -> Result<(Vec<f64>, usize)> {
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!("floor must be positive, got {floor}")));
    }
    let mut hits = 0;
    let c = c_inv_sq
        .iter()
        .map(|&v| {
            if !(v >= floor) {
                hits += 1;
                floor.powf(-0.5)
            } else {
                v.powf(-0.5)
            }
        })
        .collect();
    Ok((c, hits))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub alpha_rel: f64,
    pub beta_rel: f64,
    pub cutoff: f64,
    #[serde(default)]
    pub norm: SolutionNorm,
    pub floor: f64,
    #[serde(default = "default_family")]
    pub family: Vec<HarmonicFn>,
    #[serde(default)]
    pub corner: CornerNormal,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            alpha_rel: 1e-6,
            beta_rel: 0.0,
            cutoff: DEFAULT_SYSTEM_CUTOFF,
            norm: SolutionNorm::Quadrature,
            floor: 0.01,
            family: default_family(),
            corner: CornerNormal::SideAverage,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_rel > 0.0) {
            return Err(Error::Config("alpha_rel must be positive".into()));
        }
        if !(self.beta_rel >= 0.0) || !(self.cutoff >= 0.0) {
            return Err(Error::Config("beta_rel and cutoff must be nonnegative".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("floor must be positive".into()));
        }
        for f in &self.family {
            f.validate()?;
        }
        Ok(())
    }
    pub fn c_solve(&self) -> CSolveOptions {
        CSolveOptions { norm: self.norm, beta_rel: self.beta_rel, cutoff: self.cutoff }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconResult {
    #[serde(skip)]
    pub grid: Grid,
    pub c_inv_sq: Vec<f64>,
    pub c_rec: Vec<f64>,
    pub floor_hits: usize,
    pub alpha: f64,
    pub sigma_max_sq: f64,
    pub max_control_residual: f64,
    pub k_asymmetry: f64,
    /// M[i][j] = (f_α^(i), Bφ^(j))
    pub pair_matrix: Vec<Vec<f64>>,
    pub pair_asymmetry: f64,
    pub truth: Option<Vec<f64>>,
    /// S₆ projection of the true c⁻², shown as a speed
    pub projection: Option<Vec<f64>>,
    /// same, through the filter used for the c⁻² system
    pub regularized_projection: Option<Vec<f64>>,
    pub rel_l2_error_vs_truth: Option<f64>,
    pub rel_l2_error_vs_projection: Option<f64>,
    pub rel_l2_error_vs_regularized_projection: Option<f64>,
    pub span_defect: f64,
    pub warnings: Vec<String>,
}

/// Full pipeline from an ND matrix to the recovered speed.
pub fn reconstruct(nd: &NdMatrix, cfg: &ReconConfig, truth: Option<&SpeedField>) -> Result<ReconResult> {
    cfg.validate()?;
    let grid = *nd.grid();
    let ops = OperatorSet::new(&grid);
    let k = assemble_k(nd, &ops)?;
    let support = nd.support().to_vec();
    let solver = ControlSolver::new(&k, cfg.alpha_rel, Some(&support))?;
    reconstruct_with(nd, cfg, truth, &ops, &k, &solver)
}

pub fn reconstruct_with(
    nd: &NdMatrix,
    cfg: &ReconConfig,
    truth: Option<&SpeedField>,
    ops: &OperatorSet,
    k: &OperatorMatrix,
    solver: &ControlSolver,
) -> Result<ReconResult> {
    let grid = *nd.grid();
    let mut warnings = Vec::new();
    if nd.is_zero() {
        warnings.push("ND matrix is identically zero; reconstruction is degenerate".into());
    }
    if solver.is_degenerate() {
        warnings.push("K vanishes; controls set to zero".into());
    }
    let traces = cfg
        .family
        .iter()
        .map(|phi| boundary_traces(phi, &grid, cfg.corner))
        .collect::<Result<Vec<_>>>()?;
    let pairs_in: Vec<(&BoundaryTrace, &BoundaryTrace)> =
        traces.iter().map(|t| (&t.dirichlet, &t.neumann)).collect();
    let bs = assemble_b_many(nd, ops, &pairs_in)?;
    let refs: Vec<&BoundaryTrace> = bs.iter().collect();
    let mut controls = solver.solve_many(&refs)?;
    for (idx, c) in controls.iter_mut().enumerate() {
        c.harmonic = Some(idx);
    }
    let nf = cfg.family.len();
    let mut pm = vec![vec![0.0; nf]; nf];
    for a in 0..nf {
        for b in 0..nf {
            pm[a][b] = pair_value(&controls[a], &bs[b])?;
        }
    }
    let basis = ProductBasis::new(&cfg.family, &grid)?;
    let mut pairs = Vec::with_capacity(basis.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, &(a, b)) in basis.pairs.iter().enumerate() {
        pairs.push((basis.products[idx].clone(), 0.5 * (pm[a][b] + pm[b][a])));
        num += (pm[a][b] - pm[b][a]).powi(2);
        den += (pm[a][b] + pm[b][a]).powi(2) / 4.0;
    }
    let pair_asymmetry = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let sys = assemble_c_system(&pairs, &grid)?;
    let c_inv_sq = solve_c_system(&sys, &cfg.c_solve())?;
    let (c_rec, floor_hits) = recover_speed(&c_inv_sq, cfg.floor)?;
    if floor_hits > 0 {
        warnings.push(format!("positivity floor active at {floor_hits} nodes"));
    }
    let own = basis.project(&c_inv_sq, PROJECTION_CUTOFF)?;
    let span_defect = relative_error_percent(&grid, &own, &c_inv_sq) / 100.0;
    let max_control_residual = controls.iter().map(|c| c.residual).fold(0.0, f64::max);

    let mut res = ReconResult {
        grid,
        c_inv_sq,
        c_rec,
        floor_hits,
        alpha: solver.alpha,
        sigma_max_sq: solver.sigma_max_sq,
        max_control_residual,
        k_asymmetry: if solver.is_degenerate() { 0.0 } else { asymmetry(k) },
        pair_matrix: pm,
        pair_asymmetry,
        truth: None,
        projection: None,
        regularized_projection: None,
        rel_l2_error_vs_truth: None,
        rel_l2_error_vs_projection: None,
        rel_l2_error_vs_regularized_projection: None,
        span_defect,
        warnings,
    };
    if let Some(t) = truth {
        if !t.matches(&grid) {
            return Err(Error::Shape("truth speed is not on the inversion grid".into()));
        }
        let inv = t.inv_sq();
        let strict = basis.project(&inv, PROJECTION_CUTOFF)?;
        let m = basis.moments(&inv)?;
        let reg = match cfg.norm {
            SolutionNorm::Quadrature => basis.combine(&basis.gram_solve(&m, cfg.cutoff, cfg.beta_rel)?),
            SolutionNorm::Euclidean => {
                let tp: Vec<(Vec<f64>, f64)> = basis.products.iter().cloned().zip(m).collect();
                solve_c_system(&assemble_c_system(&tp, &grid)?, &cfg.c_solve())?
            }
        };
        let (cp, _) = recover_speed(&strict, cfg.floor)?;
        let (cr, _) = recover_speed(&reg, cfg.floor)?;
        res.rel_l2_error_vs_truth = Some(relative_error_percent(&grid, &res.c_rec, &t.values));
        res.rel_l2_error_vs_projection = Some(relative_error_percent(&grid, &res.c_rec, &cp));
        res.rel_l2_error_vs_regularized_projection = Some(relative_error_percent(&grid, &res.c_rec, &cr));
        res.truth = Some(t.values.clone());
        res.projection = Some(cp);
        res.regularized_projection = Some(cr);
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recover_clamps() {
        let (c, hits) = recover_speed(&[1.0, 4.0, -3.0], 0.01).unwrap();
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 0.5);
        assert!((c[2] - 10.0).abs() < 1e-12);
        assert_eq!(hits, 1);
    }

    #[test]
    fn single_row_closed_form() {
        let g = Grid::with_steps(2, 2, 1.0).unwrap();
        let p: Vec<f64> = (0..9).map(|k| 1.0 + k as f64).collect();
        let sys = assemble_c_system(&[(p, 3.0)], &g).unwrap();
        let opts = CSolveOptions { norm: SolutionNorm::Euclidean, beta_rel: 0.0, cutoff: 0.0 };
        let x = solve_c_system(&sys, &opts).unwrap();
        let a = &sys.rows[0];
        let aa: f64 = a.iter().map(|v| v * v).sum();
        for (xi, ai) in x.iter().zip(a) {
            assert!((xi - ai * 3.0 / aa).abs() < 1e-12);
        }
    }
}

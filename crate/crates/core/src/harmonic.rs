//! Log-singularity harmonic functions, their boundary traces, the product
//! space S₆ and L²-projection onto it.

use crate::error::{Error, Result};
use crate::grid::{BoundaryIndexMap, BoundaryTrace, Grid, SpaceTag};
use faer::{Mat, Side as FaerSide};
use serde::{Deserialize, Serialize};

pub const PROJECTION_CUTOFF: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarmonicFn {
    /// ln((x-a)² + (y-b)²)
    Log { a: f64, b: f64 },
    Constant { value: f64 },
}

impl HarmonicFn {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            HarmonicFn::Log { a, b } => ((x - a).powi(2) + (y - b).powi(2)).ln(),
            HarmonicFn::Constant { value } => value,
        }
    }

    pub fn grad(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            HarmonicFn::Log { a, b } => {
                let r2 = (x - a).powi(2) + (y - b).powi(2);
                (2.0 * (x - a) / r2, 2.0 * (y - b) / r2)
            }
            HarmonicFn::Constant { .. } => (0.0, 0.0),
        }
    }

    /// Euclidean distance from the singularity to [-1,1]²; infinite for constants.
    pub fn clearance(&self) -> f64 {
        match *self {
            HarmonicFn::Log { a, b } => {
                let dx = (a.abs() - 1.0).max(0.0);
                let dy = (b.abs() - 1.0).max(0.0);
                (dx * dx + dy * dy).sqrt()
            }
            HarmonicFn::Constant { .. } => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clearance() > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("harmonic {self:?} is singular inside the domain")))
        }
    }

    /// Values on the (I+1)² lattice, index i*(I+1)+j.
    pub fn sample(&self, i: usize) -> Vec<f64> {
        let dx = 2.0 / i as f64;
        let mut v = Vec::with_capacity((i + 1) * (i + 1));
        for a in 0..=i {
            for b in 0..=i {
                v.push(self.value(-1.0 + a as f64 * dx, -1.0 + b as f64 * dx));
            }
        }
        v
    }
}

pub fn default_family() -> Vec<HarmonicFn> {
    vec![
        HarmonicFn::Log { a: 2.3, b: 2.2 },
        HarmonicFn::Log { a: -2.5, b: 2.1 },
        HarmonicFn::Log { a: 2.7, b: -1.9 },
        HarmonicFn::Log { a: -1.5, b: -2.5 },
        HarmonicFn::Log { a: -1.2, b: -2.5 },
        HarmonicFn::Constant { value: 1.0 },
    ]
}

/// Normal used for ∂_ν at the four corners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerNormal {
    /// mean of the two side derivatives, matching the solver's corner source
    #[default]
    SideAverage,
    /// (±1,±1)/√2
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicTraces {
    pub dirichlet: BoundaryTrace,
    pub neumann: BoundaryTrace,
}

/// Spatial boundary values and normal derivatives, one entry per boundary node.
pub fn boundary_values(phi: &HarmonicFn, grid: &Grid, corner: CornerNormal) -> Result<(Vec<f64>, Vec<f64>)> {
    phi.validate()?;
    let map = BoundaryIndexMap::new(grid);
    let mut d = Vec::with_capacity(map.len());
    let mut n = Vec::with_capacity(map.len());
    for &(i, j) in map.nodes() {
        let (x, y) = (grid.coord(i), grid.coord(j));
        d.push(phi.value(x, y));
        let (gx, gy) = phi.grad(x, y);
        let nx = if i == 0 { -1.0 } else if i == grid.i { 1.0 } else { 0.0 };
        let ny = if j == 0 { -1.0 } else if j == grid.i { 1.0 } else { 0.0 };
        let dn = gx * nx + gy * ny;
        n.push(if nx != 0.0 && ny != 0.0 {
            match corner {
                CornerNormal::SideAverage => 0.5 * dn,
                CornerNormal::Diagonal => dn * std::f64::consts::FRAC_1_SQRT_2,
            }
        } else {
            dn
        });
    }
    Ok((d, n))
}

pub fn boundary_traces(phi: &HarmonicFn, grid: &Grid, corner: CornerNormal) -> Result<HarmonicTraces> {
    let (d, n) = boundary_values(phi, grid, corner)?;
    Ok(HarmonicTraces {
        dirichlet: BoundaryTrace::replicate(*grid, SpaceTag::Full, &d)?,
        neumann: BoundaryTrace::replicate(*grid, SpaceTag::Full, &n)?,
    })
}

/// Max 5-point Laplacian residual over interior nodes.
pub fn laplacian_residual(phi: &HarmonicFn, i: usize) -> f64 {
    let v = phi.sample(i);
    let h2 = (2.0 / i as f64).powi(2);
    let at = |a: usize, b: usize| v[a * (i + 1) + b];
    let mut worst = 0.0f64;
    for a in 1..i {
        for b in 1..i {
            let lap = (at(a + 1, b) + at(a - 1, b) + at(a, b + 1) + at(a, b - 1) - 4.0 * at(a, b)) / h2;
            worst = worst.max(lap.abs());
        }
    }
    worst
}

/// Products φ⁽ⁱ⁾φ⁽ʲ⁾ (i ≤ j) on the lattice with their trapezoid Gram matrix.
#[derive(Clone, Debug)]
pub struct ProductBasis {
    pub i: usize,
    pub family: Vec<HarmonicFn>,
    pub pairs: Vec<(usize, usize)>,
    pub products: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub gram: Mat<f64>,
    eig_u: Mat<f64>,
    eig_s: Vec<f64>,
    /// left singular vectors and singular values of W^½·[p_1 … p_m]
    svd_u: Mat<f64>,
    svd_v: Mat<f64>,
    svd_s: Vec<f64>,
}

impl ProductBasis {
    pub fn new(family: &[HarmonicFn], grid: &Grid) -> Result<ProductBasis> {
        if family.is_empty() {
            return Err(Error::InvalidArgument("empty harmonic family".into()));
        }
        for f in family {
            f.validate()?;
        }
        let samples: Vec<Vec<f64>> = family.iter().map(|f| f.sample(grid.i)).collect();
        let mut pairs = Vec::new();
        let mut products = Vec::new();
        for a in 0..family.len() {
            for b in a..family.len() {
                pairs.push((a, b));
                products.push(samples[a].iter().zip(&samples[b]).map(|(p, q)| p * q).collect::<Vec<_>>());
            }
        }
        let weights = grid.area_weights();
        let m = products.len();
        let gram = Mat::from_fn(m, m, |r, c| weighted(&weights, &products[r], &products[c]));
        let eig = gram
            .self_adjoint_eigen(FaerSide::Lower)
            .map_err(|e| Error::Linalg(format!("gram eigendecomposition: {e:?}")))?;
        let eig_s: Vec<f64> = (0..m).map(|k| eig.S()[k]).collect();
        let eig_u = eig.U().to_owned();
        let a = Mat::from_fn(weights.len(), m, |r, c| weights[r].sqrt() * products[c][r]);
        let svd = a.thin_svd().map_err(|e| Error::Linalg(format!("basis svd: {e:?}")))?;
        let svd_s: Vec<f64> = (0..m).map(|k| svd.S()[k]).collect();
        let svd_u = svd.U().to_owned();
        let svd_v = svd.V().to_owned();
        Ok(ProductBasis {
            i: grid.i,
            family: family.to_vec(),
            pairs,
            products,
            weights,
            gram,
            eig_u,
            eig_s,
            svd_u,
            svd_v,
            svd_s,
        })
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }
    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// Gram eigenvalues, ascending.
    pub fn gram_eigenvalues(&self) -> &[f64] {
        &self.eig_s
    }

    /// Moments m_k = (field, basis_k) under trapezoid weights.
    pub fn moments(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.weights.len() {
            return Err(Error::Shape(format!("field length {} != {}", field.len(), self.weights.len())));
        }
        Ok(self.products.iter().map(|p| weighted(&self.weights, p, field)).collect())
    }

    /// Filtered inverse of G: eigenvalues below cutoff·λ_max dropped, the rest
    /// shifted by beta_rel·λ_max.
    pub fn gram_solve(&self, rhs: &[f64], cutoff: f64, beta_rel: f64) -> Result<Vec<f64>> {
        let m = self.len();
        if rhs.len() != m {
            return Err(Error::Shape(format!("rhs length {} != {m}", rhs.len())));
        }
        let lmax = self.eig_s.iter().cloned().fold(0.0f64, f64::max);
        if lmax <= 0.0 || !lmax.is_finite() {
            return Err(Error::Linalg("degenerate product basis".into()));
        }
        let u = &self.eig_u;
        let mut out = vec![0.0; m];
        for k in 0..m {
            let s = self.eig_s[k];
            if s <= cutoff * lmax {
                continue;
            }
            let proj: f64 = (0..m).map(|r| u[(r, k)] * rhs[r]).sum();
            let c = proj / (s + beta_rel * lmax);
            for r in 0..m {
                out[r] += c * u[(r, k)];
            }
        }
        Ok(out)
    }

    pub fn rank(&self, cutoff: f64) -> usize {
        let lmax = self.eig_s.iter().cloned().fold(0.0f64, f64::max);
        self.eig_s.iter().filter(|&&s| s > cutoff * lmax).count()
    }

    /// Σ coef_k basis_k on the lattice.
    pub fn combine(&self, coef: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.weights.len()];
        for (c, p) in coef.iter().zip(&self.products) {
            for (o, x) in v.iter_mut().zip(p) {
                *o += c * x;
            }
        }
        v
    }

    /// Σ a_k basis_k with a = G⁺m filtered as in [`Self::gram_solve`].
    pub fn filtered_projection(&self, field: &[f64], cutoff: f64, beta_rel: f64) -> Result<Vec<f64>> {
        let m = self.moments(field)?;
        Ok(self.combine(&self.gram_solve(&m, cutoff, beta_rel)?))
    }

    /// Coefficients a with Σ a_k basis_k the projection of `field`: the
    /// pseudo-inverse solution of G a = m through the SVD, singular values
    /// below cutoff·σ_max dropped.
    pub fn coefficients(&self, field: &[f64], cutoff: f64) -> Result<Vec<f64>> {
        let n = self.weights.len();
        if field.len() != n {
            return Err(Error::Shape(format!("field length {} != {n}", field.len())));
        }
        let smax = self.svd_s.first().cloned().unwrap_or(0.0);
        if !(smax > 0.0) {
            return Err(Error::Linalg("degenerate product basis".into()));
        }
        let g: Vec<f64> = field.iter().zip(&self.weights).map(|(f, w)| f * w.sqrt()).collect();
        let m = self.len();
        let mut a = vec![0.0; m];
        for k in 0..self.svd_s.len() {
            let s = self.svd_s[k];
            if s <= cutoff * smax {
                continue;
            }
            let c = (0..n).map(|r| self.svd_u[(r, k)] * g[r]).sum::<f64>() / s;
            for (r, ar) in a.iter_mut().enumerate() {
                *ar += c * self.svd_v[(r, k)];
            }
        }
        Ok(a)
    }

    /// Orthogonal projection through the SVD of the weighted products,
    /// dropping singular values below cutoff·σ_max.
    pub fn project(&self, field: &[f64], cutoff: f64) -> Result<Vec<f64>> {
        let n = self.weights.len();
        if field.len() != n {
            return Err(Error::Shape(format!("field length {} != {n}", field.len())));
        }
        let smax = self.svd_s.first().cloned().unwrap_or(0.0);
        if !(smax > 0.0) {
            return Err(Error::Linalg("degenerate product basis".into()));
        }
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let g: Vec<f64> = field.iter().zip(&sw).map(|(f, w)| f * w).collect();
        let u = &self.svd_u;
        let mut out = vec![0.0; n];
        for k in 0..self.svd_s.len() {
            if self.svd_s[k] <= cutoff * smax {
                continue;
            }
            let c: f64 = (0..n).map(|r| u[(r, k)] * g[r]).sum();
            for r in 0..n {
                out[r] += c * u[(r, k)];
            }
        }
        Ok(out.iter().zip(&sw).map(|(v, w)| v / w).collect())
    }
}

/// L²-orthogonal projection onto S₆ with the default spectral cutoff.
pub fn project_onto_s6(field: &[f64], basis: &ProductBasis) -> Result<Vec<f64>> {
    basis.project(field, PROJECTION_CUTOFF)
}

fn weighted(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Trapezoid L² norm on the lattice.
pub fn l2_norm(grid: &Grid, v: &[f64]) -> f64 {
    weighted(&grid.area_weights(), v, v).sqrt()
}

/// 100·‖a − r‖/‖r‖ under trapezoid weights.
pub fn relative_error_percent(grid: &Grid, a: &[f64], r: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(r).map(|(x, y)| x - y).collect();
    100.0 * l2_norm(grid, &d) / l2_norm(grid, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_values() {
        let f = default_family();
        assert_eq!(f.len(), 6);
        assert!((f[0].value(0.0, 0.0) - 10.13f64.ln()).abs() < 1e-14);
        assert_eq!(f[5].grad(0.3, 0.1), (0.0, 0.0));
        assert!(f.iter().all(|h| h.validate().is_ok()));
        assert!(HarmonicFn::Log { a: 0.5, b: 0.9 }.validate().is_err());
    }

    #[test]
    fn neumann_closed_form_on_right_side() {
        let g = Grid::with_steps(8, 4, 1.0).unwrap();
        let phi = HarmonicFn::Log { a: 2.3, b: 2.2 };
        let (_, n) = boundary_values(&phi, &g, CornerNormal::SideAverage).unwrap();
        let map = BoundaryIndexMap::new(&g);
        let r = map.rank(8, 3).unwrap();
        let y = g.coord(3);
        let want = 2.0 * (1.0 - 2.3) / ((1.0f64 - 2.3).powi(2) + (y - 2.2).powi(2));
        assert!((n[r] - want).abs() < 1e-14);
        assert!(n[r] < 0.0);
    }

    #[test]
    fn constant_projects_to_itself() {
        let g = Grid::with_steps(10, 4, 1.0).unwrap();
        let b = ProductBasis::new(&default_family(), &g).unwrap();
        assert_eq!(b.len(), 21);
        let p = project_onto_s6(&vec![1.0; 121], &b).unwrap();
        let worst = p.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }
}

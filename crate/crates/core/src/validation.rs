//! Independent checks: interior snapshot pairings from forward solves and
//! a manufactured solution for the forward solver.

use crate::error::{Error, Result};
use crate::grid::{boundary_inner_product, BoundaryIndexMap, BoundaryTrace, Grid, OperatorMatrix, SpaceTag};
use crate::harmonic::HarmonicFn;
use crate::nd::{box_muller, perimeter_hat};
use crate::speed::SpeedField;
use crate::wave::{interior_snapshot_inner_product, solve_ibvp_with, NeumannSource, Record, SolverOptions};
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use std::f64::consts::PI;

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.next_u64();
    let b = rng.next_u64();
    box_muller(a, b)
}

/// Random half-time source: sin²(πt/T) window times a 3×3 combination of
/// cos(pπt/T) and cos(qθ + phase), θ the polar angle of the boundary node.
pub fn smooth_source(grid: &Grid, rng: &mut ChaCha8Rng) -> BoundaryTrace {
    let map = BoundaryIndexMap::new(grid);
    let theta: Vec<f64> = map
        .nodes()
        .iter()
        .map(|&(i, j)| grid.coord(j).atan2(grid.coord(i)))
        .collect();
    let n = grid.n_side();
    let mut v = vec![0.0; grid.n_half()];
    for p in 0..3 {
        for q in 0..3 {
            let a = normal(rng);
            let phase = 2.0 * PI * uniform(rng);
            for l in 0..grid.lh {
                let t = grid.time(l);
                let w = (PI * t / grid.t).sin().powi(2) * (p as f64 * PI * t / grid.t).cos();
                for b in 0..n {
                    v[l * n + b] += a * w * (q as f64 * theta[b] + phase).cos();
                }
            }
        }
    }
    BoundaryTrace::new(*grid, SpaceTag::Half, v).expect("half-time length")
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fine grid used for snapshots at time T of a coarse half-time source.
pub fn snapshot_grid(coarse: &Grid, factor: usize) -> Result<Grid> {
    Grid::with_steps(coarse.i * factor, coarse.l * factor, coarse.t)
}

/// Wave field at t_{Lh-1} (= T for even L) on the fine grid, driven by the
/// coarse source injected with the same space-time hats as the ND assembly.
pub fn fine_snapshot(f_half: &BoundaryTrace, speed_fine: &SpeedField, factor: usize) -> Result<(Vec<f64>, Grid)> {
    if f_half.space != SpaceTag::Half {
        return Err(Error::Shape("fine_snapshot needs a half-time source".into()));
    }
    let coarse = f_half.grid;
    let fine = snapshot_grid(&coarse, factor)?;
    if !speed_fine.matches(&fine) {
        return Err(Error::Shape("speed is not on the snapshot grid".into()));
    }
    let cmap = BoundaryIndexMap::new(&coarse);
    let fmap = BoundaryIndexMap::new(&fine);
    let pf = factor as f64;
    let mut src = NeumannSource::zeros(fine);
    for (b, &(ci, cj)) in cmap.nodes().iter().enumerate() {
        let hat = perimeter_hat(&coarse, &fmap, factor, ci, cj);
        for l in 0..coarse.lh {
            let v = f_half.values[l * coarse.n_side() + b];
            if v == 0.0 {
                continue;
            }
            let centre = (l * factor) as isize;
            for q in -(factor as isize - 1)..=(factor as isize - 1) {
                let lv = centre + q;
                if lv < 0 || lv as usize > fine.l {
                    continue;
                }
                let t = 1.0 - (q.unsigned_abs() as f64) / pf;
                for &(fr, w) in &hat {
                    src.add(lv as usize, fr, v * w * t);
                }
            }
        }
    }
    let level = factor * (coarse.lh - 1);
    let out = solve_ibvp_with(speed_fine, &src, &fine, &Record::snapshots(&[level]), SolverOptions::default())?;
    Ok((out.snapshot(level).expect("requested").to_vec(), fine))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCheck {
    pub interior: f64,
    pub boundary: f64,
    /// (Kf, h) for the symmetry side of the identity
    pub boundary_transposed: f64,
}

impl PairCheck {
    pub fn error(&self) -> f64 {
        rel(self.interior, self.boundary)
    }
    pub fn symmetry_error(&self) -> f64 {
        rel(self.boundary, self.boundary_transposed)
    }
}

fn apply(k: &OperatorMatrix, v: &BoundaryTrace) -> BoundaryTrace {
    let n = v.values.len();
    let x = faer::Mat::from_fn(n, 1, |i, _| v.values[i]);
    let y = &k.mat * &x;
    BoundaryTrace::new(v.grid, SpaceTag::Half, (0..n).map(|i| y[(i, 0)]).collect()).expect("half length")
}

/// (u^f(T), u^h(T))_{c⁻²} against (f, Kh) for `pairs` random source pairs.
pub fn blagovescenskii_checks(
    k: &OperatorMatrix,
    speed_fine: &SpeedField,
    factor: usize,
    pairs: usize,
    seed: u64,
) -> Result<Vec<PairCheck>> {
    let grid = k.grid;
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let f = smooth_source(&grid, &mut rng);
        let h = smooth_source(&grid, &mut rng);
        let (uf, fine) = fine_snapshot(&f, speed_fine, factor)?;
        let (uh, _) = fine_snapshot(&h, speed_fine, factor)?;
        let interior = interior_snapshot_inner_product(&uf, &uh, speed_fine, &fine)?;
        let boundary = boundary_inner_product(&f, &apply(k, &h))?;
        let boundary_transposed = boundary_inner_product(&apply(k, &f), &h)?;
        out.push(PairCheck { interior, boundary, boundary_transposed });
    }
    Ok(out)
}

/// (u^f(T), φ)_{c⁻²} against (f, Bφ); `b_phi` lists the B images of `phis`.
pub fn wave_harmonic_checks(
    b_phi: &[BoundaryTrace],
    phis: &[HarmonicFn],
    speed_fine: &SpeedField,
    factor: usize,
    sources: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = b_phi.first().ok_or_else(|| Error::InvalidArgument("no harmonics".into()))?.grid;
    let mut rng = seeded(seed);
    let mut errs = Vec::new();
    for _ in 0..sources {
        let f = smooth_source(&grid, &mut rng);
        let (u, fine) = fine_snapshot(&f, speed_fine, factor)?;
        for (b, phi) in b_phi.iter().zip(phis) {
            let field = phi.sample(fine.i);
            let interior = interior_snapshot_inner_product(&u, &field, speed_fine, &fine)?;
            errs.push(rel(interior, boundary_inner_product(&f, b)?));
        }
    }
    Ok(errs)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// u = t³ cos(x) cos(2y) on c ≡ 1 with the matching body force and Neumann
/// data. Returns the max nodal error at t = 2T.
pub fn manufactured_error(i: usize, t_half: f64) -> Result<(f64, f64)> {
    let grid = Grid::new(i, t_half, 1.0)?;
    let speed = SpeedField::constant(i, 1.0)?;
    let q = |x: f64, y: f64| x.cos() * (2.0 * y).cos();
    let qx = |x: f64, y: f64| -x.sin() * (2.0 * y).cos();
    let qy = |x: f64, y: f64| -2.0 * x.cos() * (2.0 * y).sin();
    let map = BoundaryIndexMap::new(&grid);
    let mut src = NeumannSource::zeros(grid);
    for l in 0..=grid.l {
        let t3 = grid.time(l).powi(3);
        for (r, &(a, b)) in map.nodes().iter().enumerate() {
            let (x, y) = (grid.coord(a), grid.coord(b));
            let nx = if a == 0 { -1.0 } else if a == grid.i { 1.0 } else { 0.0 };
            let ny = if b == 0 { -1.0 } else if b == grid.i { 1.0 } else { 0.0 };
            let mut dn = nx * qx(x, y) + ny * qy(x, y);
            if nx != 0.0 && ny != 0.0 {
                dn *= 0.5;
            }
            src.add(l, r, t3 * dn);
        }
    }
    let ni = i + 1;
    let force = |l: usize, out: &mut [f64]| {
        let t = grid.time(l);
        for a in 0..ni {
            for b in 0..ni {
                let (x, y) = (grid.coord(a), grid.coord(b));
                // u_tt − Δu with Δq = −5q
                out[a * ni + b] = 6.0 * t * q(x, y) + 5.0 * t.powi(3) * q(x, y);
            }
        }
    };
    let opts = SolverOptions { forcing: Some(&force), ..Default::default() };
    let out = solve_ibvp_with(&speed, &src, &grid, &Record::snapshots(&[grid.l]), opts)?;
    let u = out.snapshot(grid.l).expect("final level");
    let t3 = grid.time(grid.l).powi(3);
    let mut err = 0.0f64;
    for a in 0..ni {
        for b in 0..ni {
            err = err.max((u[a * ni + b] - t3 * q(grid.coord(a), grid.coord(b))).abs());
        }
    }
    Ok((grid.dx, err))
}

/// Observed orders log(e_k/e_{k+1}) / log(h_k/h_{k+1}) over successive grids.
pub fn observed_orders(is: &[usize], t_half: f64) -> Result<Vec<f64>> {
    let errs = is.iter().map(|&i| manufactured_error(i, t_half)).collect::<Result<Vec<_>>>()?;
    Ok(errs
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_vanishes_at_ends() {
        let g = Grid::new(6, 1.0, 1.0).unwrap();
        let f = smooth_source(&g, &mut seeded(3));
        assert!(f.level(0).iter().all(|v| *v == 0.0));
        assert!(f.level(g.lh - 1).iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

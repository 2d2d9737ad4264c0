mod common;

use bcmap::harmonic::{
    boundary_values, default_family, l2_norm, laplacian_residual, project_onto_s6, CornerNormal, HarmonicFn,
    ProductBasis,
};
use bcmap::Grid;
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

fn grid(i: usize) -> Grid {
    Grid::new(i, 1.0, 1.0).unwrap()
}

fn rel(a: &[f64], b: &[f64], g: &Grid) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(g, &d) / l2_norm(g, b)
}

#[test]
fn traces_closed_forms() {
    let g = grid(10);
    let (d, n) = boundary_values(&HarmonicFn::Constant { value: 2.0 }, &g, CornerNormal::SideAverage).unwrap();
    assert!(d.iter().all(|v| *v == 2.0) && n.iter().all(|v| *v == 0.0));

    let (a, b) = (2.3, 2.2);
    let phi = HarmonicFn::Log { a, b };
    let (_, n) = boundary_values(&phi, &g, CornerNormal::SideAverage).unwrap();
    let map = bcmap::BoundaryIndexMap::new(&g);
    for (r, &(i, j)) in map.nodes().iter().enumerate() {
        if i == g.i && j > 0 && j < g.i {
            let y = g.coord(j);
            let want = 2.0 * (1.0 - a) / ((1.0 - a).powi(2) + (y - b).powi(2));
            assert!((n[r] - want).abs() < 1e-14);
            assert!(n[r] < 0.0);
        }
    }
}

#[test]
fn singularity_inside_is_rejected() {
    let g = grid(4);
    assert!(boundary_values(&HarmonicFn::Log { a: 0.5, b: 0.0 }, &g, CornerNormal::SideAverage).is_err());
    assert!(boundary_values(&HarmonicFn::Log { a: 1.0, b: 1.0 }, &g, CornerNormal::SideAverage).is_err());
    assert!(HarmonicFn::Log { a: 1.01, b: 0.0 }.validate().is_ok());
}

#[test]
fn boundary_flux_vanishes() {
    for i in [10, 25] {
        let g = grid(i);
        for corner in [CornerNormal::SideAverage, CornerNormal::Diagonal] {
            for phi in default_family() {
                let (_, n) = boundary_values(&phi, &g, corner).unwrap();
                let flux: f64 = n.iter().map(|v| v * g.dx).sum();
                assert!(flux.abs() <= 5.0 * g.dx, "{phi:?} I={i}: {flux}");
            }
        }
    }
}

#[test]
fn family_is_discretely_harmonic() {
    for i in [10, 25, 50] {
        let dx = 2.0 / i as f64;
        for phi in default_family() {
            assert!(laplacian_residual(&phi, i) <= 10.0 * dx * dx, "{phi:?} I={i}");
        }
    }
}

#[test]
fn basis_has_21_products() {
    let b = ProductBasis::new(&default_family(), &grid(15)).unwrap();
    assert_eq!(b.len(), 21);
    assert_eq!(b.pairs.first(), Some(&(0, 0)));
    assert_eq!(b.pairs.last(), Some(&(5, 5)));
}

#[test]
fn projection_reproduces_span_and_is_idempotent() {
    let g = grid(25);
    let b = ProductBasis::new(&default_family(), &g).unwrap();
    let one = vec![1.0; g.n_nodes()];
    assert!(rel(&project_onto_s6(&one, &b).unwrap(), &one, &g) < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let coef: Vec<f64> = (0..b.len()).map(|_| uniform(&mut rng)).collect();
        let f = b.combine(&coef);
        let p = project_onto_s6(&f, &b).unwrap();
        assert!(rel(&p, &f, &g) < 1e-8, "reproduction {}", rel(&p, &f, &g));

        let raw: Vec<f64> = (0..g.n_nodes()).map(|_| uniform(&mut rng)).collect();
        let p1 = project_onto_s6(&raw, &b).unwrap();
        let p2 = project_onto_s6(&p1, &b).unwrap();
        assert!(rel(&p2, &p1, &g) < 1e-8);
        assert!(l2_norm(&g, &p1) <= l2_norm(&g, &raw) * (1.0 + 1e-12));
    }
}

#[test]
fn gram_pseudo_inverse_residual() {
    let g = grid(25);
    let b = ProductBasis::new(&default_family(), &g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let field: Vec<f64> = (0..g.n_nodes()).map(|_| 1.0 + uniform(&mut rng)).collect();
    let m = b.moments(&field).unwrap();
    let a = b.coefficients(&field, 1e-10).unwrap();
    let ga: Vec<f64> = (0..b.len()).map(|r| (0..b.len()).map(|c| b.gram[(r, c)] * a[c]).sum()).collect();
    let res = common::norm(&ga.iter().zip(&m).map(|(x, y)| x - y).collect::<Vec<_>>());
    assert!(res <= 1e-8 * common::norm(&m), "residual {res:e}");
    let p = project_onto_s6(&field, &b).unwrap();
    assert!(rel(&b.combine(&a), &p, &g) < 1e-8);
}

#[test]
fn gram_is_nearly_singular() {
    let b = ProductBasis::new(&default_family(), &grid(25)).unwrap();
    let ev = b.gram_eigenvalues();
    assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    let cond = ev[ev.len() - 1] / ev[0].abs().max(f64::MIN_POSITIVE);
    assert!(cond > 1e8, "condition {cond:e}");
    assert!(b.rank(1e-6) < b.len());
}

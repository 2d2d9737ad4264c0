mod common;

use bcmap::grid::{boundary_inner_product, CFL_LIMIT};
use bcmap::harmonic::HarmonicFn;
use bcmap::nd::{apply_noise, NdKernel, NdMatrix, NoiseSpec};
use bcmap::operators::{assemble_j, assemble_k, assemble_pt, assemble_r, trapezoid_pattern, OperatorSet};
use bcmap::persist::{read_matrix, write_matrix};
use bcmap::{BoundaryIndexMap, BoundaryTrace, Grid, SpaceTag};

#[test]
fn lexicographic_perimeter_i2() {
    let g = Grid::with_steps(2, 4, 1.0).unwrap();
    let map = BoundaryIndexMap::new(&g);
    assert_eq!(
        map.nodes(),
        &[(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)]
    );
    assert_eq!(map.index(0, 0, 0), Some(0));
    assert_eq!(map.index(1, 0, 0), Some(8));
    assert_eq!(map.index(3, 1, 2), Some(3 * 8 + 4));
    assert_eq!(map.index(0, 1, 1), None);
}

#[test]
fn desk_grid_sizes() {
    let g = Grid::new(15, 1.95, 1.0).unwrap();
    assert_eq!(g.l, 42);
    assert_eq!(g.n_side(), 60);
    assert_eq!(g.n_full(), 2580);
    assert_eq!(g.lh, 22);
    assert!(g.courant(1.0) <= CFL_LIMIT + 1e-12);
    assert!((g.l as f64 * g.dt - 2.0 * g.t).abs() < 1e-12);
}

#[test]
fn step_counts_round_up_to_even() {
    // 2T/dt_cfl = 282.8 and 322.4; rounding down would break the CFL limit
    let a = Grid::new(50, 4.0, 1.0).unwrap();
    let b = Grid::new(50, 4.0, 1.14).unwrap();
    assert_eq!((a.l, b.l), (284, 324));
    assert!(a.courant(1.0) <= CFL_LIMIT && b.courant(1.14) <= CFL_LIMIT);
    assert!(Grid::with_steps(50, 282, 4.0).unwrap().courant(1.0) > CFL_LIMIT);
}

#[test]
fn inner_product_of_constants_is_perimeter_times_length() {
    let g = Grid::new(15, 1.95, 1.0).unwrap();
    let one = BoundaryTrace::new(g, SpaceTag::Half, vec![1.0; g.n_half()]).unwrap();
    let v = boundary_inner_product(&one, &one).unwrap();
    let len = (g.lh - 1) as f64 * g.dt;
    assert!((v - 8.0 * len).abs() < 1e-12);
    let zero = BoundaryTrace::zeros(g, SpaceTag::Half);
    assert_eq!(boundary_inner_product(&zero, &one).unwrap(), 0.0);
    let full = BoundaryTrace::zeros(g, SpaceTag::Full);
    assert!(boundary_inner_product(&full, &one).is_err());
}

fn expected_display(l: usize) -> Vec<Vec<f64>> {
    // the trapezoid display in units of dt/2
    let lh = (l + 2) / 2;
    (0..lh)
        .map(|r| {
            let mut row = vec![0.0; l + 1];
            let hi = l - r;
            if hi > r {
                for (k, v) in row.iter_mut().enumerate().take(hi + 1).skip(r) {
                    *v = if k == r || k == hi { 1.0 } else { 2.0 };
                }
            }
            row
        })
        .collect()
}

#[test]
fn j_matches_odd_and_even_displays() {
    for l in 3..=6 {
        let g = Grid::with_steps(2, l, 1.3).unwrap();
        let pat = trapezoid_pattern(l, g.dt);
        let want = expected_display(l);
        let j = assemble_j(&g);
        assert_eq!(j.block_rows(), (l + 2) / 2);
        assert_eq!(j.block_cols(), l + 1);
        for (r, row) in want.iter().enumerate() {
            for (k, &w) in row.iter().enumerate() {
                assert!((pat[r * (l + 1) + k] - w * g.dt / 2.0).abs() < 1e-15, "L={l} ({r},{k})");
                assert!((j.c(r, k) - 0.5 * w * g.dt / 2.0).abs() < 1e-15);
            }
        }
        let last = j.block_rows() - 1;
        let last_zero = (0..=l).all(|k| j.c(last, k) == 0.0);
        assert_eq!(last_zero, l % 2 == 0, "L={l}");
        if l % 2 == 1 {
            let m = (l - 1) / 2;
            assert_eq!(want[last][m], 1.0);
            assert_eq!(want[last][m + 1], 1.0);
        }
    }
}

#[test]
fn j_of_one_is_remaining_time() {
    for l in 3..=8 {
        let g = Grid::with_steps(3, l, 0.9).unwrap();
        let j = assemble_j(&g);
        let y = j.apply(&vec![1.0; g.n_full()]).unwrap();
        for r in 0..g.lh {
            let want = g.t - g.time(r);
            assert!(y[r * g.n_side()..(r + 1) * g.n_side()].iter().all(|v| (v - want).abs() < 1e-13));
        }
    }
}

#[test]
fn r_squared_and_pt_identities() {
    for l in 3..=6 {
        let g = Grid::with_steps(2, l, 1.0).unwrap();
        let r = assemble_r(&g).to_dense().mat;
        let pt = assemble_pt(&g).to_dense().mat;
        let rr = &r * &r;
        let ppt = &pt * pt.transpose();
        let n = g.n_half();
        for a in 0..n {
            for b in 0..n {
                let id = if a == b { 1.0 } else { 0.0 };
                assert_eq!(rr[(a, b)], id);
                assert_eq!(ppt[(a, b)], id);
            }
        }
        // Ptᵗ extends by zero
        let v: Vec<f64> = (0..n).map(|k| k as f64 + 1.0).collect();
        let ext = pt.transpose() * faer::Mat::from_fn(n, 1, |i, _| v[i]);
        for k in 0..g.n_full() {
            assert_eq!(ext[(k, 0)], if k < n { v[k] } else { 0.0 });
        }
        // R reverses blocks
        let rv = assemble_r(&g).apply(&v).unwrap();
        let ns = g.n_side();
        for blk in 0..g.lh {
            assert_eq!(&rv[blk * ns..(blk + 1) * ns], &v[(g.lh - 1 - blk) * ns..(g.lh - blk) * ns]);
        }
    }
}

#[test]
fn structural_zero_patterns() {
    let g = Grid::with_steps(3, 6, 1.0).unwrap();
    let (j, r, pt) = (assemble_j(&g), assemble_r(&g), assemble_pt(&g));
    for a in 0..g.lh {
        for k in 0..=g.l {
            if k < a || k > g.l - a {
                assert_eq!(j.c(a, k), 0.0);
            }
            if k != a {
                assert_eq!(pt.c(a, k), 0.0);
            }
        }
        for k in 0..g.lh {
            assert_eq!(r.c(a, k) != 0.0, k == g.lh - 1 - a);
        }
    }
    // every block is a multiple of the identity
    let dense = j.to_dense().mat;
    let n = g.n_side();
    for a in 0..g.n_half() {
        for b in 0..g.n_full() {
            if a % n != b % n {
                assert_eq!(dense[(a, b)], 0.0);
            }
        }
    }
}

fn scaled(nd: &NdMatrix, s: f64) -> NdMatrix {
    let k = nd.kernel();
    let kernel = NdKernel {
        g0: k.g0.iter().map(|v| v * s).collect(),
        g1: k.g1.iter().map(|v| v * s).collect(),
        ..k.clone()
    };
    NdMatrix::from_kernel(kernel, "scaled")
}

#[test]
fn k_and_b_are_linear_in_the_data() {
    let d = common::desk();
    let k2 = assemble_k(&scaled(&d.nd, 2.5), &d.ops).unwrap();
    let n = d.grid.n_half();
    let scale = d.k.mat.norm_max();
    for a in (0..n).step_by(37) {
        for b in 0..n {
            assert!((k2.mat[(a, b)] - 2.5 * d.k.mat[(a, b)]).abs() <= 1e-13 * scale);
        }
    }
    // K(Λ + 2c) − K(Λ) = 2 (K(Λ + c) − K(Λ))
    let k_c = assemble_k(&apply_noise(&d.nd, NoiseSpec::constant(0.01)).unwrap(), &d.ops).unwrap();
    let k_2c = assemble_k(&apply_noise(&d.nd, NoiseSpec::constant(0.02)).unwrap(), &d.ops).unwrap();
    for a in (0..n).step_by(41) {
        for b in 0..n {
            let lhs = k_2c.mat[(a, b)] - d.k.mat[(a, b)];
            let rhs = 2.0 * (k_c.mat[(a, b)] - d.k.mat[(a, b)]);
            assert!((lhs - rhs).abs() < 1e-12 * scale);
        }
    }
}

#[test]
fn b_of_constant_is_remaining_time() {
    let d = common::desk();
    let b = d.b_of(&[HarmonicFn::Constant { value: 1.0 }]).remove(0);
    for l in 0..d.grid.lh {
        let want = d.grid.t - d.grid.time(l);
        assert!(b.level(l).iter().all(|v| (v - want).abs() < 1e-12), "level {l}");
    }
}

#[test]
fn b_is_linear_in_the_harmonic() {
    let d = common::desk();
    let fam = bcmap::harmonic::default_family();
    let bs = d.b_of(&fam[..2]);
    // φ + ψ is represented by summing traces, so check B on summed traces
    let ops = OperatorSet::new(&d.grid);
    let tr: Vec<_> = fam[..2]
        .iter()
        .map(|p| bcmap::harmonic::boundary_traces(p, &d.grid, Default::default()).unwrap())
        .collect();
    let sum = |f: fn(&bcmap::harmonic::HarmonicTraces) -> &BoundaryTrace| {
        let v: Vec<f64> = f(&tr[0]).values.iter().zip(&f(&tr[1]).values).map(|(a, b)| a + b).collect();
        BoundaryTrace::new(d.grid, SpaceTag::Full, v).unwrap()
    };
    let (ds, ns) = (sum(|t| &t.dirichlet), sum(|t| &t.neumann));
    let bsum = bcmap::operators::assemble_b_apply(&d.nd, &ops, &ds, &ns).unwrap();
    for ((s, a), b) in bsum.values.iter().zip(&bs[0].values).zip(&bs[1].values) {
        assert!((s - a - b).abs() <= 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn operator_matrix_persists_bit_exactly() {
    let g = Grid::with_steps(3, 5, 1.0).unwrap();
    let j = assemble_j(&g).to_dense();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("j.bctm");
    let data = j.to_row_major();
    write_matrix(&p, j.nrows(), j.ncols(), &data).unwrap();
    let back = read_matrix(&p).unwrap();
    assert_eq!((back.rows, back.cols), (j.nrows(), j.ncols()));
    assert!(back.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
}

use bcmap::grid::{boundary_inner_product, weighted_dot, BoundaryIndexMap};
use bcmap::harmonic::{default_family, l2_norm, ProductBasis};
use bcmap::nd::{apply_noise, assemble_kernel, NdMatrix, NoiseSpec};
use bcmap::operators::OperatorSet;
use bcmap::persist::{read_csv, read_matrix, write_csv, write_matrix};
use bcmap::wave::Closure;
use bcmap::{BoundaryTrace, Grid, SpaceTag, SpeedField};
use proptest::prelude::*;
use std::sync::OnceLock;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (2usize..7, 1usize..14, 0.2f64..3.0).prop_map(|(i, l, t)| Grid::with_steps(i, l, t).unwrap())
}

fn trace(grid: Grid, space: SpaceTag, seed: u64) -> BoundaryTrace {
    let n = grid.len(space);
    let values = (0..n)
        .map(|k| ((k as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    BoundaryTrace::new(grid, space, values).unwrap()
}

fn small_nd() -> &'static NdMatrix {
    static ND: OnceLock<NdMatrix> = OnceLock::new();
    ND.get_or_init(|| {
        let grid = Grid::new(3, 0.6, 1.0).unwrap();
        let speed = SpeedField::constant(6, 1.0).unwrap();
        NdMatrix::from_kernel(assemble_kernel(&speed, &grid, 2, Closure::Ghost).unwrap(), "c=1")
    })
}

fn basis() -> &'static ProductBasis {
    static B: OnceLock<ProductBasis> = OnceLock::new();
    B.get_or_init(|| ProductBasis::new(&default_family(), &Grid::with_steps(8, 2, 1.0).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reversal_and_restriction_identities(g in grid_strategy(), seed in 0u64..1000) {
        let ops = OperatorSet::new(&g);
        let x = trace(g, SpaceTag::Half, seed);
        let rr = ops.r.apply(&ops.r.apply(&x.values).unwrap()).unwrap();
        prop_assert_eq!(&rr, &x.values);
        let ptt = ops.pt.to_dense().mat.transpose().to_owned();
        let ext: Vec<f64> = {
            let v = faer::Mat::from_fn(x.values.len(), 1, |i, _| x.values[i]);
            let e = &ptt * &v;
            (0..e.nrows()).map(|i| e[(i, 0)]).collect()
        };
        prop_assert_eq!(ext.len(), g.n_full());
        prop_assert!(ext[g.n_half()..].iter().all(|&v| v == 0.0));
        prop_assert_eq!(ops.pt.apply(&ext).unwrap(), x.values);
    }

    #[test]
    fn j_of_one_is_remaining_time(g in grid_strategy()) {
        let ops = OperatorSet::new(&g);
        let one = vec![1.0; g.n_full()];
        let y = ops.j.apply(&one).unwrap();
        let n = g.n_side();
        for l in 0..g.lh {
            let want = g.t - g.time(l);
            for v in &y[l * n..(l + 1) * n] {
                prop_assert!((v - want).abs() <= 1e-12 * (1.0 + g.t), "level {} got {} want {}", l, v, want);
            }
        }
    }

    #[test]
    fn index_map_is_a_bijection(g in grid_strategy()) {
        let map = BoundaryIndexMap::new(&g);
        prop_assert_eq!(map.n_side(), 4 * g.i);
        prop_assert_eq!(map.len(), g.n_full());
        for idx in 0..map.len() {
            let (l, i, j) = map.triple(idx).unwrap();
            prop_assert!(i == 0 || j == 0 || i == g.i || j == g.i);
            prop_assert_eq!(map.index(l, i, j), Some(idx));
        }
        prop_assert!(map.triple(map.len()).is_none());
        prop_assert!(map.index(0, 1, 1).is_none());
    }

    #[test]
    fn inner_product_is_symmetric_bilinear_positive(g in grid_strategy(), s1 in 0u64..500, s2 in 0u64..500, a in -3.0f64..3.0) {
        let x = trace(g, SpaceTag::Full, s1);
        let y = trace(g, SpaceTag::Full, s2);
        let xy = boundary_inner_product(&x, &y).unwrap();
        prop_assert_eq!(xy, boundary_inner_product(&y, &x).unwrap());
        let comb: Vec<f64> = x.values.iter().zip(&y.values).map(|(p, q)| a * p + q).collect();
        let lhs = weighted_dot(&g, SpaceTag::Full, &comb, &x.values);
        let rhs = a * weighted_dot(&g, SpaceTag::Full, &x.values, &x.values) + xy;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!(boundary_inner_product(&x, &x).unwrap() > 0.0);
        let h = trace(g, SpaceTag::Half, s1);
        prop_assert!(boundary_inner_product(&x, &h).is_err());
    }

    #[test]
    fn container_and_csv_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|k| f64::from_bits((seed.rotate_left(k as u32) & 0x7fef_ffff_ffff_ffff) | 0x3000_0000_0000_0000) * if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.bctm");
        write_matrix(&p, rows, cols, &data).unwrap();
        let m = read_matrix(&p).unwrap();
        prop_assert_eq!((m.rows, m.cols), (rows, cols));
        prop_assert!(m.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        let c = tmp.path().join("m.csv");
        write_csv(&c, rows, cols, &data).unwrap();
        let m = read_csv(&c).unwrap();
        prop_assert_eq!((m.rows, m.cols), (rows, cols));
        prop_assert!(m.data.iter().zip(&data).all(|(a, b)| a == b));
    }

    #[test]
    fn noise_is_random_access(seed in any::<u64>(), level in 0.0f64..0.5, probes in prop::collection::vec((0usize..1000, 0usize..1000), 8)) {
        let nd = small_nd();
        let noisy = apply_noise(nd, NoiseSpec::gaussian(level, seed)).unwrap();
        let again = apply_noise(nd, NoiseSpec::gaussian(level, seed)).unwrap();
        let n = nd.grid().n_full();
        let dense = noisy.to_dense();
        for (m, c) in probes {
            let (m, c) = (m % n, c % n);
            prop_assert_eq!(noisy.entry(m, c), again.entry(m, c));
            prop_assert_eq!(noisy.entry(m, c), dense.mat[(m, c)]);
        }
    }

    #[test]
    fn projection_is_a_contraction(seed in any::<u64>()) {
        let b = basis();
        let g = Grid::with_steps(8, 2, 1.0).unwrap();
        let f: Vec<f64> = (0..81).map(|k| ((seed ^ (k as u64 * 0x9e37_79b9)) % 2001) as f64 / 1000.0 - 1.0).collect();
        let p = b.project(&f, 1e-10).unwrap();
        prop_assert!(l2_norm(&g, &p) <= l2_norm(&g, &f) * (1.0 + 1e-10));
        let pp = b.project(&p, 1e-10).unwrap();
        let d: Vec<f64> = p.iter().zip(&pp).map(|(a, c)| a - c).collect();
        prop_assert!(l2_norm(&g, &d) <= 1e-8 * (1.0 + l2_norm(&g, &p)));
    }
}

mod common;

use common::{clique, cycle, dense_normalized, path, random_graph, random_matrix, rng, star};
use ppro::graph::{normalize, read_edge_list, write_edge_list};
use ppro::{Graph, Matrix};
use proptest::prelude::*;

#[test]
fn build_graph_canonicalizes() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 0), (1, 1), (1, 2)]).unwrap();
    assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
    assert_eq!(g.degrees(), vec![1, 2, 1]);
    assert_eq!(Graph::from_edges(3, &[]).unwrap().degrees(), vec![0, 0, 0]);
    assert_eq!(Graph::empty(4).degrees(), vec![0; 4]);
}

#[test]
fn out_of_range_edge_is_an_input_error() {
    let err = Graph::from_edges(3, &[(0, 1), (2, 3)]).unwrap_err().to_string();
    assert!(err.contains("#1"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("edges.tsv");
    std::fs::write(&file, "# header\n0\t1\n\n1\t7\n").unwrap();
    let err = read_edge_list(&file, 3).unwrap_err().to_string();
    assert!(err.contains("edges.tsv:4"), "{err}");
}

#[test]
fn triangle_normalization() {
    let adj = normalize(&clique(3)).to_dense();
    for v in adj.as_slice() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let h = normalize(&clique(3)).spmm(&Matrix::identity(3));
    assert!(h.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn star_normalization() {
    let adj = normalize(&star(3)).to_dense();
    assert!((adj[(0, 0)] - 0.25).abs() < 1e-15);
    assert!((adj[(1, 1)] - 0.5).abs() < 1e-15);
    assert!((adj[(0, 1)] - 1.0 / 8f64.sqrt()).abs() < 1e-15);
    assert!((adj[(2, 0)] - 1.0 / 8f64.sqrt()).abs() < 1e-15);
    assert_eq!(adj[(1, 2)], 0.0);
}

#[test]
fn edgeless_normalizes_to_identity() {
    let adj = normalize(&Graph::empty(2));
    assert_eq!(adj.to_dense(), Matrix::identity(2));
    let h = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]);
    assert_eq!(adj.spmm(&h), h);
}

#[test]
fn regular_graphs_have_unit_row_sums() {
    for g in [cycle(5), cycle(8), clique(4), clique(7)] {
        let adj = normalize(&g);
        for i in 0..g.node_count() {
            let s: f64 = adj.row(i).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14, "row {i} sums to {s}");
        }
    }
    // a path is not regular
    let adj = normalize(&path(3));
    let s: f64 = adj.row(0).map(|(_, w)| w).sum();
    assert!((s - 1.0).abs() > 1e-3);
}

#[test]
fn spmm_matches_dense_on_random_graph() {
    let mut r = rng(10);
    let g = random_graph(10, 0.3, &mut r);
    let h = random_matrix(10, 4, &mut r);
    let expected = dense_normalized(&g).matmul(&h);
    assert!(normalize(&g).spmm(&h).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn spmm_parallel_and_sequential_agree_bitwise() {
    let mut r = rng(11);
    let g = random_graph(600, 0.02, &mut r);
    let h = random_matrix(600, 40, &mut r);
    let adj = normalize(&g);
    assert_eq!(adj.spmm(&h), adj.spmm_sequential(&h));
}

#[test]
#[should_panic]
fn spmm_rejects_wrong_row_count() {
    normalize(&path(3)).spmm(&Matrix::zeros(4, 2));
}

#[test]
fn degrees_match_dense_row_sums() {
    let mut r = rng(12);
    let g = random_graph(40, 0.15, &mut r);
    let dense = g.to_dense();
    for (i, d) in g.degrees().into_iter().enumerate() {
        assert_eq!(d as f64, dense.row(i).iter().sum::<f64>());
    }
}

#[test]
fn spectral_radius_at_most_one() {
    let mut r = rng(13);
    let g = random_graph(30, 0.2, &mut r);
    let adj = normalize(&g);
    let mut v = Matrix::filled(30, 1, 1.0);
    let mut norm = 0.0;
    for _ in 0..200 {
        let next = adj.spmm(&v);
        norm = next.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.scale(1.0 / norm);
    }
    assert!(norm <= 1.0 + 1e-9, "{norm}");
}

fn arb_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..40).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..120)))
}

proptest! {
    #[test]
    fn csr_invariants((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let offsets = g.row_offsets();
        prop_assert_eq!(offsets[0], 0);
        prop_assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        for i in 0..n {
            let nb = g.neighbors(i);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!nb.contains(&i));
            for &j in nb {
                prop_assert!(g.neighbors(j).contains(&i));
            }
        }
    }

    #[test]
    fn edge_dump_round_trips((n, edges) in arb_edges()) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("e.tsv");
        std::fs::write(&file, &buf).unwrap();
        prop_assert_eq!(read_edge_list(&file, n).unwrap(), g.clone());
        prop_assert_eq!(Graph::from_edges(n, &g.edges()).unwrap(), g);
    }

    #[test]
    fn spmm_matches_dense_normalization((n, edges) in arb_edges(), seed in 0u64..1000) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let h = random_matrix(n, 3, &mut rng(seed));
        let adj = normalize(&g);
        let dense = dense_normalized(&g);
        prop_assert!(adj.spmm(&h).max_abs_diff(&dense.matmul(&h)) < 1e-10);
        let ad = adj.to_dense();
        prop_assert!(ad.max_abs_diff(&ad.transpose()) == 0.0);
        prop_assert!(ad.as_slice().iter().all(|&w| (0.0..=1.0).contains(&w)));
        for i in 0..n {
            prop_assert!(adj.row(i).all(|(_, w)| w > 0.0));
        }
    }
}

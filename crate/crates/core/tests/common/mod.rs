#![allow(dead_code)]

use ppro::{Graph, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn path(n: usize) -> Graph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::from_edges(n, &edges).unwrap()
}

pub fn cycle(n: usize) -> Graph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_edges(n, &edges).unwrap()
}

pub fn clique(n: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            edges.push((u, v));
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Star with center 0 and `spokes` leaves.
pub fn star(spokes: usize) -> Graph {
    let edges: Vec<_> = (1..=spokes).map(|i| (0, i)).collect();
    Graph::from_edges(spokes + 1, &edges).unwrap()
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` computed densely.
pub fn dense_normalized(g: &Graph) -> Matrix {
    let n = g.node_count();
    let mut a = g.to_dense();
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>()).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(i, j)] / (d[i] * d[j]).sqrt();
        }
    }
    out
}

use ppro::autodiff::{Tape, Var};
use ppro::controllers::{head_forward, input_width, ControllerVars, Head};
use ppro::graph::normalize;
use std::sync::Arc;

pub type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// One differentiable operation under test: parameter shapes and a builder
/// producing the op output from the parameter leaves.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    pub build: Builder,
}

fn case(name: &'static str, shapes: &[(usize, usize)], build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        shapes: shapes.to_vec(),
        build: Box::new(build),
    }
}

/// `mean(out ⊙ R)` for a fixed random `R`, so every output entry matters.
pub fn scalarize(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(random_matrix(r, c, &mut rng(seed ^ 0x5eed)));
    let p = tape.mul(out, w);
    tape.mean(p)
}

/// Random parameters with every entry at least 0.05 away from zero, so
/// relu and abs are probed away from their kinks.
pub fn kink_free(shapes: &[(usize, usize)], seed: u64) -> Vec<Matrix> {
    let mut r = rng(seed);
    shapes
        .iter()
        .map(|&(a, b)| random_matrix(a, b, &mut r).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v }))
        .collect()
}

fn controller_vars(v: &[Var]) -> ControllerVars {
    ControllerVars {
        shared: (v[1], v[2]),
        prop: (v[3], v[4]),
        weight: (v[5], v[6]),
    }
}

pub fn op_cases() -> Vec<OpCase> {
    let adj = Arc::new(normalize(&Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]).unwrap()));
    let width = input_width(2);
    let controller = [(5, width), (width, 6), (1, 6), (6, 1), (1, 1), (6, 1), (1, 1)];
    vec![
        case("matmul", &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1])),
        case("spmm_const", &[(4, 3)], move |t, v| t.spmm_const(&adj, v[0])),
        case("add", &[(3, 4), (3, 4)], |t, v| t.add(v[0], v[1])),
        case("add_row_broadcast", &[(3, 4), (1, 4)], |t, v| t.add(v[0], v[1])),
        case("sub", &[(3, 4), (3, 4)], |t, v| t.sub(v[0], v[1])),
        case("mul", &[(3, 4), (3, 4)], |t, v| t.mul(v[0], v[1])),
        case("scale", &[(3, 4)], |t, v| t.scale(v[0], -2.5)),
        case("affine", &[(3, 4)], |t, v| t.affine(v[0], 0.7, 0.3)),
        case("concat_cols", &[(3, 2), (3, 3)], |t, v| t.concat_cols(&[v[0], v[1]])),
        case("relu", &[(3, 4)], |t, v| t.relu(v[0])),
        case("sigmoid", &[(3, 4)], |t, v| t.sigmoid(v[0])),
        case("row_softmax", &[(5, 4)], |t, v| t.row_softmax(v[0])),
        case("abs", &[(3, 4)], |t, v| t.abs(v[0])),
        case("dropout", &[(4, 5)], |t, v| t.dropout(v[0], 0.4, &mut rng(99))),
        case("masked_nll", &[(5, 3)], |t, v| {
            t.masked_nll(v[0], &[0, 2, 1, 1, 0], &[0, 1, 3, 4], Some(&[0.5, 1.0, 0.2, 0.9]))
        }),
        case("sum_sq", &[(3, 4)], |t, v| t.sum_sq(v[0])),
        case("mean", &[(3, 4)], |t, v| t.mean(v[0])),
        case("pick_rows", &[(4, 3), (4, 3)], |t, v| t.pick_rows(&[v[0], v[1]], &[1, 0, 0, 1])),
        case("gather_rows", &[(4, 3)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1])),
        case("elementwise_tanh", &[(3, 4)], |t, v| t.elementwise(v[0], f64::tanh, |x| 1.0 - x.tanh().powi(2))),
        case("mlp_2layer", &[(6, 5), (5, 8), (1, 8), (8, 3), (1, 3)], |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add(h, v[2]);
            let h = t.relu(h);
            let o = t.matmul(h, v[3]);
            t.add(o, v[4])
        }),
        case("propagation_head", &controller, |t, v| head_forward(t, &controller_vars(v), v[0], Head::Propagation)),
        case("weight_head", &controller, |t, v| head_forward(t, &controller_vars(v), v[0], Head::Weight)),
    ]
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn random_features(n: usize, dim: usize, rng: &mut impl Rng) -> ppro::nodes::NodeFeatures {
    let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    ppro::nodes::NodeFeatures::new(n, dim, data).unwrap()
}

/// Features whose rows are the given one-hot positions.
pub fn one_hot_features(positions: &[usize], dim: usize) -> ppro::nodes::NodeFeatures {
    let mut data = vec![0.0f32; positions.len() * dim];
    for (i, &p) in positions.iter().enumerate() {
        data[i * dim + p] = 1.0;
    }
    ppro::nodes::NodeFeatures::new(positions.len(), dim, data).unwrap()
}

/// Connected Erdős–Rényi graph, resampled until connected.
pub fn connected_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    loop {
        let g = random_graph(n, p, rng);
        if g.is_connected() {
            return g;
        }
    }
}

/// Two `k`-cliques joined by one bridge edge; features are noisy one-hot
/// class indicators. Every other node trains, the rest split val/test.
pub fn two_cliques(k: usize, seed: u64) -> ppro::data::DatasetBundle {
    use ppro::nodes::{Labels, NodeFeatures, SplitMasks};
    let n = 2 * k;
    let mut edges = Vec::new();
    for base in [0, k] {
        for u in 0..k {
            for v in (u + 1)..k {
                edges.push((base + u, base + v));
            }
        }
    }
    edges.push((k - 1, k));
    let mut r = rng(seed);
    let y: Vec<usize> = (0..n).map(|i| usize::from(i >= k)).collect();
    let dim = 4;
    let data = (0..n * dim)
        .map(|e| {
            let (i, c) = (e / dim, e % dim);
            let signal = if c == y[i] { 0.6 } else { 0.0 };
            signal + r.random_range(-0.5f32..0.5)
        })
        .collect();
    let train: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let val: Vec<bool> = (0..n).map(|i| i % 4 == 1).collect();
    let test: Vec<bool> = (0..n).map(|i| i % 4 == 3).collect();
    ppro::data::DatasetBundle {
        name: "two-cliques".into(),
        graph: Graph::from_edges(n, &edges).unwrap(),
        features: NodeFeatures::new(n, dim, data).unwrap(),
        labels: Labels::new(y, 2).unwrap(),
        masks: SplitMasks::new(train, val, test).unwrap(),
        provenance: "fixture".into(),
    }
}

pub fn small_sbm(n: usize, seed: u64) -> ppro::data::DatasetBundle {
    ppro::data::generate_sbm(&ppro::data::SbmSpec {
        n,
        blocks: 3,
        p_in: 0.1,
        p_out: 0.01,
        dim: 8,
        labels_per_class: 5,
        seed,
        ..Default::default()
    })
    .unwrap()
}

//! Node-priority measures: degree centrality, eigenvector centrality and
//! heterophily degree, concatenated into a per-node vector `z_i`.

use crate::graph::Graph;
use crate::nodes::NodeFeatures;
use crate::tensor::Matrix;

pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 1000;
const STD_FLOOR: f64 = 1e-12;

pub fn degree_centrality(g: &Graph) -> Vec<f64> {
    (0..g.node_count()).map(|i| g.degree(i) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenCentrality {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Dominant nonnegative eigenvector of `A` with unit L2 norm.
///
/// Iterates `x ← (A + I)x / ‖(A + I)x‖` from the all-ones vector. The shift
/// leaves the eigenvectors unchanged but separates the dominant eigenvalue
/// from `−λ_max`, which bipartite graphs would otherwise oscillate on.
/// Converged when successive iterates differ by less than `tol` in L∞.
pub fn eigenvector_centrality(g: &Graph, tol: f64, max_iter: usize) -> EigenCentrality {
    let n = g.node_count();
    if n == 0 {
        return EigenCentrality {
            values: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    if g.edge_count() == 0 {
        log::warn!("eigenvector centrality on an edgeless graph; returning the uniform vector");
        return EigenCentrality {
            values: vec![1.0 / (n as f64).sqrt(); n],
            iterations: 0,
            converged: true,
        };
    }

    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        for (i, out) in next.iter_mut().enumerate() {
            *out = x[i] + g.neighbors(i).iter().map(|&j| x[j]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in next.iter_mut() {
            *v /= norm;
        }
        let delta = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            return EigenCentrality {
                values: x,
                iterations: it,
                converged: true,
            };
        }
    }
    log::warn!("eigenvector centrality did not converge in {max_iter} iterations");
    EigenCentrality {
        values: x,
        iterations: max_iter,
        converged: false,
    }
}

/// `he_i = ‖h_i − mean_{j∈N(i)} h_j‖₂` with `h` the row-L2-normalized raw
/// features. Isolated nodes score 0.
pub fn heterophily_degree(g: &Graph, x: &NodeFeatures) -> Vec<f64> {
    assert_eq!(g.node_count(), x.node_count(), "feature rows do not match graph");
    let h = row_normalized(x);
    let dim = x.dim();
    let mut mean = vec![0.0; dim];
    (0..g.node_count())
        .map(|i| {
            let nbrs = g.neighbors(i);
            if nbrs.is_empty() {
                return 0.0;
            }
            mean.iter_mut().for_each(|m| *m = 0.0);
            for &j in nbrs {
                for (m, &v) in mean.iter_mut().zip(h.row(j)) {
                    *m += v;
                }
            }
            let k = nbrs.len() as f64;
            h.row(i)
                .iter()
                .zip(&mean)
                .map(|(&a, &m)| (a - m / k).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn row_normalized(x: &NodeFeatures) -> Matrix {
    let mut m = x.to_matrix();
    let mut zero_rows = 0;
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            zero_rows += 1;
        }
    }
    if zero_rows > 0 {
        log::warn!("{zero_rows} all-zero feature rows treated as zero vectors");
    }
    m
}

/// `z = [degree ‖ eigenvector centrality ‖ heterophily]`, raw and
/// column-standardized.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityFeatures {
    pub raw: Matrix,
    pub standardized: Matrix,
    pub eigen_converged: bool,
}

impl PriorityFeatures {
    pub fn node_count(&self) -> usize {
        self.raw.rows()
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.raw[(i, 0)]
    }

    pub fn eigenvector(&self, i: usize) -> f64 {
        self.raw[(i, 1)]
    }

    pub fn heterophily(&self, i: usize) -> f64 {
        self.raw[(i, 2)]
    }

    /// `node_id<TAB>degree<TAB>eigcen<TAB>hetero` lines.
    pub fn write_tsv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        for i in 0..self.node_count() {
            writeln!(
                out,
                "{i}\t{}\t{}\t{}",
                self.degree(i),
                self.eigenvector(i),
                self.heterophily(i)
            )?;
        }
        Ok(())
    }
}

pub fn build_priority(g: &Graph, x: &NodeFeatures) -> PriorityFeatures {
    let degree = degree_centrality(g);
    let eigen = eigenvector_centrality(g, EIGEN_TOL, EIGEN_MAX_ITER);
    let hetero = heterophily_degree(g, x);
    let n = g.node_count();
    let mut raw = Matrix::zeros(n, 3);
    for i in 0..n {
        raw[(i, 0)] = degree[i];
        raw[(i, 1)] = eigen.values[i];
        raw[(i, 2)] = hetero[i];
    }
    let standardized = standardize_columns(&raw);
    PriorityFeatures {
        raw,
        standardized,
        eigen_converged: eigen.converged,
    }
}

/// `(x − mean) / std` per column with the population std floored at 1e-12.
pub fn standardize_columns(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    let mut out = m.clone();
    if rows == 0 {
        return out;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| m[(r, c)]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (m[(r, c)] - mean).powi(2)).sum::<f64>() / rows as f64;
        let std = var.sqrt().max(STD_FLOOR);
        for r in 0..rows {
            // A constant column standardizes to exactly zero.
            let centered = m[(r, c)] - mean;
            out[(r, c)] = if var == 0.0 { 0.0 } else { centered / std };
        }
    }
    out
}

//! Undirected graphs in CSR form and the symmetric-normalized propagation
//! operator `D̃^{-1/2} (A + I) D̃^{-1/2}`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Matrix;

/// Undirected simple graph. Each edge is stored in both directions, rows are
/// sorted and deduplicated, and there are no self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl Graph {
    /// Canonicalizes an arbitrary edge list: duplicates and self-loops are
    /// dropped and one-directional pairs are symmetrized.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        for (idx, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::InvalidInput(format!(
                    "edge #{idx} ({u}, {v}) references a node outside [0, {n})"
                )));
            }
        }
        Ok(Self::from_valid_edges(n, edges.iter().copied()))
    }

    fn from_valid_edges(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Graph {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend(row);
            row_offsets.push(col_indices.len());
        }
        Graph {
            n,
            row_offsets,
            col_indices,
        }
    }

    pub fn empty(n: usize) -> Graph {
        Self::from_valid_edges(n, std::iter::empty())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Raw degrees `d_i = Σ_j A_ij`, self-loops excluded.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    /// Each undirected edge once, as `(src, dst)` with `src < dst`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n);
        let edges: Vec<_> = self.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Self::from_valid_edges(self.n, edges.into_iter())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }
}

/// Reads a `src<TAB>dst` edge list. Blank lines and `#` comments are skipped;
/// any whitespace separates the two ids.
pub fn read_edge_list(path: &Path, n: usize) -> Result<Graph> {
    let (graph, _) = read_edge_list_counted(path, n)?;
    Ok(graph)
}

/// Like [`read_edge_list`], also returning how many edge lines were read
/// before deduplication.
pub fn read_edge_list_counted(path: &Path, n: usize) -> Result<(Graph, usize)> {
    let file = std::fs::File::open(path)?;
    let mut edges = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::input(path, lineno, "expected two node ids"));
        };
        let parse = |s: &str| -> Result<usize> {
            let id: usize = s
                .parse()
                .map_err(|_| Error::input(path, lineno, format!("invalid node id `{s}`")))?;
            if id >= n {
                return Err(Error::input(
                    path,
                    lineno,
                    format!("node id {id} out of range [0, {n})"),
                ));
            }
            Ok(id)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    let raw = edges.len();
    Ok((Graph::from_valid_edges(n, edges.into_iter()), raw))
}

pub fn write_edge_list(graph: &Graph, mut out: impl Write) -> std::io::Result<()> {
    for (u, v) in graph.edges() {
        writeln!(out, "{u}\t{v}")?;
    }
    Ok(())
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}` in CSR, self-loop included in each row.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.node_count();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / ((graph.degree(i) + 1) as f64).sqrt())
            .collect();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(graph.col_indices().len() + n);
        let mut weights = Vec::with_capacity(graph.col_indices().len() + n);
        row_offsets.push(0);
        for i in 0..n {
            let nbrs = graph.neighbors(i);
            let split = nbrs.partition_point(|&j| j < i);
            let cols = nbrs[..split]
                .iter()
                .copied()
                .chain(std::iter::once(i))
                .chain(nbrs[split..].iter().copied());
            for j in cols {
                col_indices.push(j);
                weights.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_offsets.push(col_indices.len());
        }
        NormalizedAdjacency {
            n,
            row_offsets,
            col_indices,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// `(column, weight)` pairs of row `i`, in ascending column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                a[(i, j)] = w;
            }
        }
        a
    }

    /// `Â · H`. Rows may be computed in parallel; each row accumulates its
    /// neighbors in column order.
    pub fn spmm(&self, h: &Matrix) -> Matrix {
        let width = h.cols();
        let mut out = Matrix::zeros(self.n, width);
        par::for_each_row(out.as_mut_slice(), width, |i, row| self.accumulate_row(i, h, row));
        out
    }

    /// Single-threaded `Â · H`, kept for comparison benchmarks.
    pub fn spmm_sequential(&self, h: &Matrix) -> Matrix {
        let width = h.cols();
        let mut out = Matrix::zeros(self.n, width);
        par::for_each_row_sequential(out.as_mut_slice(), width, |i, row| {
            self.accumulate_row(i, h, row)
        });
        out
    }

    #[inline]
    fn accumulate_row(&self, i: usize, h: &Matrix, row: &mut [f64]) {
        assert_eq!(
            h.rows(),
            self.n,
            "spmm dimension mismatch: operator has {} rows, dense input {}",
            self.n,
            h.rows()
        );
        for (j, w) in self.row(i) {
            for (o, &v) in row.iter_mut().zip(h.row(j)) {
                *o += w * v;
            }
        }
    }
}

pub fn normalize(graph: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::new(graph)
}

//! Per-node data that travels with a graph: features, labels, split masks.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Dense `n × d` feature matrix stored in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    n: usize,
    dim: usize,
    data: Vec<f32>,
}

impl NodeFeatures {
    pub fn new(n: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be at least 1".into()));
        }
        if data.len() != n * dim {
            return Err(Error::InvalidInput(format!(
                "feature buffer has {} entries, expected {n}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature at node {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(NodeFeatures { n, dim, data })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(
            m.rows(),
            m.cols(),
            m.as_slice().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n,
            self.dim,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn permute(&self, perm: &[usize]) -> NodeFeatures {
        let mut data = vec![0.0; self.data.len()];
        for (old, &new) in perm.iter().enumerate() {
            data[new * self.dim..(new + 1) * self.dim].copy_from_slice(self.row(old));
        }
        NodeFeatures {
            n: self.n,
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    y: Vec<usize>,
    classes: usize,
}

impl Labels {
    /// Every class in `[0, classes)` must occur at least once.
    pub fn new(y: Vec<usize>, classes: usize) -> Result<Self> {
        let mut seen = vec![false; classes];
        for (i, &c) in y.iter().enumerate() {
            if c >= classes {
                return Err(Error::InvalidInput(format!(
                    "label {c} of node {i} is outside [0, {classes})"
                )));
            }
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!("class {missing} has no nodes")));
        }
        Ok(Labels { y, classes })
    }

    /// Infers the class count as `max + 1`.
    pub fn infer(y: Vec<usize>) -> Result<Self> {
        let classes = y.iter().copied().max().map_or(0, |m| m + 1);
        Self::new(y, classes)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.y
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn permute(&self, perm: &[usize]) -> Labels {
        let mut y = vec![0; self.y.len()];
        for (old, &new) in perm.iter().enumerate() {
            y[new] = self.y[old];
        }
        Labels {
            y,
            classes: self.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    /// Masks must have equal length, be pairwise disjoint, and the training
    /// set must be non-empty.
    pub fn new(train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        if train.len() != val.len() || train.len() != test.len() {
            return Err(Error::InvalidInput("split masks differ in length".into()));
        }
        for i in 0..train.len() {
            if (train[i] as u8 + val[i] as u8 + test[i] as u8) > 1 {
                return Err(Error::InvalidInput(format!(
                    "node {i} belongs to more than one split"
                )));
            }
        }
        if !train.iter().any(|&t| t) {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        Ok(SplitMasks { train, val, test })
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        indices(&self.test)
    }

    /// Training-set size `m`.
    pub fn train_size(&self) -> usize {
        self.train.iter().filter(|&&t| t).count()
    }

    pub fn permute(&self, perm: &[usize]) -> SplitMasks {
        let p = |m: &[bool]| {
            let mut out = vec![false; m.len()];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = m[old];
            }
            out
        };
        SplitMasks {
            train: p(&self.train),
            val: p(&self.val),
            test: p(&self.test),
        }
    }
}

pub fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

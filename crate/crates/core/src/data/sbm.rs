use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DatasetBundle;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nodes::{Labels, NodeFeatures, SplitMasks};

/// Stochastic block model with Gaussian cluster features.
///
/// Node `i` belongs to block `i·blocks/n` (contiguous, balanced). Each pair is
/// joined with probability `p_in` inside a block and `p_out` across blocks.
/// Features are the block mean (a random direction scaled to `separation`)
/// plus unit Gaussian noise; a node outside the `informative_fraction` gets
/// noise only, so its class can be recovered only from its neighborhood.
#[derive(Clone, Debug, PartialEq)]
pub struct SbmSpec {
    pub n: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    pub separation: f64,
    pub labels_per_class: usize,
    pub informative_fraction: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            n: 400,
            blocks: 4,
            p_in: 0.05,
            p_out: 0.005,
            dim: 32,
            separation: 1.0,
            labels_per_class: 10,
            informative_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_in) || !prob(self.p_out) || !prob(self.informative_fraction) {
            return Err(Error::Config("SBM probabilities must lie in [0, 1]".into()));
        }
        if self.blocks == 0 || self.n < self.blocks || self.dim == 0 {
            return Err(Error::Config(format!(
                "SBM needs 1 <= blocks <= n and dim >= 1 (n={}, blocks={}, dim={})",
                self.n, self.blocks, self.dim
            )));
        }
        if self.labels_per_class == 0 || self.labels_per_class * self.blocks >= self.n {
            return Err(Error::Config(
                "labels_per_class must leave nodes for validation and test".into(),
            ));
        }
        Ok(())
    }

    pub fn block_of(&self, i: usize) -> usize {
        i * self.blocks / self.n
    }
}

pub fn generate_sbm(spec: &SbmSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block: Vec<usize> = (0..n).map(|i| spec.block_of(i)).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block[u] == block[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let means: Vec<Vec<f64>> = (0..spec.blocks)
        .map(|_| {
            let dir: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter().map(|v| v / norm * spec.separation).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * spec.dim);
    for &b in &block {
        let informative = rng.random::<f64>() < spec.informative_fraction;
        for mean in &means[b] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = if informative { mean + noise } else { noise };
            data.push(v as f32);
        }
    }
    let features = NodeFeatures::new(n, spec.dim, data)?;
    let labels = Labels::new(block, spec.blocks)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut taken = vec![0; spec.blocks];
    let mut train = vec![false; n];
    let mut rest = Vec::new();
    for &i in &order {
        let c = labels.as_slice()[i];
        if taken[c] < spec.labels_per_class {
            taken[c] += 1;
            train[i] = true;
        } else {
            rest.push(i);
        }
    }
    let n_val = (rest.len() / 3).min(500);
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (r, &i) in rest.iter().enumerate() {
        if r < n_val {
            val[i] = true;
        } else {
            test[i] = true;
        }
    }
    let masks = SplitMasks::new(train, val, test)?;

    let mut provenance = format!(
        "synthetic SBM n={n} blocks={} p_in={} p_out={} dim={} separation={} informative={} seed={}",
        spec.blocks, spec.p_in, spec.p_out, spec.dim, spec.separation, spec.informative_fraction, spec.seed
    );
    if !graph.is_connected() {
        let isolated = (0..n).filter(|&i| graph.degree(i) == 0).count();
        provenance.push_str(&format!("; disconnected ({isolated} isolated nodes)"));
    }
    Ok(DatasetBundle {
        name: format!("sbm-{}", spec.seed),
        graph,
        features,
        labels,
        masks,
        provenance,
    })
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(graph: &Graph, labels: &Labels) -> f64 {
    let edges = graph.edges();
    if edges.is_empty() {
        return 0.0;
    }
    let y = labels.as_slice();
    let same = edges.iter().filter(|&&(u, v)| y[u] == y[v]).count();
    same as f64 / edges.len() as f64
}

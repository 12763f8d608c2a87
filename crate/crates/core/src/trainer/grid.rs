//! Hyperparameter grid search with validation-based selection.

use rand::seq::index::sample;

use super::{fit, seeded_stream, PreparedData, TrainConfig};
use crate::error::{Error, Result};
use crate::par::map_jobs;

/// Named axes of string values, applied through [`TrainConfig::set`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridSpace {
    axes: Vec<(String, Vec<String>)>,
}

impl GridSpace {
    pub fn new() -> Self {
        GridSpace::default()
    }

    pub fn axis<S: ToString>(mut self, key: &str, values: impl IntoIterator<Item = S>) -> Self {
        self.push(key, values.into_iter().map(|v| v.to_string()).collect());
        self
    }

    pub fn push(&mut self, key: &str, values: Vec<String>) {
        self.axes.push((key.to_string(), values));
    }

    pub fn axes(&self) -> &[(String, Vec<String>)] {
        &self.axes
    }

    /// Number of points in the full product.
    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `index`-th point; the last axis varies fastest.
    pub fn point(&self, mut index: usize) -> Vec<(String, String)> {
        let mut out = vec![(String::new(), String::new()); self.axes.len()];
        for (slot, (key, values)) in out.iter_mut().zip(&self.axes).rev() {
            *slot = (key.clone(), values[index % values.len()].clone());
            index /= values.len();
        }
        out
    }

    /// The hyperparameter ranges used for the benchmark runs. Continuous
    /// ranges are discretized.
    pub fn benchmark() -> Self {
        GridSpace::new()
            .axis("lr", [0.005, 0.01, 0.05, 0.1])
            .axis("dropout", [0.0, 0.2, 0.5, 0.7, 0.9])
            .axis("patience", [100, 200])
            .axis("weight_decay", [1e-5, 5e-4, 1e-4, 5e-3, 1e-3])
            .axis("lambda1", [0.01, 0.1, 1.0, 10.0, 100.0])
            .axis("lambda2", [0.01, 0.1, 1.0, 10.0, 100.0])
            .axis("epsilon", [0.1, 0.3, 0.5, 0.7, 0.9])
    }
}

#[derive(Clone, Debug)]
pub struct LeaderboardEntry {
    /// Position in the product order.
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub config: TrainConfig,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub best: TrainConfig,
    /// Sorted by validation accuracy, descending; ties keep product order.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Evaluates every point (or `budget` of them, chosen with `sample_seed`)
/// on `base` and ranks them by validation accuracy.
pub fn grid_search(
    base: &TrainConfig,
    space: &GridSpace,
    data: &PreparedData,
    budget: Option<usize>,
    sample_seed: u64,
) -> Result<GridOutcome> {
    assert!(!space.is_empty(), "grid search over an empty space");
    let total = space.len();
    let indices: Vec<usize> = match budget {
        Some(b) if b < total => {
            let mut idx = sample(&mut seeded_stream(sample_seed, 0), total, b).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };
    let mut jobs = Vec::with_capacity(indices.len());
    for index in indices {
        let assignment = space.point(index);
        let mut config = base.clone();
        for (key, value) in &assignment {
            if !config.set(key, value)? {
                return Err(Error::Config(format!("unknown grid key `{key}`")));
            }
        }
        config.validate()?;
        jobs.push((index, assignment, config));
    }
    let results = map_jobs(jobs, |(index, assignment, config)| {
        fit(&config, data).map(|report| LeaderboardEntry {
            index,
            assignment,
            config,
            val_acc: report.best_val_acc,
            test_acc: report.test_acc,
        })
    });
    let mut leaderboard = results.into_iter().collect::<Result<Vec<_>>>()?;
    leaderboard.sort_by(|a, b| b.val_acc.total_cmp(&a.val_acc));
    Ok(GridOutcome {
        best: leaderboard[0].config.clone(),
        leaderboard,
    })
}

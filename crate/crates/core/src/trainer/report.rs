use std::io::{self, Write};
use std::time::Duration;

use super::{EpochLosses, PreparedData};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_g: f64,
    pub loss_p: f64,
    pub loss_w: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

impl EpochRecord {
    pub(crate) fn new(epoch: usize, losses: EpochLosses, data: &PreparedData, predicted: &[usize]) -> Self {
        EpochRecord {
            epoch,
            loss_g: losses.loss_g,
            loss_p: losses.loss_p,
            loss_w: losses.loss_w,
            train_acc: data.accuracy(predicted, &data.train),
            val_acc: data.accuracy(predicted, &data.val),
        }
    }
}

/// Outcome of one training run. Accuracies, weights and steps come from the
/// best-validation parameters.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Per-node `w_i` (all ones without the weight controller).
    pub weights: Vec<f64>,
    /// Per-node `l_i`.
    pub steps: Vec<usize>,
    pub wall_clock: Duration,
}

impl PartialEq for TrainReport {
    /// Everything except the wall clock.
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.records == other.records
            && self.best_epoch == other.best_epoch
            && self.best_val_acc.to_bits() == other.best_val_acc.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
            && self.weights == other.weights
            && self.steps == other.steps
    }
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.records.len()
    }

    /// One row per epoch. Holds nothing run-dependent besides the numbers,
    /// so equal runs give equal bytes.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "epoch,loss_g,loss_p,loss_w,train_acc,val_acc")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.loss_g, r.loss_p, r.loss_w, r.train_acc, r.val_acc
            )?;
        }
        Ok(())
    }

    pub fn write_summary(&self, mut out: impl Write) -> io::Result<()> {
        let mean_step = if self.steps.is_empty() {
            0.0
        } else {
            self.steps.iter().sum::<usize>() as f64 / self.steps.len() as f64
        };
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "epochs = {}", self.epochs())?;
        writeln!(out, "best_epoch = {}", self.best_epoch)?;
        writeln!(out, "best_val_acc = {}", self.best_val_acc)?;
        writeln!(out, "test_acc = {}", self.test_acc)?;
        writeln!(out, "mean_step = {mean_step}")?;
        writeln!(out, "wall_clock_secs = {:.3}", self.wall_clock.as_secs_f64())
    }

    /// `node_id<TAB>weight<TAB>step`.
    pub fn write_nodes_tsv(&self, mut out: impl Write) -> io::Result<()> {
        for (i, (w, l)) in self.weights.iter().zip(&self.steps).enumerate() {
            writeln!(out, "{i}\t{w}\t{l}")?;
        }
        Ok(())
    }
}

//! Plain fixed-depth training: unweighted cross-entropy on `H⁽ᴸ⁾`, no
//! controllers. Draws the same seeded streams as [`TrainState`](super::TrainState).

use std::sync::Arc;
use std::time::Instant;

use super::{seeded_stream, EarlyStop, EpochLosses, EpochRecord, PreparedData, TrainConfig, TrainReport, DROPOUT_STREAM, INIT_STREAM};
use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::backbone::{Backbone, BackboneParams};
use crate::error::Result;
use crate::tensor::Matrix;

/// Trains the backbone alone at depth `config.steps`. Controller fields and
/// ablation flags are ignored.
pub fn fit_fixed_depth(config: &TrainConfig, data: &PreparedData) -> Result<TrainReport> {
    let start = Instant::now();
    let backbone = Backbone::new(config.backbone_config(data.x.cols(), data.classes), Arc::clone(&data.adj))?;
    let mut theta = BackboneParams::init(&backbone.config, &mut seeded_stream(config.seed, INIT_STREAM));
    let mut adam = Adam::new(AdamConfig::new(config.lr, config.weight_decay));
    let mut rng = seeded_stream(config.seed, DROPOUT_STREAM);
    let depth = config.steps;

    let predict = |theta: &BackboneParams| -> Result<Vec<usize>> {
        Ok(backbone.run(&data.x, theta, None)?.h[depth].argmax_rows())
    };

    let mut stop = EarlyStop::new(config.patience.max(1));
    let mut records = Vec::new();
    let mut best_theta = theta.clone();
    if config.epochs == 0 {
        stop.observe(0, data.accuracy(&predict(&theta)?, &data.val));
    }
    for epoch in 1..=config.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(data.x.clone());
        let vars = theta.load(&mut tape);
        let trace = backbone.forward(&mut tape, x, &vars, Some(&mut rng), None)?;
        let loss = tape.masked_nll(trace.h[depth], &data.labels, &data.train, None);
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = vars.iter().flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)]).collect();
        adam.step(&mut theta.tensors_mut(), &g);

        let losses = EpochLosses {
            loss_g: tape.value(loss).item(),
            ..EpochLosses::default()
        };
        let record = EpochRecord::new(epoch, losses, data, &predict(&theta)?);
        let val_acc = record.val_acc;
        records.push(record);
        if stop.observe(epoch, val_acc) {
            best_theta = theta.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    let predicted = predict(&best_theta)?;
    Ok(TrainReport {
        seed: config.seed,
        records,
        best_epoch: stop.best_epoch,
        best_val_acc: stop.best,
        test_acc: data.accuracy(&predicted, &data.test),
        weights: vec![1.0; data.node_count()],
        steps: vec![depth; data.node_count()],
        wall_clock: start.elapsed(),
    })
}

//! Alternating optimization of the backbone θ and the controllers φ.
//!
//! Each epoch runs the backbone with dropout, lets the controllers pick a step
//! `l_i` and a weight `w_i` for every training node, takes one Adam step on
//! the reweighted cross-entropy, then re-runs the backbone with the updated θ
//! and takes one Adam step on the merged controller loss. `w` is constant in
//! the θ step and every backbone output is constant in the φ step.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, NamedParam, Tape, Var};
use crate::backbone::{select_rows, Backbone, BackboneConfig, BackboneKind, BackboneParams, PropagationTrace};
use crate::controllers::{
    decide_break, head_forward, l2u_scan, loss_l2b, loss_l2u, loss_weight, merged_controller_loss,
    ControllerParams, Head, InputFlags, InputSources, Strategy,
};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::graph::{normalize, NormalizedAdjacency};
use crate::priority::{build_priority, PriorityFeatures};
use crate::tensor::{cross_entropy_rows, Matrix};

pub mod baseline;
pub mod grid;
mod report;

pub use report::{EpochRecord, TrainReport};

/// Switches for the reduced variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// `w ≡ 1`, no weight head.
    pub no_weight: bool,
    /// `l ≡ L`, no propagation head.
    pub no_propagation: bool,
    /// Zero the priority features in every controller input.
    pub no_priority: bool,
    /// Zero the `l/L` slot of the weight input.
    pub no_step: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub backbone: BackboneKind,
    pub steps: usize,
    pub hidden: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub controller_hidden: usize,
    pub epsilon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Backbone learning rate.
    pub lr: f64,
    pub lr_controller: f64,
    /// Decoupled weight decay on θ.
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::L2b,
            backbone: BackboneKind::Appnp,
            steps: 10,
            hidden: 64,
            alpha: 0.1,
            dropout: 0.5,
            controller_hidden: 32,
            epsilon: 0.9,
            lambda1: 1.0,
            lambda2: 1.0,
            lr: 0.01,
            lr_controller: 0.001,
            weight_decay: 5e-4,
            epochs: 300,
            patience: 100,
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Sets one field from its config-file key. Returns `Ok(false)` for keys
    /// this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "strategy" => self.strategy = value.trim().parse()?,
            "backbone" => self.backbone = value.trim().parse()?,
            "steps" => self.steps = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "controller_hidden" => self.controller_hidden = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_controller" => self.lr_controller = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "no_weight" => self.ablation.no_weight = parse_bool(key, value)?,
            "no_propagation" => self.ablation.no_propagation = parse_bool(key, value)?,
            "no_priority" => self.ablation.no_priority = parse_bool(key, value)?,
            "no_step" => self.ablation.no_step = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` pairs accepted by [`TrainConfig::set`], in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let a = self.ablation;
        vec![
            ("strategy", self.strategy.to_string()),
            ("backbone", self.backbone.to_string()),
            ("steps", self.steps.to_string()),
            ("hidden", self.hidden.to_string()),
            ("alpha", self.alpha.to_string()),
            ("dropout", self.dropout.to_string()),
            ("controller_hidden", self.controller_hidden.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_controller", self.lr_controller.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("no_weight", a.no_weight.to_string()),
            ("no_propagation", a.no_propagation.to_string()),
            ("no_priority", a.no_priority.to_string()),
            ("no_step", a.no_step.to_string()),
        ]
    }

    pub fn backbone_config(&self, input_dim: usize, classes: usize) -> BackboneConfig {
        BackboneConfig {
            kind: self.backbone,
            steps: self.steps,
            hidden: self.hidden,
            alpha: self.alpha,
            dropout: self.dropout,
            input_dim,
            classes,
        }
    }

    /// True when at least one controller is trained.
    pub fn controllers_active(&self) -> bool {
        !(self.ablation.no_weight && self.ablation.no_propagation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(self.lr > 0.0 && self.lr_controller > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rates must be positive, weight decay non-negative".into()));
        }
        if self.controller_hidden == 0 {
            return Err(Error::Config("controller_hidden must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.backbone == BackboneKind::Gcn && self.controllers_active() {
            return Err(Error::Config(
                "controllers need equal embedding widths across steps; use the GCN backbone with \
                 no_weight and no_propagation"
                    .into(),
            ));
        }
        Ok(())
    }

    fn input_flags(&self) -> InputFlags {
        InputFlags {
            priority: !self.ablation.no_priority,
            step: !self.ablation.no_step,
        }
    }
}

/// Everything a run reads from the dataset, in the form the trainer uses.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub adj: Arc<NormalizedAdjacency>,
    pub x: Matrix,
    /// Standardized priority features.
    pub z: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedData {
    pub fn new(bundle: &DatasetBundle) -> Self {
        let priority = build_priority(&bundle.graph, &bundle.features);
        Self::with_priority(bundle, &priority)
    }

    pub fn with_priority(bundle: &DatasetBundle, priority: &PriorityFeatures) -> Self {
        PreparedData {
            adj: Arc::new(normalize(&bundle.graph)),
            x: bundle.features.to_matrix(),
            z: priority.standardized.clone(),
            labels: bundle.labels.as_slice().to_vec(),
            classes: bundle.labels.classes(),
            train: bundle.masks.train_indices(),
            val: bundle.masks.val_indices(),
            test: bundle.masks.test_indices(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn accuracy(&self, predicted: &[usize], nodes: &[usize]) -> f64 {
        accuracy(predicted, &self.labels, nodes)
    }
}

/// Fraction of `nodes` whose prediction matches the label.
pub fn accuracy(predicted: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    assert!(!nodes.is_empty(), "accuracy over an empty mask");
    let hits = nodes.iter().filter(|&&i| predicted[i] == labels[i]).count();
    hits as f64 / nodes.len() as f64
}

/// Independent random streams of one run.
pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const DROPOUT_STREAM: u64 = 1;
pub(crate) const CONTROLLER_STREAM: u64 = 2;
pub(crate) const REFORWARD_STREAM: u64 = 3;

/// Losses of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLosses {
    /// Reweighted cross-entropy of the θ step.
    pub loss_g: f64,
    pub loss_p: f64,
    pub loss_w: f64,
}

/// Per-node outcome of an inference pass over all nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub best: Matrix,
    pub steps: Vec<usize>,
    pub weights: Vec<f64>,
    pub predicted: Vec<usize>,
}

/// Step choice for a subset of nodes, with what the propagation loss needs.
struct StepChoice {
    /// `l_i` for every node; entries outside the subset are placeholders.
    steps: Vec<usize>,
    best: Matrix,
    /// Propagation-head inputs the loss is evaluated at: one row per node
    /// (L2B) or `L` blocks of one row per node (L2U).
    prop_input: Option<Matrix>,
    /// L2U: error of the running best before each `(step, node)` row.
    running: Vec<f64>,
}

pub struct TrainState {
    pub config: TrainConfig,
    pub backbone: Backbone,
    pub theta: BackboneParams,
    pub phi: ControllerParams,
    adam_theta: Adam,
    adam_phi: Adam,
    dropout_rng: ChaCha8Rng,
    reforward_rng: ChaCha8Rng,
    epochs_run: usize,
}

impl TrainState {
    pub fn new(config: TrainConfig, data: &PreparedData) -> Result<Self> {
        config.validate()?;
        let bb_config = config.backbone_config(data.x.cols(), data.classes);
        let backbone = Backbone::new(bb_config, Arc::clone(&data.adj))?;
        let theta = BackboneParams::init(&backbone.config, &mut seeded_stream(config.seed, INIT_STREAM));
        let phi = ControllerParams::init(
            backbone.config.embedding_dim(),
            config.controller_hidden,
            &mut seeded_stream(config.seed, CONTROLLER_STREAM),
        );
        Ok(TrainState {
            adam_theta: Adam::new(AdamConfig::new(config.lr, config.weight_decay)),
            adam_phi: Adam::new(AdamConfig::new(config.lr_controller, 0.0)),
            dropout_rng: seeded_stream(config.seed, DROPOUT_STREAM),
            reforward_rng: seeded_stream(config.seed, REFORWARD_STREAM),
            epochs_run: 0,
            config,
            backbone,
            theta,
            phi,
        })
    }

    /// Restores θ and φ from checkpoint entries.
    pub fn from_params(config: TrainConfig, data: &PreparedData, params: &[NamedParam]) -> Result<Self> {
        let mut state = TrainState::new(config, data)?;
        let theta = BackboneParams::from_named(params)?;
        let phi = ControllerParams::from_named(params)?;
        let shapes = |a: Vec<&Matrix>, b: Vec<&Matrix>| {
            a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
        };
        if !shapes(theta.tensors(), state.theta.tensors()) || !shapes(phi.tensors().to_vec(), state.phi.tensors().to_vec()) {
            return Err(Error::Checkpoint("parameter shapes do not match the config and dataset".into()));
        }
        state.theta = theta;
        state.phi = phi;
        Ok(state)
    }

    pub fn named_params(&self) -> Vec<NamedParam> {
        let mut out = self.theta.named();
        out.extend(self.phi.named());
        out
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    fn sources<'a>(&self, data: &'a PreparedData, h0: &'a Matrix) -> InputSources<'a> {
        InputSources {
            z: &data.z,
            h0,
            flags: self.config.input_flags(),
        }
    }

    /// Decides `l_i` for `nodes` on a full trace. L2B takes the first step
    /// whose break probability exceeds ε; L2U scans for the last update.
    fn choose_steps(&self, data: &PreparedData, h: &[Matrix], agg: &[Matrix], ce: &[Vec<f64>], nodes: &[usize]) -> StepChoice {
        let big_l = self.config.steps;
        let n = data.node_count();
        if self.config.ablation.no_propagation {
            return StepChoice {
                steps: vec![big_l; n],
                best: h[big_l].clone(),
                prop_input: None,
                running: Vec::new(),
            };
        }
        let src = self.sources(data, &h[0]);
        match self.config.strategy {
            Strategy::L2b => {
                let probs: Vec<Vec<f64>> = (1..=big_l)
                    .map(|k| self.phi.evaluate(&src.break_input(&h[k], &agg[k - 1], nodes), Head::Propagation))
                    .collect();
                let chosen = decide_break(&probs, self.config.epsilon);
                let mut steps = vec![big_l; n];
                for (&i, &l) in nodes.iter().zip(&chosen) {
                    steps[i] = l;
                }
                StepChoice {
                    best: select_rows(h, &steps),
                    prop_input: Some(src.break_input_at(h, agg, &chosen, nodes)),
                    steps,
                    running: Vec::new(),
                }
            }
            Strategy::L2u => {
                let mut blocks = Vec::with_capacity(big_l);
                let mut running = Vec::with_capacity(big_l * nodes.len());
                let (best, steps) = l2u_scan(h, nodes, self.config.epsilon, |k, best, steps| {
                    let input = src.update_input(&h[k], &agg[k - 1], best, nodes);
                    let p = self.phi.evaluate(&input, Head::Propagation);
                    running.extend(nodes.iter().map(|&i| ce[steps[i]][i]));
                    blocks.push(input);
                    p
                });
                let width = blocks[0].cols();
                let data_rows: Vec<f64> = blocks.into_iter().flat_map(Matrix::into_vec).collect();
                StepChoice {
                    steps,
                    best,
                    prop_input: Some(Matrix::from_vec(big_l * nodes.len(), width, data_rows)),
                    running,
                }
            }
        }
    }

    fn weights(&self, data: &PreparedData, h0: &Matrix, choice: &StepChoice, nodes: &[usize]) -> Vec<f64> {
        if self.config.ablation.no_weight {
            return vec![1.0; nodes.len()];
        }
        let input = self.sources(data, h0).weight_input(&choice.best, &choice.steps, self.config.steps, nodes);
        self.phi.evaluate(&input, Head::Weight)
    }

    /// One round of the alternating optimization.
    pub fn train_epoch(&mut self, data: &PreparedData) -> Result<EpochLosses> {
        let mut tape = Tape::new();
        let x = tape.constant(data.x.clone());
        let theta = self.theta.load(&mut tape);
        let vars = self
            .backbone
            .forward(&mut tape, x, &theta, Some(&mut self.dropout_rng), None)?;
        tape.ensure_finite()?;

        let (steps, w) = if self.config.controllers_active() {
            let h: Vec<Matrix> = vars.h.iter().map(|&v| tape.value(v).clone()).collect();
            let agg: Vec<Matrix> = vars.agg.iter().map(|&v| tape.value(v).clone()).collect();
            let ce = step_errors(&h, &data.labels);
            let choice = self.choose_steps(data, &h, &agg, &ce, &data.train);
            let w = self.weights(data, &h[0], &choice, &data.train);
            (choice.steps, w)
        } else {
            (vec![self.config.steps; data.node_count()], vec![1.0; data.train.len()])
        };

        let picked = vars.select(&mut tape, &steps);
        let loss = tape.masked_nll(picked, &data.labels, &data.train, Some(&w));
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = theta.iter().flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)]).collect();
        self.adam_theta.step(&mut self.theta.tensors_mut(), &g);

        let mut losses = EpochLosses {
            loss_g: tape.value(loss).item(),
            ..EpochLosses::default()
        };
        if self.config.controllers_active() {
            let (lp, lw) = self.controller_step(data)?;
            losses.loss_p = lp;
            losses.loss_w = lw;
        }
        self.epochs_run += 1;
        Ok(losses)
    }

    /// Re-runs the backbone with the updated θ and takes one step on
    /// `L_p − λ₂·L_w`. Returns `(L_p, L_w)`.
    fn controller_step(&mut self, data: &PreparedData) -> Result<(f64, f64)> {
        let trace = {
            let mut tape = Tape::new();
            let x = tape.constant(data.x.clone());
            let theta: Vec<(Var, Var)> = self
                .theta
                .layers
                .iter()
                .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
                .collect();
            let vars = self
                .backbone
                .forward(&mut tape, x, &theta, Some(&mut self.reforward_rng), None)?;
            tape.ensure_finite()?;
            PropagationTrace::from_tape(&tape, &vars, Vec::new())
        };
        let ce = step_errors(&trace.h, &data.labels);
        let train = &data.train;
        let choice = self.choose_steps(data, &trace.h, &trace.agg, &ce, train);
        let c: Vec<f64> = train.iter().map(|&i| ce[choice.steps[i]][i]).collect();

        let mut tape = Tape::new();
        let vars = self.phi.load(&mut tape, true);
        let lp = match &choice.prop_input {
            Some(input) => {
                let input = tape.constant(input.clone());
                let p = head_forward(&mut tape, &vars, input, Head::Propagation);
                Some(match self.config.strategy {
                    Strategy::L2b => loss_l2b(&mut tape, &c, p),
                    Strategy::L2u => {
                        let advantage: Vec<f64> = (1..=self.config.steps)
                            .flat_map(|k| train.iter().map(move |&i| (k, i)))
                            .zip(&choice.running)
                            .map(|((k, i), &r)| ce[k][i] - r)
                            .collect();
                        loss_l2u(&mut tape, p, &advantage)
                    }
                })
            }
            None => None,
        };
        let lw = if self.config.ablation.no_weight {
            None
        } else {
            let input = self
                .sources(data, &trace.h[0])
                .weight_input(&choice.best, &choice.steps, self.config.steps, train);
            let input = tape.constant(input);
            let w = head_forward(&mut tape, &vars, input, Head::Weight);
            Some(loss_weight(&mut tape, w, &c, self.config.lambda1))
        };
        let total = match (lp, lw) {
            (Some(lp), Some(lw)) => merged_controller_loss(&mut tape, lp, lw, self.config.lambda2),
            (Some(lp), None) => lp,
            (None, Some(lw)) => tape.scale(lw, -self.config.lambda2),
            (None, None) => unreachable!("controller step with both controllers disabled"),
        };
        let grads = tape.backward(total)?;
        let handles: [Var; 6] = [
            vars.shared.0,
            vars.shared.1,
            vars.prop.0,
            vars.prop.1,
            vars.weight.0,
            vars.weight.1,
        ];
        let g: Vec<Matrix> = handles.iter().map(|&v| grads.wrt(v)).collect();
        self.adam_phi.step(&mut self.phi.tensors_mut(), &g);
        let value = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
        Ok((value(lp), value(lw)))
    }

    /// Inference over all nodes. L2B freezes each node online at the first
    /// step whose break probability exceeds ε; L2U runs all steps and scans
    /// for the last update.
    pub fn infer(&self, data: &PreparedData) -> Result<Inference> {
        let n = data.node_count();
        let all: Vec<usize> = (0..n).collect();
        let (h0, choice) = if !self.config.ablation.no_propagation && self.config.strategy == Strategy::L2b {
            let (h, steps) = self.break_online(data)?;
            let choice = StepChoice {
                best: select_rows(&h, &steps),
                steps,
                prop_input: None,
                running: Vec::new(),
            };
            (h.into_iter().next().expect("H(0) present"), choice)
        } else {
            let trace = self.backbone.run(&data.x, &self.theta, None)?;
            let ce = if self.config.ablation.no_propagation {
                Vec::new()
            } else {
                step_errors(&trace.h, &data.labels)
            };
            let choice = self.choose_steps(data, &trace.h, &trace.agg, &ce, &all);
            (trace.h.into_iter().next().expect("H(0) present"), choice)
        };
        let weights = self.weights(data, &h0, &choice, &all);
        let predicted = choice.best.argmax_rows();
        Ok(Inference {
            best: choice.best,
            steps: choice.steps,
            weights,
            predicted,
        })
    }

    /// Online L2B propagation; returns `H⁽⁰⁾..=H⁽ᴸ⁾` (frozen rows held) and
    /// the chosen steps.
    fn break_online(&self, data: &PreparedData) -> Result<(Vec<Matrix>, Vec<usize>)> {
        let big_l = self.config.steps;
        let n = data.node_count();
        let mut tape = Tape::new();
        let x = tape.constant(data.x.clone());
        let theta: Vec<(Var, Var)> = self
            .theta
            .layers
            .iter()
            .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            .collect();
        let h0 = self.backbone.encode(&mut tape, x, &theta, None);
        let h0_value = tape.value(h0).clone();
        let src = self.sources(data, &h0_value);

        let mut steps = vec![big_l; n];
        let mut frozen = vec![0usize; n];
        let mut active: Vec<usize> = (0..n).collect();
        let mut h = vec![h0];
        for k in 1..=big_l {
            let prev = h[k - 1];
            let (agg, mut next) = self.backbone.propagate_step(&mut tape, prev, h0, &theta, k, None);
            if frozen.contains(&1) {
                next = tape.pick_rows(&[next, prev], &frozen);
            }
            h.push(next);
            if active.is_empty() || k == big_l {
                continue;
            }
            let input = src.break_input(tape.value(next), tape.value(agg), &active);
            let p = self.phi.evaluate(&input, Head::Propagation);
            let mut still = Vec::with_capacity(active.len());
            for (&i, &pi) in active.iter().zip(&p) {
                if pi > self.config.epsilon {
                    steps[i] = k;
                    frozen[i] = 1;
                } else {
                    still.push(i);
                }
            }
            active = still;
        }
        tape.ensure_finite()?;
        Ok((h.iter().map(|&v| tape.value(v).clone()).collect(), steps))
    }

    /// Trains up to `epochs` epochs with early stopping on validation
    /// accuracy and leaves the state at the best epoch's parameters.
    pub fn fit(&mut self, data: &PreparedData) -> Result<TrainReport> {
        let start = Instant::now();
        let mut stop = EarlyStop::new(self.config.patience);
        let mut records = Vec::new();
        let mut snapshot = (self.theta.clone(), self.phi.clone());
        if self.config.epochs == 0 {
            let inf = self.infer(data)?;
            stop.observe(0, data.accuracy(&inf.predicted, &data.val));
        }
        for epoch in 1..=self.config.epochs {
            let losses = self.train_epoch(data)?;
            let inf = self.infer(data)?;
            let record = EpochRecord::new(epoch, losses, data, &inf.predicted);
            let val_acc = record.val_acc;
            records.push(record);
            if stop.observe(epoch, val_acc) {
                snapshot = (self.theta.clone(), self.phi.clone());
            }
            if stop.should_stop() {
                break;
            }
        }
        self.theta = snapshot.0;
        self.phi = snapshot.1;
        let inf = self.infer(data)?;
        Ok(TrainReport {
            seed: self.config.seed,
            records,
            best_epoch: stop.best_epoch,
            best_val_acc: stop.best,
            test_acc: data.accuracy(&inf.predicted, &data.test),
            weights: inf.weights,
            steps: inf.steps,
            wall_clock: start.elapsed(),
        })
    }
}

/// `C_i⁽ᵏ⁾` for every step `k` and node `i`.
fn step_errors(h: &[Matrix], labels: &[usize]) -> Vec<Vec<f64>> {
    h.iter().map(|hk| cross_entropy_rows(hk, labels)).collect()
}

/// Stops once `patience` epochs in a row fail to beat the best validation
/// accuracy strictly.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStop {
    patience: usize,
    since: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            since: 0,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    /// Returns true on a new best.
    pub fn observe(&mut self, epoch: usize, val_acc: f64) -> bool {
        if val_acc > self.best {
            self.best = val_acc;
            self.best_epoch = epoch;
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since >= self.patience
    }
}

/// Trains one configuration from scratch.
pub fn fit(config: &TrainConfig, data: &PreparedData) -> Result<TrainReport> {
    TrainState::new(config.clone(), data)?.fit(data)
}

//! Propagation and weight controllers.
//!
//! Both controllers are heads on one two-layer MLP: a shared first layer
//! `relu(x·W_s + b_s)` followed by a per-head linear map and a sigmoid. They
//! read a fixed-width per-node input
//!
//! ```text
//! [ z (3) | h⁽⁰⁾ (h) | slot_a (h) | slot_b (h) | slot_s (1) ]
//! ```
//!
//! * learning to break: `slot_a = h⁽ᵏ⁾`, `slot_b = ĥ⁽ᵏ⁾`, `slot_s = 0`
//! * learning to update: `slot_a = h⁽ᵏ⁾ − h̃`, `slot_b = ĥ⁽ᵏ⁾`, `slot_s = 0`
//! * weight head: `slot_a = h̃`, `slot_b = 0`, `slot_s = l / L`

use rand::Rng;

use crate::autodiff::{NamedParam, Tape, Var};
use crate::backbone::glorot_layer;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Guard for the min–max normalization of prediction errors.
pub const NORMALIZATION_DELTA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Learning to break: stop aggregating at the first confident step.
    L2b,
    /// Learning to update: run all steps, keep the best embedding.
    L2u,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2b" => Ok(Strategy::L2b),
            "l2u" => Ok(Strategy::L2u),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::L2b => "l2b",
            Strategy::L2u => "l2u",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Propagation,
    Weight,
}

/// Which optional inputs are fed (the rest are zero-filled).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputFlags {
    pub priority: bool,
    pub step: bool,
}

impl Default for InputFlags {
    fn default() -> Self {
        InputFlags {
            priority: true,
            step: true,
        }
    }
}

pub fn input_width(embedding_dim: usize) -> usize {
    3 + 3 * embedding_dim + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    pub shared_w: Matrix,
    pub shared_b: Matrix,
    pub prop_w: Matrix,
    pub prop_b: Matrix,
    pub weight_w: Matrix,
    pub weight_b: Matrix,
}

/// Tape handles for [`ControllerParams`].
#[derive(Clone, Copy, Debug)]
pub struct ControllerVars {
    pub shared: (Var, Var),
    pub prop: (Var, Var),
    pub weight: (Var, Var),
}

impl ControllerParams {
    pub fn init<R: Rng + ?Sized>(embedding_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let (shared_w, shared_b) = glorot_layer(input_width(embedding_dim), hidden, rng);
        let (prop_w, prop_b) = glorot_layer(hidden, 1, rng);
        let (weight_w, weight_b) = glorot_layer(hidden, 1, rng);
        ControllerParams {
            shared_w,
            shared_b,
            prop_w,
            prop_b,
            weight_w,
            weight_b,
        }
    }

    pub fn zeros(embedding_dim: usize, hidden: usize) -> Self {
        ControllerParams {
            shared_w: Matrix::zeros(input_width(embedding_dim), hidden),
            shared_b: Matrix::zeros(1, hidden),
            prop_w: Matrix::zeros(hidden, 1),
            prop_b: Matrix::zeros(1, 1),
            weight_w: Matrix::zeros(hidden, 1),
            weight_b: Matrix::zeros(1, 1),
        }
    }

    pub fn input_width(&self) -> usize {
        self.shared_w.rows()
    }

    pub fn tensors(&self) -> [&Matrix; 6] {
        [
            &self.shared_w,
            &self.shared_b,
            &self.prop_w,
            &self.prop_b,
            &self.weight_w,
            &self.weight_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.shared_w,
            &mut self.shared_b,
            &mut self.prop_w,
            &mut self.prop_b,
            &mut self.weight_w,
            &mut self.weight_b,
        ]
    }

    const NAMES: [&'static str; 6] = [
        "controller.shared.weight",
        "controller.shared.bias",
        "controller.propagation.weight",
        "controller.propagation.bias",
        "controller.priority.weight",
        "controller.priority.bias",
    ];

    pub fn named(&self) -> Vec<NamedParam> {
        Self::NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, m)| NamedParam::new(*n, m.clone()))
            .collect()
    }

    pub fn from_named(params: &[NamedParam]) -> Result<Self> {
        let get = |name: &str| {
            params
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.value.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
        };
        Ok(ControllerParams {
            shared_w: get(Self::NAMES[0])?,
            shared_b: get(Self::NAMES[1])?,
            prop_w: get(Self::NAMES[2])?,
            prop_b: get(Self::NAMES[3])?,
            weight_w: get(Self::NAMES[4])?,
            weight_b: get(Self::NAMES[5])?,
        })
    }

    pub fn load(&self, tape: &mut Tape, trainable: bool) -> ControllerVars {
        let mut put = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        ControllerVars {
            shared: (put(&self.shared_w), put(&self.shared_b)),
            prop: (put(&self.prop_w), put(&self.prop_b)),
            weight: (put(&self.weight_w), put(&self.weight_b)),
        }
    }

    /// Head outputs for each input row, evaluated off-tape.
    pub fn evaluate(&self, input: &Matrix, head: Head) -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = head_forward(&mut tape, &vars, x, head);
        tape.value(out).as_slice().to_vec()
    }
}

/// `sigmoid(relu(x·W_s + b_s)·W_head + b_head)`, one column.
pub fn head_forward(tape: &mut Tape, vars: &ControllerVars, input: Var, head: Head) -> Var {
    let (ws, bs) = vars.shared;
    let z = tape.matmul(input, ws);
    let z = tape.add(z, bs);
    let hidden = tape.relu(z);
    let (wh, bh) = match head {
        Head::Propagation => vars.prop,
        Head::Weight => vars.weight,
    };
    let out = tape.matmul(hidden, wh);
    let out = tape.add(out, bh);
    tape.sigmoid(out)
}

/// Per-node embedding views the controller inputs are assembled from.
pub struct InputSources<'a> {
    /// Standardized priority features, `n × 3`.
    pub z: &'a Matrix,
    pub h0: &'a Matrix,
    pub flags: InputFlags,
}

impl InputSources<'_> {
    fn fill(&self, out: &mut Matrix, r: usize, i: usize, slot_a: &[f64], slot_b: Option<&[f64]>, slot_s: f64) {
        let h = self.h0.cols();
        let row = out.row_mut(r);
        if self.flags.priority {
            row[..3].copy_from_slice(self.z.row(i));
        }
        row[3..3 + h].copy_from_slice(self.h0.row(i));
        row[3 + h..3 + 2 * h].copy_from_slice(slot_a);
        if let Some(b) = slot_b {
            row[3 + 2 * h..3 + 3 * h].copy_from_slice(b);
        }
        if self.flags.step {
            row[3 + 3 * h] = slot_s;
        }
    }

    /// Learning-to-break input at one step for the given nodes.
    pub fn break_input(&self, hk: &Matrix, aggk: &Matrix, nodes: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(nodes.len(), input_width(self.h0.cols()));
        for (r, &i) in nodes.iter().enumerate() {
            self.fill(&mut out, r, i, hk.row(i), Some(aggk.row(i)), 0.0);
        }
        out
    }

    /// Learning-to-update input: the step embedding enters as its deviation
    /// from the running best `h̃`.
    pub fn update_input(&self, hk: &Matrix, aggk: &Matrix, best: &Matrix, nodes: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(nodes.len(), input_width(self.h0.cols()));
        let mut dev = vec![0.0; self.h0.cols()];
        for (r, &i) in nodes.iter().enumerate() {
            for ((d, &a), &b) in dev.iter_mut().zip(hk.row(i)).zip(best.row(i)) {
                *d = a - b;
            }
            self.fill(&mut out, r, i, &dev, Some(aggk.row(i)), 0.0);
        }
        out
    }

    /// Break input for node `nodes[r]` at its own step `steps[r] ≥ 1`;
    /// `h` is `H⁽⁰⁾..=H⁽ᴸ⁾` and `agg[k-1]` is `Ĥ⁽ᵏ⁾`.
    pub fn break_input_at(&self, h: &[Matrix], agg: &[Matrix], steps: &[usize], nodes: &[usize]) -> Matrix {
        assert_eq!(steps.len(), nodes.len());
        let mut out = Matrix::zeros(nodes.len(), input_width(self.h0.cols()));
        for (r, (&i, &k)) in nodes.iter().zip(steps).enumerate() {
            assert!(k >= 1, "break input needs a step in [1, L]");
            self.fill(&mut out, r, i, h[k].row(i), Some(agg[k - 1].row(i)), 0.0);
        }
        out
    }

    /// Weight-head input `[z | h⁽⁰⁾ | h̃ | 0 | l/L]`.
    pub fn weight_input(&self, best: &Matrix, steps: &[usize], max_steps: usize, nodes: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(nodes.len(), input_width(self.h0.cols()));
        for (r, &i) in nodes.iter().enumerate() {
            let s = steps[i] as f64 / max_steps as f64;
            self.fill(&mut out, r, i, best.row(i), None, s);
        }
        out
    }
}

/// First step whose break probability exceeds `eps`, else `L`.
/// `probs[k-1][i]` is node `i`'s probability at step `k`.
pub fn decide_break(probs: &[Vec<f64>], eps: f64) -> Vec<usize> {
    let steps = probs.len();
    let n = probs.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            probs
                .iter()
                .position(|p| p[i] > eps)
                .map_or(steps, |k| k + 1)
        })
        .collect()
}

/// Scans steps `1..=L`; whenever the update probability exceeds `eps`, node
/// `i` takes `h̃_i ← H⁽ᵏ⁾_i` and `l_i ← k`. Starts from `H⁽⁰⁾`, `l = 0`.
pub fn l2u_select(probs: &[Vec<f64>], h: &[Matrix], eps: f64) -> (Matrix, Vec<usize>) {
    assert_eq!(h.len(), probs.len() + 1, "need H(0..=L) for L steps of probabilities");
    let nodes: Vec<usize> = (0..h[0].rows()).collect();
    l2u_scan(h, &nodes, eps, |k, _, _| probs[k - 1].clone())
}

/// [`l2u_select`] restricted to `nodes`, with the step-`k` probabilities
/// produced on demand from the running `(h̃, l)`; `probs_at` returns one value
/// per entry of `nodes`. Rows outside `nodes` stay at `H⁽⁰⁾`, step 0.
pub fn l2u_scan<F>(h: &[Matrix], nodes: &[usize], eps: f64, mut probs_at: F) -> (Matrix, Vec<usize>)
where
    F: FnMut(usize, &Matrix, &[usize]) -> Vec<f64>,
{
    let mut best = h[0].clone();
    let mut steps = vec![0; h[0].rows()];
    for (k, hk) in h.iter().enumerate().skip(1) {
        let p = probs_at(k, &best, &steps);
        assert_eq!(p.len(), nodes.len(), "one probability per node");
        for (&i, &pi) in nodes.iter().zip(&p) {
            if pi > eps {
                best.row_mut(i).copy_from_slice(hk.row(i));
                steps[i] = k;
            }
        }
    }
    (best, steps)
}

/// Min–max normalized errors. The denominator is `max(C_max − C_min, δ)` so
/// that a non-degenerate range is used exactly.
pub fn normalized_errors(c: &[f64]) -> Vec<f64> {
    let min = c.iter().copied().fold(f64::INFINITY, f64::min);
    let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = (max - min).max(NORMALIZATION_DELTA);
    c.iter().map(|&v| (v - min) / denom).collect()
}

/// Break loss `(1/m) Σ |Ĉ_i − Pr(continue at l_i)|` with `p_break` the
/// `m × 1` break probabilities at each node's chosen step.
pub fn loss_l2b(tape: &mut Tape, c: &[f64], p_break: Var) -> Var {
    assert_eq!(tape.value(p_break).rows(), c.len());
    let target = tape.constant(Matrix::column(&normalized_errors(c)));
    let p_continue = tape.affine(p_break, -1.0, 1.0);
    let diff = tape.sub(target, p_continue);
    let abs = tape.abs(diff);
    tape.mean(abs)
}

pub fn loss_l2b_value(c: &[f64], p_continue: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p_break = tape.constant(Matrix::column(&p_continue.iter().map(|p| 1.0 - p).collect::<Vec<_>>()));
    let loss = loss_l2b(&mut tape, c, p_break);
    tape.value(loss).item()
}

/// Update loss `(1/m) Σ_i (1/L) Σ_k Pr_ik · (C_ik − C̃_ik)`; `p_update` and
/// `advantage` hold the `m·L` terms in any consistent order.
pub fn loss_l2u(tape: &mut Tape, p_update: Var, advantage: &[f64]) -> Var {
    assert_eq!(tape.value(p_update).rows(), advantage.len());
    let adv = tape.constant(Matrix::column(advantage));
    let terms = tape.mul(p_update, adv);
    tape.mean(terms)
}

/// Value form over `[node][step]` tables.
pub fn loss_l2u_value(p_update: &[Vec<f64>], errors: &[Vec<f64>], running_best: &[Vec<f64>]) -> f64 {
    let mut p = Vec::new();
    let mut adv = Vec::new();
    for i in 0..p_update.len() {
        for k in 0..p_update[i].len() {
            p.push(p_update[i][k]);
            adv.push(errors[i][k] - running_best[i][k]);
        }
    }
    let mut tape = Tape::new();
    let pv = tape.constant(Matrix::column(&p));
    let loss = loss_l2u(&mut tape, pv, &adv);
    tape.value(loss).item()
}

/// Weight objective `(1/m) Σ w_i C_i − λ₁ (1/m) Σ w_i²`, to be maximized.
/// `c` is constant.
pub fn loss_weight(tape: &mut Tape, w: Var, c: &[f64], lambda1: f64) -> Var {
    let m = c.len() as f64;
    assert_eq!(tape.value(w).rows(), c.len());
    let cv = tape.constant(Matrix::column(c));
    let wc = tape.mul(w, cv);
    let fit = tape.mean(wc);
    let sq = tape.sum_sq(w);
    let penalty = tape.scale(sq, lambda1 / m);
    tape.sub(fit, penalty)
}

pub fn loss_weight_value(w: &[f64], c: &[f64], lambda1: f64) -> f64 {
    let mut tape = Tape::new();
    let wv = tape.constant(Matrix::column(w));
    let loss = loss_weight(&mut tape, wv, c, lambda1);
    tape.value(loss).item()
}

/// `L_p − λ₂·L_w`, minimized.
pub fn merged_controller_loss(tape: &mut Tape, lp: Var, lw: Var, lambda2: f64) -> Var {
    let scaled = tape.scale(lw, lambda2);
    tape.sub(lp, scaled)
}

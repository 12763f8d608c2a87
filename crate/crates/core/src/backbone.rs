//! Backbone GNNs and the per-step propagation trace.
//!
//! APPNP encodes features with a two-layer MLP straight into logit space and
//! then propagates `H⁽ᵏ⁾ = (1−α)·Â·H⁽ᵏ⁻¹⁾ + α·H⁽⁰⁾`. GCN starts from the raw
//! features and applies `H⁽ᵏ⁾ = relu(Â·H⁽ᵏ⁻¹⁾·W_k + b_k)`, linear at the last
//! step.
//!
//! A per-node step bound (the break mask) freezes node `i` at `H⁽ˡⁱ⁾`; frozen
//! rows keep feeding their neighbors' aggregation in later steps.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{NamedParam, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{row_softmax, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    Appnp,
    Gcn,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "appnp" => Ok(BackboneKind::Appnp),
            "gcn" => Ok(BackboneKind::Gcn),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::Appnp => "appnp",
            BackboneKind::Gcn => "gcn",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Maximum propagation steps `L`.
    pub steps: usize,
    pub hidden: usize,
    /// APPNP teleport probability.
    pub alpha: f64,
    pub dropout: f64,
    pub input_dim: usize,
    pub classes: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("propagation steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.hidden == 0 || self.input_dim == 0 || self.classes == 0 {
            return Err(Error::Config("hidden, input and class dims must be positive".into()));
        }
        Ok(())
    }

    /// Width of the propagated embeddings (`c` for APPNP).
    pub fn embedding_dim(&self) -> usize {
        match self.kind {
            BackboneKind::Appnp => self.classes,
            BackboneKind::Gcn => self.hidden,
        }
    }
}

/// Backbone parameters θ, as `(weight, bias)` pairs per dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<(Matrix, Matrix)>,
}

/// Glorot-uniform weights, zero bias.
pub fn glorot_layer<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> (Matrix, Matrix) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    (
        Matrix::from_vec(fan_in, fan_out, data),
        Matrix::zeros(1, fan_out),
    )
}

impl BackboneParams {
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Self {
        let dims: Vec<usize> = match config.kind {
            BackboneKind::Appnp => vec![config.input_dim, config.hidden, config.classes],
            BackboneKind::Gcn => {
                let mut d = vec![config.input_dim];
                d.extend(std::iter::repeat_n(config.hidden, config.steps - 1));
                d.push(config.classes);
                d
            }
        };
        let layers = dims.windows(2).map(|w| glorot_layer(w[0], w[1], rng)).collect();
        BackboneParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        BackboneParams {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (Matrix::zeros(w.rows(), w.cols()), Matrix::zeros(b.rows(), b.cols())))
                .collect(),
        }
    }

    /// Flat mutable view, weight then bias per layer.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    /// Places θ on the tape as trainable leaves.
    pub fn load(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone())))
            .collect()
    }

    pub fn named(&self) -> Vec<NamedParam> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    NamedParam::new(format!("backbone.{i}.weight"), w.clone()),
                    NamedParam::new(format!("backbone.{i}.bias"), b.clone()),
                ]
            })
            .collect()
    }

    pub fn from_named(params: &[NamedParam]) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0.. {
            let find = |suffix: &str| {
                params
                    .iter()
                    .find(|p| p.name == format!("backbone.{i}.{suffix}"))
                    .map(|p| p.value.clone())
            };
            match (find("weight"), find("bias")) {
                (Some(w), Some(b)) => layers.push((w, b)),
                (None, None) => break,
                _ => return Err(Error::Checkpoint(format!("incomplete backbone layer {i}"))),
            }
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint("no backbone parameters".into()));
        }
        Ok(BackboneParams { layers })
    }
}

/// Tape handles of one forward pass: `h[k]` is `H⁽ᵏ⁾` for `k = 0..=L`,
/// `agg[k-1]` is `Ĥ⁽ᵏ⁾`.
#[derive(Clone, Debug)]
pub struct TraceVars {
    pub h: Vec<Var>,
    pub agg: Vec<Var>,
}

impl TraceVars {
    pub fn steps(&self) -> usize {
        self.agg.len()
    }

    /// `h̃` with row `i` taken from `H⁽ˡⁱ⁾`.
    pub fn select(&self, tape: &mut Tape, steps: &[usize]) -> Var {
        tape.pick_rows(&self.h, steps)
    }
}

/// Dropout source for a forward pass; `None` is inference mode.
pub type DropoutRng<'a> = Option<&'a mut rand_chacha::ChaCha8Rng>;

pub struct Backbone {
    pub config: BackboneConfig,
    pub adj: Arc<NormalizedAdjacency>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, adj: Arc<NormalizedAdjacency>) -> Result<Self> {
        config.validate()?;
        Ok(Backbone { config, adj })
    }

    /// `H⁽⁰⁾`: the encoder MLP for APPNP, the raw features for GCN.
    pub fn encode(&self, tape: &mut Tape, x: Var, theta: &[(Var, Var)], rng: DropoutRng<'_>) -> Var {
        match self.config.kind {
            BackboneKind::Appnp => {
                let (w1, b1) = theta[0];
                let (w2, b2) = theta[1];
                let z = tape.matmul(x, w1);
                let z = tape.add(z, b1);
                let mut a = tape.relu(z);
                if let Some(rng) = rng {
                    a = tape.dropout(a, self.config.dropout, rng);
                }
                let out = tape.matmul(a, w2);
                tape.add(out, b2)
            }
            BackboneKind::Gcn => x,
        }
    }

    /// One aggregate + update step, returning `(Ĥ⁽ᵏ⁾, H⁽ᵏ⁾)`.
    pub fn propagate_step(
        &self,
        tape: &mut Tape,
        prev: Var,
        h0: Var,
        theta: &[(Var, Var)],
        k: usize,
        rng: DropoutRng<'_>,
    ) -> (Var, Var) {
        assert!((1..=self.config.steps).contains(&k), "step {k} outside [1, L]");
        let agg = tape.spmm_const(&self.adj, prev);
        let next = match self.config.kind {
            BackboneKind::Appnp => {
                let alpha = self.config.alpha;
                let a = tape.scale(agg, 1.0 - alpha);
                let b = tape.scale(h0, alpha);
                tape.add(a, b)
            }
            BackboneKind::Gcn => {
                let (w, b) = theta[k - 1];
                let mut input = agg;
                if let Some(rng) = rng {
                    input = tape.dropout(input, self.config.dropout, rng);
                }
                let z = tape.matmul(input, w);
                let z = tape.add(z, b);
                if k == self.config.steps {
                    z
                } else {
                    tape.relu(z)
                }
            }
        };
        (agg, next)
    }

    /// Full forward pass. With `mask`, node `i` stops updating after step
    /// `mask[i]` (APPNP only).
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        theta: &[(Var, Var)],
        mut rng: DropoutRng<'_>,
        mask: Option<&[usize]>,
    ) -> Result<TraceVars> {
        if let Some(mask) = mask {
            self.check_mask(mask)?;
        }
        let h0 = self.encode(tape, x, theta, rng.as_deref_mut());
        let mut h = vec![h0];
        let mut agg = Vec::with_capacity(self.config.steps);
        for k in 1..=self.config.steps {
            let prev = h[k - 1];
            let (a, mut next) = self.propagate_step(tape, prev, h0, theta, k, rng.as_deref_mut());
            if let Some(mask) = mask {
                let choice: Vec<usize> = mask.iter().map(|&l| usize::from(k > l)).collect();
                if choice.contains(&1) {
                    next = tape.pick_rows(&[next, prev], &choice);
                }
            }
            agg.push(a);
            h.push(next);
        }
        Ok(TraceVars { h, agg })
    }

    fn check_mask(&self, mask: &[usize]) -> Result<()> {
        if mask.len() != self.adj.node_count() {
            return Err(Error::InvalidInput(format!(
                "break mask has {} entries for {} nodes",
                mask.len(),
                self.adj.node_count()
            )));
        }
        if let Some(&bad) = mask.iter().find(|&&l| l > self.config.steps) {
            return Err(Error::InvalidInput(format!(
                "break mask entry {bad} exceeds L = {}",
                self.config.steps
            )));
        }
        if self.config.kind == BackboneKind::Gcn && mask.iter().any(|&l| l != self.config.steps) {
            return Err(Error::Config(
                "per-node step bounds need equal embedding widths across steps (APPNP)".into(),
            ));
        }
        Ok(())
    }

    /// Inference-mode run producing the value trace.
    pub fn run(
        &self,
        x: &Matrix,
        params: &BackboneParams,
        mask: Option<&[usize]>,
    ) -> Result<PropagationTrace> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let theta: Vec<(Var, Var)> = params
            .layers
            .iter()
            .map(|(w, b)| (tape.constant(w.clone()), tape.constant(b.clone())))
            .collect();
        let vars = self.forward(&mut tape, xv, &theta, None, mask)?;
        tape.ensure_finite()?;
        let steps = match mask {
            Some(m) => m.to_vec(),
            None => vec![self.config.steps; self.adj.node_count()],
        };
        Ok(PropagationTrace::from_tape(&tape, &vars, steps))
    }
}

/// Values of one propagation run.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationTrace {
    /// `H⁽⁰⁾ ..= H⁽ᴸ⁾`.
    pub h: Vec<Matrix>,
    /// `Ĥ⁽¹⁾ ..= Ĥ⁽ᴸ⁾` (index `k-1`).
    pub agg: Vec<Matrix>,
    /// `h̃`, row `i` from `H⁽ˡⁱ⁾`.
    pub best: Matrix,
    pub steps: Vec<usize>,
}

impl PropagationTrace {
    pub fn from_tape(tape: &Tape, vars: &TraceVars, steps: Vec<usize>) -> Self {
        let h: Vec<Matrix> = vars.h.iter().map(|&v| tape.value(v).clone()).collect();
        let agg = vars.agg.iter().map(|&v| tape.value(v).clone()).collect();
        let best = select_rows(&h, &steps);
        PropagationTrace { h, agg, best, steps }
    }

    pub fn max_steps(&self) -> usize {
        self.agg.len()
    }
}

/// Row `i` of the result is row `i` of `h[steps[i]]`.
pub fn select_rows(h: &[Matrix], steps: &[usize]) -> Matrix {
    let (rows, cols) = h[h.len() - 1].shape();
    let mut out = Matrix::zeros(rows, cols);
    for (i, &l) in steps.iter().enumerate() {
        out.row_mut(i).copy_from_slice(h[l].row(i));
    }
    out
}

/// Class probabilities and argmax labels from final embeddings.
pub fn predict(best: &Matrix) -> (Matrix, Vec<usize>) {
    let probs = row_softmax(best);
    let labels = probs.argmax_rows();
    (probs, labels)
}

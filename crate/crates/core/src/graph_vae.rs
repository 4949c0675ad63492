//! Graph autoencoder over cells.
//!
//! The encoder runs GRU message passing over the nodes in topological order,
//! once forward and once over the edge-reversed graph, and maps the two final
//! states to a latent vector. The decoder rebuilds a cell one node at a time:
//! it predicts an operation (or `end`), then decides edges from earlier nodes,
//! newest first, refreshing the new node's state after every accepted edge.
//!
//! The model is deterministic (no sampling in the latent space).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::{topological_order, CellGraph, OpKind, N_MAX};
use crate::diff::nn::{self, Activation};
use crate::diff::{Adam, GradMap, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Graph latent `x^G`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLatent(pub Vec<f64>);

impl GraphLatent {
    pub fn dist(&self, other: &GraphLatent) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Width of the operation one-hot vectors.
pub const VOCAB: usize = OpKind::ALL.len();
/// Decoder GRU input: operation one-hot followed by a generation-position
/// one-hot, so equal operations at different positions get distinct states.
pub const DECODER_INPUT: usize = VOCAB + N_MAX;
/// Decoder node classes: the five searchable operations plus `end`.
pub const NODE_CLASSES: usize = 6;
const END_CLASS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphVaeConfig {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for GraphVaeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent: 56,
        }
    }
}

fn one_hot(op: OpKind) -> Tensor {
    let mut t = Tensor::zeros(1, VOCAB);
    t.set(0, op.index(), 1.0);
    t
}

fn decoder_input(op: OpKind, position: usize) -> Tensor {
    let mut t = Tensor::zeros(1, DECODER_INPUT);
    t.set(0, op.index(), 1.0);
    t.set(0, VOCAB + position, 1.0);
    t
}

/// Order in which the decoder generates (and teacher forcing replays) a
/// graph: storage order when it is already topological, else Kahn order.
pub fn generation_order(g: &CellGraph) -> Result<Vec<usize>> {
    if g.edges().iter().all(|&(s, d)| s < d) {
        Ok((0..g.len()).collect())
    } else {
        topological_order(g)
    }
}

/// Encoder parameters use the `genc.` prefix, decoder parameters `gdec.`.
#[derive(Clone, Copy, Debug)]
pub struct GraphVae {
    pub config: GraphVaeConfig,
}

/// Per-epoch teacher-forced loss of [`GraphVae::train_autoencoder`].
#[derive(Clone, Debug, Default)]
pub struct AutoencoderReport {
    pub losses: Vec<f64>,
}

impl GraphVae {
    pub const ENCODER_PREFIX: &'static str = "genc.";
    pub const DECODER_PREFIX: &'static str = "gdec.";

    pub fn new(config: GraphVaeConfig) -> Self {
        Self { config }
    }

    pub fn init_encoder(&self, store: &mut ParamStore) -> Result<()> {
        let h = self.config.hidden;
        for dir in ["fwd", "rev"] {
            nn::init_gru(store, &format!("genc.{dir}.gru"), VOCAB, h)?;
            nn::init_linear(store, &format!("genc.{dir}.gate"), h, h)?;
            nn::init_projection(store, &format!("genc.{dir}.map"), h, h)?;
            store.add_glorot(&format!("genc.{dir}.source"), 1, h)?;
        }
        nn::init_mlp2(store, "genc.out", 2 * h, self.config.latent, self.config.latent)
    }

    pub fn init_decoder(&self, store: &mut ParamStore) -> Result<()> {
        let h = self.config.hidden;
        nn::init_linear(store, "gdec.init", self.config.latent, h)?;
        nn::init_gru(store, "gdec.gru", DECODER_INPUT, h)?;
        nn::init_linear(store, "gdec.gate", h, h)?;
        nn::init_projection(store, "gdec.map", h, h)?;
        nn::init_mlp2(store, "gdec.node", h, h, NODE_CLASSES)?;
        nn::init_mlp2(store, "gdec.edge", 2 * h, h, 1)
    }

    fn message(tape: &mut Tape, store: &ParamStore, prefix: &str, h: Var) -> Result<Var> {
        let gate = nn::linear(tape, store, &format!("{prefix}.gate"), h)?;
        let gate = tape.sigmoid(gate);
        let mapped = nn::projection(tape, store, &format!("{prefix}.map"), h)?;
        tape.mul(gate, mapped)
    }

    fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = tape.add(acc, v)?;
        }
        Ok(acc)
    }

    /// One directional pass; returns the state of the last processed node.
    fn pass(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &CellGraph,
        order: &[usize],
        dir: &str,
        reverse: bool,
    ) -> Result<Var> {
        let prefix = format!("genc.{dir}");
        let gru = format!("{prefix}.gru");
        let mut messages: Vec<Option<Var>> = vec![None; g.len()];
        let mut last = None;
        for &v in order {
            let incoming: Vec<Var> = if reverse {
                g.successors(v).map(|u| messages[u].expect("topological")).collect()
            } else {
                g.predecessors(v).map(|u| messages[u].expect("topological")).collect()
            };
            let h_in = if incoming.is_empty() {
                tape.param(store, &format!("{prefix}.source"))?
            } else {
                Self::sum_vars(tape, &incoming)?
            };
            let x = tape.constant(one_hot(g.nodes()[v]));
            let h = nn::gru_cell(tape, store, &gru, x, h_in)?;
            messages[v] = Some(Self::message(tape, store, &prefix, h)?);
            last = Some(h);
        }
        last.ok_or_else(|| Error::InvalidGraph("empty graph".into()))
    }

    /// Records the encoder and returns the `1 x latent` embedding.
    pub fn encode_on_tape(&self, tape: &mut Tape, store: &ParamStore, g: &CellGraph) -> Result<Var> {
        g.validate()?;
        let order = topological_order(g)?;
        let fwd = self.pass(tape, store, g, &order, "fwd", false)?;
        let rev_order: Vec<usize> = order.iter().rev().copied().collect();
        let rev = self.pass(tape, store, g, &rev_order, "rev", true)?;
        let both = tape.concat_cols(&[fwd, rev])?;
        nn::mlp2(tape, store, "genc.out", both, Activation::Tanh)
    }

    pub fn encode(&self, store: &ParamStore, g: &CellGraph) -> Result<GraphLatent> {
        let mut tape = Tape::new();
        let out = self.encode_on_tape(&mut tape, store, g)?;
        Ok(GraphLatent(tape.value(out).data().to_vec()))
    }

    /// Encodes many graphs in parallel; output order matches input order.
    pub fn encode_all(&self, store: &ParamStore, graphs: &[CellGraph]) -> Result<Vec<GraphLatent>> {
        graphs.par_iter().map(|g| self.encode(store, g)).collect()
    }

    fn node_logits(tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        nn::mlp2(tape, store, "gdec.node", h, Activation::Tanh)
    }

    fn edge_logit(tape: &mut Tape, store: &ParamStore, from: Var, to: Var) -> Result<Var> {
        let pair = tape.concat_cols(&[from, to])?;
        nn::mlp2(tape, store, "gdec.edge", pair, Activation::Tanh)
    }

    /// State of a decoder node with the given predecessor messages.
    fn decoder_state(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        op: OpKind,
        position: usize,
        incoming: &[Var],
    ) -> Result<Var> {
        let h_in = if incoming.is_empty() {
            tape.constant(Tensor::zeros(1, self.config.hidden))
        } else {
            Self::sum_vars(tape, incoming)?
        };
        let x = tape.constant(decoder_input(op, position));
        nn::gru_cell(tape, store, "gdec.gru", x, h_in)
    }

    fn decoder_start(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let h0 = nn::linear(tape, store, "gdec.init", z)?;
        let h0 = tape.tanh(h0);
        let x = tape.constant(decoder_input(OpKind::Input, 0));
        nn::gru_cell(tape, store, "gdec.gru", x, h0)
    }

    /// Greedy decoding. Always returns a valid cell.
    pub fn decode(&self, store: &ParamStore, z: &GraphLatent) -> Result<CellGraph> {
        if z.0.len() != self.config.latent {
            return Err(Error::Shape(format!(
                "latent width {} but decoder expects {}",
                z.0.len(),
                self.config.latent
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::row(&z.0));
        let mut nodes = vec![OpKind::Input];
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut states = vec![self.decoder_start(&mut tape, store, zv)?];
        let mut messages = vec![Self::message(&mut tape, store, "gdec", states[0])?];

        while nodes.len() < N_MAX - 1 {
            let logits = Self::node_logits(&mut tape, store, *states.last().expect("nonempty"))?;
            let class = argmax(tape.value(logits).data());
            if class == END_CLASS {
                break;
            }
            let op = OpKind::SEARCHABLE[class];
            let v = nodes.len();
            let mut incoming = Vec::new();
            let mut h = self.decoder_state(&mut tape, store, op, v, &incoming)?;
            let mut best: Option<(f64, usize)> = None;
            for l in (0..v).rev() {
                let logit = Self::edge_logit(&mut tape, store, states[l], h)?;
                let p = sigmoid(tape.value(logit).item());
                if best.is_none_or(|(bp, _)| p > bp) {
                    best = Some((p, l));
                }
                if p >= 0.5 {
                    edges.push((l, v));
                    incoming.push(messages[l]);
                    h = self.decoder_state(&mut tape, store, op, v, &incoming)?;
                }
            }
            if incoming.is_empty() {
                let (_, l) = best.expect("at least the input node precedes");
                edges.push((l, v));
                incoming.push(messages[l]);
                h = self.decoder_state(&mut tape, store, op, v, &incoming)?;
            }
            nodes.push(op);
            messages.push(Self::message(&mut tape, store, "gdec", h)?);
            states.push(h);
        }

        let out = nodes.len();
        let leaves: Vec<usize> = (0..out)
            .filter(|&v| !edges.iter().any(|&(s, _)| s == v))
            .collect();
        edges.extend(leaves.into_iter().map(|v| (v, out)));
        nodes.push(OpKind::Output);
        CellGraph::new(nodes, edges)
    }

    /// Teacher-forced negative log-likelihood of `g` given latent node `z`:
    /// cross-entropy over node classes plus binary cross-entropy over edges.
    pub fn teacher_forced_loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        g: &CellGraph,
        z: Var,
    ) -> Result<Var> {
        g.validate()?;
        let order = generation_order(g)?;
        let mut position = vec![0usize; g.len()];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        let mut terms = Vec::new();
        let mut states = vec![self.decoder_start(tape, store, z)?];
        let mut messages = vec![Self::message(tape, store, "gdec", states[0])?];
        let op_nodes = &order[1..order.len() - 1];

        for (k, &v) in op_nodes.iter().enumerate() {
            let k = k + 1;
            let op = g.nodes()[v];
            let logits = Self::node_logits(tape, store, states[k - 1])?;
            let logp = tape.log_softmax_rows(logits);
            terms.push(pick_neg(tape, logp, op.index())?);

            let mut incoming = Vec::new();
            let mut h = self.decoder_state(tape, store, op, k, &incoming)?;
            for l in (0..k).rev() {
                let target = g.predecessors(v).any(|u| position[u] == l);
                let logit = Self::edge_logit(tape, store, states[l], h)?;
                terms.push(bce_with_logit(tape, logit, target));
                if target {
                    incoming.push(messages[l]);
                    h = self.decoder_state(tape, store, op, k, &incoming)?;
                }
            }
            messages.push(Self::message(tape, store, "gdec", h)?);
            states.push(h);
        }
        if order.len() < N_MAX {
            let logits = Self::node_logits(tape, store, *states.last().expect("nonempty"))?;
            let logp = tape.log_softmax_rows(logits);
            terms.push(pick_neg(tape, logp, END_CLASS)?);
        }
        let all = tape.concat_cols(&terms)?;
        Ok(tape.sum(all))
    }

    /// Mean teacher-forced loss over `(graph, latent)` pairs and its decoder gradients.
    pub fn reconstruction_loss(
        &self,
        store: &ParamStore,
        graphs: &[CellGraph],
        latents: &[GraphLatent],
    ) -> Result<(f64, GradMap)> {
        let per_graph: Vec<(f64, GradMap)> = graphs
            .par_iter()
            .zip(latents)
            .map(|(g, z)| {
                let mut tape = Tape::new();
                let zv = tape.constant(Tensor::row(&z.0));
                let loss = self.teacher_forced_loss(&mut tape, store, g, zv)?;
                let grads = tape.backward(loss)?.param_map(store);
                Ok((tape.value(loss).item(), grads))
            })
            .collect::<Result<_>>()?;
        let n = graphs.len() as f64;
        let mut total = 0.0;
        let mut acc = store.zeros_like();
        for (loss, grads) in per_graph {
            total += loss;
            for (name, g) in grads {
                if name.starts_with(Self::DECODER_PREFIX) {
                    acc.get_mut(&name).expect("same store").add_assign(&g.scale(1.0 / n));
                }
            }
        }
        acc.retain(|name, _| name.starts_with(Self::DECODER_PREFIX));
        Ok((total / n, acc))
    }

    /// Fits decoder parameters by full-batch Adam on the teacher-forced loss.
    /// Encoder parameters are read-only: latents come from the frozen encoder.
    /// `losses[e]` is the loss of the parameters at the start of epoch `e`.
    pub fn train_autoencoder(
        &self,
        store: &mut ParamStore,
        graphs: &[CellGraph],
        epochs: usize,
        lr: f64,
    ) -> Result<AutoencoderReport> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("empty autoencoder training set".into()));
        }
        let latents = self.encode_all(store, graphs)?;
        let mut opt = Adam::new(lr).with_clip(10.0);
        let mut report = AutoencoderReport::default();
        for _ in 0..epochs {
            let (loss, grads) = self.reconstruction_loss(store, graphs, &latents)?;
            report.losses.push(loss);
            opt.step(store, &grads, |n| n.starts_with(Self::DECODER_PREFIX))?;
        }
        Ok(report)
    }
}

fn pick_neg(tape: &mut Tape, logp: Var, class: usize) -> Result<Var> {
    let picked = tape.slice_cols(logp, class, 1)?;
    Ok(tape.scale(picked, -1.0))
}

/// `softplus(t) - y t`, the binary cross-entropy of `sigmoid(t)` against `y`.
fn bce_with_logit(tape: &mut Tape, logit: Var, target: bool) -> Var {
    let sp = tape.softplus(logit);
    if target {
        let neg = tape.scale(logit, -1.0);
        tape.add(sp, neg).expect("same shape")
    } else {
        sp
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

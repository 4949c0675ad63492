//! Meta-training of the encoders, fusion MLP and kernel hyperparameters by
//! stochastic ascent on the GP log marginal likelihood.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gp::{log_marginal_likelihood, standardization};
use super::kernel::KernelHypers;
use crate::dag::CellGraph;
use crate::diff::{Adam, GradMap, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph_vae::GraphVae;
use crate::model::Model;
use crate::seed;
use crate::set_encoder::TaskSpec;

/// Observed `(graph, performance)` pairs for each meta-training task.
#[derive(Clone, Debug, Default)]
pub struct MetaDataset {
    pub tasks: Vec<TaskSpec>,
    pub observations: Vec<Vec<(CellGraph, f64)>>,
}

impl MetaDataset {
    pub fn len(&self) -> usize {
        self.observations.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines `<task-id>,<cell-notation>,<performance>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (task, obs) in self.tasks.iter().zip(&self.observations) {
            for (g, perf) in obs {
                out.push_str(&format!(
                    "{},{},{}\n",
                    task.id,
                    crate::dag::EdgeSpec::notation(g),
                    perf
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 32,
            lr: 1e-3,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MetaTrainReport {
    /// Per-observation log marginal likelihood of each step's batch, before its update.
    pub objective: Vec<f64>,
}

/// Parameters trained by the likelihood; the graph decoder is fitted separately.
pub fn is_meta_trainable(name: &str) -> bool {
    !name.starts_with(GraphVae::DECODER_PREFIX)
}

/// Log marginal likelihood (divided by the batch size) of one task's batch
/// with standardized targets, and its gradient over every reachable parameter.
pub fn batch_objective(
    model: &Model,
    task: &TaskSpec,
    batch: &[(CellGraph, f64)],
    sample_seed: u64,
) -> Result<(f64, GradMap)> {
    if batch.len() < 2 {
        return Err(Error::InvalidArgument("a task batch needs at least two observations".into()));
    }
    let store = &model.params;
    let mut tape = Tape::new();
    let xd = model.set_encoder().encode_on_tape(
        &mut tape,
        store,
        task,
        model.config.samples_per_class,
        sample_seed,
    )?;
    let vae = model.vae();
    let rows = batch
        .iter()
        .map(|(g, _)| vae.encode_on_tape(&mut tape, store, g))
        .collect::<Result<Vec<_>>>()?;
    let xg = tape.concat_rows(&rows)?;
    let fused = model.fusion().fuse_on_tape(&mut tape, store, xd, xg)?;

    let y: Vec<f64> = batch.iter().map(|(_, p)| *p).collect();
    let (offset, scale) = standardization(&y);
    let ys: Vec<f64> = y.iter().map(|v| (v - offset) / scale).collect();
    let hypers = KernelHypers::from_params(store)?;
    let lml = log_marginal_likelihood(tape.value(fused), &ys, &hypers)?;

    let n = batch.len() as f64;
    let out = tape.contract(fused, lml.grad_inputs.scale(1.0 / n))?;
    let mut grads = tape.backward(out)?.param_map(store);
    grads.insert(
        KernelHypers::LENGTHSCALES.into(),
        Tensor::row(&lml.grad_log_lengthscales).scale(1.0 / n),
    );
    grads.insert(KernelHypers::SIGNAL.into(), Tensor::scalar(lml.grad_log_signal / n));
    grads.insert(KernelHypers::NOISE.into(), Tensor::scalar(lml.grad_log_noise / n));
    Ok((lml.value / n, grads))
}

/// Each step draws one task and a batch of its observations, then takes an
/// Adam step uphill on the batch likelihood. Deterministic given the seed.
pub fn meta_train(model: &mut Model, data: &MetaDataset, config: &MetaTrainConfig) -> Result<MetaTrainReport> {
    if data.tasks.len() != data.observations.len() {
        return Err(Error::InvalidArgument("one observation list per task required".into()));
    }
    let usable: Vec<usize> = (0..data.tasks.len())
        .filter(|&t| data.observations[t].len() >= 2)
        .collect();
    if usable.is_empty() {
        return Err(Error::InvalidArgument(
            "meta-dataset has no task with two or more observations".into(),
        ));
    }
    let mut rng = seed::rng(config.seed, "meta-train");
    let mut opt = Adam::new(config.lr).with_clip(config.clip_norm);
    let mut report = MetaTrainReport::default();
    for step in 0..config.steps {
        let t = usable[rng.random_range(0..usable.len())];
        let obs = &data.observations[t];
        let k = config.batch.clamp(2, obs.len());
        let mut picks = index::sample(&mut rng, obs.len(), k).into_vec();
        picks.sort_unstable();
        let batch: Vec<(CellGraph, f64)> = picks.iter().map(|&i| obs[i].clone()).collect();
        let sample_seed = seed::derive_indexed(config.seed, "meta-sample", step as u64);
        let (value, grads) = batch_objective(model, &data.tasks[t], &batch, sample_seed)?;
        report.objective.push(value);
        let descent: GradMap = grads.into_iter().map(|(k, g)| (k, g.scale(-1.0))).collect();
        opt.step(&mut model.params, &descent, is_meta_trainable)?;
    }
    Ok(report)
}

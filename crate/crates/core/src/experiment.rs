//! End-to-end pipeline pieces shared by the command line and the
//! experiment suites: benchmark generation, model training, and
//! head-to-head search runs.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::bench::{gen_tasks, sample_meta_dataset, MetaTable, SyntheticTask};
use crate::dag::{canonical_key, enumerate_search_space, CellGraph};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::search::{prune_space, random_search, run_meta_test, CandidatePool, Explorer, SearchConfig, SearchContext, SearchOutcome, Source};
use crate::seed;
use crate::surrogate::{meta_train, MetaDataset, MetaTrainConfig};

/// A synthetic benchmark split into meta-training and held-out test tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bench {
    pub seed: u64,
    pub train: Vec<SyntheticTask>,
    pub test: Vec<SyntheticTask>,
}

impl Bench {
    pub fn generate(seed: u64, n_train: usize, n_test: usize) -> Result<Self> {
        if n_train == 0 {
            return Err(Error::InvalidArgument("need at least one meta-training task".into()));
        }
        let mut tasks = gen_tasks(seed, n_train + n_test)?;
        let test = tasks.split_off(n_train);
        Ok(Self {
            seed,
            train: tasks,
            test,
        })
    }

    pub fn meta_table(&self, space: &[CellGraph]) -> Result<MetaTable> {
        MetaTable::from_tasks(space, &self.train)
    }

    pub fn meta_dataset(&self, space: &[CellGraph], per_task: usize) -> MetaDataset {
        sample_meta_dataset(&self.train, space, per_task, self.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub meta: MetaTrainConfig,
    /// Enumerated cells the decoder is fitted on.
    pub decoder_cells: usize,
    pub decoder_epochs: usize,
    pub decoder_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            meta: MetaTrainConfig::default(),
            decoder_cells: 256,
            decoder_epochs: 300,
            decoder_lr: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub meta_objective: Vec<f64>,
    pub decoder_loss: Vec<f64>,
}

/// Meta-trains encoders, fusion and kernel on `data`, then fits the decoder
/// on a seeded sample of `space` with the encoder frozen.
pub fn train_model(
    data: &MetaDataset,
    space: &[CellGraph],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    let mut model = Model::new(config.model, config.meta.seed)?;
    let meta = meta_train(&mut model, data, &config.meta)?;
    let decoder_graphs = sample_cells(space, config.decoder_cells, config.meta.seed, "decoder-cells");
    let vae = model.vae();
    let dec = vae.train_autoencoder(&mut model.params, &decoder_graphs, config.decoder_epochs, config.decoder_lr)?;
    Ok((
        model,
        TrainReport {
            meta_objective: meta.objective,
            decoder_loss: dec.losses,
        },
    ))
}

/// `n` distinct cells of `space` in enumeration order.
pub fn sample_cells(space: &[CellGraph], n: usize, root: u64, tag: &str) -> Vec<CellGraph> {
    let mut rng = seed::rng(root, tag);
    let mut picks = index::sample(&mut rng, space.len(), n.min(space.len())).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| space[i].clone()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    GrabNas,
    BoOnly,
    Knn,
    Random,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::GrabNas => "grabnas",
            Method::BoOnly => "bo-only",
            Method::Knn => "knn",
            Method::Random => "random",
        }
    }
}

/// Runs one method. `evals` caps the oracle calls (required for random
/// search; for BO-only it sets the iteration count to `evals - B`).
pub fn run_method(
    method: Method,
    ctx: &SearchContext<'_>,
    meta: &MetaTable,
    config: &SearchConfig,
    evals: Option<usize>,
    oracle: &dyn crate::bench::Oracle,
) -> Result<SearchOutcome> {
    let mut outcome = match method {
        Method::GrabNas => run_meta_test(ctx, meta, config, oracle)?,
        Method::Knn => run_meta_test(
            ctx,
            meta,
            &SearchConfig {
                explorer: Some(Explorer::Nearest),
                ..config.clone()
            },
            oracle,
        )?,
        Method::BoOnly => {
            let mut c = config.bo_only();
            if let Some(e) = evals {
                if e <= c.support {
                    return Err(Error::InvalidArgument(format!(
                        "budget {e} leaves no BO iterations after B = {}",
                        c.support
                    )));
                }
                c.iterations = e - c.support;
                c.warmup = c.iterations;
            }
            run_meta_test(ctx, meta, &c, oracle)?
        }
        Method::Random => {
            let budget = evals.unwrap_or(config.support + config.iterations);
            random_search(ctx, budget, config.seed, oracle)?
        }
    };
    outcome.trace.set_meta("method", method.tag());
    Ok(outcome)
}

/// Per-run numbers of a head-to-head comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub seed: u64,
    pub method: String,
    pub evals: usize,
    pub best: f64,
    pub regret: f64,
    pub grad_evals: usize,
}

/// Runs the full search, then BO-only and random search with the oracle budget
/// the full search actually used, for every (test task, seed). Regret is measured
/// against the best cell of `space`.
pub fn compare_on_bench(
    model: &Model,
    pool: &CandidatePool,
    bench: &Bench,
    meta: &MetaTable,
    base: &SearchConfig,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    for task in &bench.test {
        let optimum = pool
            .graphs
            .iter()
            .map(|g| task.true_perf(g))
            .fold(f64::NEG_INFINITY, f64::max);
        for &s in seeds {
            let config = SearchConfig {
                seed: s,
                ..base.clone()
            };
            let ctx = SearchContext::new(model, pool, &task.spec, config.sample_seed())?;
            let grab = run_method(Method::GrabNas, &ctx, meta, &config, None, task)?;
            let budget = grab.oracle_calls;
            let mut record = |method: Method, out: &SearchOutcome| {
                results.push(RunResult {
                    task: task.id().to_owned(),
                    seed: s,
                    method: method.tag().to_owned(),
                    evals: out.oracle_calls,
                    best: out.best.performance,
                    regret: optimum - out.best.performance,
                    grad_evals: out
                        .trace
                        .records
                        .iter()
                        .filter(|r| r.source == Source::Grad)
                        .count(),
                });
            };
            record(Method::GrabNas, &grab);
            for method in [Method::BoOnly, Method::Random] {
                let out = run_method(method, &ctx, meta, &config, Some(budget), task)?;
                record(method, &out);
            }
        }
    }
    Ok(results)
}

/// Result of one pruned-space run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub task: String,
    pub seed: u64,
    pub method: String,
    pub remaining_best: f64,
    pub best: f64,
    /// Evaluations of graphs outside the pruned candidate list.
    pub outside: usize,
}

impl PruneResult {
    pub fn delta(&self) -> f64 {
        self.best - self.remaining_best
    }
}

/// Removes the `k` best cells of `task` from the pool and runs the decoder
/// and nearest-candidate arms on what is left.
pub fn pruned_runs(
    model: &Model,
    pool: &CandidatePool,
    task: &SyntheticTask,
    meta: &MetaTable,
    config: &SearchConfig,
    k: usize,
) -> Result<(Vec<PruneResult>, Vec<SearchOutcome>)> {
    let (pruned, remaining_best) = prune_space(&pool.graphs, task, k)?;
    let keep: BTreeSet<String> = pruned.iter().map(canonical_key).collect::<Result<_>>()?;
    let removed: BTreeSet<String> = pool.keys.iter().filter(|k| !keep.contains(*k)).cloned().collect();
    let sub = pool.without(&removed);
    let ctx = SearchContext::new(model, &sub, &task.spec, config.sample_seed())?;
    let mut results = Vec::new();
    let mut outcomes = Vec::new();
    for method in [Method::GrabNas, Method::Knn] {
        let mut out = run_method(method, &ctx, meta, config, None, task)?;
        out.trace.set_meta("remaining_best", remaining_best);
        results.push(PruneResult {
            task: task.id().to_owned(),
            seed: config.seed,
            method: method.tag().to_owned(),
            remaining_best,
            best: out.best.performance,
            outside: out.trace.records.iter().filter(|r| !keep.contains(&r.key)).count(),
        });
        outcomes.push(out);
    }
    Ok((results, outcomes))
}

/// The enumerated space and its canonical keys.
pub fn space_keys() -> Result<(Vec<CellGraph>, BTreeSet<String>)> {
    let space = enumerate_search_space();
    let keys = space.iter().map(canonical_key).collect::<Result<_>>()?;
    Ok((space, keys))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

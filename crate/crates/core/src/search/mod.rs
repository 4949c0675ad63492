//! The meta-test search loop: expected-improvement selection over a
//! candidate pool alternated with gradient ascent in graph-latent space,
//! plus the random, BO-only and nearest-candidate baselines.

pub mod trace;

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use trace::{SearchTrace, Source, TraceRecord};

use crate::bench::{CountingOracle, MetaTable, Oracle};
use crate::dag::{canonical_key, CellGraph};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph_vae::GraphLatent;
use crate::model::Model;
use crate::seed;
use crate::set_encoder::{DatasetEmbedding, TaskSpec};
use crate::surrogate::{
    expected_improvement, gp_fit, grad_mu_wrt_graph_latent, FusedRep, GpState, KernelHypers, PosteriorStats,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SupportPair {
    pub graph: CellGraph,
    pub key: String,
    pub latent: GraphLatent,
    pub fused: FusedRep,
    pub performance: f64,
    pub source: Source,
}

/// Evaluated pairs, deduplicated by canonical key.
#[derive(Clone, Debug, Default)]
pub struct SupportSet {
    pairs: Vec<SupportPair>,
    keys: BTreeSet<String>,
}

impl SupportSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[SupportPair] {
        &self.pairs
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    pub fn push(&mut self, pair: SupportPair) -> Result<()> {
        if !(0.0..=1.0).contains(&pair.performance) {
            return Err(Error::InvalidArgument(format!(
                "performance {} outside [0, 1]",
                pair.performance
            )));
        }
        if !self.keys.insert(pair.key.clone()) {
            return Err(Error::InvalidArgument(format!("{} evaluated twice", pair.key)));
        }
        self.pairs.push(pair);
        Ok(())
    }

    /// Highest observed performance; ties go to the smaller key.
    pub fn best(&self) -> Option<&SupportPair> {
        self.pairs.iter().max_by(|a, b| {
            a.performance
                .total_cmp(&b.performance)
                .then_with(|| b.key.cmp(&a.key))
        })
    }

    pub fn fit(&self, hypers: &KernelHypers) -> Result<GpState> {
        let rows: Vec<Vec<f64>> = self.pairs.iter().map(|p| p.fused.0.clone()).collect();
        let y: Vec<f64> = self.pairs.iter().map(|p| p.performance).collect();
        gp_fit(&Tensor::from_rows(&rows)?, &y, hypers)
    }
}

/// Candidate graphs with their keys and frozen-encoder latents. Independent
/// of the target task, so one pool serves every task and seed.
#[derive(Clone, Debug, Default)]
pub struct CandidatePool {
    pub graphs: Vec<CellGraph>,
    pub keys: Vec<String>,
    pub latents: Vec<GraphLatent>,
}

impl CandidatePool {
    pub fn encode(model: &Model, graphs: &[CellGraph]) -> Result<Self> {
        let keys = graphs.par_iter().map(canonical_key).collect::<Result<Vec<_>>>()?;
        let latents = model.vae().encode_all(&model.params, graphs)?;
        Ok(Self {
            graphs: graphs.to_vec(),
            keys,
            latents,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Pool restricted to the candidates whose keys are not in `removed`.
    pub fn without(&self, removed: &BTreeSet<String>) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !removed.contains(&self.keys[i])).collect();
        Self {
            graphs: keep.iter().map(|&i| self.graphs[i].clone()).collect(),
            keys: keep.iter().map(|&i| self.keys[i].clone()).collect(),
            latents: keep.iter().map(|&i| self.latents[i].clone()).collect(),
        }
    }
}

/// How the gradient-explore step turns an ascended latent into a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Explorer {
    /// Greedy decoding with the graph decoder.
    Decoder,
    /// Nearest unevaluated candidate latent.
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// `T`: BO iterations.
    pub iterations: usize,
    /// `B`: initial support size.
    pub support: usize,
    /// `T_BO`: iterations before gradient exploration starts.
    pub warmup: usize,
    pub eta: f64,
    pub grad_steps: usize,
    pub max_halvings: u32,
    pub seed: u64,
    /// Store the re-encoded latent of a decoded graph instead of the ascended one.
    pub reencode: bool,
    /// `None` disables gradient exploration.
    pub explorer: Option<Explorer>,
    /// Stops the loop once this many oracle calls have been made.
    pub max_evals: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            support: 5,
            warmup: 5,
            eta: 1e-2,
            grad_steps: 1,
            max_halvings: 8,
            seed: 0,
            reencode: false,
            explorer: Some(Explorer::Decoder),
            max_evals: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.iterations == 0 {
            return bad("T must be at least 1");
        }
        if self.support == 0 {
            return bad("B must be at least 1");
        }
        if self.warmup > self.iterations {
            return bad("T_BO must not exceed T");
        }
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return bad("eta must be positive");
        }
        Ok(())
    }

    /// The same loop with gradient exploration disabled.
    pub fn bo_only(&self) -> Self {
        Self {
            warmup: self.iterations,
            explorer: None,
            ..self.clone()
        }
    }

    /// Seed for the dataset encoder's instance sampling.
    pub fn sample_seed(&self) -> u64 {
        seed::derive(self.seed, "dataset-sample")
    }
}

/// Everything the loop reads for one (task, seed): the task embedding and
/// the candidates fused with it.
pub struct SearchContext<'a> {
    pub model: &'a Model,
    pub pool: &'a CandidatePool,
    pub xd: DatasetEmbedding,
    pub fused: Vec<FusedRep>,
    pub hypers: KernelHypers,
}

impl<'a> SearchContext<'a> {
    pub fn new(model: &'a Model, pool: &'a CandidatePool, task: &TaskSpec, sample_seed: u64) -> Result<Self> {
        let xd = model.embed_task(task, sample_seed)?;
        let fused = model.fusion().fuse_all(&model.params, &xd, &pool.latents)?;
        Ok(Self {
            model,
            pool,
            xd,
            fused,
            hypers: model.hypers()?,
        })
    }

    fn pair(&self, i: usize, performance: f64, source: Source) -> SupportPair {
        SupportPair {
            graph: self.pool.graphs[i].clone(),
            key: self.pool.keys[i].clone(),
            latent: self.pool.latents[i].clone(),
            fused: self.fused[i].clone(),
            performance,
            source,
        }
    }
}

/// Indices of the `b` candidates with the highest meta-table mean (ties by key).
pub fn top_by_meta(pool: &CandidatePool, meta: &MetaTable, b: usize) -> Result<Vec<usize>> {
    if b > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "B = {b} exceeds the {} candidates",
            pool.len()
        )));
    }
    let mean = |i: usize| meta.mean(&pool.keys[i]).unwrap_or(f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &c| mean(c).total_cmp(&mean(a)).then_with(|| pool.keys[a].cmp(&pool.keys[c])));
    order.truncate(b);
    Ok(order)
}

/// Evaluates the top-`b` meta-table candidates on the target task.
pub fn init_support(
    ctx: &SearchContext<'_>,
    meta: &MetaTable,
    b: usize,
    oracle: &dyn Oracle,
    trace: &mut SearchTrace,
) -> Result<SupportSet> {
    let mut support = SupportSet::new();
    for i in top_by_meta(ctx.pool, meta, b)? {
        let perf = oracle.evaluate(&ctx.pool.graphs[i])?;
        support.push(ctx.pair(i, perf, Source::Init))?;
        trace.push(0, Source::Init, ctx.pool.keys[i].clone(), None, None, perf);
    }
    Ok(support)
}

/// A BO pick: candidate index, its posterior and EI.
#[derive(Clone, Copy, Debug)]
pub struct Selection {
    pub index: usize,
    pub stats: PosteriorStats,
    pub ei: f64,
}

/// Argmax EI over candidates outside `support`; ties go to the smaller key.
pub fn bo_select(state: &GpState, ctx: &SearchContext<'_>, support: &SupportSet) -> Result<Selection> {
    let best = state.best_target();
    let better = |a: &Selection, b: &Selection| -> Ordering {
        a.ei
            .total_cmp(&b.ei)
            .then_with(|| ctx.pool.keys[b.index].cmp(&ctx.pool.keys[a.index]))
    };
    (0..ctx.pool.len())
        .into_par_iter()
        .filter(|&i| !support.contains(&ctx.pool.keys[i]))
        .map(|i| {
            let stats = state.posterior(&ctx.fused[i].0);
            Selection {
                index: i,
                stats,
                ei: expected_improvement(&stats, best),
            }
        })
        .max_by(better)
        .ok_or_else(|| Error::InvalidArgument("every candidate has already been evaluated".into()))
}

/// Result of one gradient-explore step that produced an unseen graph.
#[derive(Clone, Debug)]
pub struct Exploration {
    pub graph: CellGraph,
    pub key: String,
    pub latent: GraphLatent,
    pub fused: FusedRep,
    pub stats: PosteriorStats,
    /// Standardized posterior mean before and after the ascent.
    pub mu_before: f64,
    pub mu_after: f64,
}

fn posterior_at(ctx: &SearchContext<'_>, state: &GpState, z: &GraphLatent) -> Result<(FusedRep, PosteriorStats)> {
    let fused = ctx.model.fuse(&ctx.xd, z)?;
    let stats = state.posterior(&fused.0);
    Ok((fused, stats))
}

/// Ascends the posterior mean from the best support member's latent, with
/// step halving until the mean does not decrease.
pub fn ascend(
    state: &GpState,
    ctx: &SearchContext<'_>,
    start: &GraphLatent,
    config: &SearchConfig,
) -> Result<(GraphLatent, f64, f64)> {
    let fusion = ctx.model.fusion();
    let mut z = start.clone();
    let (_, s0) = posterior_at(ctx, state, &z)?;
    let mut mu = s0.mean;
    for _ in 0..config.grad_steps {
        let grad = grad_mu_wrt_graph_latent(state, &fusion, &ctx.model.params, &ctx.xd, &z)?;
        let mut step = config.eta;
        for _ in 0..=config.max_halvings {
            let trial = GraphLatent(z.0.iter().zip(&grad).map(|(x, g)| x + step * g).collect());
            let (_, s) = posterior_at(ctx, state, &trial)?;
            if s.mean >= mu {
                z = trial;
                mu = s.mean;
                break;
            }
            step *= 0.5;
        }
    }
    Ok((z, s0.mean, mu))
}

/// Gradient exploration around the incumbent. Returns `None` when the
/// resulting graph is already in the support set.
pub fn gradient_explore(
    state: &GpState,
    ctx: &SearchContext<'_>,
    support: &SupportSet,
    config: &SearchConfig,
    explorer: Explorer,
) -> Result<Option<Exploration>> {
    let incumbent = support
        .best()
        .ok_or_else(|| Error::InvalidArgument("gradient exploration needs a support set".into()))?;
    let (ascended, mu_before, mu_after) = ascend(state, ctx, &incumbent.latent, config)?;
    let (graph, key, latent) = match explorer {
        Explorer::Decoder => {
            let graph = ctx.model.decode(&ascended)?;
            let key = canonical_key(&graph)?;
            if support.contains(&key) {
                return Ok(None);
            }
            let latent = if config.reencode {
                ctx.model.encode_graph(&graph)?
            } else {
                ascended
            };
            (graph, key, latent)
        }
        Explorer::Nearest => {
            let nearest = (0..ctx.pool.len())
                .filter(|&i| !support.contains(&ctx.pool.keys[i]))
                .min_by(|&a, &b| {
                    ascended
                        .dist(&ctx.pool.latents[a])
                        .total_cmp(&ascended.dist(&ctx.pool.latents[b]))
                        .then_with(|| ctx.pool.keys[a].cmp(&ctx.pool.keys[b]))
                });
            let Some(i) = nearest else {
                return Ok(None);
            };
            (ctx.pool.graphs[i].clone(), ctx.pool.keys[i].clone(), ctx.pool.latents[i].clone())
        }
    };
    let (fused, stats) = posterior_at(ctx, state, &latent)?;
    Ok(Some(Exploration {
        graph,
        key,
        latent,
        fused,
        stats,
        mu_before,
        mu_after,
    }))
}

/// Outcome of one search run.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: SupportPair,
    pub support: SupportSet,
    pub trace: SearchTrace,
    /// Oracle calls made, as counted by the instrumented oracle.
    pub oracle_calls: usize,
}

fn finish(support: SupportSet, trace: SearchTrace, calls: usize) -> Result<SearchOutcome> {
    let best = support
        .best()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("search made no evaluations".into()))?;
    Ok(SearchOutcome {
        best,
        support,
        trace,
        oracle_calls: calls,
    })
}

/// Initial support from the meta table, then `T` iterations of EI
/// selection; after the warmup each iteration also refits the GP and
/// explores by latent gradient ascent.
pub fn run_meta_test(
    ctx: &SearchContext<'_>,
    meta: &MetaTable,
    config: &SearchConfig,
    oracle: &dyn Oracle,
) -> Result<SearchOutcome> {
    config.validate()?;
    let oracle = CountingOracle::new(oracle);
    let mut trace = SearchTrace::new();
    let mut support = init_support(ctx, meta, config.support, &oracle, &mut trace)?;
    let exhausted = |calls: usize| config.max_evals.is_some_and(|m| calls >= m);

    for t in 1..=config.iterations {
        if exhausted(oracle.calls()) {
            break;
        }
        let state = support.fit(&ctx.hypers)?;
        let pick = bo_select(&state, ctx, &support)?;
        let perf = oracle.evaluate(&ctx.pool.graphs[pick.index])?;
        support.push(ctx.pair(pick.index, perf, Source::Bo))?;
        trace.push(
            t,
            Source::Bo,
            ctx.pool.keys[pick.index].clone(),
            Some(pick.stats.destandardized_mean()),
            Some(pick.stats.destandardized_std()),
            perf,
        );

        let Some(explorer) = config.explorer else {
            continue;
        };
        if t <= config.warmup || exhausted(oracle.calls()) {
            continue;
        }
        let state = support.fit(&ctx.hypers)?;
        let Some(found) = gradient_explore(&state, ctx, &support, config, explorer)? else {
            continue;
        };
        if !oracle.covers(&found.graph) {
            log::debug!("skipping unevaluable decoded graph {}", found.key);
            continue;
        }
        let perf = oracle.evaluate(&found.graph)?;
        trace.push(
            t,
            Source::Grad,
            found.key.clone(),
            Some(found.stats.destandardized_mean()),
            Some(found.stats.destandardized_std()),
            perf,
        );
        support.push(SupportPair {
            graph: found.graph,
            key: found.key,
            latent: found.latent,
            fused: found.fused,
            performance: perf,
            source: Source::Grad,
        })?;
    }
    let calls = oracle.calls();
    finish(support, trace, calls)
}

/// Uniform sampling without replacement from the pool.
pub fn random_search(ctx: &SearchContext<'_>, budget: usize, seed: u64, oracle: &dyn Oracle) -> Result<SearchOutcome> {
    if budget == 0 || budget > ctx.pool.len() {
        return Err(Error::InvalidArgument(format!(
            "random-search budget {budget} must be in 1..={}",
            ctx.pool.len()
        )));
    }
    let oracle = CountingOracle::new(oracle);
    let mut rng = seed::rng(seed, "random-search");
    let mut trace = SearchTrace::new();
    let mut support = SupportSet::new();
    for (t, i) in index::sample(&mut rng, ctx.pool.len(), budget).into_iter().enumerate() {
        let perf = oracle.evaluate(&ctx.pool.graphs[i])?;
        support.push(ctx.pair(i, perf, Source::Random))?;
        trace.push(t + 1, Source::Random, ctx.pool.keys[i].clone(), None, None, perf);
    }
    let calls = oracle.calls();
    finish(support, trace, calls)
}

/// Removes the `k` best candidates under `oracle` and reports the best
/// remaining performance. The pruned list keeps the input order.
pub fn prune_space(candidates: &[CellGraph], oracle: &dyn Oracle, k: usize) -> Result<(Vec<CellGraph>, f64)> {
    if k >= candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot prune {k} of {} candidates",
            candidates.len()
        )));
    }
    let scored: Vec<(f64, String)> = candidates
        .par_iter()
        .map(|g| Ok((oracle.evaluate(g)?, canonical_key(g)?)))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .0
            .total_cmp(&scored[a].0)
            .then_with(|| scored[a].1.cmp(&scored[b].1))
    });
    let removed: BTreeSet<usize> = order[..k].iter().copied().collect();
    let remaining_best = scored[order[k]].0;
    let pruned = (0..candidates.len())
        .filter(|i| !removed.contains(i))
        .map(|i| candidates[i].clone())
        .collect();
    Ok((pruned, remaining_best))
}

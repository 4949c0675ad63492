//! Seeded multi-task benchmark. Each task pairs Gaussian class clusters
//! (input to the dataset encoder) with a hidden preference vector over
//! graph descriptors; performance is a sigmoid of their inner product.
//!
//! Tasks share a mixing matrix that maps a low-dimensional task factor to
//! both the preference vector and the class-cluster centres, so a dataset
//! encoder can in principle recover a task's preferences from its data.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dag::{CellGraph, OpKind};
use crate::error::{Error, Result};
use crate::seed;
use crate::set_encoder::TaskSpec;

pub const DESCRIPTOR_LEN: usize = 8;
pub const TASK_FACTORS: usize = 4;
pub const FEATURE_DIM: usize = 8;
pub const CLASSES: usize = 5;
pub const INSTANCES_PER_CLASS: usize = 20;

/// Shared preference offsets: `[none, skip, conv1x1, conv3x3, pool, depth, skip-ratio, edges]`.
const BASE_THETA: [f64; DESCRIPTOR_LEN] = [-2.0, 0.0, 1.0, 2.0, 0.0, 1.5, -0.5, 0.5];
const THETA_SPREAD: f64 = 1.5;
const CLASS_JITTER: f64 = 0.5;
const INSTANCE_NOISE: f64 = 0.3;
/// Normalizers for the depth and edge-count descriptors (their cell maxima).
const DEPTH_SCALE: f64 = 3.0;
const EDGE_SCALE: f64 = 10.0;
const OP_SCALE: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub theta: [f64; DESCRIPTOR_LEN],
    pub bias: f64,
    /// Standard deviation of the optional observation noise.
    pub noise: f64,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("positive standard deviation")
}

fn matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let n = normal(1.0);
    (0..rows)
        .map(|_| (0..cols).map(|_| n.sample(rng)).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Deterministic task family. Tasks differ through their latent factors.
pub fn gen_tasks(seed: u64, n_tasks: usize) -> Result<Vec<SyntheticTask>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("n_tasks must be at least 1".into()));
    }
    let mut shared = seed::rng(seed, "bench-shared");
    let theta_mix = matrix(&mut shared, DESCRIPTOR_LEN, TASK_FACTORS);
    let feature_mix = matrix(&mut shared, FEATURE_DIM, TASK_FACTORS);
    let unit = normal(1.0);
    let jitter = normal(CLASS_JITTER);
    let noise = normal(INSTANCE_NOISE);

    (0..n_tasks)
        .map(|i| {
            let mut rng = seed::rng_indexed(seed, "bench-task", i as u64);
            let factors: Vec<f64> = (0..TASK_FACTORS).map(|_| unit.sample(&mut rng)).collect();
            let shift = mat_vec(&theta_mix, &factors);
            let mut theta = BASE_THETA;
            for (t, s) in theta.iter_mut().zip(&shift) {
                *t += THETA_SPREAD * s / (TASK_FACTORS as f64).sqrt();
            }
            let centre = mat_vec(&feature_mix, &factors);
            let classes = (0..CLASSES)
                .map(|_| {
                    let c: Vec<f64> = centre.iter().map(|m| m + jitter.sample(&mut rng)).collect();
                    (0..INSTANCES_PER_CLASS)
                        .map(|_| c.iter().map(|m| m + noise.sample(&mut rng)).collect())
                        .collect()
                })
                .collect();
            Ok(SyntheticTask {
                spec: TaskSpec::new(format!("synthetic-{i:03}"), classes)?,
                theta,
                bias: -1.0,
                noise: 0.0,
            })
        })
        .collect()
}

/// `[op histogram (5), depth, skip ratio, edge count]`, each scaled to
/// roughly unit range. Depth and edge count only follow nodes that carry
/// signal: `none` nodes cut every path through them.
pub fn descriptor(g: &CellGraph) -> [f64; DESCRIPTOR_LEN] {
    let mut d = [0.0; DESCRIPTOR_LEN];
    let mut ops = 0usize;
    for &op in g.nodes() {
        if op.is_searchable() {
            d[op.index()] += 1.0;
            ops += 1;
        }
    }
    let skips = d[OpKind::Skip.index()];
    for slot in d.iter_mut().take(OpKind::SEARCHABLE.len()) {
        *slot /= OP_SCALE;
    }
    d[5] = live_depth(g) as f64 / DEPTH_SCALE;
    d[6] = if ops == 0 { 0.0 } else { skips / ops as f64 };
    let live = |v: usize| g.nodes()[v] != OpKind::Zeroize;
    d[7] = g.edges().iter().filter(|&&(s, t)| live(s) && live(t)).count() as f64 / EDGE_SCALE;
    d
}

/// Largest number of operation nodes on an input-to-output path that avoids
/// `none` nodes; zero when no such path exists.
fn live_depth(g: &CellGraph) -> usize {
    let Ok(order) = crate::dag::topological_order(g) else {
        return 0;
    };
    let mut best: Vec<Option<usize>> = vec![None; g.len()];
    for v in order {
        let op = g.nodes()[v];
        if op == OpKind::Zeroize {
            continue;
        }
        let reach = if op == OpKind::Input {
            Some(0)
        } else {
            g.predecessors(v).filter_map(|u| best[u]).max()
        };
        best[v] = reach.map(|r| r + usize::from(op.is_searchable()));
    }
    g.output_index().and_then(|o| best[o]).unwrap_or(0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SyntheticTask {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn score(&self, g: &CellGraph) -> f64 {
        let d = descriptor(g);
        self.theta.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    /// Noise-free performance in `[0, 1]`.
    pub fn true_perf(&self, g: &CellGraph) -> f64 {
        sigmoid(self.score(g))
    }

    /// Performance with seeded Gaussian observation noise, clamped to `[0, 1]`.
    pub fn noisy_perf(&self, g: &CellGraph, noise_seed: u64) -> Result<f64> {
        let clean = self.true_perf(g);
        if self.noise == 0.0 {
            return Ok(clean);
        }
        let key = crate::dag::canonical_key(g)?;
        let mut rng = seed::rng(noise_seed, &key);
        Ok((clean + normal(self.noise).sample(&mut rng)).clamp(0.0, 1.0))
    }
}

pub fn true_perf(g: &CellGraph, task: &SyntheticTask) -> f64 {
    task.true_perf(g)
}

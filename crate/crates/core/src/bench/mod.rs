//! Performance ground truth: the seeded synthetic benchmark and tabular
//! benchmark files.

pub mod oracle;
pub mod synthetic;
pub mod tabular;

use rand::seq::index;

pub use oracle::{parse_observation, CountingOracle, MetaTable, Oracle, TabularOracle};
pub use synthetic::{descriptor, gen_tasks, true_perf, SyntheticTask};
pub use tabular::{load_tabular, PerfTable};

use crate::dag::CellGraph;
use crate::seed;
use crate::surrogate::MetaDataset;

/// Samples `per_task` distinct cells per task and records their noise-free
/// performance.
pub fn sample_meta_dataset(
    tasks: &[SyntheticTask],
    space: &[CellGraph],
    per_task: usize,
    root_seed: u64,
) -> MetaDataset {
    let per_task = per_task.min(space.len());
    let observations = tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = seed::rng_indexed(root_seed, "meta-dataset", i as u64);
            let mut picks = index::sample(&mut rng, space.len(), per_task).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|p| (space[p].clone(), task.true_perf(&space[p])))
                .collect()
        })
        .collect();
    MetaDataset {
        tasks: tasks.iter().map(|t| t.spec.clone()).collect(),
        observations,
    }
}

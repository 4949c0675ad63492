//! Dataset encoder: two stacked set-attention modules. The first pools the
//! sampled instances of each class into a prototype, the second pools the
//! prototypes into one dataset embedding.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::nn::{self, Activation};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

/// A classification task as a list of classes, each a list of feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub classes: Vec<Vec<Vec<f64>>>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, classes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let task = Self {
            id: id.into(),
            classes,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "task `{}` has {} classes; need at least 2",
                self.id,
                self.classes.len()
            )));
        }
        if let Some(c) = self.classes.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!(
                "class {c} of task `{}` is empty",
                self.id
            )));
        }
        let dim = self.dim();
        if dim == 0 || self.classes.iter().flatten().any(|x| x.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "task `{}` has non-uniform feature width",
                self.id
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.classes
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "task {} classes={} dim={}\n",
            self.id,
            self.classes.len(),
            self.dim()
        );
        for (c, class) in self.classes.iter().enumerate() {
            for x in class {
                let _ = write!(out, "{c}");
                for v in x {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty task file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let field = |key: &str| -> Result<usize> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key))
                .ok_or_else(|| Error::Parse(format!("task header lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::Parse(format!("bad `{key}` in task header")))
        };
        if fields.first() != Some(&"task") || fields.len() != 4 {
            return Err(Error::Parse(format!("malformed task header `{header}`")));
        }
        let id = fields[1].to_owned();
        let n_classes = field("classes=")?;
        let dim = field("dim=")?;
        let mut classes = vec![Vec::new(); n_classes];
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let bad = || Error::Parse(format!("line {}: malformed instance", lineno + 1));
            let c: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let x = parts
                .map(|p| p.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            if c >= n_classes || x.len() != dim {
                return Err(bad());
            }
            classes[c].push(x);
        }
        TaskSpec::new(id, classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Dataset embedding `x^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEmbedding(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEncoderConfig {
    pub d_in: usize,
    pub width: usize,
    pub heads: usize,
    pub sab_blocks: usize,
}

impl Default for SetEncoderConfig {
    fn default() -> Self {
        Self {
            d_in: 8,
            width: 56,
            heads: 4,
            sab_blocks: 2,
        }
    }
}

/// Parameters live under the `set.` prefix.
#[derive(Clone, Copy, Debug)]
pub struct SetEncoder {
    pub config: SetEncoderConfig,
}

impl SetEncoder {
    pub const PREFIX: &'static str = "set.";

    pub fn new(config: SetEncoderConfig) -> Self {
        Self { config }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let c = self.config;
        nn::init_linear(store, "set.in", c.d_in, c.width)?;
        for module in ["set.m1", "set.m2"] {
            for b in 0..c.sab_blocks {
                init_sab(store, &format!("{module}.sab{b}"), c.width, c.heads)?;
            }
            init_pma(store, &format!("{module}.pma"), c.width, c.heads)?;
        }
        Ok(())
    }

    /// Records the full two-level encoding of `task` and returns the `1 x width` embedding.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        task: &TaskSpec,
        samples_per_class: usize,
        seed: u64,
    ) -> Result<Var> {
        if samples_per_class == 0 {
            return Err(Error::InvalidArgument("samples_per_class must be at least 1".into()));
        }
        task.validate()?;
        if task.dim() != self.config.d_in {
            return Err(Error::Shape(format!(
                "task width {} but encoder expects {}",
                task.dim(),
                self.config.d_in
            )));
        }
        let mut prototypes = Vec::with_capacity(task.classes.len());
        for (c, class) in task.classes.iter().enumerate() {
            let picks = sample_instances(class.len(), samples_per_class, seed, c);
            let rows: Vec<Vec<f64>> = picks.iter().map(|&i| class[i].clone()).collect();
            let x = tape.constant(Tensor::from_rows(&rows)?);
            let h = nn::linear(tape, store, "set.in", x)?;
            prototypes.push(self.module(tape, store, "set.m1", h)?);
        }
        let protos = tape.concat_rows(&prototypes)?;
        self.module(tape, store, "set.m2", protos)
    }

    fn module(&self, tape: &mut Tape, store: &ParamStore, prefix: &str, mut y: Var) -> Result<Var> {
        for b in 0..self.config.sab_blocks {
            y = sab(tape, store, &format!("{prefix}.sab{b}"), y, self.config.heads)?;
        }
        pma(tape, store, &format!("{prefix}.pma"), y, self.config.heads)
    }

    /// Forward-only dataset embedding.
    pub fn embed(
        &self,
        store: &ParamStore,
        task: &TaskSpec,
        samples_per_class: usize,
        seed: u64,
    ) -> Result<DatasetEmbedding> {
        let mut tape = Tape::new();
        let out = self.encode_on_tape(&mut tape, store, task, samples_per_class, seed)?;
        Ok(DatasetEmbedding(tape.value(out).data().to_vec()))
    }
}

/// Instance indices for one class. A class of exactly `k` instances is used
/// whole and in order; larger classes are subsampled without replacement,
/// smaller ones with replacement.
fn sample_instances(n: usize, k: usize, seed: u64, class: usize) -> Vec<usize> {
    if n == k {
        return (0..n).collect();
    }
    let mut rng = seed::rng_indexed(seed, "class-sample", class as u64);
    if n > k {
        index::sample(&mut rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

pub fn init_sab(store: &mut ParamStore, prefix: &str, width: usize, heads: usize) -> Result<()> {
    nn::init_multihead(store, &format!("{prefix}.mh"), width, heads)?;
    nn::init_layer_norm(store, &format!("{prefix}.ln1"), width)?;
    nn::init_mlp2(store, &format!("{prefix}.ff"), width, width, width)?;
    nn::init_layer_norm(store, &format!("{prefix}.ln2"), width)
}

/// Set attention block: `LN(H + MLP(H))` with `H = LN(Y + MH(Y, Y, Y))`.
pub fn sab(tape: &mut Tape, store: &ParamStore, prefix: &str, y: Var, heads: usize) -> Result<Var> {
    check_width(tape, store, prefix, y)?;
    let att = nn::multihead(tape, store, &format!("{prefix}.mh"), y, y, heads)?;
    let h = tape.add(y, att)?;
    let h = nn::layer_norm(tape, store, &format!("{prefix}.ln1"), h)?;
    let ff = nn::mlp2(tape, store, &format!("{prefix}.ff"), h, Activation::Relu)?;
    let out = tape.add(h, ff)?;
    nn::layer_norm(tape, store, &format!("{prefix}.ln2"), out)
}

pub fn init_pma(store: &mut ParamStore, prefix: &str, width: usize, heads: usize) -> Result<()> {
    store.add_glorot(&format!("{prefix}.seed"), 1, width)?;
    nn::init_mlp2(store, &format!("{prefix}.pre"), width, width, width)?;
    init_sab(store, prefix, width, heads)
}

/// Pooling by attention with one learned seed vector:
/// `LN(H + MLP(H))` with `H = LN(R + MH(R, MLP(Y), MLP(Y)))`.
pub fn pma(tape: &mut Tape, store: &ParamStore, prefix: &str, y: Var, heads: usize) -> Result<Var> {
    check_width(tape, store, prefix, y)?;
    let seed_vec = tape.param(store, &format!("{prefix}.seed"))?;
    let kv = nn::mlp2(tape, store, &format!("{prefix}.pre"), y, Activation::Relu)?;
    let att = nn::multihead(tape, store, &format!("{prefix}.mh"), seed_vec, kv, heads)?;
    let h = tape.add(seed_vec, att)?;
    let h = nn::layer_norm(tape, store, &format!("{prefix}.ln1"), h)?;
    let ff = nn::mlp2(tape, store, &format!("{prefix}.ff"), h, Activation::Relu)?;
    let out = tape.add(h, ff)?;
    nn::layer_norm(tape, store, &format!("{prefix}.ln2"), out)
}

fn check_width(tape: &Tape, store: &ParamStore, prefix: &str, y: Var) -> Result<()> {
    let expected = store.get(&format!("{prefix}.ln1.gain"))?.cols();
    let (rows, cols) = tape.value(y).shape();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty set".into()));
    }
    if cols != expected {
        return Err(Error::Shape(format!(
            "set width {cols} but block `{prefix}` expects {expected}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_store(width: usize) -> ParamStore {
        let mut store = ParamStore::new(3);
        init_sab(&mut store, "b", width, 4).unwrap();
        init_pma(&mut store, "p", width, 4).unwrap();
        store
    }

    fn random_set(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    fn run(store: &ParamStore, y: &Tensor, pool: bool) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(y.clone());
        let out = if pool {
            pma(&mut tape, store, "p", v, 4).unwrap()
        } else {
            sab(&mut tape, store, "b", v, 4).unwrap()
        };
        tape.value(out).clone()
    }

    fn permute_rows(t: &Tensor, order: &[usize]) -> Tensor {
        let rows: Vec<Vec<f64>> = order.iter().map(|&r| t.row_slice(r).to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn sab_is_row_equivariant() {
        let store = block_store(8);
        let y = random_set(5, 8, 1);
        let order = [3, 0, 4, 1, 2];
        let out = run(&store, &y, false);
        let out_perm = run(&store, &permute_rows(&y, &order), false);
        let expected = permute_rows(&out, &order);
        let dev = out_perm
            .data()
            .iter()
            .zip(expected.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn sab_single_row_is_reproducible() {
        let store = block_store(8);
        let y = random_set(1, 8, 2);
        assert_eq!(run(&store, &y, false), run(&store, &y, false));
        assert_eq!(run(&store, &y, false).shape(), (1, 8));
    }

    #[test]
    fn pma_is_invariant_to_order_and_duplication() {
        let store = block_store(8);
        let y = random_set(6, 8, 3);
        let base = run(&store, &y, true);
        assert_eq!(base.shape(), (1, 8));
        let permuted = run(&store, &permute_rows(&y, &[5, 2, 0, 4, 1, 3]), true);
        let doubled = run(&store, &permute_rows(&y, &[0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]), true);
        for other in [permuted, doubled] {
            for (a, b) in base.data().iter().zip(other.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let store = block_store(8);
        let mut tape = Tape::new();
        let v = tape.constant(random_set(3, 6, 4));
        assert!(matches!(sab(&mut tape, &store, "b", v, 4), Err(Error::Shape(_))));
        assert!(matches!(pma(&mut tape, &store, "p", v, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn task_file_round_trip_and_errors() {
        let task = TaskSpec::new(
            "toy",
            vec![vec![vec![0.5, -1.0], vec![1.25, 2.0]], vec![vec![3.0, 4.0]]],
        )
        .unwrap();
        assert_eq!(TaskSpec::parse(&task.to_text()).unwrap(), task);
        assert!(TaskSpec::parse("task t classes=2 dim=2\n0 1.0\n").is_err());
        assert!(TaskSpec::new("one", vec![vec![vec![1.0]]]).is_err());
        assert!(TaskSpec::new("empty", vec![vec![vec![1.0]], vec![]]).is_err());
    }

    #[test]
    fn sampling_modes() {
        assert_eq!(sample_instances(4, 4, 0, 0), vec![0, 1, 2, 3]);
        let sub = sample_instances(10, 4, 0, 0);
        assert_eq!(sub.len(), 4);
        let mut dedup = sub.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
        let over = sample_instances(2, 5, 0, 0);
        assert_eq!(over.len(), 5);
        assert!(over.iter().all(|&i| i < 2));
    }
}

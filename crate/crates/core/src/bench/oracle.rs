//! Performance oracles queried by the search loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::synthetic::SyntheticTask;
use super::tabular::PerfTable;
use crate::dag::{canonical_key, CellGraph, EdgeSpec};
use crate::error::{Error, Result};

/// Ground-truth performance in `[0, 1]`.
pub trait Oracle: Send + Sync {
    fn evaluate(&self, g: &CellGraph) -> Result<f64>;

    /// Whether `evaluate` can answer for `g` at all.
    fn covers(&self, _g: &CellGraph) -> bool {
        true
    }
}

impl Oracle for SyntheticTask {
    fn evaluate(&self, g: &CellGraph) -> Result<f64> {
        g.validate()?;
        Ok(self.true_perf(g))
    }
}

/// One dataset column of a [`PerfTable`], rescaled from percent.
#[derive(Clone, Copy, Debug)]
pub struct TabularOracle<'a> {
    pub table: &'a PerfTable,
    pub dataset: &'a str,
}

impl Oracle for TabularOracle<'_> {
    fn evaluate(&self, g: &CellGraph) -> Result<f64> {
        self.table
            .get(g, self.dataset)
            .map(|acc| acc / 100.0)
            .ok_or_else(|| Error::Unevaluable(EdgeSpec::notation(g)))
    }

    fn covers(&self, g: &CellGraph) -> bool {
        self.table.get(g, self.dataset).is_some()
    }
}

/// Counts every `evaluate` call made through it.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    calls: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Oracle for CountingOracle<'_> {
    fn evaluate(&self, g: &CellGraph) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(g)
    }

    fn covers(&self, g: &CellGraph) -> bool {
        self.inner.covers(g)
    }
}

/// Mean meta-training performance per cell, keyed by canonical key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetaTable {
    entries: BTreeMap<String, (CellGraph, f64)>,
}

impl MetaTable {
    /// Averages each candidate's performance over the given tasks.
    pub fn from_tasks(candidates: &[CellGraph], tasks: &[SyntheticTask]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("meta table needs at least one task".into()));
        }
        let rows: Vec<(String, (CellGraph, f64))> = candidates
            .par_iter()
            .map(|g| {
                let mean = tasks.iter().map(|t| t.true_perf(g)).sum::<f64>() / tasks.len() as f64;
                Ok((canonical_key(g)?, (g.clone(), mean)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            entries: rows.into_iter().collect(),
        })
    }

    pub fn insert(&mut self, g: &CellGraph, mean: f64) -> Result<()> {
        self.entries.insert(canonical_key(g)?, (g.clone(), mean));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.entries.get(key).map(|(_, m)| *m)
    }

    /// Lines `<cell-notation>,<mean-meta-performance>`.
    pub fn to_text(&self) -> String {
        self.entries
            .values()
            .map(|(g, m)| format!("{},{m}\n", EdgeSpec::notation(g)))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", i + 1));
            let (cell, mean) = line.rsplit_once(',').ok_or_else(|| bad("expected 2 fields"))?;
            let g = CellGraph::parse(cell).map_err(|e| bad(&e.to_string()))?;
            let mean = mean.trim().parse().map_err(|_| bad("bad mean"))?;
            table.insert(&g, mean)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses one `<task-id>,<cell-notation>,<performance>` line.
pub fn parse_observation(line: &str) -> Result<(String, CellGraph, f64)> {
    let (task, rest) = line
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("malformed observation `{line}`")))?;
    let (cell, perf) = rest
        .rsplit_once(',')
        .ok_or_else(|| Error::Parse(format!("malformed observation `{line}`")))?;
    let perf = perf
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad performance in `{line}`")))?;
    Ok((task.trim().to_owned(), CellGraph::parse(cell)?, perf))
}

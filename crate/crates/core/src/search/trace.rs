//! Per-evaluation search records and their CSV form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which arm of the search produced an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Init,
    Bo,
    Grad,
    Random,
}

impl Source {
    pub fn tag(self) -> &'static str {
        match self {
            Source::Init => "init",
            Source::Bo => "bo",
            Source::Grad => "grad",
            Source::Random => "random",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Source::Init, Source::Bo, Source::Grad, Source::Random]
            .into_iter()
            .find(|src| src.tag() == s)
            .ok_or_else(|| Error::Parse(format!("unknown source `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub source: Source,
    pub key: String,
    /// Predicted mean and standard deviation in performance units, when a
    /// surrogate made the choice.
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub observed: f64,
    pub best_so_far: f64,
    pub evals: usize,
}

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "source",
    "key",
    "mu",
    "sigma",
    "observed",
    "best_so_far",
    "evals",
];

/// One row per oracle evaluation, with `# name=value` metadata lines on top.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    pub metadata: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SearchTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, name: &str, value: impl ToString) {
        let value = value.to_string();
        match self.metadata.iter_mut().find(|(k, _)| k == name) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((name.to_owned(), value)),
        }
    }

    pub fn meta(&self, name: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Appends an evaluation, deriving `best_so_far` and `evals`.
    pub fn push(&mut self, iter: usize, source: Source, key: String, mu: Option<f64>, sigma: Option<f64>, observed: f64) {
        let best_so_far = self.best().map_or(observed, |b| b.max(observed));
        self.records.push(TraceRecord {
            iter,
            source,
            key,
            mu,
            sigma,
            observed,
            best_so_far,
            evals: self.records.len() + 1,
        });
    }

    pub fn best(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }

    pub fn evals(&self) -> usize {
        self.records.len()
    }

    /// Best-so-far after each evaluation.
    pub fn curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.source.to_string(),
                r.key.clone(),
                opt(r.mu),
                opt(r.sigma),
                r.observed.to_string(),
                r.best_so_far.to_string(),
                r.evals.to_string(),
            ])?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut trace = Self::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad metadata line `{line}`")))?;
                trace.metadata.push((k.to_owned(), v.to_owned()));
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != TRACE_HEADER {
            return Err(Error::Parse(format!(
                "trace header `{}` differs from `{}`",
                header.join(","),
                TRACE_HEADER.join(",")
            )));
        }
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let bad = |field: &str| Error::Parse(format!("trace row {}: bad {field}", i + 1));
            let num = |j: usize, name: &str| -> Result<f64> { row[j].parse().map_err(|_| bad(name)) };
            let opt_num = |j: usize, name: &str| -> Result<Option<f64>> {
                if row[j].is_empty() {
                    Ok(None)
                } else {
                    num(j, name).map(Some)
                }
            };
            trace.records.push(TraceRecord {
                iter: row[0].parse().map_err(|_| bad("iter"))?,
                source: row[1].parse()?,
                key: row[2].to_owned(),
                mu: opt_num(3, "mu")?,
                sigma: opt_num(4, "sigma")?,
                observed: num(5, "observed")?,
                best_so_far: num(6, "best_so_far")?,
                evals: row[7].parse().map_err(|_| bad("evals"))?,
            });
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

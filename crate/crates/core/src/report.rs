//! Aggregation of search traces into per-method summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::median;
use crate::search::SearchTrace;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaStats {
    pub mean: f64,
    pub positive_runs: usize,
    pub nonnegative_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub final_best_mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub final_best_std: f64,
    /// Median best-so-far after each evaluation. Shorter traces hold their last value.
    pub median_curve: Vec<f64>,
    /// Evaluations of graphs outside the enumerated space.
    pub novel_evals: usize,
    /// Best found minus the remaining best, for pruned-space runs.
    pub delta: Option<DeltaStats>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median_curve(traces: &[&SearchTrace]) -> Vec<f64> {
    let len = traces.iter().map(|t| t.evals()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let column: Vec<f64> = traces
                .iter()
                .filter(|t| t.evals() > 0)
                .map(|t| t.records[k.min(t.evals() - 1)].best_so_far)
                .collect();
            median(&column)
        })
        .collect()
}

/// Groups traces by their `method` metadata (`unknown` when absent).
pub fn summarize(traces: &[SearchTrace], space_keys: &BTreeSet<String>) -> Result<Vec<MethodSummary>> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to report".into()));
    }
    let mut groups: BTreeMap<String, Vec<&SearchTrace>> = BTreeMap::new();
    for t in traces {
        if t.records.is_empty() {
            return Err(Error::InvalidArgument("trace without evaluations".into()));
        }
        groups
            .entry(t.meta("method").unwrap_or("unknown").to_owned())
            .or_default()
            .push(t);
    }
    groups
        .into_iter()
        .map(|(method, group)| {
            let finals: Vec<f64> = group.iter().map(|t| t.best().expect("nonempty")).collect();
            let (final_best_mean, final_best_std) = mean_std(&finals);
            let novel_evals = group
                .iter()
                .flat_map(|t| &t.records)
                .filter(|r| !space_keys.contains(&r.key))
                .count();
            let with_rb = group.iter().filter(|t| t.meta("remaining_best").is_some()).count();
            let delta = if with_rb == 0 {
                None
            } else if with_rb != group.len() {
                return Err(Error::InvalidArgument(format!(
                    "method {method} mixes pruned and unpruned traces"
                )));
            } else {
                let deltas = group
                    .iter()
                    .map(|t| {
                        let rb: f64 = t.meta("remaining_best").expect("checked").parse().map_err(|_| {
                            Error::Parse("remaining_best is not a number".into())
                        })?;
                        Ok(t.best().expect("nonempty") - rb)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Some(DeltaStats {
                    mean: deltas.iter().sum::<f64>() / deltas.len() as f64,
                    positive_runs: deltas.iter().filter(|d| **d > 0.0).count(),
                    nonnegative_runs: deltas.iter().filter(|d| **d >= 0.0).count(),
                })
            };
            Ok(MethodSummary {
                median_curve: median_curve(&group),
                method,
                runs: group.len(),
                final_best_mean,
                final_best_std,
                novel_evals,
                delta,
            })
        })
        .collect()
}

/// `method,runs,final_best_mean,final_best_std,novel_evals,delta_mean,delta_positive_runs`
pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("method,runs,final_best_mean,final_best_std,novel_evals,delta_mean,delta_positive_runs\n");
    for s in summaries {
        let (dm, dp) = match &s.delta {
            Some(d) => (d.mean.to_string(), d.positive_runs.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{dm},{dp}",
            s.method, s.runs, s.final_best_mean, s.final_best_std, s.novel_evals
        );
    }
    out
}

/// One row per evaluation count, one column per method.
pub fn curves_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("evals");
    for s in summaries {
        out.push(',');
        out.push_str(&s.method);
    }
    out.push('\n');
    let len = summaries.iter().map(|s| s.median_curve.len()).max().unwrap_or(0);
    for k in 0..len {
        let _ = write!(out, "{}", k + 1);
        for s in summaries {
            out.push(',');
            if let Some(v) = s.median_curve.get(k) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

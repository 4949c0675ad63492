//! Tabular benchmark files: `<cell-notation>,<dataset-id>,<accuracy-percent>`
//! per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dag::{canonical_key, CellGraph, EdgeSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub graph: CellGraph,
    pub perfs: BTreeMap<String, f64>,
}

/// Accuracies (percent) keyed by canonical cell key, then dataset id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerfTable {
    rows: BTreeMap<String, TableRow>,
}

/// Splits `<head>,<b>,<c>` at the last two commas, so the head (a cell
/// notation) may itself contain commas.
fn split_last_two(line: &str) -> Option<(&str, &str, &str)> {
    let (rest, c) = line.rsplit_once(',')?;
    let (a, b) = rest.rsplit_once(',')?;
    let (a, b, c) = (a.trim(), b.trim(), c.trim());
    (!a.is_empty() && !b.is_empty()).then_some((a, b, c))
}

impl PerfTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, g: &CellGraph, dataset: &str, accuracy: f64) -> Result<()> {
        if !(0.0..=100.0).contains(&accuracy) {
            return Err(Error::InvalidArgument(format!(
                "accuracy {accuracy} outside [0, 100]"
            )));
        }
        let key = canonical_key(g)?;
        let row = self.rows.entry(key.clone()).or_insert_with(|| TableRow {
            graph: g.clone(),
            perfs: BTreeMap::new(),
        });
        if row.perfs.insert(dataset.to_owned(), accuracy).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate entry for {key} on {dataset}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, g: &CellGraph, dataset: &str) -> Option<f64> {
        self.get_key(&canonical_key(g).ok()?, dataset)
    }

    pub fn get_key(&self, key: &str, dataset: &str) -> Option<f64> {
        self.rows.get(key)?.perfs.get(dataset).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &TableRow)> {
        self.rows.iter().map(|(k, r)| (k.as_str(), r))
    }

    pub fn datasets(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .rows
            .values()
            .flat_map(|r| r.perfs.keys().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Cells with an entry for `dataset`, in key order.
    pub fn cells(&self, dataset: &str) -> Vec<CellGraph> {
        self.rows
            .values()
            .filter(|r| r.perfs.contains_key(dataset))
            .map(|r| r.graph.clone())
            .collect()
    }

    /// Best accuracy on `dataset` and the key holding it.
    pub fn max(&self, dataset: &str) -> Option<(&str, f64)> {
        self.rows
            .iter()
            .filter_map(|(k, r)| r.perfs.get(dataset).map(|&p| (k.as_str(), p)))
            .fold(None, |best, (k, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((k, p)),
            })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::new();
        let mut problems = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let parsed = (|| -> Result<()> {
                let (cell, dataset, acc) = split_last_two(line).ok_or_else(|| {
                    Error::Parse(format!("expected 3 fields, found {}", line.split(',').count()))
                })?;
                let g = CellGraph::parse(cell)?;
                let acc: f64 = acc
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad accuracy `{acc}`")))?;
                table.insert(&g, dataset, acc)
            })();
            if let Err(e) = parsed {
                problems.push(format!("line {lineno}: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(table)
        } else {
            Err(Error::Parse(problems.join("; ")))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.rows.values() {
            for (dataset, acc) in &row.perfs {
                out.push_str(&format!("{},{dataset},{acc}\n", EdgeSpec::notation(&row.graph)));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn load_tabular(path: &Path) -> Result<PerfTable> {
    PerfTable::parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
# three-line sample
|nor_conv_3x3|nor_conv_3x3|nor_conv_3x3|skip_connect|nor_conv_3x3|nor_conv_3x3|,cifar10,94.37
|nor_conv_3x3|nor_conv_3x3|nor_conv_3x3|nor_conv_3x3|nor_conv_3x3|nor_conv_3x3|,cifar10,94.0
|none|none|none|none|none|none|,cifar10,10.0
";

    #[test]
    fn sample_parses_with_expected_optimum() {
        let t = PerfTable::parse(FIXTURE).unwrap();
        assert_eq!(t.max("cifar10").unwrap().1, 94.37);
    }

    #[test]
    fn write_then_read_is_identity() {
        let t = PerfTable::parse(FIXTURE).unwrap();
        assert_eq!(PerfTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn two_field_line_names_its_line() {
        let err = PerfTable::parse("# c\n|none|none|none|none|none|none|,93.1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn general_notation_rows_parse() {
        let line = "nodes=[input,skip_connect,output];edges=[(0,1),(1,2)],toy,50\n";
        let t = PerfTable::parse(line).unwrap();
        let g = CellGraph::parse("nodes=[input,skip_connect,output];edges=[(0,1),(1,2)]").unwrap();
        assert_eq!(t.get(&g, "toy"), Some(50.0));
    }

    #[test]
    fn duplicates_and_range_are_checked() {
        let dup = format!("{}{}", FIXTURE, FIXTURE.lines().nth(1).unwrap());
        assert!(PerfTable::parse(&dup).is_err());
        assert!(PerfTable::parse("|none|none|none|none|none|none|,c,101\n").is_err());
    }
}

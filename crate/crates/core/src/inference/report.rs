use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// `src-tgt`.
    pub pair: String,
    pub metric: String,
    pub value: f64,
    pub sentences: usize,
}

/// Per-pair scores plus the decode settings that produced them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub settings: BTreeMap<String, String>,
}

impl EvalReport {
    /// Arithmetic mean of each metric, in first-appearance order.
    pub fn means(&self) -> Vec<(String, f64)> {
        let mut order: Vec<String> = Vec::new();
        let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(&r.metric).or_insert_with(|| {
                order.push(r.metric.clone());
                (0.0, 0)
            });
            e.0 += r.value;
            e.1 += 1;
        }
        order
            .into_iter()
            .map(|m| {
                let (s, n) = acc[m.as_str()];
                (m, s / n as f64)
            })
            .collect()
    }

    /// TSV with `#key=value` setting lines, a header, one row per pair and
    /// metric, then a `Mean` row per metric.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::contract("evaluation report has no results"));
        }
        for (k, v) in &self.settings {
            writeln!(out, "#{k}={v}")?;
        }
        writeln!(out, "pair\tmetric\tvalue\tsentences")?;
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{:.6}\t{}", r.pair, r.metric, r.value, r.sentences)?;
        }
        for (metric, mean) in self.means() {
            let n: usize = self
                .rows
                .iter()
                .filter(|r| r.metric == metric)
                .map(|r| r.sentences)
                .sum();
            writeln!(out, "Mean\t{metric}\t{mean:.6}\t{n}")?;
        }
        Ok(())
    }
}

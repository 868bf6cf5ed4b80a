//! Faithfulness rankings and Kendall rank correlation between them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Kendall's tau-b between two paired score lists.
///
/// `tau_b = (C − D) / sqrt((P − T_a)(P − T_b))` with `P = n(n−1)/2`, `C`/`D`
/// the concordant and discordant pairs and `T_a`/`T_b` the pairs tied in
/// each list. Without ties this is tau-a.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewItems(n));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::UndefinedCorrelation("NaN score"));
    }
    let (mut concordant, mut discordant, mut tied_a, mut tied_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).unwrap_or(Ordering::Equal);
            let db = b[i].partial_cmp(&b[j]).unwrap_or(Ordering::Equal);
            match (da, db) {
                (Ordering::Equal, Ordering::Equal) => {
                    tied_a += 1;
                    tied_b += 1;
                }
                (Ordering::Equal, _) => tied_a += 1,
                (_, Ordering::Equal) => tied_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = ((pairs - tied_a) as f64 * (pairs - tied_b) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("one ranking is entirely tied"));
    }
    Ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Comp,
    Suff,
    NComp,
    NSuff,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Comp, Metric::Suff, Metric::NComp, Metric::NSuff];

    /// Comprehensiveness-family metrics rank descending, sufficiency ascending.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Comp | Metric::NComp)
    }

    /// The normalized counterpart of a raw metric.
    pub fn normalized(self) -> Metric {
        match self {
            Metric::Comp | Metric::NComp => Metric::NComp,
            Metric::Suff | Metric::NSuff => Metric::NSuff,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Comp => "comp",
            Metric::Suff => "suff",
            Metric::NComp => "ncomp",
            Metric::NSuff => "nsuff",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

/// What the subjects of a ranking table are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    ByModel,
    ByAttributionMethod,
}

/// One score per (subject, metric).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingTable {
    pub grouping: Grouping,
    cells: BTreeMap<(String, Metric), f64>,
}

impl RankingTable {
    pub fn new(grouping: Grouping) -> Self {
        Self {
            grouping,
            cells: BTreeMap::new(),
        }
    }

    /// Sets a cell, returning the previous score if there was one.
    pub fn insert(&mut self, subject: impl Into<String>, metric: Metric, score: f64) -> Option<f64> {
        self.cells.insert((subject.into(), metric), score)
    }

    pub fn get(&self, subject: &str, metric: Metric) -> Option<f64> {
        self.cells.get(&(subject.to_string(), metric)).copied()
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(s, _)| s.as_str()).collect()
    }

    pub fn metrics(&self) -> BTreeSet<Metric> {
        self.cells.keys().map(|(_, m)| *m).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, Metric, f64)> {
        self.cells.iter().map(|((s, m), v)| (s.as_str(), *m, *v))
    }

    /// Cells missing for any (subject, metric) combination present in the table.
    pub fn missing_cells(&self) -> Vec<(String, Metric)> {
        let metrics = self.metrics();
        self.subjects()
            .into_iter()
            .flat_map(|s| metrics.iter().map(move |&m| (s, m)))
            .filter(|(s, m)| self.get(s, *m).is_none())
            .map(|(s, m)| (s.to_string(), m))
            .collect()
    }

    /// Scores of every subject for one metric, in subject-id order.
    pub fn column(&self, metric: Metric) -> Vec<(&str, f64)> {
        self.cells
            .iter()
            .filter(|((_, m), _)| *m == metric)
            .map(|((s, _), v)| (s.as_str(), *v))
            .collect()
    }
}

/// Best-first subject lists, one per metric in the table.
///
/// Equal scores are ordered by subject id.
pub fn build_rankings(table: &RankingTable) -> Result<BTreeMap<Metric, Vec<String>>> {
    let missing = table.missing_cells();
    if !missing.is_empty() {
        return Err(Error::MissingCell(missing));
    }
    Ok(table
        .metrics()
        .into_iter()
        .map(|metric| {
            let mut column = table.column(metric);
            column.sort_by(|(sa, a), (sb, b)| {
                let by_score = if metric.higher_is_better() {
                    b.total_cmp(a)
                } else {
                    a.total_cmp(b)
                };
                by_score.then_with(|| sa.cmp(sb))
            });
            (metric, column.into_iter().map(|(s, _)| s.to_string()).collect())
        })
        .collect())
}

/// Kendall tau between a raw metric and its normalized counterpart across
/// the table's subjects.
pub fn raw_vs_normalized_tau(table: &RankingTable, raw: Metric) -> Result<f64> {
    let normalized = raw.normalized();
    let missing: Vec<(String, Metric)> = table
        .subjects()
        .into_iter()
        .flat_map(|s| [(s, raw), (s, normalized)])
        .filter(|(s, m)| table.get(s, *m).is_none())
        .map(|(s, m)| (s.to_string(), m))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCell(missing));
    }
    let a: Vec<f64> = table.column(raw).into_iter().map(|(_, v)| v).collect();
    let b: Vec<f64> = table.column(normalized).into_iter().map(|(_, v)| v).collect();
    kendall_tau(&a, &b)
}

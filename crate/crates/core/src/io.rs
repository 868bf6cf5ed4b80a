//! Line-delimited JSON file formats.
//!
//! Every file starts with a header record naming the format and version,
//! followed by one record per line. Feature indices are 1-based on disk.
//! Reals are written in shortest round-trip form and read back bit-exactly.
//!
//! | format              | record                                                   |
//! |---------------------|----------------------------------------------------------|
//! | `naopc.value-table` | `{instanceId, n, removed: [..], value}`                  |
//! | `naopc.attributions`| `{instanceId, method, scores: [..]}`                     |
//! | `naopc.results`     | `{instanceId, model?, method?, comp?, suff?, ncomp?, ...}`|

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cache::{evaluate_masked_many, EvalCache};
use crate::error::{Error, Result, ValueError};
use crate::types::{AopcLimits, FeatureOrdering, Instance, LimitMethod, Payload, RemovedSet, SubsetKey};
use crate::value::ValueFunction;

pub const FORMAT_VERSION: u32 = 1;
pub const VALUE_TABLE_FORMAT: &str = "naopc.value-table";
pub const ATTRIBUTION_FORMAT: &str = "naopc.attributions";
pub const RESULTS_FORMAT: &str = "naopc.results";

/// Widest instance a value table may describe.
pub const VALUE_TABLE_MAX_FEATURES: usize = 30;

/// Missing subsets listed by [`ValueTable::require_complete`].
const MISSING_LISTED: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    /// What the stored outputs mean, e.g. `probability` or `logit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<String>,
}

impl Header {
    pub fn new(format: &str) -> Self {
        Self {
            format: format.to_string(),
            version: FORMAT_VERSION,
            semantics: None,
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads the header and all records of one file, with 1-based line numbers.
fn read_records<T: DeserializeOwned, R: BufRead>(reader: R, format: &str) -> Result<(Header, Vec<(usize, T)>)> {
    let mut header: Option<Header> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| parse_error(line_no, format!("expected a `{format}` header: {e}")))?;
                if h.format != format {
                    return Err(parse_error(
                        line_no,
                        format!("expected format `{format}`, found `{}`", h.format),
                    ));
                }
                if h.version != FORMAT_VERSION {
                    return Err(parse_error(line_no, format!("unsupported version {}", h.version)));
                }
                header = Some(h);
            }
            Some(_) => {
                let record = serde_json::from_str(&line).map_err(|e| parse_error(line_no, e.to_string()))?;
                records.push((line_no, record));
            }
        }
    }
    let header = header.ok_or_else(|| parse_error(0, format!("empty file, expected a `{format}` header")))?;
    Ok((header, records))
}

fn write_records<T: Serialize, W: Write>(mut writer: W, header: &Header, records: &[T]) -> Result<()> {
    let line = |e: serde_json::Error| Error::InvalidConfig(format!("unserializable record: {e}"));
    writeln!(writer, "{}", serde_json::to_string(header).map_err(line)?)?;
    for record in records {
        writeln!(writer, "{}", serde_json::to_string(record).map_err(line)?)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ValueRecord {
    pub instance_id: String,
    pub n: usize,
    pub removed: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceTable {
    n: usize,
    values: HashMap<SubsetKey, f64>,
}

impl InstanceTable {
    pub fn feature_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Precomputed outputs of some model over removed subsets, per instance.
///
/// Acts as a [`ValueFunction`] that answers from the table and reports
/// [`ValueError::MissingValue`] for subsets it does not hold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValueTable {
    pub semantics: Option<String>,
    instances: BTreeMap<String, InstanceTable>,
}

impl ValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, instance_id: &str, n: usize, removed: &RemovedSet, value: f64) -> Result<()> {
        if n == 0 || n > VALUE_TABLE_MAX_FEATURES {
            return Err(Error::InvalidFeatureCount(n));
        }
        if let Some(i) = removed.max_index().filter(|&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: i + 1, n });
        }
        if !value.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite value for instance `{instance_id}`")));
        }
        let table = self
            .instances
            .entry(instance_id.to_string())
            .or_insert_with(|| InstanceTable {
                n,
                values: HashMap::new(),
            });
        if table.n != n {
            return Err(Error::InvalidConfig(format!(
                "instance `{instance_id}` has n={} and n={n}",
                table.n
            )));
        }
        if table.values.insert(removed.key(n), value).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate record for instance `{instance_id}`, removed {removed}"
            )));
        }
        Ok(())
    }

    /// Tabulates `v` on every subset of `x` (`2^N` queries).
    pub fn tabulate(&mut self, v: &dyn ValueFunction, x: &Instance, cache: &EvalCache) -> Result<()> {
        let n = x.feature_count();
        if n > VALUE_TABLE_MAX_FEATURES {
            return Err(Error::FeatureCountExceedsExactCap {
                n,
                cap: VALUE_TABLE_MAX_FEATURES,
            });
        }
        let sets: Vec<RemovedSet> = (0..1u64 << n).map(RemovedSet::from_mask).collect();
        let values = evaluate_masked_many(v, x, &sets, cache)?;
        for (set, value) in sets.iter().zip(values) {
            self.insert(x.id(), n, set, value)?;
        }
        Ok(())
    }

    pub fn instance_table(&self, instance_id: &str) -> Option<&InstanceTable> {
        self.instances.get(instance_id)
    }

    /// One payload-free instance per table entry, in id order.
    pub fn instances(&self) -> Vec<Instance> {
        self.instances
            .iter()
            .map(|(id, t)| Instance::new(id.as_str(), t.n, Payload::None).expect("n >= 1"))
            .collect()
    }

    /// Subsets of `instance_id` without a record, in mask order: the total
    /// count and up to `limit` of them as 1-based index lists.
    pub fn missing_subsets(&self, instance_id: &str, limit: usize) -> Result<(usize, Vec<Vec<usize>>)> {
        let table = self
            .instances
            .get(instance_id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown instance `{instance_id}`")))?;
        let mut total = 0;
        let mut first = Vec::new();
        for mask in 0..1u64 << table.n {
            if !table.values.contains_key(&SubsetKey::Dense(mask)) {
                total += 1;
                if first.len() < limit {
                    first.push(RemovedSet::from_mask(mask).to_one_based());
                }
            }
        }
        Ok((total, first))
    }

    /// Fails unless every subset of the instance is present.
    pub fn require_complete(&self, instance_id: &str) -> Result<()> {
        let (total, first) = self.missing_subsets(instance_id, MISSING_LISTED)?;
        if total > 0 {
            return Err(Error::MissingSubsets {
                instance_id: instance_id.to_string(),
                total,
                first,
            });
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let (header, records) = read_records::<ValueRecord, _>(reader, VALUE_TABLE_FORMAT)?;
        let mut table = ValueTable {
            semantics: header.semantics,
            instances: BTreeMap::new(),
        };
        for (line, r) in records {
            if r.removed.windows(2).any(|w| w[0] >= w[1]) {
                return Err(parse_error(line, "`removed` must be strictly increasing"));
            }
            let set = RemovedSet::from_one_based(&r.removed, r.n).map_err(|e| parse_error(line, e.to_string()))?;
            table
                .insert(&r.instance_id, r.n, &set, r.value)
                .map_err(|e| parse_error(line, e.to_string()))?;
        }
        for (id, t) in &table.instances {
            if !t.values.contains_key(&RemovedSet::empty().key(t.n)) {
                return Err(parse_error(0, format!("instance `{id}` has no record for removed=[]")));
            }
        }
        Ok(table)
    }

    /// Writes instances in id order and subsets in canonical key order.
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut header = Header::new(VALUE_TABLE_FORMAT);
        header.semantics = self.semantics.clone();
        let mut records = Vec::new();
        for (id, t) in &self.instances {
            let mut entries: Vec<(&SubsetKey, &f64)> = t.values.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            for (key, &value) in entries {
                let removed = match key {
                    SubsetKey::Dense(mask) => RemovedSet::from_mask(*mask).to_one_based(),
                    SubsetKey::Sparse(list) => list.iter().map(|&i| i as usize + 1).collect(),
                };
                records.push(ValueRecord {
                    instance_id: id.clone(),
                    n: t.n,
                    removed,
                    value,
                });
            }
        }
        write_records(writer, &header, &records)
    }
}

impl ValueFunction for ValueTable {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        let table = self
            .instances
            .get(x.id())
            .ok_or_else(|| ValueError::UnknownInstance(x.id().to_string()))?;
        if table.n != x.feature_count() {
            return Err(ValueError::Other(format!(
                "table has n={} for `{}`, instance has {}",
                table.n,
                x.id(),
                x.feature_count()
            )));
        }
        table
            .values
            .get(&removed.key(table.n))
            .copied()
            .ok_or(ValueError::MissingValue)
    }

    fn description(&self) -> String {
        format!("value table ({} instances)", self.instances.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AttributionRecord {
    pub instance_id: String,
    pub method: String,
    pub scores: Vec<f64>,
}

pub fn read_attributions<R: BufRead>(reader: R) -> Result<Vec<AttributionRecord>> {
    let (_, records) = read_records::<AttributionRecord, _>(reader, ATTRIBUTION_FORMAT)?;
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .map(|(line, r)| {
            if r.scores.is_empty() {
                return Err(parse_error(line, "empty score list"));
            }
            if !seen.insert((r.instance_id.clone(), r.method.clone())) {
                return Err(parse_error(
                    line,
                    format!("duplicate record for ({}, {})", r.instance_id, r.method),
                ));
            }
            Ok(r)
        })
        .collect()
}

pub fn write_attributions<W: Write>(writer: W, records: &[AttributionRecord]) -> Result<()> {
    write_records(writer, &Header::new(ATTRIBUTION_FORMAT), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Flag {
    /// A normalized score fell outside `[0, 1]` (beam limits too loose).
    OutOfRange,
    /// The limits coincide, so normalized scores are undefined.
    Degenerate,
    /// Some model query for this instance failed; no scores are reported.
    Failed,
    /// Normalization was requested but no limits exist for this instance.
    MissingLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    Exact,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResultRow {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncomp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsuff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_method: Option<LimitKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_size: Option<usize>,
    /// 1-based witness ordering of the lower limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg_lower: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg_upper: Option<Vec<usize>>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl ResultRow {
    pub fn new(instance_id: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            ..Default::default()
        }
    }

    pub fn set_limits(&mut self, limits: &AopcLimits) {
        self.lower = Some(limits.lower);
        self.upper = Some(limits.upper);
        self.limit_method = Some(match limits.method {
            LimitMethod::Exact => LimitKind::Exact,
            LimitMethod::Beam(_) => LimitKind::Beam,
        });
        self.beam_size = limits.method.beam_size();
        self.arg_lower = Some(limits.arg_lower.to_one_based());
        self.arg_upper = Some(limits.arg_upper.to_one_based());
    }

    /// The limits stored in this row, if complete.
    pub fn limits(&self) -> Result<Option<AopcLimits>> {
        let (Some(lower), Some(upper)) = (self.lower, self.upper) else {
            return Ok(None);
        };
        let method = match (self.limit_method, self.beam_size) {
            (Some(LimitKind::Exact), _) => LimitMethod::Exact,
            (Some(LimitKind::Beam), Some(b)) => LimitMethod::Beam(b),
            _ => return Err(Error::InvalidConfig("limits without a limitMethod/beamSize".into())),
        };
        let witness = |w: &Option<Vec<usize>>| -> Result<FeatureOrdering> {
            let w = w
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("limits without witness orderings".into()))?;
            FeatureOrdering::from_one_based(w)
        };
        Ok(Some(AopcLimits {
            lower,
            upper,
            method,
            arg_lower: witness(&self.arg_lower)?,
            arg_upper: witness(&self.arg_upper)?,
        }))
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultRow>> {
    let (_, records) = read_records::<ResultRow, _>(reader, RESULTS_FORMAT)?;
    records
        .into_iter()
        .map(|(line, r)| {
            let has_limits = r.lower.is_some() && r.upper.is_some();
            if (r.ncomp.is_some() || r.nsuff.is_some()) && !has_limits {
                return Err(parse_error(line, "normalized scores without limits"));
            }
            if r.lower.is_some() != r.upper.is_some() {
                return Err(parse_error(line, "only one of lower/upper present"));
            }
            r.limits().map_err(|e| parse_error(line, e.to_string()))?;
            Ok(r)
        })
        .collect()
}

pub fn write_results<W: Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    write_records(writer, &Header::new(RESULTS_FORMAT), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{reference_instance, BuiltinModel, RandomSetFunction};

    #[test]
    fn value_table_round_trip_matches_model() {
        let f = RandomSetFunction::new(5, 11).unwrap();
        let x = f.instance("r");
        let mut table = ValueTable::new();
        table.semantics = Some("probability".into());
        table.tabulate(&f, &x, &EvalCache::new()).unwrap();
        let mut buf = Vec::new();
        table.write(&mut buf).unwrap();
        let back = ValueTable::read(buf.as_slice()).unwrap();
        assert_eq!(back, table);
        for mask in 0..32u64 {
            let s = RemovedSet::from_mask(mask);
            assert_eq!(
                back.evaluate(&x, &s).unwrap().to_bits(),
                f.evaluate(&x, &s).unwrap().to_bits()
            );
        }
        assert!(back.require_complete("r").is_ok());
    }

    #[test]
    fn value_table_validation() {
        let header = r#"{"format":"naopc.value-table","version":1}"#;
        let cases = [
            (r#"{"instanceId":"a","n":2,"removed":[2,1],"value":0.5}"#, "strictly increasing"),
            (r#"{"instanceId":"a","n":2,"removed":[3],"value":0.5}"#, "out of range"),
            (r#"{"instanceId":"a","n":2,"removed":[1],"value":0.5}"#, "removed=[]"),
        ];
        for (line, expected) in cases {
            let text = format!("{header}\n{line}\n");
            let err = ValueTable::read(text.as_bytes()).unwrap_err().to_string();
            assert!(err.contains(expected), "{err}");
        }
        let dup = format!(
            "{header}\n{}\n{}\n",
            r#"{"instanceId":"a","n":1,"removed":[],"value":0.5}"#,
            r#"{"instanceId":"a","n":1,"removed":[],"value":0.6}"#
        );
        let err = ValueTable::read(dup.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(ValueTable::read(&b""[..]).is_err());
        let wrong = r#"{"format":"naopc.results","version":1}"#;
        assert!(ValueTable::read(wrong.as_bytes()).is_err());
    }

    #[test]
    fn missing_subsets_are_listed() {
        let mut table = ValueTable::new();
        table.insert("a", 12, &RemovedSet::empty(), 1.0).unwrap();
        let (total, first) = table.missing_subsets("a", 10).unwrap();
        assert_eq!(total, 4095);
        assert_eq!(first.len(), 10);
        assert_eq!(first[0], vec![1]);
        assert_eq!(first[2], vec![1, 2]);
        match table.require_complete("a") {
            Err(Error::MissingSubsets { total, first, .. }) => {
                assert_eq!(total, 4095);
                assert_eq!(first.len(), 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_reports_missing_and_unknown() {
        let mut table = ValueTable::new();
        table.insert("a", 2, &RemovedSet::empty(), 1.0).unwrap();
        let a = Instance::new("a", 2, Payload::None).unwrap();
        let b = Instance::new("b", 2, Payload::None).unwrap();
        assert_eq!(
            table.evaluate(&a, &RemovedSet::from_indices([0])),
            Err(ValueError::MissingValue)
        );
        assert!(matches!(
            table.evaluate(&b, &RemovedSet::empty()),
            Err(ValueError::UnknownInstance(_))
        ));
    }

    #[test]
    fn results_round_trip_is_bit_exact() {
        let l = crate::limits::exhaustive_limits(&BuiltinModel::F3.model(), &reference_instance(), &EvalCache::new())
            .unwrap();
        let mut row = ResultRow::new("x0");
        row.model = Some("f3".into());
        row.method = Some("shapley".into());
        row.comp = Some(0.1 + 0.2);
        row.suff = Some(1.0 / 3.0);
        row.ncomp = Some(-2.5e-17);
        row.nsuff = Some(1.0000000000000002);
        row.set_limits(&l);
        row.flags = vec![Flag::OutOfRange];
        let rows = vec![row, ResultRow::new("other")];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].comp.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back[0].limits().unwrap().unwrap(), l);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(r#""flags":["OUT_OF_RANGE"]"#), "{text}");
    }

    #[test]
    fn results_without_limits_reject_normalized_columns() {
        let text = format!(
            "{}\n{}\n",
            r#"{"format":"naopc.results","version":1}"#,
            r#"{"instanceId":"a","ncomp":0.5,"flags":[]}"#
        );
        assert!(matches!(read_results(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn attributions_round_trip() {
        let records = vec![AttributionRecord {
            instance_id: "x0".into(),
            method: "truth".into(),
            scores: vec![0.2, 0.3, 0.1, 0.4],
        }];
        let mut buf = Vec::new();
        write_attributions(&mut buf, &records).unwrap();
        assert_eq!(read_attributions(buf.as_slice()).unwrap(), records);
        let doubled = [buf.clone(), buf[buf.iter().position(|&b| b == b'\n').unwrap() + 1..].to_vec()].concat();
        assert!(read_attributions(doubled.as_slice()).is_err());
    }
}

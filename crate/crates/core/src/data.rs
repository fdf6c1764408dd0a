//! Tabular dataset ingestion.
//!
//! A dataset is a delimited text file with a header row. The schema names one
//! binary outcome column, one binary group column and any number of numeric or
//! categorical feature columns. Outcomes are encoded so that `0` is the
//! favorable outcome and `1` the unfavorable one, whatever the raw values are.
//! Categorical features are expanded into one indicator per level (no level is
//! dropped), with levels ordered lexicographically.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoded favorable outcome (and favorable prediction).
pub const FAVORABLE: u8 = 0;
/// Encoded unfavorable outcome (and unfavorable prediction).
pub const UNFAVORABLE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Protected,
    Unprotected,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::Protected => Group::Unprotected,
            Group::Unprotected => Group::Protected,
        }
    }

    /// Value of the group indicator feature: 1 for protected.
    pub fn indicator(self) -> f64 {
        match self {
            Group::Protected => 1.0,
            Group::Unprotected => 0.0,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Protected => f.write_str("protected"),
            Group::Unprotected => f.write_str("unprotected"),
        }
    }
}

/// Raw labels of the two groups as they appear in input files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    pub protected: String,
    pub unprotected: String,
}

impl GroupLabels {
    pub fn new(protected: impl Into<String>, unprotected: impl Into<String>) -> Self {
        GroupLabels {
            protected: protected.into(),
            unprotected: unprotected.into(),
        }
    }

    pub fn parse(&self, raw: &str) -> Option<Group> {
        if raw == self.protected {
            Some(Group::Protected)
        } else if raw == self.unprotected {
            Some(Group::Unprotected)
        } else {
            None
        }
    }

    pub fn label(&self, group: Group) -> &str {
        match group {
            Group::Protected => &self.protected,
            Group::Unprotected => &self.unprotected,
        }
    }

    pub fn swapped(&self) -> GroupLabels {
        GroupLabels::new(self.unprotected.clone(), self.protected.clone())
    }
}

impl Default for GroupLabels {
    fn default() -> Self {
        GroupLabels::new("protected", "unprotected")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

fn default_favorable() -> String {
    "0".to_string()
}

fn default_unfavorable() -> String {
    "1".to_string()
}

/// Declarative description of an input table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome_column: String,
    pub group_column: String,
    #[serde(default = "default_favorable")]
    pub favorable_outcome: String,
    #[serde(default = "default_unfavorable")]
    pub unfavorable_outcome: String,
    pub protected_value: String,
    pub unprotected_value: String,
    /// Column holding integer row ids. Without it, the 0-based data row index is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Schema> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Schema> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable as TOML")
    }

    pub fn group_labels(&self) -> GroupLabels {
        GroupLabels::new(self.protected_value.clone(), self.unprotected_value.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaViolation {
    MissingColumn { role: &'static str, name: String },
    DuplicateFeature(String),
    ReservedFeature(String),
    IdenticalOutcomeValues,
    IdenticalGroupValues,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::MissingColumn { role, name } => {
                write!(f, "{role} column `{name}` not found in header")
            }
            SchemaViolation::DuplicateFeature(name) => {
                write!(f, "feature `{name}` declared more than once")
            }
            SchemaViolation::ReservedFeature(name) => write!(
                f,
                "column `{name}` is the outcome, group or id column and cannot be a feature"
            ),
            SchemaViolation::IdenticalOutcomeValues => {
                f.write_str("favorable and unfavorable outcome values are identical")
            }
            SchemaViolation::IdenticalGroupValues => {
                f.write_str("protected and unprotected group values are identical")
            }
        }
    }
}

/// Checks a schema against a header row. Reports every violation found.
pub fn validate_schema(
    schema: &Schema,
    header: &[String],
) -> std::result::Result<(), Vec<SchemaViolation>> {
    let present: HashSet<&str> = header.iter().map(String::as_str).collect();
    let mut violations = Vec::new();

    let mut require = |role: &'static str, name: &str| {
        if !present.contains(name) {
            violations.push(SchemaViolation::MissingColumn {
                role,
                name: name.to_string(),
            });
        }
    };
    require("outcome", &schema.outcome_column);
    require("group", &schema.group_column);
    if let Some(id) = &schema.id_column {
        require("id", id);
    }
    for feature in &schema.features {
        require("feature", &feature.name);
    }

    let mut reserved = vec![schema.outcome_column.as_str(), schema.group_column.as_str()];
    if let Some(id) = &schema.id_column {
        reserved.push(id);
    }
    let mut seen = HashSet::new();
    for feature in &schema.features {
        if !seen.insert(feature.name.as_str()) {
            violations.push(SchemaViolation::DuplicateFeature(feature.name.clone()));
        }
        if reserved.contains(&feature.name.as_str()) {
            violations.push(SchemaViolation::ReservedFeature(feature.name.clone()));
        }
    }
    if schema.favorable_outcome == schema.unfavorable_outcome {
        violations.push(SchemaViolation::IdenticalOutcomeValues);
    }
    if schema.protected_value == schema.unprotected_value {
        violations.push(SchemaViolation::IdenticalGroupValues);
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub row_id: i64,
    pub features: Vec<f64>,
    /// 0 = favorable, 1 = unfavorable.
    pub outcome: u8,
    pub group: Group,
}

/// An immutable, validated table of encoded records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    labels: GroupLabels,
    rows: Vec<Record>,
}

impl Dataset {
    /// Builds a dataset, checking that row ids are unique, every feature vector
    /// has `feature_names.len()` entries and every outcome is 0 or 1.
    pub fn new(feature_names: Vec<String>, labels: GroupLabels, rows: Vec<Record>) -> Result<Self> {
        let dim = feature_names.len();
        let mut ids = HashSet::with_capacity(rows.len());
        for row in &rows {
            if !ids.insert(row.row_id) {
                return Err(Error::DuplicateRowId(row.row_id));
            }
            if row.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.features.len(),
                });
            }
            if row.outcome > 1 {
                return Err(Error::InvalidArgument(format!(
                    "row {}: outcome {} is not binary",
                    row.row_id, row.outcome
                )));
            }
        }
        Ok(Dataset {
            feature_names,
            labels,
            rows,
        })
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &GroupLabels {
        &self.labels
    }

    pub fn group_count(&self, group: Group) -> usize {
        self.rows.iter().filter(|r| r.group == group).count()
    }

    /// Same rows with the protected and unprotected designations exchanged.
    pub fn with_groups_swapped(&self) -> Dataset {
        let rows = self
            .rows
            .iter()
            .map(|r| Record {
                group: r.group.other(),
                ..r.clone()
            })
            .collect();
        Dataset {
            feature_names: self.feature_names.clone(),
            labels: self.labels.swapped(),
            rows,
        }
    }

    /// Same rows in a different order. `order` must be a permutation of `0..len`.
    pub fn reordered(&self, order: &[usize]) -> Dataset {
        assert_eq!(order.len(), self.rows.len());
        Dataset {
            feature_names: self.feature_names.clone(),
            labels: self.labels.clone(),
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Replaces the row set, keeping names and labels.
    pub fn with_rows(&self, rows: Vec<Record>) -> Result<Dataset> {
        Dataset::new(self.feature_names.clone(), self.labels.clone(), rows)
    }

    pub fn find(&self, row_id: i64) -> Option<&Record> {
        self.rows.iter().find(|r| r.row_id == row_id)
    }

    /// A schema that reads back the file produced by [`write_dataset`].
    pub fn schema(&self) -> Schema {
        Schema {
            outcome_column: "outcome".into(),
            group_column: "group".into(),
            favorable_outcome: FAVORABLE.to_string(),
            unfavorable_outcome: UNFAVORABLE.to_string(),
            protected_value: self.labels.protected.clone(),
            unprotected_value: self.labels.unprotected.clone(),
            id_column: Some("row_id".into()),
            features: self
                .feature_names
                .iter()
                .map(|n| FeatureSpec {
                    name: n.clone(),
                    kind: FeatureKind::Numeric,
                })
                .collect(),
        }
    }
}

/// Counts of input rows discarded during loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub raw_rows: usize,
    pub dropped_outcome: usize,
    pub dropped_group: usize,
    pub dropped_missing: usize,
}

impl LoadSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_outcome + self.dropped_group + self.dropped_missing
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadSummary)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

enum Cell<'a> {
    Numeric(f64),
    Categorical(&'a str),
}

/// Reads a comma-separated table with a header row.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<(Dataset, LoadSummary)> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    validate_schema(schema, &header).map_err(Error::Schema)?;

    let column = |name: &str| header.iter().position(|h| h == name).unwrap();
    let outcome_col = column(&schema.outcome_column);
    let group_col = column(&schema.group_column);
    let id_col = schema.id_column.as_deref().map(column);
    let feature_cols: Vec<usize> = schema.features.iter().map(|f| column(&f.name)).collect();
    let labels = schema.group_labels();

    let mut summary = LoadSummary::default();
    let raw: Vec<csv::StringRecord> = csv.records().collect::<std::result::Result<_, _>>()?;
    summary.raw_rows = raw.len();

    // First pass: filter and parse numerics. Categorical levels are collected
    // from surviving rows only.
    struct Kept<'a> {
        row_id: i64,
        outcome: u8,
        group: Group,
        cells: Vec<Cell<'a>>,
    }
    let mut kept = Vec::with_capacity(raw.len());
    let mut levels: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); schema.features.len()];
    'rows: for (index, record) in raw.iter().enumerate() {
        let data_row = index + 1;
        let outcome = match &record[outcome_col] {
            v if v == schema.favorable_outcome => FAVORABLE,
            v if v == schema.unfavorable_outcome => UNFAVORABLE,
            _ => {
                summary.dropped_outcome += 1;
                continue;
            }
        };
        let Some(group) = labels.parse(&record[group_col]) else {
            summary.dropped_group += 1;
            continue;
        };
        let row_id = match id_col {
            Some(c) => record[c].parse::<i64>().map_err(|_| Error::Parse {
                row: data_row,
                column: header[c].clone(),
                value: record[c].to_string(),
            })?,
            None => index as i64,
        };
        let mut cells = Vec::with_capacity(feature_cols.len());
        for (spec, &c) in schema.features.iter().zip(&feature_cols) {
            let value = &record[c];
            if value.is_empty() {
                summary.dropped_missing += 1;
                continue 'rows;
            }
            match spec.kind {
                FeatureKind::Numeric => {
                    let x = value.parse::<f64>().ok().filter(|x| x.is_finite());
                    let x = x.ok_or_else(|| Error::Parse {
                        row: data_row,
                        column: spec.name.clone(),
                        value: value.to_string(),
                    })?;
                    cells.push(Cell::Numeric(x));
                }
                FeatureKind::Categorical => cells.push(Cell::Categorical(value)),
            }
        }
        kept.push(Kept {
            row_id,
            outcome,
            group,
            cells,
        });
    }
    for row in &kept {
        for (i, cell) in row.cells.iter().enumerate() {
            if let Cell::Categorical(v) = cell {
                levels[i].insert(v);
            }
        }
    }

    let mut feature_names = Vec::new();
    let mut level_index: Vec<BTreeMap<&str, usize>> = Vec::with_capacity(levels.len());
    for (spec, lv) in schema.features.iter().zip(&levels) {
        match spec.kind {
            FeatureKind::Numeric => {
                feature_names.push(spec.name.clone());
                level_index.push(BTreeMap::new());
            }
            FeatureKind::Categorical => {
                let base = feature_names.len();
                let mut map = BTreeMap::new();
                for (j, level) in lv.iter().enumerate() {
                    feature_names.push(format!("{}={}", spec.name, level));
                    map.insert(*level, base + j);
                }
                level_index.push(map);
            }
        }
    }

    let dim = feature_names.len();
    let rows = kept
        .into_iter()
        .map(|k| {
            let mut features = vec![0.0; dim];
            let mut next = 0;
            for (i, cell) in k.cells.iter().enumerate() {
                match cell {
                    Cell::Numeric(x) => {
                        features[next] = *x;
                        next += 1;
                    }
                    Cell::Categorical(v) => {
                        features[level_index[i][v]] = 1.0;
                        next += levels[i].len();
                    }
                }
            }
            Record {
                row_id: k.row_id,
                features,
                outcome: k.outcome,
                group: k.group,
            }
        })
        .collect::<Vec<_>>();

    for group in [Group::Protected, Group::Unprotected] {
        if !rows.iter().any(|r| r.group == group) {
            return Err(Error::EmptyGroup {
                group: labels.label(group).to_string(),
            });
        }
    }

    let dataset = Dataset::new(feature_names, labels, rows)?;
    Ok((dataset, summary))
}

/// Writes a dataset in the delimited format read by [`load_dataset`] with the
/// schema returned by [`Dataset::schema`].
pub fn write_dataset<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["row_id".to_string()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("outcome".into());
    header.push("group".into());
    csv.write_record(&header)?;
    for row in &dataset.rows {
        let mut fields = Vec::with_capacity(header.len());
        fields.push(row.row_id.to_string());
        fields.extend(row.features.iter().map(|x| x.to_string()));
        fields.push(row.outcome.to_string());
        fields.push(dataset.labels.label(row.group).to_string());
        csv.write_record(&fields)?;
    }
    csv.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}

/// Partitions records by group, preserving row order within each part.
pub fn split_by_group(dataset: &Dataset) -> (Vec<&Record>, Vec<&Record>) {
    dataset
        .rows
        .iter()
        .partition(|r| r.group == Group::Protected)
}

//! Tabular observations, stratum indexing and CSV ingestion.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps column roles to header names. Every column not named here is a feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    pub cell: String,
    #[serde(default)]
    pub time: Option<String>,
    #[serde(default)]
    pub binary_outcome: Option<String>,
    #[serde(default)]
    pub base_weight: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            treatment: "T".into(),
            outcome: "Y".into(),
            cell: "OD".into(),
            time: None,
            binary_outcome: None,
            base_weight: None,
        }
    }
}

impl Schema {
    fn reserved(&self) -> Vec<&str> {
        let mut cols = vec![self.treatment.as_str(), self.outcome.as_str(), self.cell.as_str()];
        cols.extend(self.time.as_deref());
        cols.extend(self.binary_outcome.as_deref());
        cols.extend(self.base_weight.as_deref());
        cols
    }
}

/// The dataset carrier shared by every stage of the pipeline.
///
/// Immutable after construction; all invariants are checked in [`ObservationTable::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    schema: Schema,
    feature_names: Vec<String>,
    features: DMatrix<f64>,
    treatment: DVector<f64>,
    outcome: DVector<f64>,
    cell_label: Vec<String>,
    time_label: Option<Vec<String>>,
    binary_outcome: Option<DVector<f64>>,
    base_weight: Option<DVector<f64>>,
}

/// Builder-style parts for [`ObservationTable::new`].
#[derive(Debug, Clone)]
pub struct TableParts {
    pub schema: Schema,
    pub feature_names: Vec<String>,
    pub features: DMatrix<f64>,
    pub treatment: DVector<f64>,
    pub outcome: DVector<f64>,
    pub cell_label: Vec<String>,
    pub time_label: Option<Vec<String>>,
    pub binary_outcome: Option<DVector<f64>>,
    pub base_weight: Option<DVector<f64>>,
}

impl ObservationTable {
    pub fn new(parts: TableParts) -> Result<Self> {
        let n = parts.features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let check = |what: &str, got: usize| -> Result<()> {
            if got != n {
                return Err(Error::LengthMismatch { what: what.to_string(), got, expected: n });
            }
            Ok(())
        };
        check("treatment", parts.treatment.len())?;
        check("outcome", parts.outcome.len())?;
        check("cell label", parts.cell_label.len())?;
        if let Some(t) = &parts.time_label {
            check("time label", t.len())?;
        }
        if let Some(b) = &parts.binary_outcome {
            check("binary outcome", b.len())?;
        }
        if let Some(q) = &parts.base_weight {
            check("base weight", q.len())?;
        }
        if parts.feature_names.len() != parts.features.ncols() {
            return Err(Error::LengthMismatch {
                what: "feature names".into(),
                got: parts.feature_names.len(),
                expected: parts.features.ncols(),
            });
        }
        for i in 0..n {
            if !parts.treatment[i].is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: parts.schema.treatment.clone() });
            }
            if !parts.outcome[i].is_finite() {
                return Err(Error::NonFinite { row: i + 1, column: parts.schema.outcome.clone() });
            }
            for (j, name) in parts.feature_names.iter().enumerate() {
                if !parts.features[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i + 1, column: name.clone() });
                }
            }
            if let Some(q) = &parts.base_weight {
                if !(q[i].is_finite() && q[i] > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "row {}: base weight must be positive and finite",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self {
            schema: parts.schema,
            feature_names: parts.feature_names,
            features: parts.features,
            treatment: parts.treatment,
            outcome: parts.outcome,
            cell_label: parts.cell_label,
            time_label: parts.time_label,
            binary_outcome: parts.binary_outcome,
            base_weight: parts.base_weight,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn treatment(&self) -> &DVector<f64> {
        &self.treatment
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.outcome
    }

    pub fn cell_label(&self) -> &[String] {
        &self.cell_label
    }

    pub fn time_label(&self) -> Option<&[String]> {
        self.time_label.as_deref()
    }

    pub fn binary_outcome(&self) -> Option<&DVector<f64>> {
        self.binary_outcome.as_ref()
    }

    pub fn base_weight(&self) -> Option<&DVector<f64>> {
        self.base_weight.as_ref()
    }

    /// Returns a copy with the cell labels replaced, e.g. after merging sparse cells.
    pub fn with_cell_labels(&self, labels: Vec<String>) -> Result<Self> {
        let mut parts = self.clone().into_parts();
        parts.cell_label = labels;
        Self::new(parts)
    }

    /// Returns a copy holding only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let parts = TableParts {
            schema: self.schema.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
            treatment: self.treatment.select_rows(rows),
            outcome: self.outcome.select_rows(rows),
            cell_label: rows.iter().map(|&i| self.cell_label[i].clone()).collect(),
            time_label: self.time_label.as_ref().map(|t| rows.iter().map(|&i| t[i].clone()).collect()),
            binary_outcome: self.binary_outcome.as_ref().map(|b| b.select_rows(rows)),
            base_weight: self.base_weight.as_ref().map(|q| q.select_rows(rows)),
        };
        Self::new(parts)
    }

    pub fn into_parts(self) -> TableParts {
        TableParts {
            schema: self.schema,
            feature_names: self.feature_names,
            features: self.features,
            treatment: self.treatment,
            outcome: self.outcome,
            cell_label: self.cell_label,
            time_label: self.time_label,
            binary_outcome: self.binary_outcome,
            base_weight: self.base_weight,
        }
    }
}

/// Reads a comma-separated file with a header row. Lines starting with `#` are skipped.
pub fn load_table(path: impl AsRef<Path>, schema: &Schema) -> Result<ObservationTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    read_table(file, schema)
}

pub fn read_table<R: Read>(reader: R, schema: &Schema) -> Result<ObservationTable> {
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = position(&schema.treatment)?;
    let y_col = position(&schema.outcome)?;
    let cell_col = position(&schema.cell)?;
    let time_col = schema.time.as_deref().map(position).transpose()?;
    let bin_col = schema.binary_outcome.as_deref().map(position).transpose()?;
    let q_col = schema.base_weight.as_deref().map(position).transpose()?;
    let reserved = schema.reserved();
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&j| !reserved.contains(&headers[j].as_str())).collect();

    let mut features = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut cells = Vec::new();
    let mut times = Vec::new();
    let mut binary = Vec::new();
    let mut base = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row + 1;
        let num = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: headers[col].clone(),
                value: raw.to_string(),
            })
        };
        for &j in &feature_cols {
            features.push(num(j)?);
        }
        treatment.push(num(t_col)?);
        outcome.push(num(y_col)?);
        cells.push(record.get(cell_col).unwrap_or("").to_string());
        if let Some(c) = time_col {
            times.push(record.get(c).unwrap_or("").to_string());
        }
        if let Some(c) = bin_col {
            binary.push(num(c)?);
        }
        if let Some(c) = q_col {
            base.push(num(c)?);
        }
    }
    let n = treatment.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    ObservationTable::new(TableParts {
        schema: schema.clone(),
        feature_names: feature_cols.iter().map(|&j| headers[j].clone()).collect(),
        features: DMatrix::from_row_slice(n, feature_cols.len(), &features),
        treatment: DVector::from_vec(treatment),
        outcome: DVector::from_vec(outcome),
        cell_label: cells,
        time_label: time_col.map(|_| times),
        binary_outcome: bin_col.map(|_| DVector::from_vec(binary)),
        base_weight: q_col.map(|_| DVector::from_vec(base)),
    })
}

/// Writes the table as CSV. Floats use the shortest representation that
/// parses back to the identical `f64`, so a reload is bit-exact.
pub fn write_table<W: Write>(table: &ObservationTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let s = &table.schema;
    let mut header: Vec<&str> = table.feature_names.iter().map(String::as_str).collect();
    header.extend([s.treatment.as_str(), s.outcome.as_str(), s.cell.as_str()]);
    header.extend(s.time.as_deref());
    header.extend(s.binary_outcome.as_deref());
    header.extend(s.base_weight.as_deref());
    wtr.write_record(&header)?;
    for i in 0..table.n() {
        let mut rec: Vec<String> = (0..table.p()).map(|j| table.features[(i, j)].to_string()).collect();
        rec.push(table.treatment[i].to_string());
        rec.push(table.outcome[i].to_string());
        rec.push(table.cell_label[i].clone());
        if let Some(t) = &table.time_label {
            rec.push(t[i].clone());
        }
        if let Some(b) = &table.binary_outcome {
            rec.push(b[i].to_string());
        }
        if let Some(q) = &table.base_weight {
            rec.push(q[i].to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

/// Orders labels numerically when both parse as numbers, otherwise as strings.
pub fn label_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub time: String,
    pub space: String,
}

impl std::fmt::Display for Stratum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.time.is_empty() {
            write!(f, "{}", self.space)
        } else {
            write!(f, "{}/{}", self.time, self.space)
        }
    }
}

/// Assignment of rows to populated (time, space) strata.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumIndex {
    strata: Vec<Stratum>,
    row_assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl StratumIndex {
    /// One stratum holding every row.
    pub fn single(n: usize) -> Self {
        Self {
            strata: vec![Stratum { time: String::new(), space: "all".into() }],
            row_assignment: vec![0; n],
            members: vec![(0..n).collect()],
        }
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn row_assignment(&self) -> &[usize] {
        &self.row_assignment
    }

    /// Row ids of stratum `s`, ascending.
    pub fn rows(&self, s: usize) -> &[usize] {
        &self.members[s]
    }

    pub fn n_rows(&self) -> usize {
        self.row_assignment.len()
    }
}

/// Enumerates populated strata in (time, space) label order; empty combinations are omitted.
pub fn build_stratum_index(table: &ObservationTable) -> Result<StratumIndex> {
    let key_of = |i: usize| Stratum {
        time: table.time_label.as_ref().map(|t| t[i].clone()).unwrap_or_default(),
        space: table.cell_label[i].clone(),
    };
    let mut keys: Vec<Stratum> = (0..table.n()).map(key_of).collect();
    let row_keys = keys.clone();
    keys.sort_by(|a, b| label_cmp(&a.time, &b.time).then_with(|| label_cmp(&a.space, &b.space)));
    keys.dedup();
    let lookup: HashMap<&Stratum, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let row_assignment: Vec<usize> = row_keys.iter().map(|k| lookup[k]).collect();
    let mut members = vec![Vec::new(); keys.len()];
    for (i, &s) in row_assignment.iter().enumerate() {
        members[s].push(i);
    }
    for (s, rows) in members.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::SparseStratum { label: keys[s].to_string(), rows: rows.len() });
        }
    }
    Ok(StratumIndex { strata: keys, row_assignment, members })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub p: usize,
    pub stratum_count: usize,
    pub treatment_nonzero_fraction: f64,
    pub stratum_rows: Vec<usize>,
}

pub fn summarize(table: &ObservationTable, idx: &StratumIndex) -> DatasetSummary {
    let nonzero = table.treatment.iter().filter(|&&t| t != 0.0).count();
    DatasetSummary {
        n: table.n(),
        p: table.p(),
        stratum_count: idx.len(),
        treatment_nonzero_fraction: nonzero as f64 / table.n() as f64,
        stratum_rows: (0..idx.len()).map(|s| idx.rows(s).len()).collect(),
    }
}

/// Merges ordered cell labels until every group holds at least `min_rows` rows.
///
/// Labels are placed on a line in [`label_cmp`] order and aggregated greedily,
/// largest cell first, absorbing the nearer unaggregated neighbour on the line
/// (ties: larger count, then the lower label). A group left below `min_rows`
/// with no free neighbours is folded into its adjacent group. Returns the new
/// label per row; a merged group is named after its first and last member.
pub fn merge_sparse_cells(labels: &[String], min_rows: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_str()).or_default() += 1;
    }
    let mut line: Vec<(&str, usize)> = counts.into_iter().collect();
    line.sort_by(|a, b| label_cmp(a.0, b.0));
    let m = line.len();

    let mut group_of: Vec<Option<usize>> = vec![None; m];
    let mut spans: Vec<(usize, usize, usize)> = Vec::new(); // (lo, hi, rows)
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| line[b].1.cmp(&line[a].1).then(a.cmp(&b)));
    for seed in order {
        if group_of[seed].is_some() {
            continue;
        }
        let g = spans.len();
        let (mut lo, mut hi, mut rows) = (seed, seed, line[seed].1);
        group_of[seed] = Some(g);
        while rows < min_rows {
            let left = (lo > 0 && group_of[lo - 1].is_none()).then(|| lo - 1);
            let right = (hi + 1 < m && group_of[hi + 1].is_none()).then_some(hi + 1);
            let pick = match (left, right) {
                (None, None) => break,
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (Some(l), Some(r)) => {
                    let (dl, dr) = (seed - l, r - seed);
                    match dl.cmp(&dr).then(line[r].1.cmp(&line[l].1)) {
                        Ordering::Greater => r,
                        _ => l,
                    }
                }
            };
            group_of[pick] = Some(g);
            rows += line[pick].1;
            lo = lo.min(pick);
            hi = hi.max(pick);
        }
        spans.push((lo, hi, rows));
    }

    // fold leftovers into a line-adjacent group until all satisfy the bound
    let mut ordered: Vec<(usize, usize, usize)> = spans;
    ordered.sort_by_key(|s| s.0);
    loop {
        if ordered.len() <= 1 {
            break;
        }
        let Some(pos) = ordered.iter().position(|s| s.2 < min_rows) else {
            break;
        };
        // merge into the smaller neighbour; ties and the last slot go left
        let go_left = pos > 0 && (pos + 1 == ordered.len() || ordered[pos - 1].2 <= ordered[pos + 1].2);
        let target = if go_left { pos - 1 } else { pos + 1 };
        let (a, b) = (pos.min(target), pos.max(target));
        let merged = (ordered[a].0, ordered[b].1, ordered[a].2 + ordered[b].2);
        ordered[a] = merged;
        ordered.remove(b);
    }

    let mut name_of: HashMap<&str, String> = HashMap::new();
    for &(lo, hi, _) in &ordered {
        let name = if lo == hi { line[lo].0.to_string() } else { format!("{}-{}", line[lo].0, line[hi].0) };
        for entry in &line[lo..=hi] {
            name_of.insert(entry.0, name.clone());
        }
    }
    labels.iter().map(|l| name_of[l.as_str()].clone()).collect()
}

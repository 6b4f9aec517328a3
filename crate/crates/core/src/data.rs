//! Typed ingestion of mixed datasets.
//!
//! A [`Schema`] declares the kind of every column. [`load_dataset`] reads an
//! RFC-4180 CSV table against it, drops rows with missing cells, codes the
//! discrete columns against their levels and standardizes the continuous ones.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of an observed variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Binary,
    Count,
    Ordinal,
    Categorical,
}

impl VarKind {
    pub fn is_discrete(self) -> bool {
        self != VarKind::Continuous
    }
}

/// Declaration of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
}

/// Ordered list of column declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<VariableSpec>,
}

impl Schema {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Level label of a discrete code. Binary columns without declared levels
    /// decode to "0" / "1"; count columns decode to the integer itself.
    pub fn decode(&self, column: usize, code: u32) -> Result<String> {
        let spec = self
            .columns
            .get(column)
            .ok_or_else(|| Error::Input(format!("column {column} out of range")))?;
        match (&spec.levels, spec.kind) {
            (_, VarKind::Continuous) => Err(Error::Input(format!(
                "column '{}' is continuous and has no levels",
                spec.name
            ))),
            (_, VarKind::Count) => Ok(code.to_string()),
            (Some(levels), _) => levels.get(code as usize).cloned().ok_or_else(|| {
                Error::Input(format!("code {code} out of range for '{}'", spec.name))
            }),
            (None, VarKind::Binary) if code <= 1 => Ok(code.to_string()),
            (None, _) => Err(Error::Input(format!(
                "code {code} out of range for '{}'",
                spec.name
            ))),
        }
    }
}

/// Parse and validate a schema document.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let schema: Schema = serde_json::from_str(text)
        .map_err(|e| Error::Schema(format!("malformed document: {e}")))?;
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn validate_schema(schema: &Schema) -> Result<()> {
    if schema.columns.is_empty() {
        return Err(Error::Schema("schema declares no columns".into()));
    }
    let mut names = HashSet::new();
    for col in &schema.columns {
        if !names.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column '{}'", col.name)));
        }
        match col.kind {
            VarKind::Ordinal | VarKind::Categorical => {
                if col.levels.is_none() {
                    return Err(Error::Schema(format!(
                        "column '{}' is {:?} but declares no levels",
                        col.name, col.kind
                    )));
                }
            }
            VarKind::Continuous | VarKind::Count => {
                if col.levels.is_some() {
                    return Err(Error::Schema(format!(
                        "column '{}' is {:?} and cannot declare levels",
                        col.name, col.kind
                    )));
                }
            }
            VarKind::Binary => {
                if let Some(levels) = &col.levels {
                    if levels.len() != 2 {
                        return Err(Error::Schema(format!(
                            "binary column '{}' must declare exactly 2 levels",
                            col.name
                        )));
                    }
                }
            }
        }
        if let Some(levels) = &col.levels {
            if levels.is_empty() {
                return Err(Error::Schema(format!(
                    "column '{}' has empty levels",
                    col.name
                )));
            }
            let unique: HashSet<&String> = levels.iter().collect();
            if unique.len() != levels.len() {
                return Err(Error::Schema(format!(
                    "column '{}' has duplicate levels",
                    col.name
                )));
            }
        }
        if col.trials.is_some() && col.kind != VarKind::Count {
            return Err(Error::Schema(format!(
                "column '{}' declares trials but is not a count",
                col.name
            )));
        }
        if col.trials == Some(0) {
            return Err(Error::Schema(format!(
                "column '{}' declares zero trials",
                col.name
            )));
        }
    }
    Ok(())
}

/// Observation matrix split into a standardized continuous block and an
/// integer-coded discrete block.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    pub n: usize,
    pub schema: Schema,
    /// Standardized continuous block, `n × p_C`.
    pub y_c: DMatrix<f64>,
    /// Coded discrete block, `n × p_D`.
    pub y_d: DMatrix<u32>,
    /// Schema index of each continuous column.
    pub continuous_cols: Vec<usize>,
    /// Schema index of each discrete column.
    pub discrete_cols: Vec<usize>,
    /// `(mean, std)` of each continuous column before standardization.
    pub standardization: Vec<(f64, f64)>,
    /// Number of categories of each discrete column (`trials + 1` for counts).
    pub n_levels: Vec<usize>,
    /// Binomial trial count of each discrete column (0 for non-count kinds).
    pub trials: Vec<u32>,
    pub dropped_rows: usize,
    /// Zero-based data-row index in the source table of every observation.
    pub source_rows: Vec<usize>,
    pub warnings: Vec<String>,
}

impl MixedDataset {
    pub fn p_c(&self) -> usize {
        self.continuous_cols.len()
    }

    pub fn p_d(&self) -> usize {
        self.discrete_cols.len()
    }

    /// Kind of the `j`-th discrete column.
    pub fn discrete_kind(&self, j: usize) -> VarKind {
        self.schema.columns[self.discrete_cols[j]].kind
    }

    /// Keep only the listed rows, in the given order. Standardization
    /// statistics are carried over unchanged.
    pub fn select_rows(&self, rows: &[usize]) -> MixedDataset {
        let y_c = DMatrix::from_fn(rows.len(), self.p_c(), |i, j| self.y_c[(rows[i], j)]);
        let y_d = DMatrix::from_fn(rows.len(), self.p_d(), |i, j| self.y_d[(rows[i], j)]);
        MixedDataset {
            n: rows.len(),
            y_c,
            y_d,
            source_rows: rows.iter().map(|&r| self.source_rows[r]).collect(),
            ..self.clone()
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA" || t == "?" || t.eq_ignore_ascii_case("nan")
}

/// Read a CSV table (header row naming every schema column) into a dataset.
pub fn load_dataset(csv_text: &str, schema: &Schema) -> Result<MixedDataset> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for h in &header {
        if !schema.columns.iter().any(|c| &c.name == h) {
            return Err(Error::Data(format!(
                "CSV column '{h}' is not in the schema"
            )));
        }
    }
    let mut position = Vec::with_capacity(schema.width());
    for col in &schema.columns {
        let idx = header
            .iter()
            .position(|h| h == &col.name)
            .ok_or_else(|| Error::Data(format!("schema column '{}' missing from CSV", col.name)))?;
        position.push(idx);
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    let mut source_rows = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        let cells: Vec<String> = position
            .iter()
            .map(|&p| record.get(p).unwrap_or("").to_string())
            .collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        rows.push(cells);
        source_rows.push(row_index);
    }
    let mut ds = from_rows(schema, &rows, dropped)?;
    ds.source_rows = source_rows;
    Ok(ds)
}

/// Build a dataset from rows of cells already ordered as the schema columns.
pub fn from_rows(
    schema: &Schema,
    rows: &[Vec<String>],
    dropped_rows: usize,
) -> Result<MixedDataset> {
    validate_schema(schema)?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Data("no complete rows".into()));
    }
    let mut warnings = Vec::new();
    if dropped_rows > 0 {
        warnings.push(format!("dropped {dropped_rows} rows with missing cells"));
    }
    let continuous_cols: Vec<usize> = (0..schema.width())
        .filter(|&j| schema.columns[j].kind == VarKind::Continuous)
        .collect();
    let discrete_cols: Vec<usize> = (0..schema.width())
        .filter(|&j| schema.columns[j].kind != VarKind::Continuous)
        .collect();

    let mut y_c = DMatrix::zeros(n, continuous_cols.len());
    let mut standardization = Vec::with_capacity(continuous_cols.len());
    for (jc, &col) in continuous_cols.iter().enumerate() {
        let name = &schema.columns[col].name;
        for (i, row) in rows.iter().enumerate() {
            let cell = row[col].trim();
            y_c[(i, jc)] = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "non-numeric value '{cell}' in continuous column '{name}'"
                    ))
                })?;
        }
        let (mean, std) = standardize_column(&mut y_c, jc);
        if std == 1.0 && column_is_constant(&y_c, jc) {
            warnings.push(format!(
                "continuous column '{name}' is constant; std set to 1"
            ));
        }
        standardization.push((mean, std));
    }

    let mut y_d = DMatrix::zeros(n, discrete_cols.len());
    let mut n_levels = Vec::with_capacity(discrete_cols.len());
    let mut trials = Vec::with_capacity(discrete_cols.len());
    for (jd, &col) in discrete_cols.iter().enumerate() {
        let spec = &schema.columns[col];
        let mut max_code = 0u32;
        for (i, row) in rows.iter().enumerate() {
            let code = encode_cell(spec, row[col].trim())?;
            max_code = max_code.max(code);
            y_d[(i, jd)] = code;
        }
        match spec.kind {
            VarKind::Count => {
                let t = spec.trials.unwrap_or(max_code.max(1));
                if max_code > t {
                    return Err(Error::Data(format!(
                        "count column '{}' has value {max_code} above its {t} trials",
                        spec.name
                    )));
                }
                trials.push(t);
                n_levels.push(t as usize + 1);
            }
            VarKind::Binary => {
                trials.push(0);
                n_levels.push(2);
            }
            _ => {
                trials.push(0);
                n_levels.push(spec.levels.as_ref().map_or(0, |l| l.len()));
            }
        }
    }

    Ok(MixedDataset {
        n,
        schema: schema.clone(),
        y_c,
        y_d,
        continuous_cols,
        discrete_cols,
        standardization,
        n_levels,
        trials,
        dropped_rows,
        source_rows: (0..n).collect(),
        warnings,
    })
}

fn column_is_constant(m: &DMatrix<f64>, j: usize) -> bool {
    m.column(j).iter().all(|&v| v == 0.0)
}

/// Center and scale a column to unit population variance in place. Returns the
/// `(mean, std)` used; a constant column gets std 1.
fn standardize_column(m: &mut DMatrix<f64>, j: usize) -> (f64, f64) {
    let n = m.nrows() as f64;
    let mean = m.column(j).iter().sum::<f64>() / n;
    let var = m.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 && var.sqrt() > 1e-300 {
        var.sqrt()
    } else {
        1.0
    };
    for v in m.column_mut(j).iter_mut() {
        *v = (*v - mean) / std;
    }
    (mean, std)
}

/// Standardize every column of a matrix (population variance). Exposed for
/// reuse by the initialization pipeline.
pub fn standardize_columns(m: &mut DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..m.ncols()).map(|j| standardize_column(m, j)).collect()
}

fn encode_cell(spec: &VariableSpec, cell: &str) -> Result<u32> {
    match spec.kind {
        VarKind::Count => {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "non-numeric count '{cell}' in column '{}'",
                    spec.name
                ))
            })?;
            if v < 0.0 {
                return Err(Error::Data(format!(
                    "negative count {v} in column '{}'",
                    spec.name
                )));
            }
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-integer count {v} in column '{}'",
                    spec.name
                )));
            }
            Ok(v as u32)
        }
        VarKind::Binary if spec.levels.is_none() => match cell {
            "0" | "false" | "False" | "FALSE" => Ok(0),
            "1" | "true" | "True" | "TRUE" => Ok(1),
            _ => Err(Error::Data(format!(
                "unknown level '{cell}' in binary column '{}'",
                spec.name
            ))),
        },
        _ => {
            let levels = spec.levels.as_ref().expect("validated schema");
            levels
                .iter()
                .position(|l| l == cell)
                .map(|p| p as u32)
                .ok_or_else(|| {
                    Error::Data(format!("unknown level '{cell}' in column '{}'", spec.name))
                })
        }
    }
}

/// Read a single-column label file (header row then one label per line).
pub fn read_labels(csv_text: &str) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(csv_text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let v = record
            .get(0)
            .ok_or_else(|| Error::Data("empty label row".into()))?;
        out.push(v.trim().to_string());
    }
    Ok(out)
}

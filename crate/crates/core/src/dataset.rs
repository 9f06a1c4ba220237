//! Publication-level tabular data: typed columns, CSV ingestion with
//! listwise deletion, level filtering and descriptive summaries.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` declared in the schema is missing from the header")]
    MissingColumn(String),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("empty column name")]
    EmptyName,
    #[error("row {row}, column `{column}`: `{token}` is not a number")]
    NotNumeric {
        row: usize,
        column: String,
        token: String,
    },
    #[error("row {row}, column `{column}`: invalid binary value `{token}` (expected 0 or 1)")]
    InvalidBinary {
        row: usize,
        column: String,
        token: String,
    },
    #[error("row {row}, column `{column}`: level `{token}` is not among the declared levels")]
    UndeclaredLevel {
        row: usize,
        column: String,
        token: String,
    },
    #[error("dataset is empty{0}")]
    Empty(&'static str),
    #[error("column `{column}` has {got} values, expected {expected}")]
    LengthMismatch {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not categorical")]
    NotCategorical(String),
    #[error("column `{column}` has no level `{level}`")]
    UnknownLevel { column: String, level: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Declared kind of a schema column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kind {
    Continuous,
    /// Levels, when given, fix the level order; otherwise first appearance wins.
    Categorical(Option<Vec<String>>),
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub kind: Kind,
}

impl Field {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Continuous {
        values: Vec<f64>,
        units: Option<String>,
    },
    Categorical {
        levels: Vec<String>,
        codes: Vec<u32>,
    },
    Binary(Vec<u8>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous { values, .. } => values.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Continuous { values, units } => ColumnData::Continuous {
                values: idx.iter().map(|&i| values[i]).collect(),
                units: units.clone(),
            },
            ColumnData::Categorical { levels, codes } => ColumnData::Categorical {
                levels: levels.clone(),
                codes: idx.iter().map(|&i| codes[i]).collect(),
            },
            ColumnData::Binary(v) => ColumnData::Binary(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    fn cell(&self, i: usize) -> String {
        match self {
            ColumnData::Continuous { values, .. } => format!("{}", values[i]),
            ColumnData::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
            ColumnData::Binary(v) => v[i].to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Continuous {
                values,
                units: None,
            },
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>, codes: Vec<u32>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Categorical { levels, codes },
        }
    }

    pub fn binary(name: impl Into<String>, values: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            data: ColumnData::Binary(values),
        }
    }

    /// Numeric view of the column: continuous values or 0/1 as `f64`.
    pub fn numeric(&self) -> Option<Vec<f64>> {
        match &self.data {
            ColumnData::Continuous { values, .. } => Some(values.clone()),
            ColumnData::Binary(v) => Some(v.iter().map(|&b| b as f64).collect()),
            ColumnData::Categorical { .. } => None,
        }
    }

    pub fn kind(&self) -> Kind {
        match &self.data {
            ColumnData::Continuous { .. } => Kind::Continuous,
            ColumnData::Categorical { levels, .. } => Kind::Categorical(Some(levels.clone())),
            ColumnData::Binary(_) => Kind::Binary,
        }
    }
}

/// An immutable set of equally long, uniquely named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    n_rows: usize,
    columns: Vec<Column>,
}

/// Outcome of [`load_csv`].
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Rows removed by listwise deletion.
    pub dropped: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.data.len());
        let mut seen = HashMap::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(DatasetError::EmptyName);
            }
            if seen.insert(c.name.clone(), ()).is_some() {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
            if c.data.len() != n_rows {
                return Err(DatasetError::LengthMismatch {
                    column: c.name.clone(),
                    got: c.data.len(),
                    expected: n_rows,
                });
            }
            if let ColumnData::Categorical { levels, codes } = &c.data {
                assert!(
                    codes.iter().all(|&k| (k as usize) < levels.len()),
                    "categorical code out of range in `{}`",
                    c.name
                );
            }
            if let ColumnData::Binary(v) = &c.data {
                assert!(v.iter().all(|&b| b <= 1), "binary column `{}` holds non 0/1", c.name);
            }
        }
        Ok(Self {
            name: name.into(),
            n_rows,
            columns,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    }

    /// Schema that reproduces this dataset exactly, with categorical levels pinned.
    pub fn schema(&self) -> Vec<Field> {
        self.columns
            .iter()
            .map(|c| Field::new(c.name.clone(), c.kind()))
            .collect()
    }

    /// Keeps the rows whose value of categorical `column` satisfies `keep`.
    /// Levels that no longer occur are removed from the level list.
    pub fn filter_levels(&self, column: &str, keep: impl Fn(&str) -> bool) -> Result<Dataset> {
        let col = self.require(column)?;
        let ColumnData::Categorical { levels, codes } = &col.data else {
            return Err(DatasetError::NotCategorical(column.to_string()));
        };
        let idx: Vec<usize> = (0..self.n_rows)
            .filter(|&i| keep(&levels[codes[i] as usize]))
            .collect();
        if idx.is_empty() {
            return Err(DatasetError::Empty(" after filtering"));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: compact(c.data.select(&idx)),
            })
            .collect();
        Dataset::new(self.name.clone(), columns)
    }

    /// Drops every row at `level` of `column`.
    pub fn exclude_level(&self, column: &str, level: &str) -> Result<Dataset> {
        let col = self.require(column)?;
        if let ColumnData::Categorical { levels, .. } = &col.data {
            if !levels.iter().any(|l| l == level) {
                return Err(DatasetError::UnknownLevel {
                    column: column.to_string(),
                    level: level.to_string(),
                });
            }
        }
        self.filter_levels(column, |l| l != level)
    }

    /// Rows selected by index; repetition allowed.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            n_rows: idx.len(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: c.data.select(idx),
                })
                .collect(),
        }
    }

    /// Writes the dataset as CSV with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows {
            wr.write_record(self.columns.iter().map(|c| c.data.cell(i)))?;
        }
        wr.flush().map_err(|e| DatasetError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn summarize(&self) -> Result<SummaryTable> {
        summarize(self)
    }
}

fn compact(data: ColumnData) -> ColumnData {
    match data {
        ColumnData::Categorical { levels, codes } => {
            let mut used = vec![false; levels.len()];
            for &c in &codes {
                used[c as usize] = true;
            }
            let mut remap = vec![0u32; levels.len()];
            let mut kept = Vec::new();
            for (i, l) in levels.into_iter().enumerate() {
                if used[i] {
                    remap[i] = kept.len() as u32;
                    kept.push(l);
                }
            }
            ColumnData::Categorical {
                levels: kept,
                codes: codes.into_iter().map(|c| remap[c as usize]).collect(),
            }
        }
        other => other,
    }
}

fn is_missing(token: &str) -> bool {
    let t = token.trim();
    t.is_empty() || t == "NA"
}

/// Loads a CSV file; columns not named in `schema` are ignored.
pub fn load_csv(path: impl AsRef<Path>, schema: &[Field]) -> Result<Loaded> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_reader(file, name, schema)
}

pub fn load_reader<R: Read>(reader: R, name: impl Into<String>, schema: &[Field]) -> Result<Loaded> {
    let mut seen = HashMap::new();
    for f in schema {
        if f.name.is_empty() {
            return Err(DatasetError::EmptyName);
        }
        if seen.insert(f.name.as_str(), ()).is_some() {
            return Err(DatasetError::DuplicateColumn(f.name.clone()));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .iter()
        .map(|f| {
            header
                .iter()
                .position(|h| h.trim() == f.name)
                .ok_or_else(|| DatasetError::MissingColumn(f.name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.len()];
    let mut dropped = 0usize;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = r + 2; // 1-based, after the header
        let cells: Vec<&str> = positions.iter().map(|&p| rec.get(p).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (j, (f, cell)) in schema.iter().zip(&cells).enumerate() {
            let cell = cell.trim();
            match &f.kind {
                Kind::Continuous => {
                    let v: f64 = cell.parse().map_err(|_| DatasetError::NotNumeric {
                        row: row_no,
                        column: f.name.clone(),
                        token: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(DatasetError::NotNumeric {
                            row: row_no,
                            column: f.name.clone(),
                            token: cell.to_string(),
                        });
                    }
                }
                Kind::Binary => {
                    let v: f64 = cell.parse().map_err(|_| DatasetError::NotNumeric {
                        row: row_no,
                        column: f.name.clone(),
                        token: cell.to_string(),
                    })?;
                    if v != 0.0 && v != 1.0 {
                        return Err(DatasetError::InvalidBinary {
                            row: row_no,
                            column: f.name.clone(),
                            token: cell.to_string(),
                        });
                    }
                }
                Kind::Categorical(Some(levels)) => {
                    if !levels.iter().any(|l| l == cell) {
                        return Err(DatasetError::UndeclaredLevel {
                            row: row_no,
                            column: f.name.clone(),
                            token: cell.to_string(),
                        });
                    }
                }
                Kind::Categorical(None) => {}
            }
            raw[j].push(cell.to_string());
        }
    }
    let n = raw.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(DatasetError::Empty(" after listwise deletion"));
    }

    let columns = schema
        .iter()
        .zip(raw)
        .map(|(f, cells)| {
            let data = match &f.kind {
                Kind::Continuous => ColumnData::Continuous {
                    values: cells.iter().map(|c| c.parse().unwrap()).collect(),
                    units: None,
                },
                Kind::Binary => ColumnData::Binary(
                    cells
                        .iter()
                        .map(|c| if c.parse::<f64>().unwrap() == 1.0 { 1 } else { 0 })
                        .collect(),
                ),
                Kind::Categorical(declared) => {
                    let mut levels: Vec<String> = declared.clone().unwrap_or_default();
                    let mut index: HashMap<String, u32> = levels
                        .iter()
                        .enumerate()
                        .map(|(i, l)| (l.clone(), i as u32))
                        .collect();
                    let codes = cells
                        .into_iter()
                        .map(|c| {
                            *index.entry(c.clone()).or_insert_with(|| {
                                levels.push(c);
                                (levels.len() - 1) as u32
                            })
                        })
                        .collect();
                    ColumnData::Categorical { levels, codes }
                }
            };
            Column {
                name: f.name.clone(),
                data,
            }
        })
        .collect();
    Ok(Loaded {
        dataset: Dataset::new(name, columns)?,
        dropped,
    })
}

/// Guesses a schema from the file contents: numeric columns holding only
/// 0/1 are binary, other numeric columns continuous, the rest categorical.
pub fn infer_schema(path: impl AsRef<Path>) -> Result<Vec<Field>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut numeric = vec![true; header.len()];
    let mut binary = vec![true; header.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, cell) in rec.iter().enumerate().take(header.len()) {
            if is_missing(cell) {
                continue;
            }
            match cell.trim().parse::<f64>() {
                Ok(v) => binary[j] &= v == 0.0 || v == 1.0,
                Err(_) => {
                    numeric[j] = false;
                    binary[j] = false;
                }
            }
        }
    }
    Ok(header
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let kind = if binary[j] {
                Kind::Binary
            } else if numeric[j] {
                Kind::Continuous
            } else {
                Kind::Categorical(None)
            };
            Field { name, kind }
        })
        .collect())
}

/// One line of a descriptive table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variable: String,
    /// Set for the per-level lines of a categorical variable.
    pub level: Option<String>,
    /// Percentage (binary, categorical) or mean (continuous).
    pub value: f64,
    pub is_percentage: bool,
    /// Sample standard deviation; `None` for non-continuous rows and when n < 2.
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub n: usize,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, variable: &str, level: Option<&str>) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.level.as_deref() == level)
    }
}

pub fn summarize(ds: &Dataset) -> Result<SummaryTable> {
    let n = ds.n_rows();
    if n == 0 {
        return Err(DatasetError::Empty(""));
    }
    let nf = n as f64;
    let mut rows = Vec::new();
    for c in ds.columns() {
        match &c.data {
            ColumnData::Continuous { values, .. } => {
                let mean = values.iter().sum::<f64>() / nf;
                let sd = (n > 1).then(|| {
                    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0))
                        .sqrt()
                });
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                rows.push(SummaryRow {
                    variable: c.name.clone(),
                    level: None,
                    value: mean,
                    is_percentage: false,
                    sd,
                    min,
                    max,
                });
            }
            ColumnData::Binary(v) => {
                let ones = v.iter().filter(|&&b| b == 1).count();
                rows.push(SummaryRow {
                    variable: c.name.clone(),
                    level: None,
                    value: 100.0 * ones as f64 / nf,
                    is_percentage: true,
                    sd: None,
                    min: if ones == n { 1.0 } else { 0.0 },
                    max: if ones == 0 { 0.0 } else { 1.0 },
                });
            }
            ColumnData::Categorical { levels, codes } => {
                let mut counts = vec![0usize; levels.len()];
                for &k in codes {
                    counts[k as usize] += 1;
                }
                for (l, &cnt) in levels.iter().zip(&counts) {
                    rows.push(SummaryRow {
                        variable: c.name.clone(),
                        level: Some(l.clone()),
                        value: 100.0 * cnt as f64 / nf,
                        is_percentage: true,
                        sd: None,
                        min: if cnt == n { 1.0 } else { 0.0 },
                        max: if cnt == 0 { 0.0 } else { 1.0 },
                    });
                }
            }
        }
    }
    Ok(SummaryTable { n, rows })
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Description of the variables (n={})", self.n)?;
        writeln!(
            f,
            "{:<36} {:>18} {:>18} {:>10} {:>10}",
            "Variable", "Percentage / Mean", "Standard deviation", "Minimum", "Maximum"
        )?;
        let mut last_var: Option<&str> = None;
        for r in &self.rows {
            let label = match &r.level {
                Some(l) => {
                    if last_var != Some(r.variable.as_str()) {
                        writeln!(f, "{}", r.variable)?;
                    }
                    format!("  {l}")
                }
                None => r.variable.clone(),
            };
            last_var = Some(r.variable.as_str());
            let value = if r.is_percentage {
                format!("{:.1}%", r.value)
            } else {
                format!("{:.1}", r.value)
            };
            let sd = match (r.is_percentage, r.sd) {
                (true, _) => String::new(),
                (false, Some(s)) => format!("{s:.1}"),
                (false, None) => "—".to_string(),
            };
            writeln!(
                f,
                "{:<36} {:>18} {:>18} {:>10} {:>10}",
                label,
                value,
                sd,
                trim_num(r.min),
                trim_num(r.max)
            )?;
        }
        Ok(())
    }
}

fn trim_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.1}")
    }
}

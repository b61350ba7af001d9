//! Table schemas, CSV ingestion and reproducible row sampling.
//!
//! Tables are stored column-major. Categorical cells hold an index into the
//! column's (lexicographically ordered) category list.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of non-missing cells that must parse as numbers for a column to be
/// inferred continuous.
pub const NUMERIC_INFERENCE_THRESHOLD: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }
}

/// Ordered column typing shared by original and synthetic tables.
///
/// Serializes as a bare JSON list of `{name, kind, categories?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let schema = Self { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema {
                    column: col.name.clone(),
                    message: "duplicate column name".into(),
                });
            }
            match col.kind {
                ColumnKind::Categorical => {
                    if col.categories.is_empty() {
                        return Err(Error::Schema {
                            column: col.name.clone(),
                            message: "categorical column declares no categories".into(),
                        });
                    }
                    let distinct: HashSet<_> = col.categories.iter().collect();
                    if distinct.len() != col.categories.len() {
                        return Err(Error::Schema {
                            column: col.name.clone(),
                            message: "duplicate category".into(),
                        });
                    }
                }
                ColumnKind::Continuous => {
                    if !col.categories.is_empty() {
                        return Err(Error::Schema {
                            column: col.name.clone(),
                            message: "continuous column must not declare categories".into(),
                        });
                    }
                }
            }
        }
        if !self.columns.iter().any(ColumnSpec::is_categorical) {
            return Err(Error::Schema {
                column: "*".into(),
                message: "at least one categorical column is required for conditioning".into(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Like [`index_of`](Self::index_of) but errors on unknown names.
    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
            message: "no such column".into(),
        })
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].is_categorical())
            .collect()
    }
}

/// A single cell value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Continuous(f64),
    Categorical(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }
}

/// An immutable, validated table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: TableSchema,
    columns: Vec<ColumnData>,
    n_rows: usize,
}

impl Table {
    pub fn new(schema: TableSchema, columns: Vec<ColumnData>) -> Result<Self> {
        schema.validate()?;
        if columns.len() != schema.len() {
            return Err(Error::Shape {
                expected: schema.len(),
                actual: columns.len(),
            });
        }
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (spec, data) in schema.columns.iter().zip(&columns) {
            if data.len() != n_rows {
                return Err(Error::Shape {
                    expected: n_rows,
                    actual: data.len(),
                });
            }
            match (spec.kind, data) {
                (ColumnKind::Continuous, ColumnData::Continuous(v)) => {
                    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                        return Err(Error::Schema {
                            column: spec.name.clone(),
                            message: format!("non-finite value {bad}"),
                        });
                    }
                }
                (ColumnKind::Categorical, ColumnData::Categorical(v)) => {
                    let k = spec.categories.len() as u32;
                    if let Some(bad) = v.iter().find(|&&c| c >= k) {
                        return Err(Error::Schema {
                            column: spec.name.clone(),
                            message: format!("category index {bad} out of range ({k} categories)"),
                        });
                    }
                }
                _ => {
                    return Err(Error::Schema {
                        column: spec.name.clone(),
                        message: "column data does not match declared kind".into(),
                    })
                }
            }
        }
        Ok(Self {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &ColumnData {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    /// Category indices of a categorical column. Panics on continuous columns.
    pub fn categorical(&self, i: usize) -> &[u32] {
        match &self.columns[i] {
            ColumnData::Categorical(v) => v,
            ColumnData::Continuous(_) => panic!("column {i} is continuous"),
        }
    }

    /// Values of a continuous column. Panics on categorical columns.
    pub fn continuous(&self, i: usize) -> &[f64] {
        match &self.columns[i] {
            ColumnData::Continuous(v) => v,
            ColumnData::Categorical(_) => panic!("column {i} is categorical"),
        }
    }

    pub fn row(&self, r: usize) -> Vec<Value> {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnData::Continuous(v) => Value::Continuous(v[r]),
                ColumnData::Categorical(v) => Value::Categorical(v[r]),
            })
            .collect()
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.gather(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Per-category counts of a categorical column.
    pub fn category_counts(&self, i: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.schema.columns[i].categories.len()];
        for &c in self.categorical(i) {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Errors unless `other` has exactly the same schema.
    pub fn ensure_same_schema(&self, other: &Table) -> Result<()> {
        if self.schema != other.schema {
            return Err(Error::Schema {
                column: "*".into(),
                message: "tables have different schemas".into(),
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))
            .map_err(csv_err)?;
        let mut record: Vec<String> = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows {
            record.clear();
            for (spec, col) in self.schema.columns.iter().zip(&self.columns) {
                record.push(match col {
                    ColumnData::Continuous(v) => format!("{}", v[r]),
                    ColumnData::Categorical(v) => spec.categories[v[r] as usize].clone(),
                });
            }
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Load a CSV file, inferring the schema when none is given.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&TableSchema>) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Read CSV from any reader. See [`load_csv`].
pub fn read_csv<R: Read>(reader: R, schema: Option<&TableSchema>) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(&e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }

    // (line, cells)
    let mut records: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }

    let mut missing = Vec::new();
    for (line, cells) in &records {
        for (c, cell) in cells.iter().enumerate() {
            if is_missing(cell) {
                missing.push(format!("line {line} column `{}`", headers[c]));
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).cloned().collect();
        return Err(Error::Schema {
            column: "*".into(),
            message: format!(
                "{} missing value(s), imputation is not supported: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > shown.len() { ", ..." } else { "" }
            ),
        });
    }

    let schema = match schema {
        Some(s) => {
            s.validate()?;
            let declared: Vec<&str> = s.columns.iter().map(|c| c.name.as_str()).collect();
            if declared != headers.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Schema {
                    column: "*".into(),
                    message: format!(
                        "header {:?} does not match declared columns {:?}",
                        headers, declared
                    ),
                });
            }
            s.clone()
        }
        None => infer_schema(&headers, &records)?,
    };

    let mut columns = Vec::with_capacity(schema.len());
    for (c, spec) in schema.columns.iter().enumerate() {
        match spec.kind {
            ColumnKind::Continuous => {
                let mut values = Vec::with_capacity(records.len());
                for (line, cells) in &records {
                    let cell = &cells[c];
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => values.push(v),
                        _ => {
                            return Err(Error::Schema {
                                column: spec.name.clone(),
                                message: format!("non-numeric value `{cell}` at line {line}"),
                            })
                        }
                    }
                }
                columns.push(ColumnData::Continuous(values));
            }
            ColumnKind::Categorical => {
                let lookup: HashMap<&str, u32> = spec
                    .categories
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i as u32))
                    .collect();
                let mut values = Vec::with_capacity(records.len());
                for (line, cells) in &records {
                    let cell = cells[c].as_str();
                    match lookup.get(cell) {
                        Some(&k) => values.push(k),
                        None => {
                            return Err(Error::Schema {
                                column: spec.name.clone(),
                                message: format!(
                                    "value `{cell}` at line {line} is not a declared category"
                                ),
                            })
                        }
                    }
                }
                columns.push(ColumnData::Categorical(values));
            }
        }
    }
    Table::new(schema, columns)
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "null" | "NULL" | "?")
}

fn parse_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn infer_schema(headers: &[String], records: &[(u64, Vec<String>)]) -> Result<TableSchema> {
    if records.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let mut columns = Vec::with_capacity(headers.len());
    for (c, name) in headers.iter().enumerate() {
        let numeric = records
            .iter()
            .filter(|(_, cells)| cells[c].parse::<f64>().is_ok_and(f64::is_finite))
            .count();
        if numeric as f64 >= NUMERIC_INFERENCE_THRESHOLD * records.len() as f64 {
            columns.push(ColumnSpec::continuous(name.clone()));
        } else {
            let distinct: BTreeSet<&str> = records.iter().map(|(_, cells)| cells[c].as_str()).collect();
            columns.push(ColumnSpec::categorical(name.clone(), distinct));
        }
    }
    TableSchema::new(columns)
}

fn sample_indices<R: Rng + ?Sized>(rng: &mut R, population: usize, n: usize) -> Vec<usize> {
    if n <= population {
        index::sample(rng, population, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..population)).collect()
    }
}

/// Uniform row sample: without replacement when `n <= N`, with replacement
/// otherwise. Deterministic for a fixed seed.
pub fn sample_rows(table: &Table, n: usize, seed: u64) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_rows_with(table, n, &mut rng)
}

pub fn sample_rows_with<R: Rng + ?Sized>(table: &Table, n: usize, rng: &mut R) -> Result<Table> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    if table.n_rows() == 0 {
        return Err(Error::Argument("cannot sample from an empty table".into()));
    }
    let rows = sample_indices(rng, table.n_rows(), n);
    Ok(table.select_rows(&rows))
}

/// Sample every column independently, which keeps the marginals and destroys
/// all dependence between columns.
pub fn sample_independent(table: &Table, n: usize, seed: u64) -> Result<Table> {
    if n == 0 || table.n_rows() == 0 {
        return Err(Error::Argument("sample size and table must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = table
        .columns
        .iter()
        .map(|col| col.gather(&sample_indices(&mut rng, table.n_rows(), n)))
        .collect();
    Table::new(table.schema.clone(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Table> {
        read_csv(text.as_bytes(), None)
    }

    #[test]
    fn infers_kinds() {
        let t = parse("age,sex\n34,M\n27,F\n51,F\n").unwrap();
        assert_eq!(t.schema().columns[0].kind, ColumnKind::Continuous);
        assert_eq!(t.schema().columns[1].kind, ColumnKind::Categorical);
        assert_eq!(t.schema().columns[1].categories, vec!["F", "M"]);
        assert_eq!(t.categorical(1), &[1, 0, 0]);
        assert_eq!(t.continuous(0), &[34.0, 27.0, 51.0]);
    }

    #[test]
    fn declared_schema_rejects_unknown_category() {
        let schema = TableSchema::new(vec![ColumnSpec::categorical("g", ["A", "B"])]).unwrap();
        let err = read_csv("g\nA\nX\n".as_bytes(), Some(&schema)).unwrap_err();
        match err {
            Error::Schema { column, message } => {
                assert_eq!(column, "g");
                assert!(message.contains("`X`"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(parse(""), Err(Error::Parse { .. })));
        assert!(matches!(parse("a,b\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn ragged_row_reports_line() {
        match parse("a,b\nx,1\ny\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_values_rejected() {
        let err = parse("a,b\nx,1\n,2\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn stray_token_keeps_column_continuous_but_fails_load() {
        let mut text = String::from("v,g\n");
        for i in 0..200 {
            text.push_str(&format!("{i},A\n"));
        }
        text.push_str("oops,A\n");
        let err = parse(&text).unwrap_err();
        assert!(matches!(err, Error::Schema { ref column, .. } if column == "v"), "{err}");
    }

    #[test]
    fn coded_numbers_with_many_tokens_become_categorical() {
        let t = parse("v,g\n1,A\nx,B\n3,A\n").unwrap();
        assert_eq!(t.schema().columns[0].kind, ColumnKind::Categorical);
    }

    #[test]
    fn schema_needs_a_categorical_column() {
        assert!(TableSchema::new(vec![ColumnSpec::continuous("x")]).is_err());
        assert!(parse("x\n1\n2\n").is_err());
    }

    #[test]
    fn schema_json_shape() {
        let schema = TableSchema::new(vec![
            ColumnSpec::continuous("age"),
            ColumnSpec::categorical("sex", ["F", "M"]),
        ])
        .unwrap();
        let json = serde_json::to_string(&schema).unwrap();
        assert_eq!(
            json,
            r#"[{"name":"age","kind":"continuous"},{"name":"sex","kind":"categorical","categories":["F","M"]}]"#
        );
        let back: TableSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
    }

    #[test]
    fn full_sample_is_permutation() {
        let t = parse("i,g\n0,A\n1,B\n2,A\n3,B\n4,A\n").unwrap();
        let s = sample_rows(&t, 5, 9).unwrap();
        let mut ids: Vec<f64> = s.continuous(0).to_vec();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s, sample_rows(&t, 5, 9).unwrap());
    }

    #[test]
    fn zero_sample_is_error() {
        let t = parse("i,g\n0,A\n").unwrap();
        assert!(matches!(sample_rows(&t, 0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn oversample_uses_replacement() {
        let t = parse("i,g\n0,A\n1,B\n").unwrap();
        let s = sample_rows(&t, 10, 3).unwrap();
        assert_eq!(s.n_rows(), 10);
        assert!(s.continuous(0).iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn independent_sample_keeps_marginals() {
        let t = parse("i,g\n0,A\n1,B\n2,B\n3,B\n").unwrap();
        let s = sample_independent(&t, 4, 5).unwrap();
        assert_eq!(s.category_counts(1), t.category_counts(1));
        let mut ids = s.continuous(0).to_vec();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, vec![0.0, 1.0, 2.0, 3.0]);
    }
}

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{CrashType, FeatureKind, FeatureSchema};
use crate::error::{FgttError, Result};

/// Column storage; `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    /// Index into the feature's declared category list.
    Categorical(Vec<Option<usize>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            Column::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

/// Crash records stored column-wise against a [`FeatureSchema`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    columns: Vec<Column>,
    auxiliary: Vec<Vec<String>>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        columns: Vec<Column>,
        auxiliary: Vec<Vec<String>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if columns.len() != schema.features.len() {
            return Err(FgttError::Contract(format!(
                "{} columns for {} features",
                columns.len(),
                schema.features.len()
            )));
        }
        if auxiliary.len() != schema.auxiliary.len() {
            return Err(FgttError::Contract("auxiliary column count differs from schema".into()));
        }
        for (col, spec) in columns.iter().zip(&schema.features) {
            if col.len() != n {
                return Err(FgttError::Contract(format!(
                    "column {} has {} rows, labels have {n}",
                    spec.name,
                    col.len()
                )));
            }
            match (col, spec.kind) {
                (Column::Numeric(_), FeatureKind::Numeric) => {}
                (Column::Categorical(v), FeatureKind::Categorical) => {
                    if v.iter().flatten().any(|&c| c >= spec.categories.len()) {
                        return Err(FgttError::Contract(format!(
                            "category index out of range in {}",
                            spec.name
                        )));
                    }
                }
                _ => {
                    return Err(FgttError::Contract(format!(
                        "column kind does not match feature {}",
                        spec.name
                    )))
                }
            }
        }
        if auxiliary.iter().any(|a| a.len() != n) {
            return Err(FgttError::Contract(
                "auxiliary column length differs from labels".into(),
            ));
        }
        if labels.iter().any(|&y| y >= CrashType::ALL.len()) {
            return Err(FgttError::Contract("label out of range".into()));
        }
        Ok(Dataset {
            schema,
            columns,
            auxiliary,
            labels,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.feature_index(name).map(|i| &self.columns[i])
    }

    pub(crate) fn column_mut(&mut self, index: usize) -> &mut Column {
        &mut self.columns[index]
    }

    pub fn auxiliary(&self, name: &str) -> Option<&[String]> {
        self.schema
            .auxiliary
            .iter()
            .position(|a| a == name)
            .map(|i| self.auxiliary[i].as_slice())
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            auxiliary: self
                .auxiliary
                .iter()
                .map(|a| rows.iter().map(|&r| a[r].clone()).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Writes the delimited text form: a header row, then one record per row
    /// with features, auxiliary columns and the label, in schema order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.extend(self.schema.auxiliary.iter().map(String::as_str));
        header.push(&self.schema.label);
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            for (col, spec) in self.columns.iter().zip(&self.schema.features) {
                record.push(match col {
                    Column::Numeric(v) => v[r].map(|x| x.to_string()).unwrap_or_default(),
                    Column::Categorical(v) => v[r].map(|c| spec.categories[c].clone()).unwrap_or_default(),
                });
            }
            for a in &self.auxiliary {
                record.push(a[r].clone());
            }
            record.push(CrashType::ALL[self.labels[r]].name().to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| FgttError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads a delimited text file whose header names exactly the schema's
/// features, auxiliary columns and label (in any order).
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| FgttError::io(path, e))?;
    read_dataset(std::io::BufReader::new(f), schema)
}

pub fn read_dataset<R: Read>(input: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let positions: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    if positions.len() != header.len() {
        return Err(FgttError::Header("duplicate column in header".into()));
    }
    let expected: Vec<&str> = schema
        .features
        .iter()
        .map(|f| f.name.as_str())
        .chain(schema.auxiliary.iter().map(String::as_str))
        .chain(std::iter::once(schema.label.as_str()))
        .collect();
    let missing: Vec<&str> = expected
        .iter()
        .copied()
        .filter(|n| !positions.contains_key(n))
        .collect();
    let extra: Vec<&str> = positions.keys().copied().filter(|h| !expected.contains(h)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(FgttError::Header(format!(
            "missing columns {missing:?}, unexpected columns {extra:?}"
        )));
    }

    let mut columns: Vec<Column> = schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Numeric => Column::Numeric(Vec::new()),
            FeatureKind::Categorical => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut auxiliary: Vec<Vec<String>> = vec![Vec::new(); schema.auxiliary.len()];
    let mut labels = Vec::new();
    let feature_pos: Vec<usize> = schema.features.iter().map(|f| positions[f.name.as_str()]).collect();
    let aux_pos: Vec<usize> = schema.auxiliary.iter().map(|a| positions[a.as_str()]).collect();
    let label_pos = positions[schema.label.as_str()];

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = row + 1;
        for ((col, spec), &p) in columns.iter_mut().zip(&schema.features).zip(&feature_pos) {
            let cell = record.get(p).unwrap_or("").trim();
            match col {
                Column::Numeric(v) => v.push(cell.parse::<f64>().ok().filter(|x| x.is_finite())),
                Column::Categorical(v) => {
                    if cell.is_empty() {
                        v.push(None);
                    } else {
                        let idx = spec.category_index(cell).ok_or_else(|| FgttError::Category {
                            row: row_no,
                            feature: spec.name.clone(),
                            value: cell.to_string(),
                        })?;
                        v.push(Some(idx));
                    }
                }
            }
        }
        for (a, &p) in auxiliary.iter_mut().zip(&aux_pos) {
            a.push(record.get(p).unwrap_or("").trim().to_string());
        }
        let label = record.get(label_pos).unwrap_or("").trim();
        let y = CrashType::parse(label).ok_or_else(|| FgttError::Category {
            row: row_no,
            feature: schema.label.clone(),
            value: label.to_string(),
        })?;
        labels.push(y.id());
    }
    Dataset::new(schema.clone(), columns, auxiliary, labels)
}

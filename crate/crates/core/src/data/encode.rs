use std::io::Write;

use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use super::schema::{FeatureGroup, FeatureSchema};
use crate::autodiff::Tensor;
use crate::error::{FgttError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-numeric-feature mean and population standard deviation, fit on the
/// training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub features: Vec<FeatureStats>,
}

impl NormalizationStats {
    pub fn get(&self, feature: &str) -> Option<&FeatureStats> {
        self.features.iter().find(|s| s.feature == feature)
    }
}

pub fn fit_stats(data: &Dataset, train: &[usize]) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(FgttError::Contract("cannot fit normalization on zero rows".into()));
    }
    let mut features = Vec::new();
    for (spec, col) in data.schema().features.iter().zip(data.columns()) {
        let Column::Numeric(v) = col else { continue };
        let mut xs = Vec::with_capacity(train.len());
        for &r in train {
            xs.push(v[r].ok_or_else(|| {
                FgttError::Contract(format!("{} has a missing value at row {r}; impute first", spec.name))
            })?);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(FgttError::ConstantColumn(spec.name.clone()));
        }
        features.push(FeatureStats {
            feature: spec.name.clone(),
            mean,
            std,
        });
    }
    Ok(NormalizationStats { features })
}

/// Provenance of one encoded column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub feature: String,
    pub group: FeatureGroup,
    /// `None` for standardized numeric columns.
    pub category: Option<String>,
}

/// Dense design matrix with per-column provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub values: Tensor,
    pub column_meta: Vec<ColumnMeta>,
}

impl EncodedMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.column_meta.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn select_rows(&self, rows: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            values: self.values.select_rows(rows),
            column_meta: self.column_meta.clone(),
        }
    }

    /// Column indices belonging to each original feature, in column order.
    pub fn feature_blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut blocks: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, m) in self.column_meta.iter().enumerate() {
            match blocks.iter_mut().find(|(f, _)| *f == m.feature) {
                Some((_, cols)) => cols.push(i),
                None => blocks.push((m.feature.clone(), vec![i])),
            }
        }
        blocks
    }

    /// Recovers the category of `feature` in row `i` from its one-hot block.
    pub fn decode_category(&self, i: usize, feature: &str) -> Option<String> {
        let row = self.row(i);
        self.column_meta
            .iter()
            .enumerate()
            .find(|(j, m)| m.feature == feature && m.category.is_some() && row[*j] == 1.0)
            .and_then(|(_, m)| m.category.clone())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = self
            .column_meta
            .iter()
            .map(|m| match &m.category {
                Some(c) => format!("{}={}", m.feature, c),
                None => m.feature.clone(),
            })
            .collect();
        w.write_record(&header)?;
        for i in 0..self.rows() {
            w.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| FgttError::io("<csv output>", e))?;
        Ok(())
    }
}

pub fn column_meta(schema: &FeatureSchema) -> Vec<ColumnMeta> {
    let mut meta = Vec::with_capacity(schema.encoded_width());
    for f in &schema.features {
        if f.is_numeric() {
            meta.push(ColumnMeta {
                feature: f.name.clone(),
                group: f.group,
                category: None,
            });
        } else {
            meta.extend(f.categories.iter().map(|c| ColumnMeta {
                feature: f.name.clone(),
                group: f.group,
                category: Some(c.clone()),
            }));
        }
    }
    meta
}

/// Standardizes numeric features and one-hot encodes categorical features
/// (one column per declared category, in declaration order).
pub fn encode(data: &Dataset, stats: &NormalizationStats) -> Result<EncodedMatrix> {
    let schema = data.schema();
    let meta = column_meta(schema);
    let width = meta.len();
    let n = data.n_rows();
    if n == 0 {
        return Err(FgttError::Contract("cannot encode an empty dataset".into()));
    }
    let mut values = vec![0.0; n * width];
    let mut offset = 0;
    for (spec, col) in schema.features.iter().zip(data.columns()) {
        match col {
            Column::Numeric(v) => {
                let s = stats
                    .get(&spec.name)
                    .ok_or_else(|| FgttError::Contract(format!("no normalization stats for {}", spec.name)))?;
                for (r, x) in v.iter().enumerate() {
                    let x = x.ok_or_else(|| {
                        FgttError::Contract(format!("{} is missing at row {r}; impute first", spec.name))
                    })?;
                    values[r * width + offset] = (x - s.mean) / s.std;
                }
                offset += 1;
            }
            Column::Categorical(v) => {
                for (r, c) in v.iter().enumerate() {
                    let c = c.ok_or_else(|| FgttError::Contract(format!("{} is missing at row {r}", spec.name)))?;
                    values[r * width + offset + c] = 1.0;
                }
                offset += spec.categories.len();
            }
        }
    }
    Ok(EncodedMatrix {
        values: Tensor::new(vec![n, width], values)?,
        column_meta: meta,
    })
}

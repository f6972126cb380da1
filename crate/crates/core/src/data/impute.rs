use std::collections::HashMap;

use super::dataset::{Column, Dataset};
use super::schema::{PRECIP_GROUPING, SPEED_GROUPING};
use crate::error::{FgttError, Result};

enum KeySource<'a> {
    Category(&'a [Option<usize>]),
    Text(&'a [String]),
}

/// Fills missing `target` cells with the mean of observed values that share
/// the row's grouping key; groups with no observed value fall back to the
/// global observed mean.
///
/// Grouping columns may be categorical features or auxiliary columns and must
/// be fully observed.
pub fn impute_group_mean(data: &Dataset, target: &str, grouping: &[&str]) -> Result<Dataset> {
    let target_idx = data
        .schema()
        .feature_index(target)
        .ok_or_else(|| FgttError::Contract(format!("unknown feature {target}")))?;
    let Column::Numeric(values) = &data.columns()[target_idx] else {
        return Err(FgttError::Contract(format!(
            "imputation target {target} is not numeric"
        )));
    };

    let mut sources = Vec::with_capacity(grouping.len());
    for &name in grouping {
        let source = if let Some(col) = data.column(name) {
            match col {
                Column::Categorical(v) => {
                    if v.iter().any(Option::is_none) {
                        return Err(FgttError::Contract(format!(
                            "grouping feature {name} has missing cells"
                        )));
                    }
                    KeySource::Category(v)
                }
                Column::Numeric(_) => {
                    return Err(FgttError::Contract(format!(
                        "grouping feature {name} is not categorical"
                    )))
                }
            }
        } else if let Some(aux) = data.auxiliary(name) {
            if aux.iter().any(String::is_empty) {
                return Err(FgttError::Contract(format!("grouping column {name} has missing cells")));
            }
            KeySource::Text(aux)
        } else {
            return Err(FgttError::Contract(format!("unknown grouping column {name}")));
        };
        sources.push(source);
    }

    let key_of = |row: usize| -> Vec<String> {
        sources
            .iter()
            .map(|s| match s {
                KeySource::Category(v) => v[row].expect("checked").to_string(),
                KeySource::Text(v) => v[row].clone(),
            })
            .collect()
    };

    let mut sums: HashMap<Vec<String>, (f64, usize)> = HashMap::new();
    let (mut global_sum, mut global_n) = (0.0, 0usize);
    for (row, v) in values.iter().enumerate() {
        if let Some(x) = v {
            let e = sums.entry(key_of(row)).or_insert((0.0, 0));
            e.0 += x;
            e.1 += 1;
            global_sum += x;
            global_n += 1;
        }
    }
    if global_n == 0 {
        return Err(FgttError::Imputation(format!("every value of {target} is missing")));
    }
    let global_mean = global_sum / global_n as f64;

    let filled: Vec<Option<f64>> = values
        .iter()
        .enumerate()
        .map(|(row, v)| {
            Some(v.unwrap_or_else(|| match sums.get(&key_of(row)) {
                Some(&(s, n)) if n > 0 => s / n as f64,
                _ => global_mean,
            }))
        })
        .collect();
    let mut out = data.clone();
    *out.column_mut(target_idx) = Column::Numeric(filled);
    Ok(out)
}

/// Precipitation accumulation by (City, Date_element), then hourly average
/// speed by (Num_lanes, Day_of_week, Facility_type, Area_type, Time_of_day).
pub fn impute_default(data: &Dataset) -> Result<Dataset> {
    let d = impute_group_mean(data, "Precip_accum", &PRECIP_GROUPING)?;
    impute_group_mean(&d, "Hourly_avg_speed", &SPEED_GROUPING)
}

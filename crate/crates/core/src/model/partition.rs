use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, FeatureGroup, FeatureSchema};
use crate::error::{FgttError, Result};

/// Encoded-matrix columns owned by each feature group, in the fixed group
/// order. Groups without columns are left out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<(FeatureGroup, Vec<usize>)>,
}

impl GroupPartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total number of partitioned columns.
    pub fn width(&self) -> usize {
        self.groups.iter().map(|(_, c)| c.len()).sum()
    }

    pub fn columns(&self, group: FeatureGroup) -> Option<&[usize]> {
        self.groups.iter().find(|(g, _)| *g == group).map(|(_, c)| c.as_slice())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.groups.iter().map(|(g, _)| g.name()).collect()
    }

    /// Checks disjointness and full coverage of `0..width`.
    pub fn validate(&self) -> Result<()> {
        let width = self.width();
        let mut seen = vec![false; width];
        for (g, cols) in &self.groups {
            if cols.is_empty() {
                return Err(FgttError::Partition(format!("group {g} has no columns")));
            }
            for &c in cols {
                if c >= width || seen[c] {
                    return Err(FgttError::Partition(format!(
                        "column {c} is out of range or assigned twice"
                    )));
                }
                seen[c] = true;
            }
        }
        Ok(())
    }

    /// The same partition with groups listed in `order` (a permutation of
    /// group positions).
    pub fn reordered(&self, order: &[usize]) -> Result<GroupPartition> {
        check_permutation(order, self.len())?;
        Ok(GroupPartition {
            groups: order.iter().map(|&i| self.groups[i].clone()).collect(),
        })
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(FgttError::Contract(format!("{order:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

/// Assigns each encoded column to its source feature's group.
pub fn partition_columns(meta: &[ColumnMeta], schema: &FeatureSchema) -> Result<GroupPartition> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); FeatureGroup::ALL.len()];
    for (i, m) in meta.iter().enumerate() {
        let spec = schema.feature(&m.feature).ok_or_else(|| {
            FgttError::Partition(format!(
                "column {i} comes from {}, which the schema does not declare",
                m.feature
            ))
        })?;
        let slot = FeatureGroup::ALL
            .iter()
            .position(|g| *g == spec.group)
            .expect("every group is listed");
        buckets[slot].push(i);
    }
    let groups = FeatureGroup::ALL
        .iter()
        .zip(buckets)
        .filter(|(_, c)| !c.is_empty())
        .map(|(g, c)| (*g, c))
        .collect();
    let p = GroupPartition { groups };
    p.validate()?;
    Ok(p)
}

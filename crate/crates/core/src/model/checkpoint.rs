use std::path::Path;

use serde::{Deserialize, Serialize};

use super::partition::GroupPartition;
use super::transformer::{FgttConfig, FgttModel};
use crate::autodiff::Tensor;
use crate::data::{FeatureSchema, NormalizationStats};
use crate::error::{FgttError, Result};

pub const CHECKPOINT_FORMAT: &str = "fgtt-checkpoint/1";

/// Self-describing model file: everything needed to encode raw rows and
/// run the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: FgttConfig,
    pub schema: FeatureSchema,
    pub schema_fingerprint: String,
    pub partition: GroupPartition,
    pub normalization: NormalizationStats,
    pub param_names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(model: &FgttModel, schema: &FeatureSchema, normalization: &NormalizationStats) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config().clone(),
            schema: schema.clone(),
            schema_fingerprint: schema.fingerprint(),
            partition: model.partition().clone(),
            normalization: normalization.clone(),
            param_names: model.param_names().to_vec(),
            params: model.params().to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| FgttError::io(path, e))
    }

    /// Parses a checkpoint; when `expected` is given its fingerprint must
    /// match the one the model was trained under.
    pub fn from_json(text: &str, expected: Option<&FeatureSchema>) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| FgttError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(FgttError::Checkpoint(format!("unsupported format {:?}", c.format)));
        }
        if c.schema.fingerprint() != c.schema_fingerprint {
            return Err(FgttError::Checkpoint(
                "embedded schema does not match its fingerprint".into(),
            ));
        }
        if let Some(s) = expected {
            let fp = s.fingerprint();
            if fp != c.schema_fingerprint {
                return Err(FgttError::Checkpoint(format!(
                    "schema fingerprint mismatch: checkpoint {}, expected {}",
                    c.schema_fingerprint, fp
                )));
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path, expected: Option<&FeatureSchema>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FgttError::io(path, e))?;
        Self::from_json(&text, expected)
    }

    pub fn model(&self) -> Result<FgttModel> {
        let m = FgttModel::from_parts(self.config.clone(), self.partition.clone(), self.params.clone())?;
        if m.param_names() != self.param_names.as_slice() {
            return Err(FgttError::Checkpoint(
                "parameter names do not match the model layout".into(),
            ));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode::column_meta;
    use crate::data::{FeatureGroup, FeatureSpec, FeatureStats};
    use crate::model::partition::partition_columns;

    fn setup() -> (FgttModel, FeatureSchema, NormalizationStats) {
        let s = FeatureSchema::new(
            vec![
                FeatureSpec::numeric("a", FeatureGroup::Event),
                FeatureSpec::categorical("c", &["x", "y"], FeatureGroup::Vehicle),
            ],
            vec![],
        )
        .unwrap();
        let p = partition_columns(&column_meta(&s), &s).unwrap();
        let cfg = FgttConfig {
            hidden_dim: 4,
            ffn_dim: 4,
            n_heads: 2,
            n_layers: 1,
            projector_hidden: 3,
            ..FgttConfig::default()
        };
        let stats = NormalizationStats {
            features: vec![FeatureStats {
                feature: "a".into(),
                mean: 1.0,
                std: 2.0,
            }],
        };
        (FgttModel::new(cfg, p).unwrap(), s, stats)
    }

    #[test]
    fn round_trip() {
        let (m, s, stats) = setup();
        let c = Checkpoint::new(&m, &s, &stats);
        let back = Checkpoint::from_json(&c.to_json().unwrap(), Some(&s)).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.model().unwrap(), m);
    }

    #[test]
    fn fingerprint_mismatch_fails() {
        let (m, s, stats) = setup();
        let json = Checkpoint::new(&m, &s, &stats).to_json().unwrap();
        let other = FeatureSchema::crash_default();
        assert!(matches!(
            Checkpoint::from_json(&json, Some(&other)),
            Err(FgttError::Checkpoint(_))
        ));
    }

    #[test]
    fn tampered_schema_fails() {
        let (m, s, stats) = setup();
        let mut c = Checkpoint::new(&m, &s, &stats);
        c.schema.features[0].name = "b".into();
        assert!(Checkpoint::from_json(&c.to_json().unwrap(), None).is_err());
    }

    #[test]
    fn garbage_fails() {
        assert!(matches!(
            Checkpoint::from_json("{", None),
            Err(FgttError::Checkpoint(_))
        ));
    }
}

//! The single TOML run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BoosterConfig, BoosterGrid, ForestConfig, ForestGrid};
use crate::data::FeatureSchema;
use crate::error::{FgttError, Result};
use crate::hpo::{SearchSpace, DEFAULT_N_INIT};
use crate::model::FgttConfig;
use crate::synth::GeneratorConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    /// TOML or JSON schema file; the built-in crash schema when absent.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratios: [0.885, 0.0575, 0.0575],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `γ = 2` with inverse-frequency class weights.
    InverseFrequency,
    /// Plain cross-entropy.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub weighting: ClassWeighting,
    /// Overrides the focusing parameter of the chosen weighting.
    pub gamma: Option<f64>,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            weighting: ClassWeighting::InverseFrequency,
            gamma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub budget: usize,
    pub n_init: usize,
    /// Epoch cap for each trial's training run.
    pub max_epochs: usize,
    pub patience: usize,
    pub space: SearchSpace,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            budget: 30,
            n_init: DEFAULT_N_INIT,
            max_epochs: 20,
            patience: 3,
            space: SearchSpace::fgtt_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub forest_grid: ForestGrid,
    pub booster_grid: BoosterGrid,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: 5,
            forest_grid: ForestGrid::default(),
            booster_grid: BoosterGrid::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every section's own seed.
    pub seed: Option<u64>,
    pub schema: SchemaSection,
    pub generator: GeneratorConfig,
    pub split: SplitSection,
    pub model: FgttConfig,
    pub training: TrainConfig,
    pub loss: LossSection,
    pub search: SearchSection,
    pub forest: ForestConfig,
    pub booster: BoosterConfig,
    pub cv: CvSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| FgttError::Config(e.to_string()))?;
        if let Some(s) = c.seed {
            c.set_seed(s);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FgttError::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        // schema paths are relative to the config file
        if let (Some(p), Some(dir)) = (&c.schema.path, path.parent()) {
            if p.is_relative() {
                c.schema.path = Some(dir.join(p));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FgttError::Config(e.to_string()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.generator.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
        self.forest.seed = seed;
        self.booster.seed = seed;
    }

    /// The global seed, or the training seed when none was set.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.training.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.forest.validate()?;
        self.booster.validate()?;
        self.search.space.validate()?;
        let r = self.split.ratios;
        if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FgttError::Config(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        if self.search.n_init < 2 || self.search.budget < self.search.n_init {
            return Err(FgttError::Config("search needs budget >= n_init >= 2".into()));
        }
        if self.cv.folds < 2 {
            return Err(FgttError::Config("cv.folds must be at least 2".into()));
        }
        if let Some(g) = self.loss.gamma {
            if !(g >= 0.0) {
                return Err(FgttError::Config(format!("loss.gamma must be >= 0, got {g}")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        match &self.schema.path {
            Some(p) => FeatureSchema::load(p),
            None => Ok(FeatureSchema::crash_default()),
        }
    }
}

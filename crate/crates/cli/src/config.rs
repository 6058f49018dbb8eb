//! Run configuration file.
//!
//! ```toml
//! output_dir = "out"          # default: $FAIRSVI_OUTPUT_DIR, else ./fairsvi-out
//! workers = 0                 # grid worker threads, 0 = all cores
//! restarts = []               # extra seeds for random restarts in `train`
//!
//! [model]                     # kind = "nb" | "gmm" | "sp", k = 3, ...
//! [data]                      # path (required), schema (required)
//! [split]                     # train/dev/test fractions + seed, or *_file paths
//! [train]                     # optimizer, network and schedule settings
//! [fairness]                  # lambda, epsilon0, alpha, slack
//! [grid]                      # value lists searched by `grid`
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use fairsvi::data::SplitSpec;
use fairsvi::models::ModelConfig;
use fairsvi::training::{GridSpec, TrainConfig};
use fairsvi::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

/// Fairness settings; these replace the same-named `[train]` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairnessSection {
    pub lambda: f64,
    pub epsilon0: f64,
    pub alpha: f64,
    pub slack: f64,
}

impl Default for FairnessSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        FairnessSection { lambda: t.lambda, epsilon0: t.epsilon0, alpha: t.alpha, slack: t.slack }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub restarts: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fairness: FairnessSection,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.schema.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output_dir.as_mut() {
            fix(p);
        }
        if let SplitSpec::Files { train_file, dev_file, test_file } = &mut self.split {
            for f in [train_file, dev_file, test_file] {
                if Path::new(f.as_str()).is_relative() {
                    *f = base.join(&*f).display().to_string();
                }
            }
        }
    }

    /// Training settings with the fairness section applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.fairness.lambda,
            epsilon0: self.fairness.epsilon0,
            alpha: self.fairness.alpha,
            slack: self.fairness.slack,
            ..self.train.clone()
        }
    }

    pub fn schema_path(&self) -> Result<&Path> {
        self.data.schema.as_deref().ok_or_else(|| Error::Config("data.schema is required".into()))
    }

    /// Checks that referenced files exist and settings are in range.
    pub fn validate(&self) -> Result<()> {
        let schema = self.schema_path()?;
        if !schema.is_file() {
            return Err(Error::Config(format!("schema file {} does not exist", schema.display())));
        }
        match &self.split {
            SplitSpec::Fractions { .. } => {
                let path = self.data.path.as_deref().ok_or_else(|| Error::Config("data.path is required".into()))?;
                if !path.is_file() {
                    return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
                }
            }
            SplitSpec::Files { train_file, dev_file, test_file } => {
                for f in [train_file, dev_file, test_file] {
                    if !Path::new(f).is_file() {
                        return Err(Error::Config(format!("split file {f} does not exist")));
                    }
                }
            }
        }
        self.train_config().validate()?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg: RunConfig = toml::from_str("[data]\npath = \"d.csv\"\nschema = \"s.toml\"\n").unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.split, SplitSpec::default());
        assert!(cfg.grid.is_none());
    }

    #[test]
    fn fairness_section_overrides_training_values() {
        let text = "[data]\npath = \"d.csv\"\nschema = \"s.toml\"\n[train]\nlambda = 9.0\n[fairness]\nlambda = 2.5\nslack = 0.05\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let t = cfg.train_config();
        assert_eq!((t.lambda, t.slack), (2.5, 0.05));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[data]\npath = \"d.csv\"\nbogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("[data]\npath = \"d.csv\"\n[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg: RunConfig = toml::from_str("[data]\npath = \"d.csv\"\nschema = \"/abs/s.toml\"\n").unwrap();
        cfg.resolve_paths(Path::new("/cfg/dir"));
        assert_eq!(cfg.data.path.unwrap(), Path::new("/cfg/dir/d.csv"));
        assert_eq!(cfg.data.schema.unwrap(), Path::new("/abs/s.toml"));
    }
}

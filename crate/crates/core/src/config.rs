//! Run configuration: one TOML file drives every subcommand.
//!
//! Every key is optional. The full set of defaults:
//!
//! ```toml
//! seed = 0
//! workers = 1
//! stage5 = true
//!
//! [paths]
//! train = "data/train.jsonl"     # annotation file used by train, augment, split
//! test = "data/test.jsonl"       # annotation file used by infer and eval
//! model = "model"                # model bundle directory
//! output = "out"                 # artifacts directory
//!
//! [synthetic]
//! count = 2000
//! test_fraction = 0.2
//! image_size = 96
//! yaw_range = 60.0
//! pitch_range = 25.0
//! roll_range = 30.0
//! scale_min = 0.27
//! scale_max = 0.33
//! center_jitter = 0.04
//! box_jitter = 0.06
//! blob_sigma = 0.055
//! texture_seed = 0
//!
//! [cascade]
//! context = 1.5
//! patch_jitter = 0.25
//! warm_start = true
//! render = { width = 64, height = 64, sigma = 1.5, amplitude = 1.0, tau = 0.03 }
//! patch = { size_fraction = 0.25, resolution = 16, sigma = 1.5 }
//!
//! # Per-stage overrides of the built-in policies, keyed by stage number.
//! [stages.1]
//! epochs = 8
//! learning_rate = 0.01
//!
//! [protocol]
//! name = "pifa"                  # pifa | all-variants | afw
//! test_size = 1000
//! include_originals = false
//! margin = 0.25
//!
//! [eval]
//! accuracy_mode = "all-axes"     # all-axes | yaw-only
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeConfig, NUM_STAGES};
use crate::data::SyntheticFaceSpec;
use crate::error::{KeplerError, Result};
use crate::eval::AccuracyMode;
use crate::learning::StagePolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub model: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: "data/train.jsonl".into(),
            test: "data/test.jsonl".into(),
            model: "model".into(),
            output: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub count: usize,
    /// Share of generated faces written to the test file.
    pub test_fraction: f64,
    #[serde(flatten)]
    pub spec: SyntheticFaceSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            count: 2000,
            test_fraction: 0.2,
            spec: SyntheticFaceSpec::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    #[default]
    Pifa,
    AllVariants,
    Afw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub name: ProtocolName,
    pub test_size: usize,
    pub include_originals: bool,
    /// Crop margin around augmented boxes, as a fraction of the box size.
    pub margin: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            name: ProtocolName::Pifa,
            test_size: 1000,
            include_originals: false,
            margin: 0.25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub accuracy_mode: AccuracyMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub stage5: bool,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub cascade: CascadeConfig,
    /// Partial stage policies keyed by stage number, merged over the
    /// built-in defaults.
    pub stages: BTreeMap<String, toml::Table>,
    pub protocol: ProtocolConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            stage5: true,
            paths: Paths::default(),
            synthetic: SyntheticConfig::default(),
            cascade: CascadeConfig::default(),
            stages: BTreeMap::new(),
            protocol: ProtocolConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            KeplerError::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KeplerError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Built-in policies with the `[stages.N]` tables applied.
    pub fn policies(&self) -> Result<Vec<StagePolicy>> {
        for key in self.stages.keys() {
            match key.parse::<usize>() {
                Ok(s) if (1..=NUM_STAGES).contains(&s) => {}
                _ => {
                    return Err(KeplerError::InvalidConfig(format!(
                        "[stages.{key}]: stage keys must be 1 to {NUM_STAGES}"
                    )))
                }
            }
        }
        (1..=NUM_STAGES as u8)
            .map(|s| {
                let base = StagePolicy::for_stage(s);
                let Some(over) = self.stages.get(&s.to_string()) else {
                    return Ok(base);
                };
                if over.contains_key("stage") {
                    return Err(KeplerError::InvalidConfig(format!(
                        "[stages.{s}]: the stage number comes from the table name"
                    )));
                }
                let mut table = toml::Table::try_from(&base).map_err(|e| KeplerError::Format(e.to_string()))?;
                table.extend(over.clone());
                table
                    .try_into()
                    .map_err(|e: toml::de::Error| KeplerError::InvalidConfig(format!("[stages.{s}]: {}", e.message())))
            })
            .collect()
    }

    /// Cascade training settings with seed, workers, stage-5 switch and
    /// policies taken from the top level.
    pub fn cascade_config(&self) -> Result<CascadeConfig> {
        let mut c = self.cascade.clone();
        c.policies = self.policies()?;
        c.seed = self.seed;
        c.workers = self.workers;
        c.train_stage5 = self.stage5;
        Ok(c)
    }

    /// Checks that need no files on disk.
    pub fn validate(&self) -> Result<()> {
        self.cascade_config()?.validate()?;
        let s = &self.synthetic;
        if s.spec.image_size < 16 || !(s.spec.scale_min > 0.0 && s.spec.scale_min <= s.spec.scale_max) {
            return Err(KeplerError::InvalidConfig(
                "synthetic image_size must be at least 16 and 0 < scale_min <= scale_max".into(),
            ));
        }
        if !(0.0..1.0).contains(&s.test_fraction) {
            return Err(KeplerError::InvalidConfig("synthetic test_fraction must lie in [0, 1)".into()));
        }
        if !(self.protocol.margin >= 0.0) {
            return Err(KeplerError::InvalidConfig("protocol margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Fail with a configuration error naming `what` unless `path` exists.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(KeplerError::InvalidConfig(format!(
            "{what} {} does not exist; set it in the config file or on the command line",
            path.display()
        )))
    }
}

//! The trained cascade and its on-disk bundle.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};
use crate::learning::StagePolicy;
use crate::model::MeanShape;
use crate::regressor::RegressorParams;
use crate::render::RenderConfig;

/// Number of cascade iterations.
pub const NUM_STAGES: usize = 5;

const BUNDLE_VERSION: u32 = 1;

/// Local patch stage geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    /// Patch side as a fraction of the face size `sqrt(w h)`.
    pub size_fraction: f64,
    /// Patch network input resolution.
    pub resolution: usize,
    /// Width of the centre Gaussian channel, in patch pixels.
    pub sigma: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size_fraction: 0.25,
            resolution: 16,
            sigma: 1.5,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.size_fraction > 0.0) || self.resolution < 4 || !(self.sigma > 0.0) {
            return Err(KeplerError::InvalidConfig(
                "patch size fraction and sigma must be positive, resolution at least 4".into(),
            ));
        }
        Ok(())
    }

    /// Patch side `W` in image pixels for a face of size `face_size`.
    pub fn side(&self, face_size: f64) -> f64 {
        (self.size_fraction * face_size).round().max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    pub mean_shape: MeanShape,
    /// One policy per stage, in stage order.
    pub policies: Vec<StagePolicy>,
    /// Stages 1..=4 global networks, then the optional stage-5 patch network.
    pub stage_params: Vec<RegressorParams>,
    pub render_cfg: RenderConfig,
    /// Side of the global network's window as a multiple of the box's
    /// longer side.
    pub context: f64,
    pub patch: PatchConfig,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.policies.len() != NUM_STAGES {
            return Err(KeplerError::InvalidConfig(format!(
                "cascade needs {NUM_STAGES} stage policies, found {}",
                self.policies.len()
            )));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.stage as usize != i + 1 {
                return Err(KeplerError::InvalidConfig("policies must be ordered by stage".into()));
            }
            p.validate()?;
        }
        self.render_cfg.validate()?;
        if self.render_cfg.width != self.render_cfg.height {
            return Err(KeplerError::InvalidConfig("the cascade renders square frames".into()));
        }
        if !(self.context > 0.0) {
            return Err(KeplerError::InvalidConfig("context must be positive".into()));
        }
        self.patch.validate()?;
        for (i, p) in self.stage_params.iter().enumerate() {
            if p.stage as usize != i + 1 {
                return Err(KeplerError::Format(format!(
                    "parameters in slot {} are tagged for stage {}",
                    i + 1,
                    p.stage
                )));
            }
        }
        Ok(())
    }

    /// Parameters of `stage` (1-based).
    pub fn stage(&self, stage: u8) -> Result<&RegressorParams> {
        self.stage_params
            .get(stage as usize - 1)
            .ok_or(KeplerError::MissingStage(stage))
    }

    pub fn has_stage5(&self) -> bool {
        self.stage_params.len() >= NUM_STAGES
    }

    pub fn policy(&self, stage: u8) -> &StagePolicy {
        &self.policies[stage as usize - 1]
    }

    /// Write `manifest.toml` and one parameter file per trained stage.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| KeplerError::io(dir, e))?;
        let manifest = Manifest {
            version: BUNDLE_VERSION,
            stages: (1..=self.stage_params.len()).map(stage_file).collect(),
            context: self.context,
            render: self.render_cfg,
            patch: self.patch,
            mean_shape: self.mean_shape.clone(),
            policies: self.policies.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| KeplerError::Format(e.to_string()))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| KeplerError::io(&path, e))?;
        for p in &self.stage_params {
            p.save(&dir.join(stage_file(p.stage as usize)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|e| KeplerError::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| KeplerError::Parse {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if manifest.version != BUNDLE_VERSION {
            return Err(KeplerError::Format(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        let mut stage_params = Vec::new();
        for name in &manifest.stages {
            stage_params.push(RegressorParams::load(&dir.join(name))?);
        }
        let model = CascadeModel {
            mean_shape: manifest.mean_shape,
            policies: manifest.policies,
            stage_params,
            render_cfg: manifest.render,
            context: manifest.context,
            patch: manifest.patch,
        };
        model.validate()?;
        for s in 1..=4 {
            model.stage(s)?;
        }
        Ok(model)
    }
}

fn stage_file(stage: usize) -> String {
    format!("stage{stage}.kprm")
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    stages: Vec<String>,
    context: f64,
    render: RenderConfig,
    patch: PatchConfig,
    mean_shape: MeanShape,
    policies: Vec<StagePolicy>,
}

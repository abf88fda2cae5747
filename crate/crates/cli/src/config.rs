//! Experiment configuration files.

use std::path::{Path, PathBuf};

use roadsig_core::attacks::AttackConfig;
use roadsig_core::control::ControllerConfig;
use roadsig_core::protocol::{
    Arm, CampaignConfig, ClockMode, ConfigEntry, CostModel, PipelineConfig, WorldConfig, TRIALS_PER_CONFIG,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Checkpoint path, relative to the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub cost: CostModel,
    pub record_stage_traces: bool,
    /// Sample-frame directory, relative to the output directory.
    pub frames_dir: Option<PathBuf>,
}

fn default_trial_id() -> String {
    "trial".into()
}

fn default_trials() -> usize {
    TRIALS_PER_CONFIG
}

fn default_arm() -> Arm {
    Arm::Attack
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Plan {
    /// One trial of the top-level `[attack]` (or none).
    Trial {
        #[serde(default = "default_trial_id")]
        trial_id: String,
        #[serde(default = "default_arm")]
        arm: Arm,
    },
    /// Every `[[plan.configs]]` entry through all three arms.
    Campaign {
        #[serde(default = "default_trials")]
        trials_per_config: usize,
        configs: Vec<ConfigEntry>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub clock: ClockMode,
    /// Overridden by `ROADSIG_OUT_DIR`; relative to the working directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    pub plan: Plan,
}

/// A parsed config with paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub model_path: PathBuf,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config =
            RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let model_path = base_dir.join(&config.model.path);
        Ok(LoadedConfig {
            config,
            model_path,
            base_dir,
        })
    }

    /// Checks every section before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |section: &str, e: roadsig_core::Error| CliError::Config(format!("[{section}] {e}"));
        self.world.validate().map_err(|e| wrap("world", e))?;
        self.controller.validate().map_err(|e| wrap("controller", e))?;
        self.pipeline.cost.validate().map_err(|e| wrap("pipeline.cost", e))?;
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| wrap("attack", e))?;
        }
        match &self.plan {
            Plan::Trial { arm, trial_id } => {
                if trial_id.is_empty() {
                    return Err(CliError::Config("[plan] trial_id must not be empty".into()));
                }
                if *arm != Arm::NoAttack && self.attack.is_none() {
                    return Err(CliError::Config(format!(
                        "[plan] arm `{}` needs an [attack] section",
                        arm.as_str()
                    )));
                }
            }
            Plan::Campaign { .. } => {
                if self.attack.is_some() {
                    return Err(CliError::Config(
                        "[attack] is for single trials; campaigns list attacks in [[plan.configs]]".into(),
                    ));
                }
                self.campaign(None).validate().map_err(|e| wrap("plan", e))?;
            }
        }
        Ok(())
    }

    pub fn pipeline(&self, out_dir: Option<&Path>, asset_dir: Option<&Path>) -> PipelineConfig {
        PipelineConfig {
            controller: self.controller,
            cost: self.pipeline.cost,
            frames_dir: match (&self.pipeline.frames_dir, out_dir) {
                (Some(d), Some(o)) => Some(o.join(d)),
                (Some(d), None) => Some(d.clone()),
                _ => None,
            },
            asset_dir: asset_dir.map(Path::to_path_buf),
            record_stage_traces: self.pipeline.record_stage_traces,
        }
    }

    /// The campaign this config describes; a trial plan becomes a
    /// one-config campaign.
    pub fn campaign(&self, out_dir: Option<&Path>) -> CampaignConfig {
        let (configs, trials_per_config) = match &self.plan {
            Plan::Campaign {
                configs,
                trials_per_config,
            } => (configs.clone(), *trials_per_config),
            Plan::Trial { trial_id, .. } => (
                self.attack
                    .iter()
                    .map(|a| ConfigEntry {
                        name: trial_id.clone(),
                        attack: a.clone(),
                    })
                    .collect(),
                1,
            ),
        };
        CampaignConfig {
            configs,
            trials_per_config,
            clock: self.clock,
            seed: self.seed,
            world: self.world.clone(),
            pipeline: self.pipeline(out_dir, None),
        }
    }
}

/// `ROADSIG_OUT_DIR`, else the config's `output_dir`, else `out`.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os("ROADSIG_OUT_DIR") {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
    }
}

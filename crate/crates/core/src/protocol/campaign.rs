//! Campaigns: every configuration through attack, no-attack and sham arms,
//! with a manifest that pins configs, seeds and software revision.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::csv_string;
use super::trial::{run_trial, TrialOutcome};
use super::{Arm, ClockMode, Condition, PipelineConfig, TrialPlan, WorldConfig, TRIALS_PER_CONFIG};
use crate::attacks::AttackConfig;
use crate::perception::{encode_checkpoint, LaneNet};
use crate::rng::{derive_seed, Stream};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    /// Directory-safe label, unique within the campaign.
    pub name: String,
    pub attack: AttackConfig,
}

fn default_trials() -> usize {
    TRIALS_PER_CONFIG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub configs: Vec<ConfigEntry>,
    #[serde(default = "default_trials")]
    pub trials_per_config: usize,
    #[serde(default)]
    pub clock: ClockMode,
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Config("campaign has no configs".into()));
        }
        if self.trials_per_config == 0 {
            return Err(Error::Config("trials_per_config must be >= 1".into()));
        }
        for (i, c) in self.configs.iter().enumerate() {
            let ok = !c.name.is_empty()
                && c.name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || matches!(ch, '_' | '-' | '.'));
            if !ok {
                return Err(Error::Config(format!(
                    "config name `{}` must be non-empty [A-Za-z0-9_.-]",
                    c.name
                )));
            }
            if self.configs[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate config name `{}`", c.name)));
            }
            c.attack
                .validate()
                .map_err(|e| Error::Config(format!("config `{}`: {e}", c.name)))?;
        }
        self.world.validate()?;
        self.pipeline.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Seed of trial `index`; shared by the three arms of every config so that
/// trials pair up across arms.
pub fn trial_seed(campaign_seed: u64, index: usize) -> u64 {
    derive_seed(campaign_seed, Stream::World, index as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub trial_id: String,
    pub config: String,
    pub arm: Arm,
    pub index: usize,
    pub seed: u64,
    /// CSV path relative to the manifest.
    pub csv: Option<String>,
    pub csv_sha256: Option<String>,
    pub rows: usize,
    pub aborted: Option<String>,
    /// The trial was refused or failed to run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software_version: String,
    pub vcs_revision: String,
    pub config_hash: String,
    pub model_sha256: String,
    pub campaign_seed: u64,
    pub clock: ClockMode,
    pub config: CampaignConfig,
    pub trials: Vec<ManifestTrial>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn model_digest(model: &LaneNet<f32>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_checkpoint(model)?)))
}

/// Revision of the source tree this binary was built from, if it is a git
/// checkout.
pub fn vcs_revision() -> String {
    if let Some(r) = option_env!("ROADSIG_VCS_REVISION") {
        return r.to_string();
    }
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub struct CampaignResult {
    pub manifest: Manifest,
    /// Outcomes in manifest order; `None` where the trial was refused.
    pub outcomes: Vec<Option<TrialOutcome>>,
}

/// Runs `configs x arms x trials_per_config` trials sequentially. With
/// `out_dir`, each trial's CSV goes to `<config>/<arm>/trial_NN.csv` and the
/// manifest to `manifest.json`. `progress` sees every finished trial.
pub fn run_campaign(
    config: &CampaignConfig,
    model: &LaneNet<f32>,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&ManifestTrial, Option<&TrialOutcome>),
) -> Result<CampaignResult> {
    config.validate()?;
    let mut manifest = Manifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        vcs_revision: vcs_revision(),
        config_hash: config.hash(),
        model_sha256: model_digest(model)?,
        campaign_seed: config.seed,
        clock: config.clock,
        config: config.clone(),
        trials: Vec::new(),
    };
    let mut outcomes = Vec::new();
    for entry in &config.configs {
        for arm in Arm::ALL {
            for index in 0..config.trials_per_config {
                let seed = trial_seed(config.seed, index);
                let trial_id = format!("{}/{}/{}", entry.name, arm.as_str(), index);
                let plan = TrialPlan::new(&trial_id, Condition::for_arm(arm, &entry.attack), config.clock, seed);
                let mut pipeline = config.pipeline.clone();
                if let Some(d) = &pipeline.frames_dir {
                    pipeline.frames_dir = Some(d.join(&entry.name).join(arm.as_str()));
                }
                let mut mt = ManifestTrial {
                    trial_id,
                    config: entry.name.clone(),
                    arm,
                    index,
                    seed,
                    csv: None,
                    csv_sha256: None,
                    rows: 0,
                    aborted: None,
                    error: None,
                };
                let outcome = match run_trial(&plan, &config.world, &pipeline, model) {
                    Ok(o) => {
                        let text = csv_string(&o.records)?;
                        mt.csv_sha256 = Some(hex::encode(Sha256::digest(text.as_bytes())));
                        mt.rows = o.records.len();
                        mt.aborted = o.aborted.clone();
                        if let Some(dir) = out_dir {
                            let rel: PathBuf = [entry.name.as_str(), arm.as_str(), &format!("trial_{index:02}.csv")]
                                .iter()
                                .collect();
                            let path = dir.join(&rel);
                            std::fs::create_dir_all(path.parent().expect("has parent"))
                                .map_err(|e| Error::io(&path, e))?;
                            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
                            mt.csv = Some(rel.to_string_lossy().replace('\\', "/"));
                        }
                        Some(o)
                    }
                    Err(e) => {
                        mt.error = Some(e.to_string());
                        None
                    }
                };
                progress(&mt, outcome.as_ref());
                manifest.trials.push(mt);
                outcomes.push(outcome);
            }
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        manifest.save(dir.join(MANIFEST_FILE))?;
    }
    Ok(CampaignResult { manifest, outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub config_hash_ok: bool,
    pub model_ok: bool,
    pub matched: usize,
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.config_hash_ok && self.model_ok && self.mismatched.is_empty()
    }
}

/// Re-runs the campaign pinned by `manifest` and compares every trial's CSV
/// digest.
pub fn replay_campaign(manifest: &Manifest, model: &LaneNet<f32>) -> Result<ReplayReport> {
    let rerun = run_campaign(&manifest.config, model, None, |_, _| {})?;
    let mut report = ReplayReport {
        config_hash_ok: manifest.config.hash() == manifest.config_hash,
        model_ok: rerun.manifest.model_sha256 == manifest.model_sha256,
        matched: 0,
        mismatched: Vec::new(),
    };
    for (old, new) in manifest.trials.iter().zip(&rerun.manifest.trials) {
        if old.trial_id == new.trial_id && old.csv_sha256 == new.csv_sha256 && old.error == new.error {
            report.matched += 1;
        } else {
            report.mismatched.push(old.trial_id.clone());
        }
    }
    if manifest.trials.len() != rerun.manifest.trials.len() {
        report.mismatched.push("<trial count>".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::MitmOutputKind;

    fn cfg() -> CampaignConfig {
        CampaignConfig {
            configs: vec![ConfigEntry {
                name: "bias".into(),
                attack: AttackConfig::MitmOutput {
                    kind: MitmOutputKind::Bias { offset: 0.3 },
                    apply_to_y: false,
                },
            }],
            trials_per_config: 10,
            clock: ClockMode::Simulated,
            seed: 7,
            world: WorldConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }

    #[test]
    fn hash_tracks_config() {
        let a = cfg();
        let mut b = cfg();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        let mut c = cfg();
        c.configs[0].attack = AttackConfig::MitmOutput {
            kind: MitmOutputKind::Bias { offset: 0.31 },
            apply_to_y: false,
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        c.configs.push(c.configs[0].clone());
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.configs[0].name = "a/b".into();
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn seeds_pair_across_arms_and_differ_across_indices() {
        assert_eq!(trial_seed(1, 3), trial_seed(1, 3));
        assert_ne!(trial_seed(1, 3), trial_seed(1, 4));
    }
}

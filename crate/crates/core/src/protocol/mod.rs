//! Trial runner and frame-level logging.
//!
//! A trial is 13 s of closed-loop driving at 30 FPS: a clean 5 s baseline,
//! then 8 s with the attack (or sham, or nothing) switched on. Campaigns run
//! every configuration through three matched arms.

pub mod campaign;
pub mod record;
pub mod trial;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::control::ControllerConfig;
use crate::scene::{CameraModel, Kinematics, RenderOptions, TrackSpec};
use crate::{Error, Result};

pub use campaign::{
    replay_campaign, run_campaign, trial_seed, CampaignConfig, CampaignResult, ConfigEntry, Manifest, ManifestTrial,
    ReplayReport,
};
pub use record::{csv_string, q9, read_csv, read_csv_from, write_csv, write_csv_to, Phase, TrialLogRecord, COLUMNS};
pub use trial::{pre_trial_check, run_trial, ActuationRecord, StageTrace, TrialOutcome};

pub const FPS: f64 = 30.0;
pub const BASELINE_SECONDS: f64 = 5.0;
pub const ATTACK_SECONDS: f64 = 8.0;
pub const TRIAL_SECONDS: f64 = BASELINE_SECONDS + ATTACK_SECONDS;
/// Camera frames per trial (13 s x 30 FPS).
pub const TRIAL_FRAMES: u64 = 390;
pub const TRIALS_PER_CONFIG: usize = 10;

/// Nominal capture time of frame `k`.
pub fn frame_time(k: u64) -> f64 {
    k as f64 / FPS
}

pub fn phase_at(t_sim: f64) -> Phase {
    if t_sim >= BASELINE_SECONDS {
        Phase::Attack
    } else {
        Phase::Baseline
    }
}

/// How the trial timeline advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Virtual time; processing durations come from the cost model, so
    /// results are bit-reproducible.
    #[default]
    Simulated,
    /// Real time, paced to the camera: the loop sleeps until each capture
    /// and measured durations (including DoS delays) pass in real time.
    Wall,
    /// Virtual timeline advanced by measured processing durations; DoS
    /// delays are added without sleeping. Same timing fingerprints as `Wall`
    /// without waiting out idle time.
    WallUnpaced,
}

impl ClockMode {
    pub fn is_measured(&self) -> bool {
        !matches!(self, ClockMode::Simulated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Attack,
    NoAttack,
    Sham,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Attack, Arm::NoAttack, Arm::Sham];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Attack => "attack",
            Arm::NoAttack => "no_attack",
            Arm::Sham => "sham",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// What runs during the attack phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Attack(AttackConfig),
    NoAttack,
    /// The attack's full code path with an identity transform at the end.
    Sham(AttackConfig),
}

impl Condition {
    pub fn for_arm(arm: Arm, attack: &AttackConfig) -> Self {
        match arm {
            Arm::Attack => Condition::Attack(attack.clone()),
            Arm::NoAttack => Condition::NoAttack,
            Arm::Sham => Condition::Sham(attack.clone()),
        }
    }

    pub fn arm(&self) -> Arm {
        match self {
            Condition::Attack(_) => Arm::Attack,
            Condition::NoAttack => Arm::NoAttack,
            Condition::Sham(_) => Arm::Sham,
        }
    }

    pub fn attack(&self) -> Option<&AttackConfig> {
        match self {
            Condition::Attack(a) | Condition::Sham(a) => Some(a),
            Condition::NoAttack => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial_id: String,
    pub condition: Condition,
    pub clock: ClockMode,
    pub seed: u64,
}

impl TrialPlan {
    pub fn new(trial_id: impl Into<String>, condition: Condition, clock: ClockMode, seed: u64) -> Self {
        TrialPlan {
            trial_id: trial_id.into(),
            condition,
            clock,
            seed,
        }
    }
}

/// The simulated world a trial drives through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub track: TrackSpec,
    pub camera: CameraModel,
    pub kinematics: Kinematics,
    pub render: RenderOptions,
    /// Start position along the centerline, meters.
    pub start_s: f64,
    /// Start offset from the centerline, meters, positive right.
    pub start_lateral: f64,
    /// Half-width of a seeded uniform perturbation of `start_lateral`.
    pub start_jitter: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            track: TrackSpec::default_trial(),
            camera: CameraModel::default(),
            kinematics: Kinematics::default(),
            render: RenderOptions::default(),
            start_s: 0.0,
            start_lateral: 0.0,
            start_jitter: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.camera.validate()?;
        if !(self.kinematics.steering_gain.is_finite()) {
            return Err(Error::Config("world.kinematics.steering_gain must be finite".into()));
        }
        if !(self.render.brightness >= 0.0) || !(self.render.noise_std >= 0.0) {
            return Err(Error::Config("world.render values must be >= 0".into()));
        }
        let half = self.track.lane_width / 2.0;
        if !(self.start_jitter >= 0.0) || self.start_lateral.abs() + self.start_jitter > half {
            return Err(Error::Config(format!(
                "world start offset {} ± {} leaves the lane (half width {half})",
                self.start_lateral, self.start_jitter
            )));
        }
        Ok(())
    }
}

/// Per-operation costs charged in simulated mode, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub preprocess_ms: f64,
    pub forward_ms: f64,
    /// Cost of an input-gradient pass relative to a forward pass.
    pub gradient_factor: f64,
    /// One full-frame pixel operation (noise, blur, replacement).
    pub image_op_ms: f64,
    /// One tensor-sized elementwise operation.
    pub tensor_op_ms: f64,
    /// Clipping, control mapping and bookkeeping.
    pub overhead_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            preprocess_ms: 1.5,
            forward_ms: 6.0,
            gradient_factor: 2.3,
            image_op_ms: 1.0,
            tensor_op_ms: 0.1,
            overhead_ms: 0.05,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.preprocess_ms,
            self.forward_ms,
            self.gradient_factor,
            self.image_op_ms,
            self.tensor_op_ms,
            self.overhead_ms,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("cost model values must be finite and >= 0".into()));
        }
        if !(self.forward_ms > 0.0) {
            return Err(Error::Config("cost.forward_ms must be > 0".into()));
        }
        Ok(())
    }

    pub fn gradient_ms(&self) -> f64 {
        self.forward_ms * self.gradient_factor
    }
}

/// Everything between the camera and the wheels, minus the model weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub controller: ControllerConfig,
    pub cost: CostModel,
    /// Attack-phase sample frames are written here every 30th frame.
    pub frames_dir: Option<PathBuf>,
    /// Base directory for relative synthetic-image paths.
    pub asset_dir: Option<PathBuf>,
    /// Keep per-frame digests of every stage boundary (tests and audits).
    pub record_stage_traces: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.cost.validate()
    }
}

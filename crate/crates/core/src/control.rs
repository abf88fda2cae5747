//! Proportional steering with output clipping and slew-rate limiting.

use serde::{Deserialize, Serialize};

use crate::perception::PerceptionOutput;
use crate::scene::MAX_SPEED;
use crate::{Error, Result};

/// Actuation cadence, seconds.
pub const ACTUATION_PERIOD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gain: f64,
    /// Rotation bound, radians.
    pub r_max: f64,
    /// Maximum rotation change per emitted command, radians.
    pub slew_max: f64,
    pub v_base: f64,
    pub v_gain: f64,
    /// Requested (pre-limit) rotation change that counts as a rapid
    /// steering event, radians.
    pub rapid_threshold: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gain: 0.5,
            r_max: 0.4,
            slew_max: 0.1,
            v_base: 1.0,
            v_gain: 0.0,
            rapid_threshold: 0.2,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("controller.{m}")));
        if !(self.r_max > 0.0) {
            return bad("r_max must be > 0");
        }
        if !(self.slew_max > 0.0) {
            return bad("slew_max must be > 0");
        }
        if !self.gain.is_finite() || !self.v_gain.is_finite() {
            return bad("gain must be finite");
        }
        if !(0.0..=MAX_SPEED).contains(&self.v_base) {
            return bad("v_base must lie in [0, 2]");
        }
        if !(self.rapid_threshold > 0.0) {
            return bad("rapid_threshold must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub rotation: f64,
    pub speed: f64,
    pub t_issued: f64,
}

impl ControlCommand {
    pub fn idle(speed: f64) -> Self {
        ControlCommand {
            rotation: 0.0,
            speed,
            t_issued: 0.0,
        }
    }
}

/// rotation = clip(gain * x, -r_max, r_max)
pub fn postprocess(output: PerceptionOutput, gain: f64, r_max: f64) -> f64 {
    (gain * output.x).clamp(-r_max, r_max)
}

pub fn speed_from_y(y: f64, v_base: f64, v_gain: f64) -> f64 {
    (v_base + v_gain * y).clamp(0.0, MAX_SPEED)
}

/// Moves from the previous rotation toward `next_rotation` by at most
/// `slew_max`.
pub fn rate_limit(prev: &ControlCommand, next_rotation: f64, slew_max: f64) -> f64 {
    let delta = (next_rotation - prev.rotation).clamp(-slew_max, slew_max);
    prev.rotation + delta
}

/// Result of one controller update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub command: ControlCommand,
    /// Rotation before rate limiting.
    pub requested: f64,
    pub rapid_steering_event: bool,
}

/// Controller state: owns the last emitted command.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    last: ControlCommand,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Self {
        Controller {
            last: ControlCommand::idle(config.v_base.clamp(0.0, MAX_SPEED)),
            config,
        }
    }

    pub fn last(&self) -> ControlCommand {
        self.last
    }

    /// What an update with `output` would emit now, without committing it.
    pub fn preview(&self, output: PerceptionOutput, t: f64) -> Decision {
        let c = &self.config;
        let requested = postprocess(output, c.gain, c.r_max);
        let rotation = rate_limit(&self.last, requested, c.slew_max).clamp(-c.r_max, c.r_max);
        Decision {
            command: ControlCommand {
                rotation,
                speed: speed_from_y(output.y, c.v_base, c.v_gain),
                t_issued: t,
            },
            requested,
            rapid_steering_event: (requested - self.last.rotation).abs() > c.rapid_threshold,
        }
    }

    pub fn update(&mut self, output: PerceptionOutput, t: f64) -> Decision {
        let d = self.preview(output, t);
        self.last = d.command;
        d
    }
}

/// Number of actuation ticks in `[0, duration)`.
pub fn actuation_ticks(duration: f64) -> usize {
    (duration / ACTUATION_PERIOD - 1e-9).ceil().max(0.0) as usize
}

/// Timing summary of emitted actuation commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationStats {
    pub ticks: usize,
    pub mean_interval_ms: f64,
    pub max_interval_ms: f64,
    /// Intervals longer than the period plus `tolerance_ms`.
    pub missed_deadlines: usize,
}

pub fn actuation_stats(times: &[f64], tolerance_ms: f64) -> ActuationStats {
    let intervals: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) * 1e3).collect();
    let n = intervals.len();
    ActuationStats {
        ticks: times.len(),
        mean_interval_ms: if n == 0 {
            0.0
        } else {
            intervals.iter().sum::<f64>() / n as f64
        },
        max_interval_ms: intervals.iter().copied().fold(0.0, f64::max),
        missed_deadlines: intervals
            .iter()
            .filter(|&&i| i > ACTUATION_PERIOD * 1e3 + tolerance_ms)
            .count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(x: f64) -> PerceptionOutput {
        PerceptionOutput { x, y: 0.0 }
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess(out(0.0), 0.5, 0.4), 0.0);
        assert_eq!(postprocess(out(1.0), 0.5, 0.4), 0.4);
        assert_eq!(postprocess(out(-0.3), 0.5, 0.4), -0.15);
    }

    #[test]
    fn speed_examples() {
        assert_eq!(speed_from_y(0.0, 1.2, 0.7), 1.2);
        assert_eq!(speed_from_y(0.9, 1.2, 0.0), 1.2);
        assert_eq!(speed_from_y(1.0, 1.5, 3.0), 2.0);
        assert_eq!(speed_from_y(-1.0, 0.5, 3.0), 0.0);
    }

    #[test]
    fn rate_limit_examples() {
        let prev = ControlCommand {
            rotation: 0.1,
            speed: 1.0,
            t_issued: 0.0,
        };
        assert_eq!(rate_limit(&prev, 0.1, 0.05), 0.1);
        assert!((rate_limit(&prev, 0.1 + 0.15, 0.05) - 0.15).abs() < 1e-15);
        assert_eq!(rate_limit(&prev, 0.12, 0.05), 0.12);
    }

    #[test]
    fn converges_in_ceil_updates() {
        let mut c = Controller::new(ControllerConfig {
            gain: 1.0,
            r_max: 1.0,
            slew_max: 0.07,
            ..ControllerConfig::default()
        });
        let target = 0.5;
        let expected = (target / 0.07_f64).ceil() as usize;
        let mut n = 0;
        while c.last().rotation != target {
            c.update(out(target), n as f64);
            n += 1;
            assert!(n <= expected);
        }
        assert_eq!(n, expected);
    }

    #[test]
    fn rapid_event_uses_requested_delta() {
        let mut c = Controller::new(ControllerConfig::default());
        let d = c.update(out(1.0), 0.0);
        assert!(d.rapid_steering_event);
        assert!((d.command.rotation - 0.1).abs() < 1e-15);
        let d = c.update(out(0.3), 0.05);
        assert!(!d.rapid_steering_event);
    }

    #[test]
    fn thirteen_seconds_is_260_ticks() {
        assert_eq!(actuation_ticks(13.0), 260);
        let times: Vec<f64> = (0..260).map(|k| k as f64 * ACTUATION_PERIOD).collect();
        let s = actuation_stats(&times, 5.0);
        assert!((s.mean_interval_ms - 50.0).abs() < 1e-9);
        assert_eq!(s.missed_deadlines, 0);
    }
}

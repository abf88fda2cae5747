//! Light projected onto the road from the attack-phase boundary on.

use serde::{Deserialize, Serialize};

use crate::scene::{Centerline, OverlayPattern, PhantomOverlay, Pose2, VehicleState};
use crate::{Error, Result};

/// Start of the attack phase, seconds.
pub const ACTIVATION_TIME: f64 = 5.0;

/// What the projected pattern is fixed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhantomAnchor {
    /// A fixed spot on the track.
    World,
    /// A projector travelling with the vehicle; the pattern keeps its pose
    /// relative to the camera.
    #[default]
    Vehicle,
}

/// Overlay placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub pattern: OverlayPattern,
    pub anchor: PhantomAnchor,
    /// World anchoring: arc length of the overlay origin. Defaults to where
    /// the vehicle is expected to be at activation (base speed x 5 s).
    pub anchor_s: Option<f64>,
    /// Vehicle anchoring: distance of the origin ahead of the vehicle, meters.
    pub ahead: f64,
    /// Offset of the origin, meters, positive right (of the centerline or of
    /// the vehicle).
    pub lateral: f64,
    /// Overlay heading relative to the track (or vehicle) heading, radians.
    pub yaw: f64,
    pub intensity: f64,
    pub color: [u8; 3],
    /// Projection timing: when set, the pattern mirrors to the other side
    /// of its anchor every this many seconds of the attack phase.
    pub switch_period: Option<f64>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            // a bright band over the right half of the lane
            pattern: OverlayPattern::Obstacle {
                length: 3.0,
                width: 0.4,
            },
            anchor: PhantomAnchor::Vehicle,
            anchor_s: None,
            ahead: 0.0,
            lateral: 0.25,
            yaw: 0.0,
            intensity: 1.0,
            color: [240, 240, 235],
            switch_period: Some(1.0),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lateral.is_finite() || !self.yaw.is_finite() || !self.ahead.is_finite() {
            return Err(Error::Config("phantom placement must be finite".into()));
        }
        if matches!(self.switch_period, Some(p) if !(p.is_finite() && p > 0.0)) {
            return Err(Error::Config("phantom switch_period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Config(format!(
                "phantom intensity {} outside [0, 1]",
                self.intensity
            )));
        }
        Ok(())
    }

    /// Lateral offset at time `t_sim`, after any side switching.
    pub fn lateral_at(&self, t_sim: f64) -> f64 {
        match self.switch_period {
            Some(p) if t_sim >= ACTIVATION_TIME && ((t_sim - ACTIVATION_TIME) / p).floor() as i64 % 2 == 1 => {
                -self.lateral
            }
            _ => self.lateral,
        }
    }

    /// Overlay for the current vehicle state, inactive until scheduled.
    pub fn overlay(
        &self,
        centerline: &Centerline,
        base_speed: f64,
        vehicle: &VehicleState,
        t_sim: f64,
    ) -> PhantomOverlay {
        let lateral = self.lateral_at(t_sim);
        let (p, ahead) = match self.anchor {
            PhantomAnchor::World => (centerline.pose_at(self.anchor_s.unwrap_or(base_speed * ACTIVATION_TIME)), 0.0),
            PhantomAnchor::Vehicle => (vehicle.pose(), self.ahead),
        };
        let (fx, fy) = p.forward();
        let (rx, ry) = p.right();
        PhantomOverlay {
            pattern: self.pattern,
            pose: Pose2 {
                x: p.x + fx * ahead + rx * lateral,
                y: p.y + fy * ahead + ry * lateral,
                heading: p.heading + self.yaw,
            },
            intensity: self.intensity,
            active: false,
            color: self.color,
        }
    }
}

/// The overlay is lit from the first instant of the attack phase.
pub fn phantom_schedule(t_sim: f64) -> bool {
    t_sim >= ACTIVATION_TIME
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vehicle_anchor_follows_the_vehicle() {
        let cl = Centerline::new(&crate::scene::TrackSpec::straight(20.0));
        let cfg = PhantomConfig {
            ahead: 1.0,
            lateral: 0.5,
            ..PhantomConfig::default()
        };
        let v = VehicleState {
            x: 3.0,
            y: 0.0,
            heading: std::f64::consts::FRAC_PI_2,
            speed: 1.0,
        };
        let o = cfg.overlay(&cl, 1.0, &v, 0.0);
        // heading +y: forward is (0, 1), right is (-1, 0)
        assert!((o.pose.x - 2.5).abs() < 1e-12 && (o.pose.y - 1.0).abs() < 1e-12);
        assert!(!o.active);
        let world = PhantomConfig {
            anchor: PhantomAnchor::World,
            lateral: 0.0,
            ..PhantomConfig::default()
        };
        let o = world.overlay(&cl, 1.0, &v, 0.0);
        assert!((o.pose.x - 5.0).abs() < 1e-12 && o.pose.y.abs() < 1e-12);
    }

    #[test]
    fn switching_mirrors_the_pattern() {
        let cfg = PhantomConfig {
            lateral: 0.3,
            switch_period: Some(0.5),
            ..PhantomConfig::default()
        };
        assert_eq!(cfg.lateral_at(4.9), 0.3);
        assert_eq!(cfg.lateral_at(5.2), 0.3);
        assert_eq!(cfg.lateral_at(5.6), -0.3);
        assert_eq!(cfg.lateral_at(6.1), 0.3);
        let fixed = PhantomConfig {
            switch_period: None,
            ..cfg
        };
        assert_eq!(fixed.lateral_at(5.6), 0.3);
        assert!(PhantomConfig {
            switch_period: Some(0.0),
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn boundary() {
        assert!(!phantom_schedule(4.99));
        assert!(phantom_schedule(5.0));
        assert!(phantom_schedule(150.0 / 30.0));
        assert!(!phantom_schedule(149.0 / 30.0));
    }
}

use serde::{Deserialize, Serialize};

use super::track::Pose2;

pub const MAX_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl VehicleState {
    pub fn at_pose(pose: Pose2, speed: f64) -> Self {
        VehicleState {
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            speed: speed.clamp(0.0, MAX_SPEED),
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2 {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }
}

/// Unicycle kinematics: the rotation command maps to a yaw rate through
/// `steering_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Kinematics {
    /// Yaw rate per radian of rotation command (1/s).
    pub steering_gain: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            steering_gain: 10.0,
        }
    }
}

impl Kinematics {
    /// Advances the state by `dt` holding the command constant. Speed is
    /// clipped to [0, 2] m/s; a negative `dt` is treated as zero.
    pub fn step(&self, state: &VehicleState, rotation: f64, speed_cmd: f64, dt: f64) -> VehicleState {
        let dt = dt.max(0.0);
        let v = if speed_cmd.is_nan() {
            0.0
        } else {
            speed_cmd.clamp(0.0, MAX_SPEED)
        };
        let omega = self.steering_gain * rotation;
        let h0 = state.heading;
        let h1 = h0 + omega * dt;
        let (x, y) = if omega.abs() < 1e-12 {
            (state.x + v * dt * h0.cos(), state.y + v * dt * h0.sin())
        } else {
            (
                state.x + v / omega * (h1.sin() - h0.sin()),
                state.y + v / omega * (h0.cos() - h1.cos()),
            )
        };
        VehicleState {
            x,
            y,
            heading: h1,
            speed: v,
        }
    }
}

/// Single kinematic step with the default steering gain.
pub fn step_vehicle(state: &VehicleState, rotation: f64, speed_cmd: f64, dt: f64) -> VehicleState {
    Kinematics::default().step(state, rotation, speed_cmd, dt)
}

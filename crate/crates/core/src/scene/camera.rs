use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const IMAGE_WIDTH: usize = 640;
pub const IMAGE_HEIGHT: usize = 480;
/// First row of the region of interest (bottom half of the frame).
pub const ROI_TOP: usize = IMAGE_HEIGHT / 2;

/// Forward-facing pinhole camera, pitched down toward the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub hfov_deg: f64,
    pub mount_height: f64,
    /// Downward pitch in radians.
    pub pitch: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            hfov_deg: 90.0,
            mount_height: 0.30,
            pitch: 0.10,
        }
    }
}

/// Point in camera coordinates: `x` right, `y` down, `z` along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.hfov_deg > 20.0 && self.hfov_deg < 120.0) {
            return Err(Error::Config(format!(
                "camera.hfov_deg {} outside (20, 120)",
                self.hfov_deg
            )));
        }
        if !(self.mount_height > 0.0) {
            return Err(Error::Config("camera.mount_height must be > 0".into()));
        }
        if !(self.pitch > -0.5 && self.pitch < 1.2) {
            return Err(Error::Config("camera.pitch out of range".into()));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        (IMAGE_WIDTH as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn center(&self) -> (f64, f64) {
        (IMAGE_WIDTH as f64 / 2.0, IMAGE_HEIGHT as f64 / 2.0)
    }

    /// Vehicle-frame ground point (forward, right) to camera coordinates.
    pub fn ground_to_camera(&self, forward: f64, right: f64) -> CameraPoint {
        let (s, c) = self.pitch.sin_cos();
        let down = self.mount_height;
        CameraPoint {
            x: right,
            y: -forward * s + down * c,
            z: forward * c + down * s,
        }
    }

    /// Continuous image coordinates (u right, v down) of a camera point.
    pub fn project(&self, p: CameraPoint) -> Option<(f64, f64)> {
        if p.z <= 1e-9 {
            return None;
        }
        let f = self.focal_px();
        let (cx, cy) = self.center();
        Some((cx + f * p.x / p.z, cy + f * p.y / p.z))
    }

    /// Ray through the center of pixel (col, row) in vehicle axes
    /// (forward, right, down), not normalized.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (f64, f64, f64) {
        let f = self.focal_px();
        let (cx, cy) = self.center();
        let xc = (col as f64 + 0.5 - cx) / f;
        let yc = (row as f64 + 0.5 - cy) / f;
        let (s, c) = self.pitch.sin_cos();
        (c - yc * s, xc, s + yc * c)
    }
}

/// Maps image coordinates to the normalized apex convention: `x` in [-1, 1]
/// across the full width, `y` in [-1, 1] across the ROI rows.
pub fn normalize_image_point(u: f64, v: f64) -> (f64, f64) {
    let x = (u - IMAGE_WIDTH as f64 / 2.0) / (IMAGE_WIDTH as f64 / 2.0);
    let roi_h = (IMAGE_HEIGHT - ROI_TOP) as f64;
    let y = (v - ROI_TOP as f64) / roi_h * 2.0 - 1.0;
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_and_projection_agree() {
        let cam = CameraModel::default();
        for &(col, row) in &[(10usize, 300usize), (320, 400), (600, 470)] {
            let (f, r, d) = cam.pixel_ray(col, row);
            let t = cam.mount_height / d;
            let p = cam.ground_to_camera(f * t, r * t);
            let (u, v) = cam.project(p).unwrap();
            assert!((u - (col as f64 + 0.5)).abs() < 1e-9);
            assert!((v - (row as f64 + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn fov_bounds() {
        let mut cam = CameraModel::default();
        cam.hfov_deg = 20.0;
        assert!(cam.validate().is_err());
        cam.hfov_deg = 119.0;
        assert!(cam.validate().is_ok());
    }
}

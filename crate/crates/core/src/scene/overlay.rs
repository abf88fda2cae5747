//! Light patterns projected onto the road plane.

use serde::{Deserialize, Serialize};

use super::track::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OverlayPattern {
    /// Two parallel lines running `length` meters along the overlay heading,
    /// `spacing` meters apart.
    LaneLines {
        length: f64,
        spacing: f64,
        line_width: f64,
    },
    /// Filled rectangle starting at the pose.
    Obstacle { length: f64, width: f64 },
    /// Cross-shaped marker of side `size`.
    Marker { size: f64, line_width: f64 },
}

impl OverlayPattern {
    /// Coverage in [0, 1] at overlay-local coordinates (`along`, `across`);
    /// `footprint` is the ground size of one pixel for edge softening.
    fn coverage(&self, along: f64, across: f64, footprint: f64) -> f64 {
        let fp = footprint.max(1e-6);
        let band = |dist_to_edge: f64| (0.5 + dist_to_edge / fp).clamp(0.0, 1.0);
        match *self {
            OverlayPattern::LaneLines {
                length,
                spacing,
                line_width,
            } => {
                let along_cov = band(along.min(length - along));
                if along_cov == 0.0 {
                    return 0.0;
                }
                let half = line_width / 2.0;
                let l = band(half - (across + spacing / 2.0).abs());
                let r = band(half - (across - spacing / 2.0).abs());
                along_cov * l.max(r)
            }
            OverlayPattern::Obstacle { length, width } => {
                band(along.min(length - along)) * band(width / 2.0 - across.abs())
            }
            OverlayPattern::Marker { size, line_width } => {
                let half = size / 2.0;
                let hw = line_width / 2.0;
                let a = along - half;
                let box_cov = band(half - a.abs()) * band(half - across.abs());
                let bar = band(hw - a.abs()).max(band(hw - across.abs()));
                box_cov * bar
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomOverlay {
    pub pattern: OverlayPattern,
    pub pose: Pose2,
    pub intensity: f64,
    pub active: bool,
    #[serde(default = "default_color")]
    pub color: [u8; 3],
}

fn default_color() -> [u8; 3] {
    [240, 240, 235]
}

impl PhantomOverlay {
    pub fn is_visible(&self) -> bool {
        self.active && self.intensity > 0.0
    }

    /// Blends the projected light into `rgb` for the world point (x, y).
    pub(crate) fn blend(&self, x: f64, y: f64, footprint: f64, rgb: &mut [f64; 3]) {
        let (fx, fy) = self.pose.forward();
        let (rx, ry) = self.pose.right();
        let (dx, dy) = (x - self.pose.x, y - self.pose.y);
        let along = dx * fx + dy * fy;
        let across = dx * rx + dy * ry;
        let cov = self.pattern.coverage(along, across, footprint);
        if cov <= 0.0 {
            return;
        }
        let a = (self.intensity.clamp(0.0, 1.0) * cov).min(1.0);
        for c in 0..3 {
            rgb[c] += a * (self.color[c] as f64 - rgb[c]);
        }
    }
}

//! Track centerlines built from straight and constant-curvature pieces.
//!
//! Ground frame: `x` forward at heading 0, `y` to the right. Headings are
//! measured from `+x` toward `+y`, so a positive heading change is a right
//! turn and matches the sign of image-space `x` in the camera.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest curvature (1/m) a track may contain. At 1 m lookahead this keeps
/// the apex inside the camera frustum for every on-lane pose.
pub const MAX_CURVATURE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    Line { length: f64 },
    /// Positive `curvature` turns right, negative turns left.
    Arc { curvature: f64, length: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { length } | Segment::Arc { length, .. } => length,
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Segment::Line { .. } => 0.0,
            Segment::Arc { curvature, .. } => curvature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarkingStyle {
    #[default]
    Solid,
    Dashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    pub fn right(&self) -> (f64, f64) {
        (-self.heading.sin(), self.heading.cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub start: Pose2,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub closed: bool,
    pub lane_width: f64,
    #[serde(default = "default_marking_width")]
    pub marking_width: f64,
    #[serde(default)]
    pub marking_style: MarkingStyle,
    #[serde(default = "default_surface")]
    pub surface_color: [u8; 3],
    #[serde(default = "default_marking")]
    pub marking_color: [u8; 3],
    #[serde(default = "default_ground")]
    pub ground_color: [u8; 3],
    #[serde(default = "default_background")]
    pub background_color: [u8; 3],
}

fn default_marking_width() -> f64 {
    0.04
}
fn default_surface() -> [u8; 3] {
    [70, 72, 78]
}
fn default_marking() -> [u8; 3] {
    [235, 235, 230]
}
fn default_ground() -> [u8; 3] {
    [92, 128, 84]
}
fn default_background() -> [u8; 3] {
    [182, 192, 204]
}

impl TrackSpec {
    fn with_segments(segments: Vec<Segment>, closed: bool) -> Self {
        TrackSpec {
            start: Pose2 {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
            },
            segments,
            closed,
            lane_width: 0.5,
            marking_width: default_marking_width(),
            marking_style: MarkingStyle::Solid,
            surface_color: default_surface(),
            marking_color: default_marking(),
            ground_color: default_ground(),
            background_color: default_background(),
        }
    }

    pub fn straight(length: f64) -> Self {
        Self::with_segments(vec![Segment::Line { length }], false)
    }

    /// Closed circle starting at the origin heading `+x`.
    pub fn circle(radius: f64, turn_right: bool) -> Self {
        let k = if turn_right { 1.0 } else { -1.0 } / radius;
        Self::with_segments(
            vec![Segment::Arc {
                curvature: k,
                length: 2.0 * PI * radius,
            }],
            true,
        )
    }

    /// Stadium loop: two straights joined by right-hand half circles.
    pub fn oval(straight: f64, radius: f64) -> Self {
        let half = PI * radius;
        Self::with_segments(
            vec![
                Segment::Line { length: straight },
                Segment::Arc {
                    curvature: 1.0 / radius,
                    length: half,
                },
                Segment::Line { length: straight },
                Segment::Arc {
                    curvature: 1.0 / radius,
                    length: half,
                },
            ],
            true,
        )
    }

    /// The track every trial drives on unless configured otherwise.
    pub fn default_trial() -> Self {
        Self::circle(4.0, false)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: TrackSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("track: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > 0.0) {
            return Err(Error::Config("track.lane_width must be > 0".into()));
        }
        if !(self.marking_width > 0.0 && self.marking_width < self.lane_width) {
            return Err(Error::Config(
                "track.marking_width must be in (0, lane_width)".into(),
            ));
        }
        if self.segments.is_empty() {
            return Err(Error::Config("track needs at least one segment".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.length() > 0.0) {
                return Err(Error::Config(format!("segment {i}: length must be > 0")));
            }
            if seg.curvature().abs() > MAX_CURVATURE {
                return Err(Error::Config(format!(
                    "segment {i}: |curvature| {} exceeds {MAX_CURVATURE}",
                    seg.curvature().abs()
                )));
            }
        }
        if self.closed {
            let g = Centerline::new(self);
            let end = g.pose_at_unwrapped(g.length());
            let gap = ((end.x - self.start.x).powi(2) + (end.y - self.start.y).powi(2)).sqrt();
            if gap > 1e-6 {
                return Err(Error::Config(format!(
                    "closed track does not return to its start (gap {gap:.3e} m)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    start: Pose2,
    end: Pose2,
    s0: f64,
    length: f64,
    curvature: f64,
    /// Arc center and |radius|; unused for lines.
    center: (f64, f64),
    radius: f64,
}

/// Closest point on one segment.
#[derive(Debug, Clone, Copy)]
struct Closest {
    t: f64,
    d2: f64,
    lateral: f64,
}

impl Placed {
    fn new(start: Pose2, s0: f64, seg: &Segment) -> Self {
        let length = seg.length();
        let curvature = seg.curvature();
        let (center, radius) = if curvature == 0.0 {
            ((0.0, 0.0), f64::INFINITY)
        } else {
            let (rx, ry) = start.right();
            (
                (start.x + rx / curvature, start.y + ry / curvature),
                1.0 / curvature.abs(),
            )
        };
        let mut p = Placed {
            start,
            end: start,
            s0,
            length,
            curvature,
            center,
            radius,
        };
        p.end = p.pose_at(length);
        p
    }

    fn pose_at(&self, t: f64) -> Pose2 {
        let p = self.start;
        if self.curvature == 0.0 {
            let (fx, fy) = p.forward();
            Pose2 {
                x: p.x + fx * t,
                y: p.y + fy * t,
                heading: p.heading,
            }
        } else {
            let k = self.curvature;
            let heading = p.heading + k * t;
            Pose2 {
                x: self.center.0 + heading.sin() / k,
                y: self.center.1 - heading.cos() / k,
                heading,
            }
        }
    }

    fn endpoint(&self, at_end: bool, px: f64, py: f64) -> Closest {
        let (t, p) = if at_end {
            (self.length, self.end)
        } else {
            (0.0, self.start)
        };
        let (rx, ry) = p.right();
        Closest {
            t,
            d2: dist2(p, px, py),
            lateral: (px - p.x) * rx + (py - p.y) * ry,
        }
    }

    fn closest(&self, px: f64, py: f64, atan2: fn(f64, f64) -> f64) -> Closest {
        let p = self.start;
        if self.curvature == 0.0 {
            let (fx, fy) = p.forward();
            let (dx, dy) = (px - p.x, py - p.y);
            let along = dx * fx + dy * fy;
            let lateral = dx * -fy + dy * fx;
            if along < 0.0 {
                return self.endpoint(false, px, py);
            }
            if along > self.length {
                return self.endpoint(true, px, py);
            }
            return Closest {
                t: along,
                d2: lateral * lateral,
                lateral,
            };
        }
        let k = self.curvature;
        let (dx, dy) = (px - self.center.0, py - self.center.1);
        let r = (dx * dx + dy * dy).sqrt();
        if r == 0.0 {
            return self.endpoint(false, px, py);
        }
        // right(heading) points from the curve toward the center for right
        // turns and away from it for left turns.
        let sgn = k.signum();
        let heading = atan2(sgn * dx, -sgn * dy);
        let period = 2.0 * PI * self.radius;
        let raw = (heading - p.heading) / k;
        let t = raw - period * (raw / period).floor();
        if t <= self.length {
            let lateral = sgn * (self.radius - r);
            Closest {
                t,
                d2: lateral * lateral,
                lateral,
            }
        } else {
            let a = self.endpoint(false, px, py);
            let b = self.endpoint(true, px, py);
            if b.d2 < a.d2 {
                b
            } else {
                a
            }
        }
    }
}

/// Polynomial atan2, absolute error below 2e-6 rad. Per-pixel track queries
/// spend most of their time here with the libm version.
fn fast_atan2(y: f64, x: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    if ax == 0.0 && ay == 0.0 {
        return 0.0;
    }
    let swap = ay > ax;
    let z = if swap { ax / ay } else { ay / ax };
    let z2 = z * z;
    let mut a = z
        * (0.999_977_26
            + z2 * (-0.332_623_47
                + z2 * (0.193_543_46 + z2 * (-0.116_432_87 + z2 * (0.052_653_32 - z2 * 0.011_721_20)))));
    if swap {
        a = PI / 2.0 - a;
    }
    if x < 0.0 {
        a = PI - a;
    }
    if y < 0.0 {
        -a
    } else {
        a
    }
}

fn dist2(p: Pose2, x: f64, y: f64) -> f64 {
    (p.x - x).powi(2) + (p.y - y).powi(2)
}

/// Projection of a ground point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    /// Arc length of the closest centerline point.
    pub s: f64,
    /// Signed offset from the centerline, positive to the right.
    pub lateral: f64,
    pub heading: f64,
}

/// Resolved centerline geometry for fast queries.
#[derive(Debug, Clone)]
pub struct Centerline {
    placed: Vec<Placed>,
    length: f64,
    closed: bool,
}

impl Centerline {
    pub fn new(spec: &TrackSpec) -> Self {
        let mut placed = Vec::with_capacity(spec.segments.len());
        let mut pose = spec.start;
        let mut s0 = 0.0;
        for seg in &spec.segments {
            let p = Placed::new(pose, s0, seg);
            pose = p.end;
            s0 += p.length;
            placed.push(p);
        }
        Centerline {
            placed,
            length: s0,
            closed: spec.closed,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn pose_at_unwrapped(&self, s: f64) -> Pose2 {
        let last = self.placed.len() - 1;
        for (i, p) in self.placed.iter().enumerate() {
            if s < p.s0 + p.length || i == last {
                return p.pose_at(s - p.s0);
            }
        }
        unreachable!("centerline has at least one segment")
    }

    /// Centerline pose at arc length `s`. Closed tracks wrap; open tracks
    /// extrapolate straight past either end.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        if self.closed {
            return self.pose_at_unwrapped(s.rem_euclid(self.length));
        }
        if s < 0.0 {
            let p = self.placed[0].start;
            let (fx, fy) = p.forward();
            return Pose2 {
                x: p.x + fx * s,
                y: p.y + fy * s,
                heading: p.heading,
            };
        }
        if s > self.length {
            let p = self.placed[self.placed.len() - 1].end;
            let (fx, fy) = p.forward();
            let e = s - self.length;
            return Pose2 {
                x: p.x + fx * e,
                y: p.y + fy * e,
                heading: p.heading,
            };
        }
        self.pose_at_unwrapped(s)
    }

    pub fn project(&self, x: f64, y: f64) -> TrackPoint {
        self.project_with(x, y, f64::atan2)
    }

    /// [`Self::project`] with arc positions good to about 1e-5 m; for
    /// per-pixel queries.
    pub(crate) fn project_fast(&self, x: f64, y: f64) -> TrackPoint {
        self.project_with(x, y, fast_atan2)
    }

    fn project_with(&self, x: f64, y: f64, atan2: fn(f64, f64) -> f64) -> TrackPoint {
        let mut best: Option<(Closest, &Placed)> = None;
        for p in &self.placed {
            let c = p.closest(x, y, atan2);
            if best.map_or(true, |(b, _)| c.d2 < b.d2) {
                best = Some((c, p));
            }
        }
        let (c, seg) = best.expect("centerline has at least one segment");
        TrackPoint {
            s: seg.s0 + c.t,
            lateral: c.lateral,
            heading: seg.start.heading + seg.curvature * c.t,
        }
    }
}

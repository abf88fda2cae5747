//! Sensor-stream and control-channel manipulation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{MitmInputKind, MitmOutputKind};
use crate::perception::PerceptionOutput;
use crate::rng::{stream_rng, Stream};
use crate::scene::{
    load_frame_png, CameraModel, Centerline, RenderOptions, RenderedFrame, Renderer, TrackSpec, VehicleState,
    IMAGE_HEIGHT, IMAGE_WIDTH,
};
use crate::{Error, Result};

const BUILTINS: [&str; 4] = ["straight", "left_curve", "right_curve", "blank"];

/// Replacement image: `builtin:<name>` (straight, left_curve, right_curve,
/// blank) or a path to a 640x480 PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SyntheticSource(pub String);

impl SyntheticSource {
    pub fn builtin(name: &str) -> Self {
        SyntheticSource(format!("builtin:{name}"))
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.strip_prefix("builtin:") {
            Some(name) if BUILTINS.contains(&name) => Ok(()),
            Some(name) => Err(Error::Config(format!(
                "unknown synthetic builtin `{name}` (expected one of {BUILTINS:?})"
            ))),
            None if self.0.is_empty() => Err(Error::Config("synthetic source is empty".into())),
            None => Ok(()),
        }
    }

    /// Loads or renders the replacement pixels. File sources are resolved
    /// relative to `base_dir` when not absolute.
    pub fn resolve(&self, camera: &CameraModel, base_dir: Option<&Path>) -> Result<Vec<u8>> {
        self.validate()?;
        let Some(name) = self.0.strip_prefix("builtin:") else {
            let p = Path::new(&self.0);
            let path = match base_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p.to_path_buf(),
            };
            return load_frame_png(&path).map_err(|e| Error::Config(format!("synthetic source: {e}")));
        };
        if name == "blank" {
            return Ok(vec![128; IMAGE_WIDTH * IMAGE_HEIGHT * 3]);
        }
        let track = match name {
            "straight" => TrackSpec::straight(20.0),
            "left_curve" => TrackSpec::circle(2.5, false),
            _ => TrackSpec::circle(2.5, true),
        };
        let centerline = Centerline::new(&track);
        let vehicle = VehicleState::at_pose(centerline.pose_at(1.0), 1.0);
        Ok(Renderer::new(*camera)
            .render(&track, &centerline, &vehicle, &[], &RenderOptions::default(), 0, 0, 0.0)
            .pixels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitmInputResult {
    pub frame: RenderedFrame,
    /// Mean absolute change per byte, 8-bit units.
    pub magnitude: f64,
}

pub fn mean_abs_diff(a: &[u8], b: &[u8]) -> f64 {
    let total: u64 = a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y) as u64).sum();
    total as f64 / a.len().max(1) as f64
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f32> {
    let r = (size / 2) as isize;
    let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(pixels: &[u8], width: usize, height: usize, size: usize, sigma: f64) -> Vec<u8> {
    let k = gaussian_kernel(size.max(1), sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; pixels.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut acc = 0f32;
                for (j, w) in k.iter().enumerate() {
                    let xx = (x as isize + j as isize - r).clamp(0, width as isize - 1) as usize;
                    acc += w * pixels[(y * width + xx) * 3 + c] as f32;
                }
                tmp[(y * width + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; pixels.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut acc = 0f32;
                for (j, w) in k.iter().enumerate() {
                    let yy = (y as isize + j as isize - r).clamp(0, height as isize - 1) as usize;
                    acc += w * tmp[(yy * width + x) * 3 + c];
                }
                out[(y * width + x) * 3 + c] = (acc.clamp(0.0, 255.0) + 0.5) as u8;
            }
        }
    }
    out
}

/// Adds seeded Gaussian noise per byte, clamped and rounded to 8 bits.
pub fn add_noise(pixels: &[u8], std: f64, seed: u64, frame_id: u64) -> Vec<u8> {
    if std <= 0.0 {
        return pixels.to_vec();
    }
    let mut rng = stream_rng(seed, Stream::MitmInput, frame_id);
    let dist = Normal::new(0.0, std).expect("finite std");
    pixels
        .iter()
        .map(|&p| (p as f64 + dist.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Rewrites the frame on the camera -> ROI edge. The noise stream is keyed
/// by (`seed`, frame id), so the proxy and the in-pipeline shim produce the
/// same pixels.
pub fn mitm_input_apply(
    frame: &RenderedFrame,
    kind: &MitmInputKind,
    seed: u64,
    synthetic: Option<&[u8]>,
) -> Result<MitmInputResult> {
    frame.check()?;
    let pixels = match kind {
        MitmInputKind::Noise { std } => add_noise(&frame.pixels, *std, seed, frame.frame_id),
        MitmInputKind::Blur { kernel, sigma } => {
            gaussian_blur(&frame.pixels, IMAGE_WIDTH, IMAGE_HEIGHT, *kernel, *sigma)
        }
        MitmInputKind::Synthetic { .. } => {
            let src = synthetic.ok_or_else(|| Error::Config("synthetic source not loaded".into()))?;
            if src.len() != frame.pixels.len() {
                return Err(Error::Config("synthetic source has the wrong size".into()));
            }
            src.to_vec()
        }
    };
    let magnitude = mean_abs_diff(&frame.pixels, &pixels);
    Ok(MitmInputResult {
        frame: RenderedFrame {
            pixels,
            ..frame.clone()
        },
        magnitude,
    })
}

fn rewrite<R: Rng>(v: f64, kind: &MitmOutputKind, rng: &mut R) -> f64 {
    let out = match *kind {
        MitmOutputKind::Target { value } => value,
        MitmOutputKind::Bias { offset } => v + offset,
        MitmOutputKind::Invert => -v,
        MitmOutputKind::Random { low, high } => {
            if low == high {
                low
            } else {
                rng.random_range(low..=high)
            }
        }
    };
    out.clamp(-1.0, 1.0)
}

/// Rewrites the perception output on the postprocess -> controller edge.
/// Returns the new output and the size of the change.
pub fn mitm_output_apply<R: Rng>(
    output: PerceptionOutput,
    kind: &MitmOutputKind,
    apply_to_y: bool,
    rng: &mut R,
) -> (PerceptionOutput, f64) {
    let x = rewrite(output.x, kind, rng);
    let y = if apply_to_y {
        rewrite(output.y, kind, rng)
    } else {
        output.y
    };
    let magnitude = ((x - output.x).powi(2) + (y - output.y).powi(2)).sqrt();
    (PerceptionOutput { x, y }, magnitude)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: u8) -> RenderedFrame {
        RenderedFrame::from_pixels(vec![v; IMAGE_WIDTH * IMAGE_HEIGHT * 3], 7, 0.0).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let f = frame(100);
        let r = mitm_input_apply(&f, &MitmInputKind::Noise { std: 0.0 }, 1, None).unwrap();
        assert_eq!(r.frame, f);
        assert_eq!(r.magnitude, 0.0);
    }

    #[test]
    fn blur_of_constant_is_identity() {
        let f = frame(77);
        let r = mitm_input_apply(&f, &MitmInputKind::Blur { kernel: 7, sigma: 2.0 }, 1, None).unwrap();
        assert_eq!(r.frame.pixels, f.pixels);
    }

    #[test]
    fn noise_magnitude_matches_half_normal_mean() {
        let f = frame(128);
        let r = mitm_input_apply(&f, &MitmInputKind::Noise { std: 25.0 }, 3, None).unwrap();
        // no clamping at mid-gray: E|N(0, s)| = s * sqrt(2 / pi), plus rounding
        let expect = 25.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((r.magnitude - expect).abs() < 0.1, "{} vs {}", r.magnitude, expect);
    }

    #[test]
    fn synthetic_requires_source() {
        let f = frame(0);
        let kind = MitmInputKind::Synthetic {
            source: SyntheticSource::builtin("blank"),
        };
        assert!(mitm_input_apply(&f, &kind, 0, None).is_err());
        let src = kind_source(&kind);
        let r = mitm_input_apply(&f, &kind, 0, Some(&src)).unwrap();
        assert_eq!(r.magnitude, 128.0);
        assert!(SyntheticSource("builtin:nope".into()).validate().is_err());
        assert!(SyntheticSource("/definitely/missing.png".into())
            .resolve(&CameraModel::default(), None)
            .is_err());
    }

    fn kind_source(kind: &MitmInputKind) -> Vec<u8> {
        match kind {
            MitmInputKind::Synthetic { source } => source.resolve(&CameraModel::default(), None).unwrap(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn output_rewrites() {
        let mut rng = stream_rng(0, Stream::MitmOutput, 0);
        let o = PerceptionOutput { x: 0.1, y: -0.4 };
        let (b, m) = mitm_output_apply(o, &MitmOutputKind::Bias { offset: 0.3 }, false, &mut rng);
        assert!((b.x - 0.4).abs() < 1e-15 && b.y == -0.4);
        assert!((m - 0.3).abs() < 1e-15);
        let (z, m) = mitm_output_apply(o, &MitmOutputKind::Bias { offset: 0.0 }, false, &mut rng);
        assert_eq!((z, m), (o, 0.0));
        let (i, _) = mitm_output_apply(o, &MitmOutputKind::Invert, false, &mut rng);
        let (ii, _) = mitm_output_apply(i, &MitmOutputKind::Invert, false, &mut rng);
        assert_eq!(ii, o);
        let (t, _) = mitm_output_apply(o, &MitmOutputKind::Target { value: 0.8 }, false, &mut rng);
        assert_eq!(t.x, 0.8);
        for _ in 0..100 {
            let (r, _) = mitm_output_apply(o, &MitmOutputKind::Random { low: -0.5, high: 0.2 }, false, &mut rng);
            assert!((-0.5..=0.2).contains(&r.x));
        }
    }
}

//! Flat-ground pinhole renderer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, IMAGE_HEIGHT, IMAGE_WIDTH};
use super::overlay::PhantomOverlay;
use super::track::{Centerline, MarkingStyle, TrackSpec};
use super::vehicle::VehicleState;
use super::RenderedFrame;
use crate::rng::{stream_rng, Stream};

/// Ground beyond this range renders as background.
pub const RENDER_DISTANCE: f64 = 8.0;
/// Lateral distance past the lane edge after which the vehicle counts as
/// off-track.
pub const RECOVERY_MARGIN: f64 = 0.4;

const DASH_PERIOD: f64 = 0.5;
const DASH_ON: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    /// Global brightness scale applied before quantization.
    pub brightness: f64,
    /// Per-channel Gaussian sensor noise in 8-bit units; zero disables it.
    pub noise_std: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            brightness: 1.0,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct GroundRay {
    forward: f64,
    right: f64,
    footprint: f64,
    inv_footprint: f64,
}

/// Camera-bound renderer with the per-pixel ground intersections cached.
#[derive(Debug, Clone)]
pub struct Renderer {
    camera: CameraModel,
    rays: Vec<Option<GroundRay>>,
}

impl Renderer {
    pub fn new(camera: CameraModel) -> Self {
        let f = camera.focal_px();
        let mut rays = Vec::with_capacity(IMAGE_WIDTH * IMAGE_HEIGHT);
        for row in 0..IMAGE_HEIGHT {
            for col in 0..IMAGE_WIDTH {
                let (fw, rt, dn) = camera.pixel_ray(col, row);
                if dn <= 1e-9 {
                    rays.push(None);
                    continue;
                }
                let t = camera.mount_height / dn;
                let range = t * (fw * fw + rt * rt + dn * dn).sqrt();
                if range > RENDER_DISTANCE {
                    rays.push(None);
                    continue;
                }
                // ground extent of one pixel, stretched by the grazing angle
                let grazing = (dn / (fw * fw + rt * rt + dn * dn).sqrt()).max(0.05);
                rays.push(Some(GroundRay {
                    forward: fw * t,
                    right: rt * t,
                    footprint: range / f / grazing.sqrt(),
                    inv_footprint: f * grazing.sqrt() / range,
                }));
            }
        }
        Renderer { camera, rays }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    #[allow(clippy::too_many_arguments)]
    pub fn render(
        &self,
        track: &TrackSpec,
        centerline: &Centerline,
        vehicle: &VehicleState,
        overlays: &[PhantomOverlay],
        options: &RenderOptions,
        seed: u64,
        frame_id: u64,
        t_sim: f64,
    ) -> RenderedFrame {
        let visible: Vec<&PhantomOverlay> = overlays.iter().filter(|o| o.is_visible()).collect();
        let pose = vehicle.pose();
        let (fx, fy) = pose.forward();
        let (rx, ry) = pose.right();
        let half = track.lane_width / 2.0;
        let mw = track.marking_width;
        let road_edge = half + mw;
        let col = |c: [u8; 3]| [c[0] as f64, c[1] as f64, c[2] as f64];
        let surface = col(track.surface_color);
        let marking = col(track.marking_color);
        let ground = col(track.ground_color);
        let background = col(track.background_color);
        let dashed = track.marking_style == MarkingStyle::Dashed;

        let mut noise = (options.noise_std > 0.0).then(|| {
            (
                stream_rng(seed, Stream::SensorNoise, frame_id),
                Normal::new(0.0, options.noise_std).expect("finite noise std"),
            )
        });

        let mut pixels = vec![0u8; IMAGE_WIDTH * IMAGE_HEIGHT * 3];
        for (ray, out) in self.rays.iter().zip(pixels.chunks_exact_mut(3)) {
            let mut rgb = match ray {
                None => background,
                Some(r) => {
                    let wx = pose.x + r.forward * fx + r.right * rx;
                    let wy = pose.y + r.forward * fy + r.right * ry;
                    let q = centerline.project_fast(wx, wy);
                    let lat = q.lateral.abs();
                    let fp = r.footprint;
                    let inv = r.inv_footprint;
                    let band = |d: f64| (0.5 + d * inv).clamp(0.0, 1.0);
                    let road = band(road_edge - lat);
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = ground[k] + road * (surface[k] - ground[k]);
                    }
                    let mut line = band(mw / 2.0 - (lat - half).abs());
                    if dashed && line > 0.0 {
                        let phase = q.s - DASH_PERIOD * (q.s / DASH_PERIOD).floor();
                        line *= band(phase.min(DASH_ON - phase));
                    }
                    if line > 0.0 {
                        for k in 0..3 {
                            c[k] += line * (marking[k] - c[k]);
                        }
                    }
                    for o in &visible {
                        o.blend(wx, wy, fp, &mut c);
                    }
                    c
                }
            };
            if options.brightness != 1.0 {
                for v in &mut rgb {
                    *v *= options.brightness;
                }
            }
            if let Some((rng, dist)) = noise.as_mut() {
                for v in &mut rgb {
                    *v += dist.sample(rng);
                }
            }
            for (o, v) in out.iter_mut().zip(rgb) {
                // clamp first so the truncating cast rounds half-up
                *o = (v.clamp(0.0, 255.0) + 0.5) as u8;
            }
        }

        let q = centerline.project(vehicle.x, vehicle.y);
        let off_track = q.lateral.abs() > half + RECOVERY_MARGIN;
        RenderedFrame {
            pixels,
            frame_id,
            t_sim,
            t_wall: None,
            off_track,
        }
    }
}

/// Uniform sample used by callers that need a pixel coordinate.
pub fn random_pixel<R: Rng>(rng: &mut R) -> (usize, usize) {
    (rng.random_range(0..IMAGE_WIDTH), rng.random_range(0..IMAGE_HEIGHT))
}

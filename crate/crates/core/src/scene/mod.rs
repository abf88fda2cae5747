//! The synthetic world: track geometry, vehicle kinematics and the camera.

pub mod camera;
pub mod overlay;
pub mod render;
pub mod track;
pub mod vehicle;

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use camera::{CameraModel, IMAGE_HEIGHT, IMAGE_WIDTH, ROI_TOP};
pub use overlay::{OverlayPattern, PhantomOverlay};
pub use render::{RenderOptions, Renderer, RECOVERY_MARGIN, RENDER_DISTANCE};
pub use track::{Centerline, MarkingStyle, Pose2, Segment, TrackSpec};
pub use vehicle::{step_vehicle, Kinematics, VehicleState, MAX_SPEED};

use crate::{Error, Result};

/// Default apex lookahead along the centerline, meters.
pub const DEFAULT_LOOKAHEAD: f64 = 1.0;

pub const FRAME_BYTES: usize = IMAGE_WIDTH * IMAGE_HEIGHT * 3;

/// One camera capture: 640x480 RGB, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub pixels: Vec<u8>,
    pub frame_id: u64,
    pub t_sim: f64,
    pub t_wall: Option<f64>,
    /// Vehicle further from the centerline than the recovery margin.
    pub off_track: bool,
}

impl RenderedFrame {
    pub fn from_pixels(pixels: Vec<u8>, frame_id: u64, t_sim: f64) -> Result<Self> {
        check_shape(&pixels)?;
        Ok(RenderedFrame {
            pixels,
            frame_id,
            t_sim,
            t_wall: None,
            off_track: false,
        })
    }

    pub fn check(&self) -> Result<()> {
        check_shape(&self.pixels)
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * IMAGE_WIDTH + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn check_shape(pixels: &[u8]) -> Result<()> {
    if pixels.len() != FRAME_BYTES {
        return Err(Error::FrameShape {
            got_w: if pixels.len() % (IMAGE_HEIGHT * 3) == 0 {
                pixels.len() / (IMAGE_HEIGHT * 3)
            } else {
                0
            },
            got_h: IMAGE_HEIGHT,
            got_len: pixels.len(),
        });
    }
    Ok(())
}

/// Encodes a 640x480 RGB buffer as PNG.
pub fn encode_png(pixels: &[u8]) -> Result<Vec<u8>> {
    check_shape(pixels)?;
    encode_png_rgb(IMAGE_WIDTH, IMAGE_HEIGHT, pixels)
}

/// Encodes an interleaved RGB buffer of any size as PNG.
pub fn encode_png_rgb(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height * 3 {
        return Err(Error::Png(format!(
            "{} bytes do not make a {width}x{height} RGB image",
            pixels.len()
        )));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        w.write_image_data(pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes a PNG into (width, height, RGB bytes). Grayscale and alpha inputs
/// are converted to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
    };
    Ok((w, h, rgb))
}

/// Loads a PNG as a frame; the image must already be 640x480.
pub fn load_frame_png(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, rgb) = decode_png(&bytes)?;
    if w != IMAGE_WIDTH || h != IMAGE_HEIGHT {
        return Err(Error::FrameShape {
            got_w: w,
            got_h: h,
            got_len: rgb.len(),
        });
    }
    Ok(rgb)
}

/// Normalized apex label plus a flag for points outside the ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Apex {
    pub x: f64,
    pub y: f64,
    pub out_of_view: bool,
}

/// Projects the centerline point `lookahead` meters ahead (by arc length)
/// into normalized ROI coordinates.
pub fn ground_truth_apex(
    centerline: &Centerline,
    vehicle: &VehicleState,
    camera: &CameraModel,
    lookahead: f64,
) -> Apex {
    let here = centerline.project(vehicle.x, vehicle.y);
    let target = centerline.pose_at(here.s + lookahead);
    let pose = vehicle.pose();
    let (fx, fy) = pose.forward();
    let (rx, ry) = pose.right();
    let (dx, dy) = (target.x - pose.x, target.y - pose.y);
    let forward = dx * fx + dy * fy;
    let right = dx * rx + dy * ry;
    match camera.project(camera.ground_to_camera(forward, right)) {
        None => Apex {
            x: if right >= 0.0 { 1.0 } else { -1.0 },
            y: -1.0,
            out_of_view: true,
        },
        Some((u, v)) => {
            let (x, y) = camera::normalize_image_point(u, v);
            let inside = (-1.0..=1.0).contains(&x) && (-1.0..=1.0).contains(&y);
            Apex {
                x: x.clamp(-1.0, 1.0),
                y: y.clamp(-1.0, 1.0),
                out_of_view: !inside,
            }
        }
    }
}

/// One-shot render; builds the ray cache on every call, so loops should hold
/// a [`Renderer`] instead.
pub fn render_frame(
    track: &TrackSpec,
    vehicle: &VehicleState,
    camera: &CameraModel,
    overlays: &[PhantomOverlay],
    seed: u64,
) -> RenderedFrame {
    let centerline = Centerline::new(track);
    Renderer::new(*camera).render(
        track,
        &centerline,
        vehicle,
        overlays,
        &RenderOptions::default(),
        seed,
        0,
        0.0,
    )
}

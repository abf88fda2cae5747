//! Preprocessing and the lane regressor.

pub mod checkpoint;
pub mod net;
pub mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{Array3, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::scene::{RenderedFrame, IMAGE_HEIGHT, IMAGE_WIDTH, ROI_TOP};
use crate::{Error, Result};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{Architecture, Gradients, LaneNet};
pub use train::{synthetic_dataset, train, Augment, DatasetConfig, TrainConfig, TrainReport, TrainSample};

pub const INPUT_SIZE: usize = 224;
pub const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Floating-point types the network runs in: `f32` at runtime, `f64` for
/// gradient checks.
pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + Debug + Default + Sum + AddAssign + Send + Sync
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Value range a normalized channel can take for pixels in [0, 1].
pub fn valid_range(channel: usize) -> (f64, f64) {
    (
        (0.0 - MEAN[channel]) / STD[channel],
        (1.0 - MEAN[channel]) / STD[channel],
    )
}

/// Normalized 3x224x224 network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<A = f32> {
    data: Array3<A>,
}

impl<A: Scalar> ImageTensor<A> {
    /// Wraps an already-normalized array, checking its shape.
    pub fn from_array(data: Array3<A>) -> Result<Self> {
        if data.shape() != [3, INPUT_SIZE, INPUT_SIZE] {
            return Err(Error::TensorShape {
                got: data.shape().to_vec(),
            });
        }
        Ok(ImageTensor { data })
    }

    pub fn data(&self) -> &Array3<A> {
        &self.data
    }

    pub fn into_data(self) -> Array3<A> {
        self.data
    }

    pub fn cast<B: Scalar>(&self) -> ImageTensor<B> {
        ImageTensor {
            data: self.data.mapv(|v| B::of(v.f64())),
        }
    }

    /// Clamps every channel to the image-representable range.
    pub fn clamp_valid(&mut self) {
        for (c, mut plane) in self.data.outer_iter_mut().enumerate() {
            let (lo, hi) = valid_range(c);
            let (lo, hi) = (A::of(lo), A::of(hi));
            plane.mapv_inplace(|v| v.max(lo).min(hi));
        }
    }

    pub fn linf_distance(&self, other: &ImageTensor<A>) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs().f64())
            .fold(0.0, f64::max)
    }
}

/// Network output, clipped to [-1, 1]².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionOutput {
    pub x: f64,
    pub y: f64,
}

impl PerceptionOutput {
    pub fn from_raw(raw: [f64; 2]) -> Self {
        PerceptionOutput {
            x: raw[0].clamp(-1.0, 1.0),
            y: raw[1].clamp(-1.0, 1.0),
        }
    }
}

/// Mean of the two squared coordinate errors.
pub fn loss_mse(pred: PerceptionOutput, target: (f64, f64)) -> f64 {
    ((pred.x - target.0).powi(2) + (pred.y - target.1).powi(2)) / 2.0
}

/// Loss anchor for input gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Move away from the model's own clean prediction.
    Untargeted { anchor: (f64, f64) },
    /// Pull the prediction toward an attacker-chosen point.
    Targeted { target: (f64, f64) },
}

impl Objective {
    pub fn anchor(&self) -> (f64, f64) {
        match *self {
            Objective::Untargeted { anchor } => anchor,
            Objective::Targeted { target } => target,
        }
    }
}

struct Tap {
    i0: usize,
    i1: usize,
    w: f32,
}

fn taps(dst: usize, src: usize) -> Vec<Tap> {
    // half-pixel centers, edges clamped
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            Tap {
                i0,
                i1,
                w: (s - i0 as f64) as f32,
            }
        })
        .collect()
}

/// Crops the ROI and resizes it bilinearly to 224x224; output is CHW in
/// [0, 1].
pub fn resize_roi(pixels: &[u8]) -> Result<Array3<f32>> {
    if pixels.len() != IMAGE_WIDTH * IMAGE_HEIGHT * 3 {
        return Err(Error::FrameShape {
            got_w: 0,
            got_h: 0,
            got_len: pixels.len(),
        });
    }
    let rows = taps(INPUT_SIZE, IMAGE_HEIGHT - ROI_TOP);
    let cols = taps(INPUT_SIZE, IMAGE_WIDTH);
    let mut out = Array3::<f32>::zeros((3, INPUT_SIZE, INPUT_SIZE));
    let buf = out.as_slice_mut().expect("standard layout");
    let plane = INPUT_SIZE * INPUT_SIZE;
    let px = |r: usize, c: usize, ch: usize| pixels[((ROI_TOP + r) * IMAGE_WIDTH + c) * 3 + ch] as f32;
    for (oy, ty) in rows.iter().enumerate() {
        for (ox, tx) in cols.iter().enumerate() {
            for ch in 0..3 {
                let top = px(ty.i0, tx.i0, ch) * (1.0 - tx.w) + px(ty.i0, tx.i1, ch) * tx.w;
                let bot = px(ty.i1, tx.i0, ch) * (1.0 - tx.w) + px(ty.i1, tx.i1, ch) * tx.w;
                buf[ch * plane + oy * INPUT_SIZE + ox] = (top * (1.0 - ty.w) + bot * ty.w) / 255.0;
            }
        }
    }
    Ok(out)
}

/// Channel normalization of a [0, 1] CHW image.
pub fn normalize<A: Scalar>(image: &Array3<A>) -> Result<ImageTensor<A>> {
    let mut data = image.clone();
    for (c, mut plane) in data.outer_iter_mut().enumerate() {
        let (m, s) = (A::of(MEAN[c]), A::of(STD[c]));
        plane.mapv_inplace(|v| (v - m) / s);
    }
    ImageTensor::from_array(data)
}

/// Inverse of [`normalize`].
pub fn denormalize<A: Scalar>(tensor: &ImageTensor<A>) -> Array3<A> {
    let mut data = tensor.data.clone();
    for (c, mut plane) in data.outer_iter_mut().enumerate() {
        let (m, s) = (A::of(MEAN[c]), A::of(STD[c]));
        plane.mapv_inplace(|v| v * s + m);
    }
    data
}

/// ROI crop, bilinear resize, scaling and channel normalization.
pub fn preprocess(frame: &RenderedFrame) -> Result<ImageTensor<f32>> {
    frame.check()?;
    normalize(&resize_roi(&frame.pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_of(value: u8) -> RenderedFrame {
        RenderedFrame::from_pixels(vec![value; IMAGE_WIDTH * IMAGE_HEIGHT * 3], 0, 0.0).unwrap()
    }

    #[test]
    fn constant_frames_normalize_per_channel() {
        for (v, level) in [(0u8, 0.0), (255u8, 1.0)] {
            let t = preprocess(&frame_of(v)).unwrap();
            for c in 0..3 {
                let expect = ((level - MEAN[c]) / STD[c]) as f32;
                assert!(t.data().index_axis(ndarray::Axis(0), c).iter().all(|&x| (x - expect).abs() < 1e-6));
            }
        }
        let t = preprocess(&frame_of(255)).unwrap();
        assert!((t.data()[[0, 5, 5]] as f64 - (1.0 - 0.485) / 0.229).abs() < 1e-6);
    }

    #[test]
    fn top_half_is_ignored() {
        let mut a = frame_of(90);
        for (i, p) in a.pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        let mut b = a.clone();
        for p in &mut b.pixels[..ROI_TOP * IMAGE_WIDTH * 3] {
            *p = 255 - *p;
        }
        assert_eq!(preprocess(&a).unwrap(), preprocess(&b).unwrap());
    }

    #[test]
    fn wrong_size_is_rejected() {
        let f = RenderedFrame {
            pixels: vec![0; 100],
            frame_id: 0,
            t_sim: 0.0,
            t_wall: None,
            off_track: false,
        };
        assert!(matches!(preprocess(&f), Err(Error::FrameShape { .. })));
    }

    #[test]
    fn mse_examples() {
        let p = PerceptionOutput { x: 1.0, y: 0.0 };
        assert_eq!(loss_mse(p, (0.0, 0.0)), 0.5);
        assert_eq!(loss_mse(p, (1.0, 0.0)), 0.0);
    }

    #[test]
    fn resize_of_gradient_is_monotone() {
        let mut f = frame_of(0);
        for r in 0..IMAGE_HEIGHT {
            for c in 0..IMAGE_WIDTH {
                let i = (r * IMAGE_WIDTH + c) * 3;
                f.pixels[i] = (c * 255 / (IMAGE_WIDTH - 1)) as u8;
            }
        }
        let img = resize_roi(&f.pixels).unwrap();
        for x in 1..INPUT_SIZE {
            assert!(img[[0, 10, x]] >= img[[0, 10, x - 1]]);
        }
    }
}

//! Mini-batch Adam training on synthetic scenes.

use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{raw_loss, LaneNet};
use super::{normalize, resize_roi, INPUT_SIZE};
use crate::rng::{stream_rng, Stream};
use crate::scene::{
    ground_truth_apex, CameraModel, Centerline, Pose2, RenderOptions, RenderedFrame, Renderer, TrackSpec,
    VehicleState,
};
use crate::{Error, Result};

/// A training example: the resized ROI quantized to 8 bits (CHW) and its
/// apex label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Vec<u8>,
    pub label: (f64, f64),
}

impl TrainSample {
    pub fn from_frame(frame: &RenderedFrame, label: (f64, f64)) -> Result<Self> {
        frame.check()?;
        let img = resize_roi(&frame.pixels)?;
        Ok(TrainSample {
            image: img.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
            label,
        })
    }

    pub fn to_image(&self) -> Array3<f32> {
        Array3::from_shape_vec(
            (3, INPUT_SIZE, INPUT_SIZE),
            self.image.iter().map(|&v| v as f32 / 255.0).collect(),
        )
        .expect("sample image shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    /// Half-width of the brightness, contrast and saturation factors.
    pub jitter: f64,
    pub hflip: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            jitter: 0.2,
            hflip: true,
        }
    }
}

impl Augment {
    pub fn none() -> Self {
        Augment {
            jitter: 0.0,
            hflip: false,
        }
    }

    /// Applies the jitter and a coin-flip mirror to a [0, 1] image; returns
    /// the label adjusted for the flip.
    pub fn apply<R: Rng>(&self, img: &mut Array3<f32>, label: (f64, f64), rng: &mut R) -> (f64, f64) {
        if self.jitter > 0.0 {
            let j = self.jitter;
            let b = rng.random_range(1.0 - j..=1.0 + j) as f32;
            let c = rng.random_range(1.0 - j..=1.0 + j) as f32;
            let s = rng.random_range(1.0 - j..=1.0 + j) as f32;
            img.mapv_inplace(|v| v * b);
            let gray = luma(img);
            let mean = gray.mean().unwrap_or(0.0);
            img.mapv_inplace(|v| (v - mean) * c + mean);
            let gray = luma(img);
            for mut plane in img.outer_iter_mut() {
                plane.zip_mut_with(&gray, |v, &g| *v = (*v - g) * s + g);
            }
            img.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
        if self.hflip && rng.random_bool(0.5) {
            img.invert_axis(Axis(2));
            *img = img.as_standard_layout().into_owned();
            return (-label.0, label.1);
        }
        label
    }
}

fn luma(img: &Array3<f32>) -> ndarray::Array2<f32> {
    &img.slice(s![0, .., ..]) * 0.299 + &img.slice(s![1, .., ..]) * 0.587 + &img.slice(s![2, .., ..]) * 0.114
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub augment: Augment,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            augment: Augment::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss on the unaugmented data before the first step.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean loss over the (augmented) batches of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean raw-output MSE over `samples` without augmentation.
pub fn dataset_loss(net: &LaneNet<f32>, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let x = normalize(&s.to_image())?;
        total += raw_loss(net.forward_raw(&x)?, s.label);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Mean |x error| of the clipped output.
pub fn mean_abs_x_error(net: &LaneNet<f32>, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let x = normalize(&s.to_image())?;
        total += (net.forward(&x)?.x - s.label.0).abs();
    }
    Ok(total / samples.len().max(1) as f64)
}

pub fn train(
    mut net: LaneNet<f32>,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(LaneNet<f32>, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let initial_loss = dataset_loss(&net, samples)?;
    let mut rng = stream_rng(cfg.seed, Stream::Training, 0);
    let mut m: Vec<Vec<f32>> = net.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
    let mut v = m.clone();
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Vec<f32>> = m.iter().map(|s| vec![0.0; s.len()]).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut img = samples[i].to_image();
                let label = cfg.augment.apply(&mut img, samples[i].label, &mut rng);
                let x = normalize(&img)?;
                let tape = net.forward_tape(&x)?;
                let raw = [tape.raw[0] as f64, tape.raw[1] as f64];
                batch_loss += raw_loss(raw, label);
                let d = [(raw[0] - label.0) as f32, (raw[1] - label.1) as f32];
                let (g, _) = net.backward(&tape, d, true, false)?;
                let g = g.expect("parameter gradients requested");
                for (a, gs) in acc.iter_mut().zip(g.param_slices()) {
                    for (ai, gi) in a.iter_mut().zip(gs) {
                        *ai += gi;
                    }
                }
            }
            let loss = batch_loss / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            epoch_loss += batch_loss;

            t += 1;
            let lr = cfg.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
            let inv = 1.0 / batch.len() as f32;
            for (((p, g), mi), vi) in net.param_slices_mut().into_iter().zip(&acc).zip(&mut m).zip(&mut v) {
                for j in 0..p.len() {
                    let gj = (g[j] * inv) as f64;
                    let mj = b1 * mi[j] as f64 + (1.0 - b1) * gj;
                    let vj = b2 * vi[j] as f64 + (1.0 - b2) * gj * gj;
                    mi[j] = mj as f32;
                    vi[j] = vj as f32;
                    p[j] -= (lr * mj / (vj.sqrt() + 1e-8)) as f32;
                }
            }
        }
        let mean = epoch_loss / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: order.len() / cfg.batch_size,
                loss: mean,
            });
        }
        epoch_losses.push(mean);
    }
    let final_loss = dataset_loss(&net, samples)?;
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

/// Scene distribution for synthetic training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub max_lateral: f64,
    pub max_heading_error: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Fraction of straight-track samples.
    pub straight_fraction: f64,
    pub brightness_range: f64,
    pub max_noise_std: f64,
    pub lookahead: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            max_lateral: 0.3,
            max_heading_error: 0.3,
            min_radius: 2.5,
            max_radius: 10.0,
            straight_fraction: 0.2,
            brightness_range: 0.15,
            max_noise_std: 4.0,
            lookahead: crate::scene::DEFAULT_LOOKAHEAD,
        }
    }
}

/// Renders `n` labelled frames from random poses near the centerline of
/// random tracks. Poses whose apex falls outside the ROI are resampled.
pub fn synthetic_dataset(n: usize, seed: u64, camera: &CameraModel, cfg: &DatasetConfig) -> Result<Vec<TrainSample>> {
    let renderer = Renderer::new(*camera);
    let mut rng = stream_rng(seed, Stream::Dataset, 0);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n * 20 + 100 {
            return Err(Error::Config("dataset sampler keeps producing out-of-view apexes".into()));
        }
        let track = if rng.random_bool(cfg.straight_fraction.clamp(0.0, 1.0)) {
            TrackSpec::straight(40.0)
        } else {
            let r = rng.random_range(cfg.min_radius..=cfg.max_radius);
            TrackSpec::circle(r, rng.random_bool(0.5))
        };
        let centerline = Centerline::new(&track);
        let s = rng.random_range(2.0..centerline.length().min(20.0));
        let base = centerline.pose_at(s);
        let lateral = rng.random_range(-cfg.max_lateral..=cfg.max_lateral);
        let (rx, ry) = base.right();
        let pose = Pose2 {
            x: base.x + rx * lateral,
            y: base.y + ry * lateral,
            heading: base.heading + rng.random_range(-cfg.max_heading_error..=cfg.max_heading_error),
        };
        let vehicle = VehicleState::at_pose(pose, 1.0);
        let apex = ground_truth_apex(&centerline, &vehicle, camera, cfg.lookahead);
        if apex.out_of_view {
            continue;
        }
        let options = RenderOptions {
            brightness: 1.0 + rng.random_range(-cfg.brightness_range..=cfg.brightness_range),
            noise_std: rng.random_range(0.0..=cfg.max_noise_std),
        };
        let frame = renderer.render(
            &track,
            &centerline,
            &vehicle,
            &[],
            &options,
            seed,
            out.len() as u64,
            0.0,
        );
        out.push(TrainSample::from_frame(&frame, (apex.x, apex.y))?);
    }
    Ok(out)
}

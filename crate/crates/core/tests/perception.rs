//! The committed checkpoint against frames it never saw.

use std::path::PathBuf;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadsig_core::perception::{
    denormalize, load_checkpoint, normalize, synthetic_dataset, DatasetConfig, ImageTensor, LaneNet, INPUT_SIZE,
};
use roadsig_core::scene::CameraModel;

fn trained() -> LaneNet<f32> {
    load_checkpoint(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models/lane_cnn.rsm")).unwrap()
}

#[test]
fn checkpoint_generalizes_to_fresh_frames() {
    let model = trained();
    let samples = synthetic_dataset(60, 777_001, &CameraModel::default(), &DatasetConfig::default()).unwrap();
    let mut err = 0.0;
    for s in &samples {
        let input = normalize(&s.to_image()).unwrap();
        let out = model.forward(&input).unwrap();
        err += (out.x - s.label.0).abs();
    }
    let mean = err / samples.len() as f64;
    assert!(mean < 0.1, "mean |x error| {mean}");
}

#[test]
fn normalization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Array3::from_shape_fn((3, INPUT_SIZE, INPUT_SIZE), |_| rng.random::<f64>());
    let t: ImageTensor<f64> = normalize(&img).unwrap();
    let back = denormalize(&t);
    let worst = back.iter().zip(&img).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
}

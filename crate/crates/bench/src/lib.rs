//! Shared fixtures for the pipeline benchmarks.

use scenetext::explain::FrameInput;
use scenetext::features::LabeledDataset;
use scenetext::gbdt::{train, BoostedEnsemble, TrainConfig};
use scenetext::labelmap::RgbImage;
use scenetext::motion::PixelPoint;
use scenetext::synth::{generate_corpus, generate_sequence, SceneSpec};

/// Deterministic pseudo-random RGB image.
pub fn noise_image(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let pixels = (0..width * height * 3)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        })
        .collect();
    RgbImage::new(width, height, pixels).expect("valid dimensions")
}

/// Labeled scenario features from a synthetic corpus.
pub fn corpus_dataset(count: usize, seed: u64) -> LabeledDataset {
    generate_corpus(count, seed).expect("corpus generation").dataset
}

pub fn trained_model(count: usize, seed: u64) -> BoostedEnsemble {
    train(&corpus_dataset(count, seed), &TrainConfig::default()).expect("training")
}

/// Frames of the crossing demo sequence, ready for explanation.
pub fn crossing_frames() -> Vec<FrameInput> {
    generate_sequence(&SceneSpec::crossing())
        .expect("sequence generation")
        .into_iter()
        .enumerate()
        .map(|(i, f)| FrameInput { frame_id: format!("{i:05}"), labelmap: f.labelmap, rgb: Some(f.rgb) })
        .collect()
}

/// Grid-aligned blobs with scattered noise points.
pub fn blob_points(n: usize) -> Vec<PixelPoint> {
    (0..n)
        .map(|i| {
            let blob = (i % 5) as f64;
            let j = (i / 5) as f64;
            if i % 7 == 0 {
                PixelPoint::new((i * 37 % 256) as f64, (i * 91 % 128) as f64)
            } else {
                PixelPoint::new(30.0 + 45.0 * blob + j % 9.0, 20.0 + 20.0 * blob + (j / 9.0).floor() % 9.0)
            }
        })
        .collect()
}

#![allow(dead_code)]

use metatrack::detector::{init_params, DetectorConfig, HeadStyle, ParamSet};
use metatrack::meta::{Sample, Task};
use metatrack::{BoundingBox, Tensor};

/// An 8x8-input detector with one trunk stage: well under 200 parameters.
pub fn toy_config(style: HeadStyle, shared_trunk: bool) -> DetectorConfig {
    DetectorConfig {
        head_style: style,
        input_size: 8,
        stride: 2,
        anchor_size: 4.0,
        trunk_channels: if shared_trunk { vec![2, 1] } else { vec![1] },
        shared_trunk,
        frozen_prefix_layers: 0,
    }
}

/// Deterministic uniform noise image `[3, side, side]`.
pub fn image(seed: u64, side: usize) -> Tensor<f64> {
    let mut s = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    Tensor::from_fn(vec![3, side, side], |_| {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

pub fn toy_task() -> Task<f64> {
    let support = (0..2)
        .map(|i| Sample {
            image: image(i, 8),
            bbox: BoundingBox::new(3.5 + i as f64, 4.2, 3.6, 4.4).unwrap(),
        })
        .collect();
    let target = vec![Sample {
        image: image(7, 8),
        bbox: BoundingBox::new(5.2, 3.3, 4.4, 4.0).unwrap(),
    }];
    Task::new(support, target).unwrap()
}

/// Initial parameters with hidden biases shifted up so no single-channel
/// ReLU is dead on the toy images.
pub fn live_params(cfg: &DetectorConfig, alpha: f64) -> ParamSet<f64> {
    let params = init_params::<f64>(cfg, 11, alpha).unwrap();
    let weights = params
        .entries()
        .iter()
        .map(|e| {
            if e.name.ends_with("bias") && !e.name.contains("head.1") {
                e.weight.map(|v| v + 0.5)
            } else {
                e.weight.clone()
            }
        })
        .collect();
    params.with_weights(weights).unwrap()
}

/// Largest absolute element-wise difference between two tensor lists.
pub fn max_diff(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.shape(), y.shape());
            x.data().iter().zip(y.data()).map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

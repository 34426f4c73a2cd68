//! Shared helpers for integration tests: random tiny networks and
//! straight-loop reference implementations used as oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visback::model::{Activation, LayerSpec, NetworkConfig, WeightSet};
use visback::{ConvGeometry, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random valid config with 1–3 conv layers and 1–2 dense layers.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> NetworkConfig {
    loop {
        let h = rng.gen_range(6..16);
        let w = rng.gen_range(6..20);
        let mut layers = vec![LayerSpec::Normalization];
        let mut ch = 3;
        for _ in 0..rng.gen_range(1..=3) {
            let k = rng.gen_range(1..=3);
            let s = rng.gen_range(1..=2);
            let out = rng.gen_range(1..=3);
            layers.push(LayerSpec::Conv {
                geometry: ConvGeometry {
                    kernel_h: k,
                    kernel_w: rng.gen_range(1..=3),
                    stride_h: s,
                    stride_w: rng.gen_range(1..=2),
                    in_channels: ch,
                    out_channels: out,
                },
                activation: Activation::Relu,
            });
            ch = out;
        }
        if rng.gen_bool(0.5) {
            layers.push(LayerSpec::dense(rng.gen_range(2..6), Activation::Relu));
        }
        layers.push(LayerSpec::dense(1, Activation::None));
        let cfg = NetworkConfig {
            input_channels: 3,
            input_height: h,
            input_width: w,
            layers,
        };
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

pub fn random_weights(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> WeightSet {
    WeightSet::init_uniform(cfg, rng.gen()).unwrap()
}

pub fn random_image(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(
        cfg.input_channels,
        cfg.input_height,
        cfg.input_width,
        |_, _, _| rng.gen_range(0.0f32..=255.0).round(),
    )
}

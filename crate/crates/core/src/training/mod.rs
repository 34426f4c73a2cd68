//! Synthetic training data and a seeded mini-batch SGD loop.

mod augment;
mod dataset;
mod scene;

pub use augment::{augment, steering_correction, AugmentError};
pub use dataset::{
    frame_name, load_dataset, save_dataset, DatasetError, FRAMES_DIR, LABELS_FILE, LABELS_HEADER,
};
pub use scene::{
    flip_horizontal, render_all, render_scene, rgb_to_yuv, sample_scenes, Camera, LabeledFrame,
    RoadStyle, SceneParams, StyleChoice, CURVATURE_RANGE, HEADING_RANGE, K_HEADING, K_OFFSET,
    LANE_WIDTH, OFFSET_RANGE,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{backward, predict, InitScheme, ModelError, NetworkConfig, WeightSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Largest lateral camera displacement used for augmentation, meters.
    pub augmentation_shift_range: f32,
    /// Label correction per meter of displacement, 1/m².
    pub steering_correction_gain: f32,
    /// Labels are multiplied by this during optimization and the output
    /// layer is rescaled afterwards. `None` picks the power of two closest
    /// to `1 / std(labels)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scale: Option<f32>,
    #[serde(default = "he_uniform")]
    pub init: InitScheme,
}

fn he_uniform() -> InitScheme {
    InitScheme::HeUniform
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            augmentation_shift_range: 0.6,
            steering_correction_gain: K_OFFSET,
            target_scale: None,
            init: InitScheme::HeUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.augmentation_shift_range >= 0.0
            && self.augmentation_shift_range < LANE_WIDTH / 2.0)
        {
            return bad("augmentation_shift_range must be in [0, half lane width)");
        }
        if !(self.steering_correction_gain > 0.0 && self.steering_correction_gain.is_finite()) {
            return bad("steering_correction_gain must be positive");
        }
        if let Some(s) = self.target_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("target_scale must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    pub initial_weights: WeightSet,
    /// Mean squared error over each epoch, measured on the fly before each
    /// batch update, in label units.
    pub losses: Vec<f32>,
    pub target_scale: f32,
}

/// Population variance of the labels.
pub fn label_variance(frames: &[LabeledFrame]) -> f32 {
    if frames.is_empty() {
        return 0.0;
    }
    let n = frames.len() as f64;
    let mean = frames.iter().map(|f| f.steering as f64).sum::<f64>() / n;
    (frames
        .iter()
        .map(|f| (f.steering as f64 - mean).powi(2))
        .sum::<f64>()
        / n) as f32
}

fn auto_scale(frames: &[LabeledFrame]) -> f32 {
    let std = label_variance(frames).sqrt();
    if std > 0.0 && std.is_finite() {
        2f32.powi((1.0 / std).log2().round() as i32)
    } else {
        1.0
    }
}

fn rescale_output(cfg: &NetworkConfig, w: &mut WeightSet, factor: f32) {
    let last = cfg.layers.len() - 1;
    let layer = &mut w.layers[last];
    for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
        *v *= factor;
    }
}

/// Trains from a seeded uniform initialization with plain mini-batch SGD
/// on the squared error. Per-sample gradients are computed in parallel and
/// summed in batch order, so results do not depend on the thread count.
pub fn train(
    cfg: &NetworkConfig,
    tc: &TrainConfig,
    data: &[LabeledFrame],
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let scale = tc.target_scale.unwrap_or_else(|| auto_scale(data));
    let mut w = WeightSet::init(cfg, tc.init, tc.seed)?;
    w.validate(cfg)?;
    let mut initial_weights = w.clone();
    rescale_output(cfg, &mut initial_weights, 1.0 / scale);

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x005e_ed0f_0dd5);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(tc.batch_size) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| backward(cfg, &w, &data[i].image_yuv, data[i].steering * scale))
                .collect::<Result<_, _>>()?;
            let mut grad = WeightSet::zeros(cfg)?;
            for r in &results {
                total += r.loss as f64;
                grad.add_scaled(&r.gradients, 1.0);
            }
            if tc.learning_rate > 0.0 {
                w.add_scaled(&grad, -tc.learning_rate / batch.len() as f32);
            }
        }
        let loss = (total / data.len() as f64) as f32 / (scale * scale);
        if !loss.is_finite() || !w.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        losses.push(loss);
    }
    rescale_output(cfg, &mut w, 1.0 / scale);
    Ok(TrainOutcome {
        weights: w,
        initial_weights,
        losses,
        target_scale: scale,
    })
}

/// Mean squared prediction error over `frames`.
pub fn evaluate_mse(
    cfg: &NetworkConfig,
    w: &WeightSet,
    frames: &[LabeledFrame],
) -> Result<f32, ModelError> {
    if frames.is_empty() {
        return Ok(0.0);
    }
    let errs: Vec<f64> = frames
        .par_iter()
        .map(|f| {
            let p = predict(cfg, w, &f.image_yuv)?.inverse_turning_radius;
            Ok(((p - f.steering) as f64).powi(2))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok((errs.iter().sum::<f64>() / frames.len() as f64) as f32)
}

/// `base` rendered scenes followed by one augmented copy of each, shifted
/// by a uniform draw from `±augmentation_shift_range`.
pub fn build_training_set(
    base: usize,
    style: StyleChoice,
    seed: u64,
    tc: &TrainConfig,
    width: usize,
    height: usize,
) -> Result<Vec<LabeledFrame>, TrainError> {
    tc.validate()?;
    let mut frames = render_all(&sample_scenes(base, style, seed), width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let range = tc.augmentation_shift_range;
    let shifts: Vec<f32> = (0..base)
        .map(|_| {
            if range > 0.0 {
                rng.gen_range(-range..=range)
            } else {
                0.0
            }
        })
        .collect();
    let augmented: Vec<LabeledFrame> = frames
        .par_iter()
        .zip(shifts)
        .map(|(f, s)| {
            augment(f, s, range, tc.steering_correction_gain).expect("shift drawn within range")
        })
        .collect();
    frames.extend(augmented);
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetworkConfig {
        NetworkConfig::with_widths(66, 66, [2, 3, 3, 3, 3], &[4])
    }

    fn small_set(n: usize) -> Vec<LabeledFrame> {
        render_all(&sample_scenes(n, StyleChoice::Mixed, 4), 66, 66)
    }

    #[test]
    fn zero_learning_rate_keeps_weights_and_flat_loss() {
        let cfg = tiny();
        let data = small_set(6);
        let tc = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            epochs: 4,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &data).unwrap();
        assert_eq!(out.weights, out.initial_weights);
        let first = out.losses[0];
        assert!(out.losses.iter().all(|l| (l - first).abs() <= 1e-6 * first));
        let mse = evaluate_mse(&cfg, &out.weights, &data).unwrap();
        assert!((mse - first).abs() <= 1e-4 * first, "{mse} vs {first}");
    }

    #[test]
    fn single_sample_is_memorized() {
        let cfg = tiny();
        let data = small_set(1);
        let tc = TrainConfig {
            learning_rate: 0.05,
            batch_size: 1,
            epochs: 300,
            seed: 1,
            target_scale: Some(1.0),
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &data).unwrap();
        let mse = evaluate_mse(&cfg, &out.weights, &data).unwrap();
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = tiny();
        let data = small_set(8);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train(&cfg, &tc, &data).unwrap();
        let b = train(&cfg, &tc, &data).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.weights, b.weights);
        let c = train(&cfg, &TrainConfig { seed: 9, ..tc }, &data).unwrap();
        assert_ne!(a.losses, c.losses);
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = tiny();
        let data = small_set(4);
        let tc = TrainConfig {
            learning_rate: 1e6,
            batch_size: 1,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &tc, &data),
            Err(TrainError::Diverged { .. })
        ));
    }

    #[test]
    fn bad_inputs() {
        let cfg = tiny();
        assert!(matches!(
            train(&cfg, &TrainConfig::default(), &[]),
            Err(TrainError::EmptyDataset)
        ));
        let tc = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &tc, &small_set(1)),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn auto_scale_is_a_power_of_two() {
        let data = small_set(12);
        let s = auto_scale(&data);
        assert_eq!(s.log2().fract(), 0.0);
        let std = label_variance(&data).sqrt();
        assert!((0.5..=2.0).contains(&(s * std)), "scale {s} std {std}");
    }

    #[test]
    fn training_set_doubles_with_augmentation() {
        let tc = TrainConfig::default();
        let set = build_training_set(3, StyleChoice::Mixed, 2, &tc, 66, 40).unwrap();
        assert_eq!(set.len(), 6);
        for (b, a) in set[..3].iter().zip(&set[3..]) {
            let correction = a.steering - b.steering;
            assert!(
                correction.abs()
                    <= tc.steering_correction_gain * tc.augmentation_shift_range + 1e-6
            );
        }
        assert_eq!(
            build_training_set(3, StyleChoice::Mixed, 2, &tc, 66, 40).unwrap(),
            set
        );
    }
}

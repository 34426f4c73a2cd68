use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{NetworkConfig, ShapeTable};
use super::ModelError;

/// Random initialization scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    #[default]
    Uniform,
    /// Weights uniform in `±sqrt(6/fan_in)`, zero biases. Keeps activation
    /// variance roughly constant through ReLU layers.
    HeUniform,
}

/// Weights and biases of one layer. Empty for the normalization layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl LayerParams {
    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameters for every layer, indexed by layer position in the config.
///
/// Also used to hold gradients, which have the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<LayerParams>,
}

impl WeightSet {
    fn build(
        cfg: &NetworkConfig,
        mut fill: impl FnMut(usize, usize, usize) -> (Vec<f32>, Vec<f32>),
    ) -> Result<Self, ModelError> {
        let table = cfg.validate()?;
        let layers = table
            .layers
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let (nw, nb) = cfg.param_lens(i, shape);
                let (weights, biases) = fill(cfg.fan_in(i, shape), nw, nb);
                LayerParams { weights, biases }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(cfg: &NetworkConfig) -> Result<Self, ModelError> {
        Self::build(cfg, |_, nw, nb| (vec![0.0; nw], vec![0.0; nb]))
    }

    /// Seeded uniform initialization in `[-s, s]`, `s = 1/sqrt(fan_in)`, for
    /// both weights and biases.
    pub fn init_uniform(cfg: &NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        Self::init(cfg, InitScheme::Uniform, seed)
    }

    pub fn init(cfg: &NetworkConfig, scheme: InitScheme, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |fan_in, nw, nb| {
            if fan_in == 0 {
                return (Vec::new(), Vec::new());
            }
            let fan_in = fan_in as f32;
            let (s, bias_s) = match scheme {
                InitScheme::Uniform => (1.0 / fan_in.sqrt(), 1.0 / fan_in.sqrt()),
                InitScheme::HeUniform => ((6.0 / fan_in).sqrt(), 0.0),
            };
            let w = (0..nw).map(|_| rng.gen_range(-s..=s)).collect();
            let b = (0..nb)
                .map(|_| {
                    if bias_s > 0.0 {
                        rng.gen_range(-bias_s..=bias_s)
                    } else {
                        0.0
                    }
                })
                .collect();
            (w, b)
        })
    }

    /// Checks every array length against the config.
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<ShapeTable, ModelError> {
        let table = cfg.validate()?;
        if self.layers.len() != cfg.layers.len() {
            return Err(ModelError::LayerCount {
                expected: cfg.layers.len(),
                actual: self.layers.len(),
            });
        }
        for (i, (shape, params)) in table.layers.iter().zip(&self.layers).enumerate() {
            let (nw, nb) = cfg.param_lens(i, shape);
            for (what, expected, actual) in [
                ("weights", nw, params.weights.len()),
                ("biases", nb, params.biases.len()),
            ] {
                if expected != actual {
                    return Err(ModelError::ParamLength {
                        layer: i,
                        what,
                        expected,
                        actual,
                    });
                }
            }
        }
        Ok(table)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f32> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn iter_values_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    /// `self += alpha * other`
    ///
    /// # Panics
    /// If the layouts differ.
    pub fn add_scaled(&mut self, other: &WeightSet, alpha: f32) {
        assert_eq!(
            self.layers.len(),
            other.layers.len(),
            "weight layouts differ"
        );
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            assert_eq!(a.weights.len(), b.weights.len(), "weight layouts differ");
            assert_eq!(a.biases.len(), b.biases.len(), "weight layouts differ");
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += alpha * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for v in self.iter_values_mut() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }
}

//! Forward pass with activation tracing, and the backward pass used for
//! training.

use super::config::{Activation, LayerSpec, NetworkConfig, ShapeTable};
use super::weights::{LayerParams, WeightSet};
use super::ModelError;
use crate::tensor::{self, Tensor};

/// Network output: inverse turning radius in 1/m. Positive turns right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringOutput {
    pub inverse_turning_radius: f32,
}

/// Post-activation feature maps of one forward pass.
///
/// Entry 0 is the normalized input (layer 0); the remaining entries are the
/// conv layers in forward order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub maps: Vec<(usize, Tensor)>,
}

impl ActivationTrace {
    /// Builds a trace by hand, checking shapes against the config.
    pub fn new(cfg: &NetworkConfig, maps: Vec<(usize, Tensor)>) -> Result<Self, ModelError> {
        let trace = Self { maps };
        trace.check(cfg, &cfg.validate()?)?;
        Ok(trace)
    }

    pub fn input(&self) -> &Tensor {
        &self.maps[0].1
    }

    pub fn conv_maps(&self) -> impl Iterator<Item = &(usize, Tensor)> {
        self.maps.iter().skip(1)
    }

    /// Multiplies every conv feature map by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        let mut maps = self.maps.clone();
        for (_, t) in maps.iter_mut().skip(1) {
            *t = t.scale(factor);
        }
        Self { maps }
    }

    pub(crate) fn check(&self, cfg: &NetworkConfig, table: &ShapeTable) -> Result<(), ModelError> {
        let convs = cfg.conv_geometries();
        if self.maps.len() != convs.len() + 1 {
            return Err(ModelError::TraceMismatch(format!(
                "expected {} maps, got {}",
                convs.len() + 1,
                self.maps.len()
            )));
        }
        let expected_input = (cfg.input_channels, cfg.input_height, cfg.input_width);
        if self.maps[0].0 != 0 || self.maps[0].1.dims() != expected_input {
            return Err(ModelError::TraceMismatch(format!(
                "input entry must be layer 0 with dims {expected_input:?}"
            )));
        }
        for ((layer, map), (conv_layer, _)) in self.maps.iter().skip(1).zip(&convs) {
            let s = &table.layers[*conv_layer];
            if layer != conv_layer || map.dims() != (s.channels, s.height, s.width) {
                return Err(ModelError::TraceMismatch(format!(
                    "layer {conv_layer}: expected {:?}, got layer {layer} with {:?}",
                    (s.channels, s.height, s.width),
                    map.dims()
                )));
            }
        }
        Ok(())
    }
}

/// Fixed `x/127.5 - 1` map from `[0, 255]` pixel values to `[-1, 1]`.
pub fn normalize_input(image_yuv: &Tensor) -> Result<Tensor, ModelError> {
    if let Some((index, &value)) = image_yuv
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=255.0).contains(*v))
    {
        return Err(ModelError::InputRange { index, value });
    }
    Ok(image_yuv.map(|v| v / 127.5 - 1.0))
}

enum Value {
    Map(Tensor),
    Vector(Vec<f32>),
}

impl Value {
    fn flat(&self) -> &[f32] {
        match self {
            Value::Map(t) => t.data(),
            Value::Vector(v) => v,
        }
    }
}

/// Intermediate values kept for backpropagation. `inputs[i]` feeds layer
/// `i`; `pre[i]` is that layer's output before the activation.
struct Tape {
    inputs: Vec<Option<Value>>,
    pre: Vec<Option<Vec<f32>>>,
}

fn apply_activation(act: Activation, v: &mut [f32]) {
    if act == Activation::Relu {
        for x in v {
            *x = x.max(0.0);
        }
    }
}

fn check_image(cfg: &NetworkConfig, image: &Tensor) -> Result<(), ModelError> {
    let expected = (cfg.input_channels, cfg.input_height, cfg.input_width);
    if image.dims() != expected {
        return Err(ModelError::InputDims {
            expected,
            actual: image.dims(),
        });
    }
    Ok(())
}

/// Runs the trainable layers on an already normalized input.
fn run(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    normalized: Tensor,
    mut trace: Option<&mut Vec<(usize, Tensor)>>,
    mut tape: Option<&mut Tape>,
) -> Result<f32, ModelError> {
    let mut value = Value::Map(normalized);
    if let Some(t) = trace.as_deref_mut() {
        if let Value::Map(m) = &value {
            t.push((0, m.clone()));
        }
    }
    for (i, (layer, params)) in cfg.layers.iter().zip(&weights.layers).enumerate() {
        let next = match layer {
            LayerSpec::Normalization => continue,
            LayerSpec::Conv {
                geometry,
                activation,
            } => {
                let Value::Map(input) = &value else {
                    unreachable!("validated config has no conv after dense")
                };
                let mut out = tensor::conv2d(input, &params.weights, geometry, &params.biases)?;
                if let Some(tape) = tape.as_deref_mut() {
                    tape.pre[i] = Some(out.data().to_vec());
                }
                apply_activation(*activation, out.data_mut());
                if let Some(t) = trace.as_deref_mut() {
                    t.push((i, out.clone()));
                }
                Value::Map(out)
            }
            LayerSpec::FullyConnected { activation, .. } => {
                let mut out =
                    tensor::fully_connected(value.flat(), &params.weights, &params.biases)?;
                if let Some(tape) = tape.as_deref_mut() {
                    tape.pre[i] = Some(out.clone());
                }
                apply_activation(*activation, &mut out);
                Value::Vector(out)
            }
        };
        let prev = std::mem::replace(&mut value, next);
        if let Some(tape) = tape.as_deref_mut() {
            tape.inputs[i] = Some(prev);
        }
    }
    match value {
        Value::Vector(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(ModelError::TraceMismatch(
            "network did not end in one unit".into(),
        )),
    }
}

/// Steering prediction plus the per-layer activation trace.
pub fn forward(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    image_yuv: &Tensor,
) -> Result<(SteeringOutput, ActivationTrace), ModelError> {
    weights.validate(cfg)?;
    check_image(cfg, image_yuv)?;
    let normalized = normalize_input(image_yuv)?;
    let mut maps = Vec::new();
    let y = run(cfg, weights, normalized, Some(&mut maps), None)?;
    Ok((
        SteeringOutput {
            inverse_turning_radius: y,
        },
        ActivationTrace { maps },
    ))
}

/// Steering prediction without keeping the trace.
pub fn predict(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    image_yuv: &Tensor,
) -> Result<SteeringOutput, ModelError> {
    weights.validate(cfg)?;
    check_image(cfg, image_yuv)?;
    let y = run(cfg, weights, normalize_input(image_yuv)?, None, None)?;
    Ok(SteeringOutput {
        inverse_turning_radius: y,
    })
}

/// Forward pass that starts after the normalization layer.
pub fn forward_normalized(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    normalized: &Tensor,
) -> Result<(SteeringOutput, ActivationTrace), ModelError> {
    weights.validate(cfg)?;
    check_image(cfg, normalized)?;
    let mut maps = Vec::new();
    let y = run(cfg, weights, normalized.clone(), Some(&mut maps), None)?;
    Ok((
        SteeringOutput {
            inverse_turning_radius: y,
        },
        ActivationTrace { maps },
    ))
}

/// Loss, prediction and parameter gradients for one sample.
#[derive(Clone, Debug)]
pub struct Backward {
    /// `(prediction - target)^2`
    pub loss: f32,
    pub prediction: f32,
    pub gradients: WeightSet,
}

pub fn backward(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    image_yuv: &Tensor,
    target: f32,
) -> Result<Backward, ModelError> {
    check_image(cfg, image_yuv)?;
    backward_normalized(cfg, weights, &normalize_input(image_yuv)?, target)
}

/// As [`backward`], for an input that is already normalized.
pub fn backward_normalized(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    normalized: &Tensor,
    target: f32,
) -> Result<Backward, ModelError> {
    let table = weights.validate(cfg)?;
    check_image(cfg, normalized)?;
    let n = cfg.layers.len();
    let mut tape = Tape {
        inputs: (0..n).map(|_| None).collect(),
        pre: vec![None; n],
    };
    let prediction = run(cfg, weights, normalized.clone(), None, Some(&mut tape))?;
    let err = prediction - target;

    let mut grads: Vec<LayerParams> = vec![LayerParams::default(); n];
    // Gradient with respect to the current layer's output.
    let mut upstream = vec![2.0 * err];
    let first_trainable = cfg.layers.iter().position(LayerSpec::is_trainable);
    for i in (0..n).rev() {
        let layer = &cfg.layers[i];
        if !layer.is_trainable() {
            continue;
        }
        let pre = tape.pre[i]
            .take()
            .expect("tape records every trainable layer");
        if layer.activation() == Activation::Relu {
            for (g, p) in upstream.iter_mut().zip(&pre) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = tape.inputs[i]
            .take()
            .expect("tape records every layer input");
        let need_input_grad = Some(i) != first_trainable;
        let params = &weights.layers[i];
        match layer {
            LayerSpec::Normalization => unreachable!(),
            LayerSpec::Conv { geometry, .. } => {
                let Value::Map(x) = &input else {
                    unreachable!()
                };
                let s = &table.layers[i];
                let grad_out = Tensor::new(s.channels, s.height, s.width, upstream)?;
                let g = tensor::conv2d_backward(
                    x,
                    &params.weights,
                    geometry,
                    &grad_out,
                    need_input_grad,
                )?;
                grads[i] = LayerParams {
                    weights: g.weights,
                    biases: g.bias,
                };
                upstream = g.input.map(Tensor::into_data).unwrap_or_default();
            }
            LayerSpec::FullyConnected { .. } => {
                let x = input.flat();
                let cols = x.len();
                let mut gw = vec![0.0f32; params.weights.len()];
                for (row, g) in gw.chunks_exact_mut(cols.max(1)).zip(&upstream) {
                    for (w, xv) in row.iter_mut().zip(x) {
                        *w = g * xv;
                    }
                }
                let next = if need_input_grad {
                    let mut gx = vec![0.0f32; cols];
                    for (row, g) in params.weights.chunks_exact(cols.max(1)).zip(&upstream) {
                        for (acc, w) in gx.iter_mut().zip(row) {
                            *acc += w * g;
                        }
                    }
                    gx
                } else {
                    Vec::new()
                };
                grads[i] = LayerParams {
                    weights: gw,
                    biases: upstream,
                };
                upstream = next;
            }
        }
    }
    Ok(Backward {
        loss: err * err,
        prediction,
        gradients: WeightSet { layers: grads },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::LayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_conv_net() -> NetworkConfig {
        NetworkConfig {
            input_channels: 3,
            input_height: 1,
            input_width: 1,
            layers: vec![
                LayerSpec::Normalization,
                LayerSpec::Conv {
                    geometry: crate::tensor::ConvGeometry::square(1, 1, 3, 1),
                    activation: Activation::None,
                },
                LayerSpec::dense(1, Activation::None),
            ],
        }
    }

    #[test]
    fn normalization_endpoints() {
        let t = Tensor::new(3, 1, 1, vec![0.0, 127.5, 255.0]).unwrap();
        assert_eq!(normalize_input(&t).unwrap().data(), &[-1.0, 0.0, 1.0]);
        let bad = Tensor::new(3, 1, 1, vec![0.0, 256.0, 1.0]).unwrap();
        assert!(matches!(
            normalize_input(&bad),
            Err(ModelError::InputRange { index: 1, .. })
        ));
    }

    #[test]
    fn zero_weights_give_zero_steering() {
        let cfg = NetworkConfig::toy();
        let w = WeightSet::zeros(&cfg).unwrap();
        let image = Tensor::from_fn(3, 66, 200, |c, y, x| ((c * 7 + y * 3 + x) % 256) as f32);
        let (out, trace) = forward(&cfg, &w, &image).unwrap();
        assert_eq!(out.inverse_turning_radius, 0.0);
        assert_eq!(trace.maps.len(), 6);
    }

    #[test]
    fn trace_shapes_follow_shape_table() {
        let cfg = NetworkConfig::toy();
        let table = cfg.validate().unwrap();
        let w = WeightSet::init_uniform(&cfg, 1).unwrap();
        let image = Tensor::filled(3, 66, 200, 90.0);
        let (_, trace) = forward(&cfg, &w, &image).unwrap();
        trace.check(&cfg, &table).unwrap();
        let spatial: Vec<_> = trace
            .conv_maps()
            .map(|(_, t)| (t.height(), t.width()))
            .collect();
        assert_eq!(spatial, table.conv_spatial(&cfg));
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let cfg = NetworkConfig::toy();
        let w = WeightSet::zeros(&cfg).unwrap();
        let err = forward(&cfg, &w, &Tensor::zeros(3, 66, 199)).unwrap_err();
        assert!(matches!(err, ModelError::InputDims { .. }));
    }

    #[test]
    fn hand_chain_rule_on_single_weight() {
        // y = w * x with x = 2 after normalization; loss = (y - t)^2
        let cfg = single_conv_net();
        let mut weights = WeightSet::zeros(&cfg).unwrap();
        let (w, t) = (0.7f32, 0.4f32);
        weights.layers[1].weights = vec![w, 0.0, 0.0];
        weights.layers[2].weights = vec![1.0];
        let x = Tensor::new(3, 1, 1, vec![2.0, 5.0, -3.0]).unwrap();
        let b = backward_normalized(&cfg, &weights, &x, t).unwrap();
        assert!((b.prediction - 2.0 * w).abs() < 1e-7);
        let expected = 2.0 * (2.0 * w - t) * 2.0;
        assert!((b.gradients.layers[1].weights[0] - expected).abs() < 1e-6);
        assert!(b.gradients.layers[0].is_empty());
    }

    #[test]
    fn zero_weights_zero_target_zero_gradient() {
        let cfg = NetworkConfig::toy();
        let w = WeightSet::zeros(&cfg).unwrap();
        let image = Tensor::filled(3, 66, 200, 30.0);
        let b = backward(&cfg, &w, &image, 0.0).unwrap();
        assert_eq!(b.loss, 0.0);
        assert!(b.gradients.iter_values().all(|&g| g == 0.0));
        b.gradients.validate(&cfg).unwrap();
    }

    #[test]
    fn zeroing_any_layer_changes_output() {
        let cfg = NetworkConfig::with_widths(66, 66, [3, 4, 4, 4, 4], &[6]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let image = Tensor::from_fn(3, 66, 66, |_, _, _| rng.gen_range(0.0..255.0));
        let w = WeightSet::init_uniform(&cfg, 4).unwrap();
        let base = predict(&cfg, &w, &image).unwrap();
        for i in 1..cfg.layers.len() {
            let mut z = w.clone();
            z.layers[i].weights.iter_mut().for_each(|v| *v = 0.0);
            let out = predict(&cfg, &z, &image).unwrap();
            assert_ne!(out, base, "zeroing layer {i} did not change the output");
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::tensor::{ConvGeometry, ShapeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

/// One layer of the network, in forward order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fixed `x/127.5 - 1` rescale of the YUV input; has no parameters.
    Normalization,
    Conv {
        geometry: ConvGeometry,
        activation: Activation,
    },
    FullyConnected {
        units: usize,
        /// Expected input length. Derived from the previous layer when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inputs: Option<usize>,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            geometry: ConvGeometry::square(kernel, stride, in_channels, out_channels),
            activation: Activation::Relu,
        }
    }

    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::FullyConnected {
            units,
            inputs: None,
            activation,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, LayerSpec::Normalization)
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Normalization => Activation::None,
            LayerSpec::Conv { activation, .. } | LayerSpec::FullyConnected { activation, .. } => {
                *activation
            }
        }
    }
}

/// Declarative architecture: YUV input size plus the ordered layer list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("input must have 3 (YUV) channels, got {0}")]
    InputChannels(usize),
    #[error("network must start with exactly one normalization layer (offending layer {layer})")]
    Normalization { layer: usize },
    #[error("layer {layer}: convolution after a fully connected layer")]
    ConvAfterDense { layer: usize },
    #[error("layer {layer}: expects {expected} input channels, previous layer produces {actual}")]
    ChannelChain {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer}: {source}")]
    Shape {
        layer: usize,
        #[source]
        source: ShapeError,
    },
    #[error("layer {layer}: fully connected input length {declared} does not match flattened size {actual}")]
    DenseInputs {
        layer: usize,
        declared: usize,
        actual: usize,
    },
    #[error("layer {layer}: fully connected layer needs at least one unit")]
    ZeroUnits { layer: usize },
    #[error("last layer must be fully connected with exactly 1 unit")]
    OutputLayer,
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Output shape of one layer as `(channels, height, width)`; fully
/// connected layers report `(units, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub layer: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Length of the layer input (flattened), needed for parameter counts.
    pub inputs: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer output shapes of a validated config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShapeTable {
    pub layers: Vec<LayerShape>,
}

impl ShapeTable {
    /// Spatial `(height, width)` of every conv layer output, bottom to top.
    pub fn conv_spatial(&self, cfg: &NetworkConfig) -> Vec<(usize, usize)> {
        cfg.layers
            .iter()
            .zip(&self.layers)
            .filter(|(l, _)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(_, s)| (s.height, s.width))
            .collect()
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::pilotnet()
    }
}

impl NetworkConfig {
    /// Conventional full-size architecture: 66×200 YUV input, conv
    /// 24/36/48/64/64, dense 100/50/10/1.
    pub fn pilotnet() -> Self {
        Self::with_widths(66, 200, [24, 36, 48, 64, 64], &[100, 50, 10])
    }

    /// Same geometry as [`NetworkConfig::pilotnet`] with narrow layers, sized
    /// for CPU training at desk scale.
    pub fn toy() -> Self {
        Self::with_widths(66, 200, [8, 12, 16, 16, 16], &[64, 16])
    }

    /// Five conv layers (5×5/2 three times, then 3×3/1 twice) with the given
    /// channel counts, followed by hidden dense layers and a 1-unit output.
    pub fn with_widths(height: usize, width: usize, conv: [usize; 5], hidden: &[usize]) -> Self {
        let mut layers = vec![LayerSpec::Normalization];
        let mut in_ch = 3;
        for (i, &out) in conv.iter().enumerate() {
            let (k, s) = if i < 3 { (5, 2) } else { (3, 1) };
            layers.push(LayerSpec::conv(k, s, in_ch, out));
            in_ch = out;
        }
        for &units in hidden {
            layers.push(LayerSpec::dense(units, Activation::Relu));
        }
        layers.push(LayerSpec::dense(1, Activation::None));
        Self {
            input_channels: 3,
            input_height: height,
            input_width: width,
            layers,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact JSON with fixed field order; embedded in weight files.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn conv_geometries(&self) -> Vec<(usize, ConvGeometry)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                LayerSpec::Conv { geometry, .. } => Some((i, *geometry)),
                _ => None,
            })
            .collect()
    }

    /// Walks the shape chain and returns every layer's output shape.
    pub fn validate(&self) -> Result<ShapeTable, ConfigError> {
        if self.input_channels != 3 {
            return Err(ConfigError::InputChannels(self.input_channels));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(ConfigError::Shape {
                layer: 0,
                source: ShapeError::ZeroDim {
                    context: "network input",
                    axis: if self.input_height == 0 {
                        crate::tensor::Axis::Height
                    } else {
                        crate::tensor::Axis::Width
                    },
                },
            });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        let mut seen_dense = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let inputs = c * h * w;
            match layer {
                LayerSpec::Normalization => {
                    if i != 0 {
                        return Err(ConfigError::Normalization { layer: i });
                    }
                }
                LayerSpec::Conv { geometry, .. } => {
                    if i == 0 {
                        return Err(ConfigError::Normalization { layer: 0 });
                    }
                    if seen_dense {
                        return Err(ConfigError::ConvAfterDense { layer: i });
                    }
                    if geometry.in_channels != c {
                        return Err(ConfigError::ChannelChain {
                            layer: i,
                            expected: geometry.in_channels,
                            actual: c,
                        });
                    }
                    let (oh, ow) = geometry
                        .output_size(h, w)
                        .map_err(|source| ConfigError::Shape { layer: i, source })?;
                    (c, h, w) = (geometry.out_channels, oh, ow);
                }
                LayerSpec::FullyConnected {
                    units,
                    inputs: declared,
                    ..
                } => {
                    if i == 0 {
                        return Err(ConfigError::Normalization { layer: 0 });
                    }
                    if *units == 0 {
                        return Err(ConfigError::ZeroUnits { layer: i });
                    }
                    if let Some(declared) = declared {
                        if *declared != inputs {
                            return Err(ConfigError::DenseInputs {
                                layer: i,
                                declared: *declared,
                                actual: inputs,
                            });
                        }
                    }
                    seen_dense = true;
                    (c, h, w) = (*units, 1, 1);
                }
            }
            shapes.push(LayerShape {
                layer: i,
                channels: c,
                height: h,
                width: w,
                inputs,
            });
        }
        if !matches!(
            self.layers.last(),
            Some(LayerSpec::FullyConnected { units: 1, .. })
        ) {
            return Err(ConfigError::OutputLayer);
        }
        Ok(ShapeTable { layers: shapes })
    }

    /// `(weights, biases)` lengths of layer `index`, given its shape entry.
    pub(crate) fn param_lens(&self, index: usize, shape: &LayerShape) -> (usize, usize) {
        match &self.layers[index] {
            LayerSpec::Normalization => (0, 0),
            LayerSpec::Conv { geometry, .. } => (geometry.weight_len(), geometry.out_channels),
            LayerSpec::FullyConnected { units, .. } => (units * shape.inputs, *units),
        }
    }

    /// Number of inputs feeding each output unit of layer `index`.
    pub(crate) fn fan_in(&self, index: usize, shape: &LayerShape) -> usize {
        match &self.layers[index] {
            LayerSpec::Normalization => 0,
            LayerSpec::Conv { geometry, .. } => geometry.patch_len(),
            LayerSpec::FullyConnected { .. } => shape.inputs,
        }
    }
}

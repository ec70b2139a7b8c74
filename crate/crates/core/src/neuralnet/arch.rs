use serde::{Deserialize, Serialize};

use super::NetError;

/// One layer as written in a configuration. Shapes are resolved against
/// the input length by [`Architecture::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Maxpool1d {
        size: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
}

fn one() -> usize {
    1
}

/// A layer with every shape fixed. Activations are channel-major
/// (`[channel][position]`); a dense layer reads its input flattened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Conv {
        in_channels: usize,
        in_len: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        out_len: usize,
    },
    Pool {
        channels: usize,
        in_len: usize,
        size: usize,
        out_len: usize,
    },
    Dense {
        inputs: usize,
        units: usize,
    },
    Relu {
        len: usize,
    },
    Softmax {
        len: usize,
    },
}

impl Layer {
    pub(crate) fn output_size(&self) -> usize {
        match *self {
            Layer::Conv {
                filters, out_len, ..
            } => filters * out_len,
            Layer::Pool {
                channels, out_len, ..
            } => channels * out_len,
            Layer::Dense { units, .. } => units,
            Layer::Relu { len } | Layer::Softmax { len } => len,
        }
    }
}

/// A validated layer stack for a single-channel input sequence.
///
/// The stack must end in exactly one softmax; training pairs it with
/// categorical cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input_len: usize,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    /// For each layer, the index of its kernel tensor (bias follows it).
    param_slots: Vec<Option<usize>>,
    tensor_shapes: Vec<Vec<usize>>,
    tensor_layers: Vec<usize>,
}

impl Architecture {
    pub fn new(input_len: usize, specs: Vec<LayerSpec>) -> Result<Self, NetError> {
        let bad = |index: usize, reason: String| NetError::InvalidArchitecture { index, reason };
        if input_len == 0 {
            return Err(bad(0, "input length is zero".into()));
        }
        if specs.is_empty() {
            return Err(bad(0, "no layers".into()));
        }
        // (channels, length) while still a sequence; None once flattened.
        let mut seq = Some((1usize, input_len));
        let mut flat = input_len;
        let mut layers = Vec::with_capacity(specs.len());
        let mut param_slots = Vec::with_capacity(specs.len());
        let mut tensor_shapes = Vec::new();
        let mut tensor_layers = Vec::new();

        for (i, spec) in specs.iter().enumerate() {
            if matches!(layers.last(), Some(Layer::Softmax { .. })) {
                return Err(bad(i, "softmax must be the final layer".into()));
            }
            let layer = match *spec {
                LayerSpec::Conv1d {
                    filters,
                    kernel,
                    stride,
                } => {
                    let (in_channels, in_len) =
                        seq.ok_or_else(|| bad(i, "conv1d after dense".into()))?;
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(i, "conv1d parameters must be positive".into()));
                    }
                    if in_len < kernel {
                        return Err(bad(
                            i,
                            format!("kernel {kernel} longer than input {in_len}"),
                        ));
                    }
                    let out_len = (in_len - kernel) / stride + 1;
                    seq = Some((filters, out_len));
                    Layer::Conv {
                        in_channels,
                        in_len,
                        filters,
                        kernel,
                        stride,
                        out_len,
                    }
                }
                LayerSpec::Maxpool1d { size } => {
                    let (channels, in_len) =
                        seq.ok_or_else(|| bad(i, "maxpool1d after dense".into()))?;
                    if size == 0 {
                        return Err(bad(i, "pool size must be positive".into()));
                    }
                    let out_len = in_len / size;
                    if out_len == 0 {
                        return Err(bad(i, format!("pool {size} longer than input {in_len}")));
                    }
                    seq = Some((channels, out_len));
                    Layer::Pool {
                        channels,
                        in_len,
                        size,
                        out_len,
                    }
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(bad(i, "dense layer needs units".into()));
                    }
                    seq = None;
                    Layer::Dense {
                        inputs: flat,
                        units,
                    }
                }
                LayerSpec::Relu => Layer::Relu { len: flat },
                LayerSpec::Softmax => Layer::Softmax { len: flat },
            };
            flat = layer.output_size();
            match layer {
                Layer::Conv {
                    in_channels,
                    filters,
                    kernel,
                    ..
                } => {
                    param_slots.push(Some(tensor_shapes.len()));
                    tensor_shapes.push(vec![filters, in_channels, kernel]);
                    tensor_shapes.push(vec![filters]);
                    tensor_layers.extend([i, i]);
                }
                Layer::Dense { inputs, units } => {
                    param_slots.push(Some(tensor_shapes.len()));
                    tensor_shapes.push(vec![units, inputs]);
                    tensor_shapes.push(vec![units]);
                    tensor_layers.extend([i, i]);
                }
                _ => param_slots.push(None),
            }
            layers.push(layer);
        }
        match layers.last() {
            Some(Layer::Softmax { len }) if *len >= 2 => {}
            Some(Layer::Softmax { .. }) => {
                return Err(bad(
                    specs.len() - 1,
                    "softmax over fewer than 2 classes".into(),
                ))
            }
            _ => return Err(bad(specs.len() - 1, "last layer must be softmax".into())),
        }
        Ok(Self {
            input_len,
            specs,
            layers,
            param_slots,
            tensor_shapes,
            tensor_layers,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(Layer::output_size).unwrap_or(0)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    /// Shapes of the parameter tensors, in wire order: for every layer with
    /// parameters, its kernel then its bias.
    pub fn tensor_shapes(&self) -> &[Vec<usize>] {
        &self.tensor_shapes
    }

    /// Index of the layer each parameter tensor belongs to.
    pub fn tensor_layers(&self) -> &[usize] {
        &self.tensor_layers
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Fan-in used for He initialization of a kernel tensor.
    pub(crate) fn fan_in(&self, tensor: usize) -> Option<usize> {
        let shape = &self.tensor_shapes[tensor];
        match shape.len() {
            3 => Some(shape[1] * shape[2]),
            2 => Some(shape[1]),
            _ => None,
        }
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn param_slot(&self, layer: usize) -> Option<usize> {
        self.param_slots[layer]
    }
}

/// conv(32, k7) → relu → pool(2) → conv(16, k5) → relu → pool(2) →
/// dense(64) → relu → dense(c) → softmax.
pub fn default_specs(classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d {
            filters: 32,
            kernel: 7,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { size: 2 },
        LayerSpec::Conv1d {
            filters: 16,
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { size: 2 },
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: classes },
        LayerSpec::Softmax,
    ]
}

/// The reference classifier for `features` inputs and `classes` outputs.
/// Needs at least 18 features for both convolutions and pools to fit.
pub fn default_arch(features: usize, classes: usize) -> Result<Architecture, NetError> {
    if classes < 2 {
        return Err(NetError::InvalidArchitecture {
            index: 8,
            reason: format!("need at least 2 classes, got {classes}"),
        });
    }
    Architecture::new(features, default_specs(classes))
}

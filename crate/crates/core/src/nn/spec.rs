//! Layer and model specifications, with the per-family bounds of the
//! architecture search space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::NUM_CLASSES;

pub const MAX_LSTM_LAYERS: usize = 20;
pub const MAX_LSTM_UNITS: usize = 250;
pub const MAX_TD_LAYERS: usize = 20;
pub const MAX_DENSE_LAYERS: usize = 20;
pub const MAX_DENSE_UNITS: usize = 500;
pub const MAX_CONV_LAYERS: usize = 10;
pub const MAX_CONV_FILTERS: usize = 128;
pub const MAX_CONV_STRIDE: usize = 5;
pub const MAX_POOL_SECTIONS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Causal,
    Same,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Causal => "causal",
            Padding::Same => "same",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    TimeDistributedDense { units: usize, activation: Activation },
    /// Rectified-linear 1-D convolution over time.
    Conv1d { filters: usize, kernel_size: usize, stride: usize, padding: Padding },
    Lstm { units: usize, return_sequences: bool },
    Flatten,
    AdaptiveAvgPool { sections: usize },
    /// Affine map to class logits followed by softmax.
    SoftmaxOutput { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lstm,
    TdDense,
    Conv1d,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lstm => "lstm",
            Family::TdDense => "td_dense",
            Family::Conv1d => "conv1d",
        }
    }
}

/// Activation shape per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Seq { steps: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(self) -> usize {
        match self {
            Shape::Seq { steps, channels } => steps * channels,
            Shape::Flat(n) => n,
        }
    }
}

/// Start offsets of `sections` contiguous near-equal spans over `len` steps
/// (`sections` is clamped to `len`). The last entry is `len`.
pub fn pool_bounds(len: usize, sections: usize) -> Vec<usize> {
    let s = sections.min(len).max(1);
    (0..=s).map(|i| i * len / s).collect()
}

/// Output length and left padding of a strided 1-D convolution.
pub fn conv_geometry(len: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let left = match padding {
        Padding::Causal => kernel - 1,
        Padding::Same => ((out - 1) * stride + kernel).saturating_sub(len) / 2,
    };
    (out, left)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStack {
    pub layers: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub double_filters: bool,
    pub pool_sections: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// (window length, feature length)
    pub input_shape: (usize, usize),
    pub family: Family,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn td_dense(input_shape: (usize, usize), td_units: &[usize], dense_units: &[usize]) -> Self {
        let relu = Activation::Relu;
        let mut layers: Vec<LayerSpec> =
            td_units.iter().map(|&units| LayerSpec::TimeDistributedDense { units, activation: relu }).collect();
        layers.push(LayerSpec::Flatten);
        layers.extend(dense_units.iter().map(|&units| LayerSpec::Dense { units, activation: relu }));
        layers.push(LayerSpec::SoftmaxOutput { classes: NUM_CLASSES });
        ModelSpec { input_shape, family: Family::TdDense, layers }
    }

    pub fn lstm(input_shape: (usize, usize), units: &[usize]) -> Self {
        let mut layers: Vec<LayerSpec> = units
            .iter()
            .enumerate()
            .map(|(i, &u)| LayerSpec::Lstm { units: u, return_sequences: i + 1 < units.len() })
            .collect();
        layers.push(LayerSpec::SoftmaxOutput { classes: NUM_CLASSES });
        ModelSpec { input_shape, family: Family::Lstm, layers }
    }

    pub fn conv1d(input_shape: (usize, usize), stack: &ConvStack) -> Self {
        let mut layers = Vec::new();
        let mut filters = stack.filters;
        for i in 0..stack.layers {
            if i > 0 && stack.double_filters {
                filters *= 2;
            }
            layers.push(LayerSpec::Conv1d {
                filters,
                kernel_size: stack.kernel_size,
                stride: stack.stride,
                padding: stack.padding,
            });
        }
        if let Some(sections) = stack.pool_sections {
            layers.push(LayerSpec::AdaptiveAvgPool { sections });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::SoftmaxOutput { classes: NUM_CLASSES });
        ModelSpec { input_shape, family: Family::Conv1d, layers }
    }

    /// Checks family bounds and layer compatibility; returns the input shape
    /// followed by each layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let (w, f) = self.input_shape;
        if w == 0 || f == 0 {
            return bad(format!("input shape {w}×{f} must be positive"));
        }
        self.check_family()?;
        let mut shapes = vec![Shape::Seq { steps: w, channels: f }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (LayerSpec::Dense { units, .. }, Shape::Flat(_)) => Shape::Flat(units),
                (LayerSpec::SoftmaxOutput { classes }, Shape::Flat(_)) => Shape::Flat(classes),
                (LayerSpec::TimeDistributedDense { units, .. }, Shape::Seq { steps, .. }) => {
                    Shape::Seq { steps, channels: units }
                }
                (LayerSpec::Lstm { units, return_sequences }, Shape::Seq { steps, .. }) => {
                    if return_sequences {
                        Shape::Seq { steps, channels: units }
                    } else {
                        Shape::Flat(units)
                    }
                }
                (LayerSpec::Conv1d { filters, kernel_size, stride, padding }, Shape::Seq { steps, .. }) => {
                    let (out, _) = conv_geometry(steps, kernel_size, stride, padding);
                    Shape::Seq { steps: out, channels: filters }
                }
                (LayerSpec::AdaptiveAvgPool { sections }, Shape::Seq { steps, channels }) => {
                    Shape::Seq { steps: sections.min(steps), channels }
                }
                (LayerSpec::Flatten, s @ Shape::Seq { .. }) => Shape::Flat(s.size()),
                (l, s) => return bad(format!("layer {i} ({l:?}) cannot take input {s:?}")),
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    fn check_family(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let layers = &self.layers;
        match layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) if *classes == NUM_CLASSES => {}
            _ => return bad(format!("model must end in SoftmaxOutput {{ classes: {NUM_CLASSES} }}")),
        }
        let body = &layers[..layers.len() - 1];
        if body.iter().any(|l| matches!(l, LayerSpec::SoftmaxOutput { .. })) {
            return bad("SoftmaxOutput may only appear last".into());
        }
        match self.family {
            Family::Lstm => {
                let n = body.len();
                if !(1..=MAX_LSTM_LAYERS).contains(&n) {
                    return bad(format!("LSTM family needs 1..={MAX_LSTM_LAYERS} LSTM layers, got {n}"));
                }
                for (i, l) in body.iter().enumerate() {
                    match *l {
                        LayerSpec::Lstm { units, return_sequences } => {
                            if !(1..=MAX_LSTM_UNITS).contains(&units) {
                                return bad(format!("LSTM layer {i}: units {units} outside 1..={MAX_LSTM_UNITS}"));
                            }
                            if return_sequences != (i + 1 < n) {
                                return bad(format!(
                                    "LSTM layer {i}: only the last LSTM layer may drop the sequence dimension"
                                ));
                            }
                        }
                        other => return bad(format!("LSTM family cannot contain {other:?}")),
                    }
                }
            }
            Family::TdDense => {
                let flat = body.iter().position(|l| matches!(l, LayerSpec::Flatten));
                let Some(flat) = flat else { return bad("TD-dense family needs a Flatten layer".into()) };
                let (td, dense) = (&body[..flat], &body[flat + 1..]);
                if td.len() > MAX_TD_LAYERS || dense.len() > MAX_DENSE_LAYERS {
                    return bad(format!(
                        "TD-dense family allows up to {MAX_TD_LAYERS} time-distributed and {MAX_DENSE_LAYERS} dense layers"
                    ));
                }
                for l in td {
                    match *l {
                        LayerSpec::TimeDistributedDense { units, .. } if (1..=MAX_DENSE_UNITS).contains(&units) => {}
                        other => return bad(format!("invalid time-distributed layer {other:?}")),
                    }
                }
                for l in dense {
                    match *l {
                        LayerSpec::Dense { units, .. } if (1..=MAX_DENSE_UNITS).contains(&units) => {}
                        other => return bad(format!("invalid dense layer {other:?}")),
                    }
                }
            }
            Family::Conv1d => {
                let n_conv = body.iter().take_while(|l| matches!(l, LayerSpec::Conv1d { .. })).count();
                if !(1..=MAX_CONV_LAYERS).contains(&n_conv) {
                    return bad(format!("Conv-1d family needs 1..={MAX_CONV_LAYERS} conv layers, got {n_conv}"));
                }
                let mut prev_filters: Option<usize> = None;
                let mut doubling: Option<bool> = None;
                for l in &body[..n_conv] {
                    let LayerSpec::Conv1d { filters, kernel_size, stride, .. } = *l else { unreachable!() };
                    if !(1..=MAX_CONV_FILTERS).contains(&filters) {
                        return bad(format!("conv filters {filters} outside 1..={MAX_CONV_FILTERS}"));
                    }
                    if kernel_size == 0 {
                        return bad("conv kernel size must be positive".into());
                    }
                    if !(1..=MAX_CONV_STRIDE).contains(&stride) {
                        return bad(format!("conv stride {stride} outside 1..={MAX_CONV_STRIDE}"));
                    }
                    if let Some(p) = prev_filters {
                        let doubled = filters == 2 * p;
                        if filters != p && !doubled {
                            return bad("conv filters must stay constant or double per layer".into());
                        }
                        if let Some(d) = doubling {
                            if d != doubled {
                                return bad("conv filters must stay constant or double per layer".into());
                            }
                        }
                        doubling = Some(doubled);
                    }
                    prev_filters = Some(filters);
                }
                let rest = &body[n_conv..];
                let ok = match rest {
                    [LayerSpec::Flatten] => true,
                    [LayerSpec::AdaptiveAvgPool { sections }, LayerSpec::Flatten] => {
                        (1..=MAX_POOL_SECTIONS).contains(sections)
                    }
                    _ => false,
                };
                if !ok {
                    return bad(format!(
                        "Conv-1d family must end conv layers with [AdaptiveAvgPool {{1..={MAX_POOL_SECTIONS}}}] Flatten"
                    ));
                }
            }
        }
        Ok(())
    }
}

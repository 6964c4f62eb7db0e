//! Network descriptions: layer specs, shape checking, the text format,
//! weight storage, and forward execution over the float or binary path.
//!
//! A network is an ordered list of layers over a declared `(C, H, W)`
//! input. Composite "fire" layers expand to squeeze/expand convolution
//! trees at execution time; layers carrying the `binary` flag route
//! through the XNOR kernels.

mod forward;
mod parse;
mod weights;

pub use forward::{forward, PrepareOptions, Prepared};
pub use parse::parse_netspec;
pub use weights::{load_weights, save_weights, Weights, WEIGHT_MAGIC};

use crate::error::{Error, Result};
use std::fmt;

/// One layer of a network description.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { out: usize, k: usize, stride: usize, pad: usize, binary: bool },
    /// Squeeze/expand block; `e5` present makes it the extended variant.
    Fire { squeeze: usize, e1: usize, e3: usize, e5: Option<usize>, binary: bool },
    Maxpool { k: usize, stride: usize },
    Relu,
    Prelu { init: f32 },
    FullyConnected { out: usize },
    Softmax,
}

/// Default slope for parametric ReLU layers created from text.
pub const PRELU_DEFAULT_INIT: f32 = 0.25;

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Fire { e5: None, .. } => "fire",
            LayerSpec::Fire { e5: Some(_), .. } => "extended_fire",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Prelu { .. } => "prelu",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Layers that contain convolutions (and may carry the binary flag).
    pub fn is_conv_bearing(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fire { .. })
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { binary: true, .. } | LayerSpec::Fire { binary: true, .. }
        )
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out, k, stride, pad, binary } => {
                write!(f, "conv out={out} k={k} s={stride} pad={pad}")?;
                if *binary {
                    write!(f, " binary")?;
                }
                Ok(())
            }
            LayerSpec::Fire { squeeze, e1, e3, e5, binary } => {
                write!(f, "fire s={squeeze} e1={e1} e3={e3}")?;
                if let Some(e5) = e5 {
                    write!(f, " e5={e5}")?;
                }
                if *binary {
                    write!(f, " binary")?;
                }
                Ok(())
            }
            LayerSpec::Maxpool { k, stride } => write!(f, "maxpool k={k} s={stride}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Prelu { .. } => write!(f, "prelu"),
            LayerSpec::FullyConnected { out } => write!(f, "fc out={out}"),
            LayerSpec::Softmax => write!(f, "softmax"),
        }
    }
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FlowShape {
    pub fn elements(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// A validated network description.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    classes: usize,
}

impl NetworkSpec {
    /// Builds and shape-checks a spec; the class count is taken from the
    /// final layer's output size.
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>) -> Result<NetworkSpec> {
        let shapes = propagate(input, &layers)?;
        let classes = shapes.last().map(FlowShape::elements).unwrap_or(0);
        Ok(NetworkSpec { input, layers, classes })
    }

    /// As [`NetworkSpec::new`] but checks the net really emits
    /// `classes` outputs.
    pub fn with_classes(
        input: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        classes: usize,
    ) -> Result<NetworkSpec> {
        let spec = NetworkSpec::new(input, layers)?;
        if spec.classes != classes {
            return Err(Error::shape(format!(
                "final layer produces {} outputs, expected {classes} classes",
                spec.classes
            )));
        }
        Ok(spec)
    }

    pub fn input(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Output shape after every layer.
    pub fn layer_shapes(&self) -> Vec<FlowShape> {
        // the spec was validated on construction, so this cannot fail
        propagate(self.input, &self.layers).expect("validated spec")
    }

    /// Shape feeding each layer (input shape first).
    pub fn input_shapes(&self) -> Vec<FlowShape> {
        let (c, h, w) = self.input;
        let mut shapes = vec![FlowShape { c, h, w }];
        let outs = self.layer_shapes();
        shapes.extend(outs[..outs.len().saturating_sub(1)].iter().copied());
        shapes
    }

    /// Exact trainable parameter count: weights + biases + prelu slopes.
    pub fn count_params(&self) -> usize {
        self.input_shapes()
            .iter()
            .zip(&self.layers)
            .map(|(s, l)| layer_params(s, l))
            .sum()
    }

    /// Multiply-accumulate count of one forward pass (convolutions and
    /// fully connected layers; pooling/activations contribute none).
    pub fn estimate_macs(&self) -> usize {
        let ins = self.input_shapes();
        let outs = self.layer_shapes();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| layer_macs(&ins[i], &outs[i], l))
            .sum()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input;
        writeln!(f, "input {c}x{h}x{w}")?;
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

fn layer_params(input: &FlowShape, layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv { out, k, .. } => out * input.c * k * k + out,
        LayerSpec::Fire { squeeze, e1, e3, e5, .. } => {
            let s = *squeeze;
            let mut p = input.c * s + s + s * e1 + e1 + 9 * s * e3 + e3;
            if let Some(e5) = e5 {
                p += 25 * s * e5 + e5;
            }
            p
        }
        LayerSpec::Prelu { .. } => input.c,
        LayerSpec::FullyConnected { out } => input.elements() * out + out,
        _ => 0,
    }
}

fn layer_macs(input: &FlowShape, output: &FlowShape, layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv { out, k, .. } => out * input.c * k * k * output.h * output.w,
        LayerSpec::Fire { squeeze, e1, e3, e5, .. } => {
            let s = *squeeze;
            let plane = input.h * input.w;
            let mut m = s * input.c * plane + (e1 * s + 9 * e3 * s) * plane;
            if let Some(e5) = e5 {
                m += 25 * e5 * s * plane;
            }
            m
        }
        LayerSpec::FullyConnected { out } => input.elements() * out,
        _ => 0,
    }
}

/// Symbolic shape propagation; errors name the offending layer.
pub(crate) fn propagate(
    input: (usize, usize, usize),
    layers: &[LayerSpec],
) -> Result<Vec<FlowShape>> {
    let (c, h, w) = input;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("input extents must be >= 1, got {c}x{h}x{w}")));
    }
    if layers.is_empty() {
        return Err(Error::shape("network has no layers".to_string()));
    }

    let mut cur = FlowShape { c, h, w };
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        cur = step(&cur, layer).map_err(|e| match e {
            Error::Shape(msg) | Error::Arg(msg) => {
                Error::shape(format!("layer {i} ({}): {msg}", layer.kind_name()))
            }
            other => other,
        })?;
        shapes.push(cur);
    }
    Ok(shapes)
}

fn step(s: &FlowShape, layer: &LayerSpec) -> Result<FlowShape> {
    use crate::kernels::conv_out_extent;
    match layer {
        LayerSpec::Conv { out, k, stride, pad, .. } => {
            if !matches!(k, 1 | 3 | 5) {
                return Err(Error::arg(format!("kernel must be 1, 3 or 5, got {k}")));
            }
            if *out == 0 || *stride == 0 {
                return Err(Error::arg("out and s must be >= 1".to_string()));
            }
            let h = conv_out_extent(s.h, *k, *stride, *pad);
            let w = conv_out_extent(s.w, *k, *stride, *pad);
            match (h, w) {
                (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok(FlowShape { c: *out, h, w }),
                _ => Err(Error::shape(format!(
                    "{k}x{k} conv (s={stride}, pad={pad}) yields no output on {}x{}",
                    s.h, s.w
                ))),
            }
        }
        LayerSpec::Fire { squeeze, e1, e3, e5, .. } => {
            if *squeeze == 0 || *e1 == 0 || *e3 == 0 || e5.is_some_and(|v| v == 0) {
                return Err(Error::arg("fire filter counts must be >= 1".to_string()));
            }
            // expand branches need their padded window to fit
            if s.h < 1 || s.w < 1 {
                return Err(Error::shape("fire needs a spatial input".to_string()));
            }
            Ok(FlowShape { c: e1 + e3 + e5.unwrap_or(0), h: s.h, w: s.w })
        }
        LayerSpec::Maxpool { k, stride } => {
            if *k == 0 || *stride == 0 {
                return Err(Error::arg("k and s must be >= 1".to_string()));
            }
            if *k > s.h || *k > s.w {
                return Err(Error::shape(format!(
                    "{k}x{k} pool window exceeds {}x{} input",
                    s.h, s.w
                )));
            }
            Ok(FlowShape { c: s.c, h: (s.h - k) / stride + 1, w: (s.w - k) / stride + 1 })
        }
        LayerSpec::Relu | LayerSpec::Prelu { .. } => Ok(*s),
        LayerSpec::FullyConnected { out } => {
            if *out == 0 {
                return Err(Error::arg("out must be >= 1".to_string()));
            }
            Ok(FlowShape { c: *out, h: 1, w: 1 })
        }
        LayerSpec::Softmax => {
            if s.h != 1 || s.w != 1 {
                return Err(Error::shape(format!(
                    "softmax needs a flat input, got {}x{}x{}",
                    s.c, s.h, s.w
                )));
            }
            Ok(*s)
        }
    }
}

/// Flags binary convolutions in positions where binarization loses the
/// most information: the first and the last convolution-bearing layer.
/// Returns human-readable warnings, never errors.
pub fn validate_binarization(spec: &NetworkSpec) -> Vec<String> {
    let conv_bearing: Vec<usize> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_conv_bearing())
        .map(|(i, _)| i)
        .collect();
    let mut warnings = Vec::new();
    let (first, last) = match (conv_bearing.first(), conv_bearing.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return warnings,
    };
    for &i in &conv_bearing {
        if (i == first || i == last) && spec.layers[i].is_binary() {
            let place = if i == first { "first" } else { "last" };
            warnings.push(format!(
                "layer {i} ({}) is the {place} convolution layer; binarizing it loses the most information",
                spec.layers[i]
            ));
        }
    }
    warnings
}

/// Per-layer tensor shapes in storage order: weights, then bias, then
/// slopes. This is the single source of truth for init, serialization and
/// gradient layout.
pub fn weight_shapes(spec: &NetworkSpec) -> Vec<Vec<Vec<usize>>> {
    spec.input_shapes()
        .iter()
        .zip(spec.layers())
        .map(|(s, l)| match l {
            LayerSpec::Conv { out, k, .. } => {
                vec![vec![*out, s.c, *k, *k], vec![*out]]
            }
            LayerSpec::Fire { squeeze, e1, e3, e5, .. } => {
                let sq = *squeeze;
                let mut v = vec![
                    vec![sq, s.c, 1, 1],
                    vec![sq],
                    vec![*e1, sq, 1, 1],
                    vec![*e1],
                    vec![*e3, sq, 3, 3],
                    vec![*e3],
                ];
                if let Some(e5) = e5 {
                    v.push(vec![*e5, sq, 5, 5]);
                    v.push(vec![*e5]);
                }
                v
            }
            LayerSpec::Prelu { .. } => vec![vec![s.c]],
            LayerSpec::FullyConnected { out } => vec![vec![*out, s.elements()], vec![*out]],
            _ => vec![],
        })
        .collect()
}

//! Forward execution: lowers a spec + weights into a run plan, applying
//! binarization once up front for binary-flagged layers.

use super::{LayerSpec, NetworkSpec, Weights};
use crate::binary::{binarize_weights, xnor_conv_forward, BinarizedFilterBank};
use crate::error::{Error, Result};
use crate::kernels::{conv_forward, maxpool, prelu, relu, softmax, ConvParams};
use crate::tensor::{channel_concat, Tensor};
use std::time::Instant;

/// How binary-flagged layers execute.
#[derive(Debug, Clone, Copy)]
pub struct PrepareOptions {
    /// Route binary-flagged convolutions through the XNOR kernels;
    /// `false` forces the full-precision path everywhere.
    pub use_binary: bool,
    /// Apply the per-position input factor K in binary convolutions.
    pub input_scaling: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions { use_binary: true, input_scaling: true }
    }
}

enum ConvRun {
    Float(ConvParams),
    Binary(BinarizedFilterBank, bool),
}

impl ConvRun {
    fn build(
        in_channels: usize,
        out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        w: &Tensor,
        b: &Tensor,
        binary: bool,
        opt: &PrepareOptions,
    ) -> Result<ConvRun> {
        let p = ConvParams::new(in_channels, out, k, stride, pad, w.clone(), b.clone())?;
        Ok(if binary && opt.use_binary {
            ConvRun::Binary(binarize_weights(&p), opt.input_scaling)
        } else {
            ConvRun::Float(p)
        })
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ConvRun::Float(p) => conv_forward(x, p),
            ConvRun::Binary(bank, scaling) => xnor_conv_forward(x, bank, *scaling),
        }
    }
}

enum RunOp {
    Conv(ConvRun),
    Fire { squeeze: ConvRun, e1: ConvRun, e3: ConvRun, e5: Option<ConvRun> },
    Maxpool { k: usize, stride: usize },
    Relu,
    Prelu { slopes: Vec<f32> },
    Fc { w: Vec<f32>, rows: usize, cols: usize, b: Vec<f32> },
    Softmax,
}

impl RunOp {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            RunOp::Conv(c) => c.run(x),
            RunOp::Fire { squeeze, e1, e3, e5 } => {
                let s = relu(&squeeze.run(x)?);
                let mut parts = vec![relu(&e1.run(&s)?), relu(&e3.run(&s)?)];
                if let Some(e5) = e5 {
                    parts.push(relu(&e5.run(&s)?));
                }
                channel_concat(&parts)
            }
            RunOp::Maxpool { k, stride } => maxpool(x, *k, *stride),
            RunOp::Relu => Ok(relu(x)),
            RunOp::Prelu { slopes } => prelu(x, slopes),
            RunOp::Fc { w, rows, cols, b } => {
                if x.len() != *cols {
                    return Err(Error::shape(format!(
                        "fc expects {cols} inputs, got {}",
                        x.len()
                    )));
                }
                let xd = x.data();
                let mut out = Vec::with_capacity(*rows);
                for r in 0..*rows {
                    let row = &w[r * cols..(r + 1) * cols];
                    let acc: f32 = row.iter().zip(xd).map(|(a, b)| a * b).sum();
                    out.push(acc + b[r]);
                }
                Tensor::from_vec(&[*rows], out)
            }
            // propagation guarantees h = w = 1 here; flatten for the kernel
            RunOp::Softmax => softmax(&x.reshape(&[x.len()])?),
        }
    }
}

/// A network lowered for execution: weights bound, binary layers packed.
pub struct Prepared {
    ops: Vec<RunOp>,
    labels: Vec<String>,
    input: (usize, usize, usize),
    classes: usize,
}

impl Prepared {
    pub fn new(spec: &NetworkSpec, weights: &Weights) -> Result<Prepared> {
        Prepared::with_options(spec, weights, PrepareOptions::default())
    }

    pub fn with_options(
        spec: &NetworkSpec,
        weights: &Weights,
        opt: PrepareOptions,
    ) -> Result<Prepared> {
        weights.conforms(spec)?;
        let ins = spec.input_shapes();
        let mut ops = Vec::with_capacity(spec.layers().len());
        let mut labels = Vec::with_capacity(spec.layers().len());
        for (i, layer) in spec.layers().iter().enumerate() {
            let s = &ins[i];
            let t = &weights.layers[i];
            let op = match layer {
                LayerSpec::Conv { out, k, stride, pad, binary } => RunOp::Conv(ConvRun::build(
                    s.c, *out, *k, *stride, *pad, &t[0], &t[1], *binary, &opt,
                )?),
                LayerSpec::Fire { squeeze, e1, e3, e5, binary } => RunOp::Fire {
                    squeeze: ConvRun::build(s.c, *squeeze, 1, 1, 0, &t[0], &t[1], *binary, &opt)?,
                    e1: ConvRun::build(*squeeze, *e1, 1, 1, 0, &t[2], &t[3], *binary, &opt)?,
                    e3: ConvRun::build(*squeeze, *e3, 3, 1, 1, &t[4], &t[5], *binary, &opt)?,
                    e5: match e5 {
                        Some(e5) => Some(ConvRun::build(
                            *squeeze, *e5, 5, 1, 2, &t[6], &t[7], *binary, &opt,
                        )?),
                        None => None,
                    },
                },
                LayerSpec::Maxpool { k, stride } => RunOp::Maxpool { k: *k, stride: *stride },
                LayerSpec::Relu => RunOp::Relu,
                LayerSpec::Prelu { .. } => RunOp::Prelu { slopes: t[0].data().to_vec() },
                LayerSpec::FullyConnected { out } => RunOp::Fc {
                    w: t[0].data().to_vec(),
                    rows: *out,
                    cols: s.elements(),
                    b: t[1].data().to_vec(),
                },
                LayerSpec::Softmax => RunOp::Softmax,
            };
            ops.push(op);
            labels.push(format!("{i}:{}", layer.kind_name()));
        }
        Ok(Prepared { ops, labels, input: spec.input(), classes: spec.classes() })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layer_labels(&self) -> &[String] {
        &self.labels
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = self.input;
        let (n, xc, xh, xw) = x.nchw();
        if n != 1 || (xc, xh, xw) != (c, h, w) {
            return Err(Error::shape(format!(
                "input shape {:?} does not match declared {c}x{h}x{w}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Runs all layers in order; the output of the final softmax (when
    /// present) is the class-probability vector.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (op, label) in self.ops.iter().zip(&self.labels) {
            cur = op
                .apply(&cur)
                .map_err(|e| Error::shape(format!("layer {label}: {e}")))?;
        }
        Ok(cur)
    }

    /// As [`forward`](Self::forward), also returning per-layer wall time
    /// in milliseconds.
    pub fn forward_profiled(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut times = Vec::with_capacity(self.ops.len());
        for (op, label) in self.ops.iter().zip(&self.labels) {
            let t0 = Instant::now();
            cur = op
                .apply(&cur)
                .map_err(|e| Error::shape(format!("layer {label}: {e}")))?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        Ok((cur, times))
    }
}

/// One-shot convenience wrapper around [`Prepared`].
pub fn forward(spec: &NetworkSpec, weights: &Weights, x: &Tensor) -> Result<Tensor> {
    Prepared::new(spec, weights)?.forward(x)
}

//! Dense tensor value type shared by every kernel.
//!
//! Tensors are rank 1..=4 arrays of `f32` in row-major order. The extents
//! are read as `(N, C, H, W)`; tensors of lower rank are the trailing
//! suffix of that tuple with implied leading 1s, so a rank-1 tensor is a
//! `W`-vector and a rank-3 tensor is a single `(C, H, W)` image.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Tensor with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f32) -> Result<Tensor> {
        Self::check_shape(shape)?;
        let len = shape.iter().product();
        Ok(Tensor { shape: shape.to_vec(), data: vec![fill; len] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Self::new(shape, 0.0)
    }

    /// Wraps an existing flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        Self::check_shape(shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("rank must be 1..=4, got {}", shape.len())));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!("extents must be >= 1, got {shape:?}")));
        }
        Ok(())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Extents padded with leading 1s to the canonical `(N, C, H, W)`.
    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        let mut e = [1usize; 4];
        let off = 4 - self.shape.len();
        for (i, &x) in self.shape.iter().enumerate() {
            e[off + i] = x;
        }
        (e[0], e[1], e[2], e[3])
    }

    pub fn n(&self) -> usize {
        self.nchw().0
    }

    pub fn c(&self) -> usize {
        self.nchw().1
    }

    pub fn h(&self) -> usize {
        self.nchw().2
    }

    pub fn w(&self) -> usize {
        self.nchw().3
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::Index(format!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (axis, (&i, &e)) in index.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(Error::Index(format!(
                    "coordinate {i} out of range for axis {axis} with extent {e}"
                )));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    /// Row-major element read: offset = ((n*C + c)*H + h)*W + w.
    pub fn get(&self, index: &[usize]) -> Result<f32> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f32) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Same data viewed under a different shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }
}

/// Concatenates tensors along the channel axis.
///
/// All parts must agree on N, H and W; part `i`'s channels land in the
/// contiguous block after parts `0..i`. The output keeps the widest input
/// rank (widened if the summed channel count no longer fits).
pub fn channel_concat(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::arg("channel_concat needs at least one tensor"))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    let (n, _, h, w) = first.nchw();
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.nchw();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "channel_concat parts disagree: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        c_total += pc;
    }

    let mut data = Vec::with_capacity(n * c_total * h * w);
    let plane = h * w;
    for img in 0..n {
        for p in parts {
            let pc = p.c();
            let start = img * pc * plane;
            data.extend_from_slice(&p.data()[start..start + pc * plane]);
        }
    }

    let canonical = [n, c_total, h, w];
    let needed = 4 - canonical.iter().take_while(|&&e| e == 1).count().min(3);
    let rank = needed.max(parts.iter().map(Tensor::rank).max().unwrap());
    Tensor::from_vec(&canonical[4 - rank..], data)
}

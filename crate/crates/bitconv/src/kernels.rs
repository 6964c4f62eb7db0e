//! Full-precision reference kernels.
//!
//! Convolution is expressed as `gemm(weights, im2col(x))`, which keeps the
//! float path and the bit-packed path structurally identical and lets the
//! float kernels double as the correctness oracle for the binary ones.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Output spatial extent for one axis, or None when the window does not fit.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unrolls receptive fields into matrix columns.
///
/// Column `j` holds the receptive field of output position `j` (row-major
/// over output positions); rows are ordered channel-major, then kernel row,
/// then kernel column. Out-of-image positions read as zero.
pub fn im2col(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Mat> {
    let (n, c, h, w) = x.nchw();
    if n != 1 {
        return Err(Error::shape(format!("im2col expects a single image, got N={n}")));
    }
    let (h_out, w_out) = match (conv_out_extent(h, k, stride, pad), conv_out_extent(w, k, stride, pad)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(format!(
                "{k}x{k} window (stride {stride}, pad {pad}) does not fit {h}x{w} input"
            )))
        }
    };

    let mut out = Mat::zeros(c * k * k, h_out * w_out);
    let data = x.data();
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let base = row * out.cols;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue; // whole row of this oy stays zero
                    }
                    let src_row = (ch * h + iy as usize) * w;
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out.data[base + oy * w_out + ox] = data[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Plain `C[i][j] = sum_t A[i][t] * B[t][j]` with 32-bit accumulation.
pub fn gemm(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "gemm inner dimensions disagree: {}x{} . {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (t, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[t * b.cols..(t + 1) * b.cols];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    Ok(c)
}

/// Convolution hyperparameters plus full-precision weights.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weights: Tensor, // [out, in, k, k]
    pub bias: Tensor,    // [out]
}

impl ConvParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weights: Tensor,
        bias: Tensor,
    ) -> Result<ConvParams> {
        if !matches!(kernel, 1 | 3 | 5) {
            return Err(Error::arg(format!("kernel must be 1, 3 or 5, got {kernel}")));
        }
        if stride == 0 {
            return Err(Error::arg("stride must be >= 1"));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::arg("channel counts must be >= 1"));
        }
        let expect = [out_channels, in_channels, kernel, kernel];
        if weights.shape() != expect {
            return Err(Error::shape(format!(
                "weights shape {:?} != {:?}",
                weights.shape(),
                expect
            )));
        }
        if bias.shape() != [out_channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} != [{out_channels}]",
                bias.shape()
            )));
        }
        Ok(ConvParams { in_channels, out_channels, kernel, stride, pad, weights, bias })
    }

    /// Weights viewed as the gemm left operand `[out, in*k*k]`.
    pub fn weight_mat(&self) -> Mat {
        Mat {
            rows: self.out_channels,
            cols: self.in_channels * self.kernel * self.kernel,
            data: self.weights.data().to_vec(),
        }
    }
}

/// `gemm(weights, im2col(x)) + bias`, batched over N.
pub fn conv_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw();
    if c != p.in_channels {
        return Err(Error::shape(format!(
            "input has {c} channels, conv expects {}",
            p.in_channels
        )));
    }
    let h_out = conv_out_extent(h, p.kernel, p.stride, p.pad)
        .ok_or_else(|| Error::shape("conv window does not fit input".to_string()))?;
    let w_out = conv_out_extent(w, p.kernel, p.stride, p.pad)
        .ok_or_else(|| Error::shape("conv window does not fit input".to_string()))?;

    let w_mat = p.weight_mat();
    let bias = p.bias.data();
    let mut out = Vec::with_capacity(n * p.out_channels * h_out * w_out);
    let plane = c * h * w;
    for img in 0..n {
        let xi = Tensor::from_vec(&[1, c, h, w], x.data()[img * plane..(img + 1) * plane].to_vec())?;
        let cols = im2col(&xi, p.kernel, p.stride, p.pad)?;
        let y = gemm(&w_mat, &cols)?;
        for f in 0..p.out_channels {
            out.extend(y.row(f).iter().map(|v| v + bias[f]));
        }
    }
    Tensor::from_vec(&[n, p.out_channels, h_out, w_out], out)
}

/// Max over each k-by-k window; stride == k makes the windows a partition.
pub fn maxpool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw();
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::shape(format!("{k}x{k} pool window exceeds {h}x{w} input")));
    }
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * h_out * w_out);
    for img in 0..n {
        for ch in 0..c {
            let plane = &data[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * w + ox * stride;
                        for v in &plane[row..row + k] {
                            if *v > best {
                                best = *v;
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h_out, w_out], out)
}

/// `y = x` for `x > 0`, else `slope_c * x`; slope 0 is plain ReLU.
pub fn prelu(x: &Tensor, slopes: &[f32]) -> Result<Tensor> {
    let (n, c, h, w) = x.nchw();
    if slopes.len() != c {
        return Err(Error::shape(format!(
            "{} slopes for {c} channels",
            slopes.len()
        )));
    }
    let plane = h * w;
    let mut out = x.clone();
    for img in 0..n {
        for ch in 0..c {
            let s = slopes[ch];
            let start = (img * c + ch) * plane;
            for v in &mut out.data_mut()[start..start + plane] {
                if *v <= 0.0 {
                    *v *= s;
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Max-subtracted softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.len() != logits.w() {
        return Err(Error::shape(format!(
            "softmax expects a rank-1 tensor, got shape {:?}",
            logits.shape()
        )));
    }
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let max = logits.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut out = logits.clone();
    let mut sum = 0.0f32;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.data_mut() {
        *v /= sum;
    }
    Ok(out)
}

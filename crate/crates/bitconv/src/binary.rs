//! Bit-packed XNOR convolution path.
//!
//! Weights and activations are reduced to their sign bits (one bit per
//! element, packed into `u64` words), dot products become
//! `n - 2*popcount(a ^ b)`, and convolution becomes a binary gemm over
//! packed im2col columns. Real-valued scale factors (per-filter `alpha`,
//! optional per-position input factor `K`) are re-applied afterwards.

use crate::error::{Error, Result};
use crate::kernels::{conv_out_extent, im2col, Mat};
use crate::tensor::Tensor;

const WORD_BITS: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[cfg(target_arch = "x86_64")]
fn popcnt_available() -> bool {
    use std::sync::OnceLock;
    static AVAIL: OnceLock<bool> = OnceLock::new();
    *AVAIL.get_or_init(|| std::arch::is_x86_feature_detected!("popcnt"))
}

/// True when the CPU exposes a hardware bit-counting instruction.
pub fn hardware_popcount() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        popcnt_available()
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        cfg!(target_arch = "aarch64")
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn xor_popcount_hw(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn xor_popcount_sw(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
fn xor_popcount(a: &[u64], b: &[u64]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    if popcnt_available() {
        // SAFETY: popcnt support verified at runtime.
        return unsafe { xor_popcount_hw(a, b) };
    }
    xor_popcount_sw(a, b)
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Sign bits of a float vector packed into 64-bit words.
///
/// Bit `i` is 1 when element `i` is >= 0 (so 1 encodes +1 and 0 encodes
/// -1); the unused tail of the last word is always zero, which lets every
/// popcount below run over whole words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitTensor {
    words: Vec<u64>,
    len: usize,
}

impl BitTensor {
    pub fn zeros(len: usize) -> BitTensor {
        BitTensor { words: vec![0; words_for(len)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let w = &mut self.words[i / WORD_BITS];
        let bit = 1u64 << (i % WORD_BITS);
        if v {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// All bits flipped, tail re-zeroed.
    pub fn complement(&self) -> BitTensor {
        let mut out = BitTensor { words: self.words.iter().map(|w| !w).collect(), len: self.len };
        out.zero_tail();
        out
    }

    fn zero_tail(&mut self) {
        let tail = self.len % WORD_BITS;
        if tail != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
    }

    /// Decodes back to a +1/-1 vector.
    pub fn to_signs(&self) -> Vec<f32> {
        (0..self.len).map(|i| if self.get(i) { 1.0 } else { -1.0 }).collect()
    }

    pub fn storage_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

/// Packs `v` by sign: bit set iff the element is >= 0 (sign of 0 is +1).
pub fn pack_signs(v: &[f32]) -> BitTensor {
    let mut t = BitTensor::zeros(v.len());
    for (i, &x) in v.iter().enumerate() {
        if x >= 0.0 {
            t.words[i / WORD_BITS] |= 1u64 << (i % WORD_BITS);
        }
    }
    t
}

/// Dot product of two +1/-1 vectors via XOR and bit counting:
/// `sum a_i*b_i = n - 2*popcount(a ^ b)`.
pub fn xnor_dot(a: &BitTensor, b: &BitTensor) -> Result<i32> {
    if a.len != b.len {
        return Err(Error::shape(format!(
            "xnor_dot length mismatch: {} vs {}",
            a.len, b.len
        )));
    }
    Ok(a.len as i32 - 2 * xor_popcount(&a.words, &b.words) as i32)
}

/// A bundle of equally sized packed vectors: the rows of a row-packed
/// matrix or the columns of a column-packed one. Vector `i` occupies its
/// own word-aligned span so a dot is one contiguous word loop.
#[derive(Debug, Clone)]
pub struct BitMatrix {
    vecs: usize,
    len: usize,
    words_per_vec: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    fn empty(vecs: usize, len: usize) -> BitMatrix {
        let words_per_vec = words_for(len);
        BitMatrix { vecs, len, words_per_vec, words: vec![0; vecs * words_per_vec] }
    }

    /// Packs each row of `m` (vector length = m.cols).
    pub fn pack_rows(m: &Mat) -> BitMatrix {
        let mut out = BitMatrix::empty(m.rows, m.cols);
        for r in 0..m.rows {
            let base = r * out.words_per_vec;
            for (c, &v) in m.row(r).iter().enumerate() {
                if v >= 0.0 {
                    out.words[base + c / WORD_BITS] |= 1u64 << (c % WORD_BITS);
                }
            }
        }
        out
    }

    /// Packs each column of `m` (vector length = m.rows).
    pub fn pack_cols(m: &Mat) -> BitMatrix {
        let mut out = BitMatrix::empty(m.cols, m.rows);
        for r in 0..m.rows {
            let row = m.row(r);
            let word = r / WORD_BITS;
            let bit = 1u64 << (r % WORD_BITS);
            for (c, &v) in row.iter().enumerate() {
                if v >= 0.0 {
                    out.words[c * out.words_per_vec + word] |= bit;
                }
            }
        }
        out
    }

    pub fn vec_count(&self) -> usize {
        self.vecs
    }

    pub fn vec_len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn vec_words(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_vec..(i + 1) * self.words_per_vec]
    }

    pub fn storage_bytes(&self) -> usize {
        self.words.len() * 8
    }
}

/// Integer result matrix of a binary gemm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntMat {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }
}

/// `C[i][j] = xnor_dot(row_i(a), col_j(b))` over packed words.
pub fn binary_gemm(a: &BitMatrix, b: &BitMatrix) -> Result<IntMat> {
    if a.len != b.len {
        return Err(Error::shape(format!(
            "binary_gemm inner dimensions disagree: {} vs {}",
            a.len, b.len
        )));
    }
    let n = a.len as i32;
    let mut data = Vec::with_capacity(a.vecs * b.vecs);
    for i in 0..a.vecs {
        let row = a.vec_words(i);
        for j in 0..b.vecs {
            data.push(n - 2 * xor_popcount(row, b.vec_words(j)) as i32);
        }
    }
    Ok(IntMat { rows: a.vecs, cols: b.vecs, data })
}

/// Geometry of a convolution layer without its float weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Sign-packed filters plus per-filter scale factors.
#[derive(Debug, Clone)]
pub struct BinarizedFilterBank {
    pub signs: BitMatrix, // out x (in*k*k), row-packed
    pub alphas: Vec<f32>,
    pub geometry: ConvGeometry,
    pub bias: Tensor,
}

use crate::kernels::ConvParams;

/// Closed-form binarization: `signs = sign(W)`, `alpha_f = mean |W_f|`,
/// the L2-optimal rank-one approximation `W_f ~ alpha_f * B_f`.
pub fn binarize_weights(p: &ConvParams) -> BinarizedFilterBank {
    let per_filter = p.in_channels * p.kernel * p.kernel;
    let w = p.weight_mat();
    let signs = BitMatrix::pack_rows(&w);
    let alphas = (0..p.out_channels)
        .map(|f| w.row(f).iter().map(|v| v.abs()).sum::<f32>() / per_filter as f32)
        .collect();
    BinarizedFilterBank {
        signs,
        alphas,
        geometry: ConvGeometry {
            in_channels: p.in_channels,
            out_channels: p.out_channels,
            kernel: p.kernel,
            stride: p.stride,
            pad: p.pad,
        },
        bias: p.bias.clone(),
    }
}

impl BinarizedFilterBank {
    /// Bytes used by the packed signs (excludes alphas and bias).
    pub fn sign_bytes(&self) -> usize {
        self.signs.storage_bytes()
    }

    /// Bytes the same filters occupy in 32-bit floats.
    pub fn float_weight_bytes(&self) -> usize {
        let g = self.geometry;
        g.out_channels * g.in_channels * g.kernel * g.kernel * 4
    }
}

/// XNOR convolution.
///
/// Zero padding cannot be represented in a pure +1/-1 stream, so padded
/// positions are packed as +1 and the affected border columns are fixed
/// up afterwards with one masked popcount per (filter, column): the
/// inner gemm loop stays whole-word and branch-free.
///
/// With `input_scaling` on, each output position is also multiplied by
/// `K(h,w)`, the average over the receptive field's in-image pixels of the
/// per-pixel channel mean of `|x|`.
pub fn xnor_conv_forward(
    x: &Tensor,
    f: &BinarizedFilterBank,
    input_scaling: bool,
) -> Result<Tensor> {
    let g = f.geometry;
    let (n, c, h, w) = x.nchw();
    if c != g.in_channels {
        return Err(Error::shape(format!(
            "input has {c} channels, filter bank expects {}",
            g.in_channels
        )));
    }
    let h_out = conv_out_extent(h, g.kernel, g.stride, g.pad)
        .ok_or_else(|| Error::shape("binary conv window does not fit input".to_string()))?;
    let w_out = conv_out_extent(w, g.kernel, g.stride, g.pad)
        .ok_or_else(|| Error::shape("binary conv window does not fit input".to_string()))?;

    let plane = c * h * w;
    let bias = f.bias.data();
    let mut out = Vec::with_capacity(n * g.out_channels * h_out * w_out);
    for img in 0..n {
        let xi = Tensor::from_vec(&[1, c, h, w], x.data()[img * plane..(img + 1) * plane].to_vec())?;
        let cols = im2col(&xi, g.kernel, g.stride, g.pad)?;
        let packed = BitMatrix::pack_cols(&cols);
        let mut raw = binary_gemm(&f.signs, &packed)?;
        if g.pad > 0 {
            correct_padding(&mut raw, f, h, w, h_out, w_out);
        }

        let k_map = if input_scaling { Some(input_factor(&xi, g, h_out, w_out)) } else { None };
        for filt in 0..g.out_channels {
            let alpha = f.alphas[filt];
            let b = bias[filt];
            for j in 0..h_out * w_out {
                // bias stays full precision, outside the scaled binary term
                let approx = alpha * raw.at(filt, j) as f32;
                out.push(match &k_map {
                    Some(k) => approx * k[j] + b,
                    None => approx + b,
                });
            }
        }
    }
    Tensor::from_vec(&[n, g.out_channels, h_out, w_out], out)
}

/// Removes the phantom +1 contributions that padded (zero) positions left
/// in the raw counts: packed pads read as +1, the true convolution treats
/// them as 0, so subtract `sum of sign(W_f) over padded rows`, computed as
/// `2*popcount(W_row & mask) - popcount(mask)`.
fn correct_padding(
    raw: &mut IntMat,
    f: &BinarizedFilterBank,
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
) {
    let g = f.geometry;
    let k = g.kernel;
    let mut mask = BitTensor::zeros(g.in_channels * k * k);
    for oy in 0..h_out {
        for ox in 0..w_out {
            let mut any = false;
            mask.words.iter_mut().for_each(|w| *w = 0);
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                        any = true;
                        for ch in 0..g.in_channels {
                            mask.set((ch * k + ky) * k + kx, true);
                        }
                    }
                }
            }
            if !any {
                continue;
            }
            let mask_pop = mask.words.iter().map(|w| w.count_ones()).sum::<u32>() as i32;
            let j = oy * w_out + ox;
            for filt in 0..g.out_channels {
                let plus = and_popcount(f.signs.vec_words(filt), &mask.words) as i32;
                raw.data[filt * raw.cols + j] -= 2 * plus - mask_pop;
            }
        }
    }
}

/// Per-position scale `K`: channel mean of |x| box-averaged over each
/// receptive field, normalized by the in-image pixel count so a constant
/// input yields a constant map.
fn input_factor(x: &Tensor, g: ConvGeometry, h_out: usize, w_out: usize) -> Vec<f32> {
    let (_, c, h, w) = x.nchw();
    let data = x.data();
    let mut abs_mean = vec![0.0f32; h * w];
    for ch in 0..c {
        for (i, v) in data[ch * h * w..(ch + 1) * h * w].iter().enumerate() {
            abs_mean[i] += v.abs();
        }
    }
    for v in &mut abs_mean {
        *v /= c as f32;
    }

    let k = g.kernel;
    let mut out = Vec::with_capacity(h_out * w_out);
    for oy in 0..h_out {
        for ox in 0..w_out {
            let mut sum = 0.0f32;
            let mut count = 0usize;
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < w as isize {
                        sum += abs_mean[iy as usize * w + ix as usize];
                        count += 1;
                    }
                }
            }
            out.push(if count == 0 { 0.0 } else { sum / count as f32 });
        }
    }
    out
}

//! Backpropagation through the full-precision path.
//!
//! Training always runs full precision; binary flags only affect
//! inference. The loss is softmax cross-entropy, so the network's final
//! layer must be `softmax` and the gradient seed is `p - onehot(label)`.

use crate::error::{Error, Result};
use crate::kernels::{conv_out_extent, gemm, im2col, Mat};
use crate::net::{LayerSpec, NetworkSpec, Weights};
use crate::tensor::Tensor;

/// `A * B^T` for `A: m x k`, `B: n x k`.
fn gemm_nt(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            let acc: f32 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            c.set(i, j, acc);
        }
    }
    c
}

/// `A^T * B` for `A: k x m`, `B: k x n`.
fn gemm_tn(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.cols, b.cols);
    for t in 0..a.rows {
        let a_row = a.row(t);
        let b_row = b.row(t);
        for (i, &av) in a_row.iter().enumerate() {
            let c_row = &mut c.data[i * b.cols..(i + 1) * b.cols];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Scatter-add inverse of im2col.
fn col2im(cols: &Mat, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Tensor {
    let h_out = conv_out_extent(h, k, stride, pad).unwrap();
    let w_out = conv_out_extent(w, k, stride, pad).unwrap();
    let mut dx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[(ch * h + iy as usize) * w + ix as usize] +=
                                cols.at(row, oy * w_out + ox);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[1, c, h, w], dx).unwrap()
}

struct ConvGeom {
    k: usize,
    stride: usize,
    pad: usize,
}

/// Forward one convolution from raw weight tensors; returns pre-activation.
fn conv_fwd(x: &Tensor, w: &Tensor, b: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let (_, c, h, w_in) = x.nchw();
    let out = w.shape()[0];
    let h_out = conv_out_extent(h, g.k, g.stride, g.pad)
        .ok_or_else(|| Error::shape("conv window does not fit".to_string()))?;
    let w_out = conv_out_extent(w_in, g.k, g.stride, g.pad)
        .ok_or_else(|| Error::shape("conv window does not fit".to_string()))?;
    let cols = im2col(x, g.k, g.stride, g.pad)?;
    let w_mat = Mat { rows: out, cols: c * g.k * g.k, data: w.data().to_vec() };
    let y = gemm(&w_mat, &cols)?;
    let bias = b.data();
    let mut data = Vec::with_capacity(out * h_out * w_out);
    for f in 0..out {
        data.extend(y.row(f).iter().map(|v| v + bias[f]));
    }
    Tensor::from_vec(&[1, out, h_out, w_out], data)
}

/// Backward one convolution. Returns (dx, dw, db).
fn conv_bwd(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    g: &ConvGeom,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, c, h, w_in) = x.nchw();
    let out = w.shape()[0];
    let positions = dy.h() * dy.w();
    let dy_mat = Mat { rows: out, cols: positions, data: dy.data().to_vec() };
    let cols = im2col(x, g.k, g.stride, g.pad)?;

    let dw_mat = gemm_nt(&dy_mat, &cols);
    let dw = Tensor::from_vec(w.shape(), dw_mat.data)?;

    let mut db = vec![0.0f32; out];
    for f in 0..out {
        db[f] = dy_mat.row(f).iter().sum();
    }
    let db = Tensor::from_vec(&[out], db)?;

    let w_mat = Mat { rows: out, cols: c * g.k * g.k, data: w.data().to_vec() };
    let dcols = gemm_tn(&w_mat, &dy_mat);
    let dx = col2im(&dcols, c, h, w_in, g.k, g.stride, g.pad);
    Ok((dx, dw, db))
}

fn relu_fwd(x: &Tensor) -> Tensor {
    crate::kernels::relu(x)
}

/// dy masked by the sign of the pre-activation.
fn relu_bwd(pre: &Tensor, dy: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(p, d)| if *p > 0.0 { *d } else { 0.0 })
        .collect();
    Tensor::from_vec(dy.shape(), data).unwrap()
}

enum Cache {
    Conv { x: Tensor },
    Fire { x: Tensor, s_pre: Tensor, s_post: Tensor, e_pre: Vec<Tensor> },
    Maxpool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Relu { x: Tensor },
    Prelu { x: Tensor },
    Fc { x: Tensor },
    Softmax,
}

/// Maxpool with cached argmax (first hit in row-major window order wins).
fn maxpool_fwd(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.nchw();
    if k > h || k > w {
        return Err(Error::shape(format!("{k}x{k} pool window exceeds {h}x{w} input")));
    }
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * h_out * w_out);
    let mut argmax = Vec::with_capacity(out.capacity());
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, h_out, w_out], out)?, argmax))
}

/// Full forward/backward for one example.
///
/// Returns per-layer gradients (same layout as [`Weights`]) and the
/// cross-entropy loss `-ln p[label]`.
pub fn backward(
    spec: &NetworkSpec,
    weights: &Weights,
    x: &Tensor,
    label: usize,
) -> Result<(Weights, f32)> {
    weights.conforms(spec)?;
    if label >= spec.classes() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            spec.classes()
        )));
    }
    if !matches!(spec.layers().last(), Some(LayerSpec::Softmax)) {
        return Err(Error::arg("training requires a final softmax layer".to_string()));
    }
    let (c, h, w) = spec.input();
    let (n, xc, xh, xw) = x.nchw();
    if n != 1 || (xc, xh, xw) != (c, h, w) {
        return Err(Error::shape(format!(
            "input shape {:?} does not match declared {c}x{h}x{w}",
            x.shape()
        )));
    }

    // forward with caches
    let mut cur = x.reshape(&[1, c, h, w])?;
    let mut caches: Vec<Cache> = Vec::with_capacity(spec.layers().len());
    for (li, layer) in spec.layers().iter().enumerate() {
        let t = &weights.layers[li];
        cur = match layer {
            LayerSpec::Conv { k, stride, pad, .. } => {
                let g = ConvGeom { k: *k, stride: *stride, pad: *pad };
                let y = conv_fwd(&cur, &t[0], &t[1], &g)?;
                caches.push(Cache::Conv { x: cur });
                y
            }
            LayerSpec::Fire { e5, .. } => {
                let s_pre = conv_fwd(&cur, &t[0], &t[1], &ConvGeom { k: 1, stride: 1, pad: 0 })?;
                let s_post = relu_fwd(&s_pre);
                let mut e_pre = vec![
                    conv_fwd(&s_post, &t[2], &t[3], &ConvGeom { k: 1, stride: 1, pad: 0 })?,
                    conv_fwd(&s_post, &t[4], &t[5], &ConvGeom { k: 3, stride: 1, pad: 1 })?,
                ];
                if e5.is_some() {
                    e_pre.push(conv_fwd(&s_post, &t[6], &t[7], &ConvGeom { k: 5, stride: 1, pad: 2 })?);
                }
                let parts: Vec<Tensor> = e_pre.iter().map(relu_fwd).collect();
                let y = crate::tensor::channel_concat(&parts)?;
                caches.push(Cache::Fire { x: cur, s_pre, s_post, e_pre });
                y
            }
            LayerSpec::Maxpool { k, stride } => {
                let (y, argmax) = maxpool_fwd(&cur, *k, *stride)?;
                caches.push(Cache::Maxpool { in_shape: cur.shape().to_vec(), argmax });
                y
            }
            LayerSpec::Relu => {
                let y = relu_fwd(&cur);
                caches.push(Cache::Relu { x: cur });
                y
            }
            LayerSpec::Prelu { .. } => {
                let y = crate::kernels::prelu(&cur, t[0].data())?;
                caches.push(Cache::Prelu { x: cur });
                y
            }
            LayerSpec::FullyConnected { out } => {
                let flat = cur.reshape(&[cur.len()])?;
                let wm = &t[0];
                let bias = t[1].data();
                let cols = flat.len();
                let mut y = Vec::with_capacity(*out);
                for r in 0..*out {
                    let row = &wm.data()[r * cols..(r + 1) * cols];
                    let acc: f32 = row.iter().zip(flat.data()).map(|(a, b)| a * b).sum();
                    y.push(acc + bias[r]);
                }
                caches.push(Cache::Fc { x: cur });
                Tensor::from_vec(&[*out], y)?
            }
            LayerSpec::Softmax => {
                let y = crate::kernels::softmax(&cur.reshape(&[cur.len()])?)?;
                caches.push(Cache::Softmax);
                y
            }
        };
    }

    let probs = cur;
    let loss = -(probs.data()[label].max(1e-30)).ln();

    // seed: softmax + cross-entropy combined
    let mut dy = probs.clone();
    dy.data_mut()[label] -= 1.0;

    let mut grads = Weights::zeros_like(spec);
    for (li, layer) in spec.layers().iter().enumerate().rev() {
        let t = &weights.layers[li];
        let g = &mut grads.layers[li];
        dy = match (&caches[li], layer) {
            (Cache::Softmax, LayerSpec::Softmax) => dy,
            (Cache::Fc { x }, LayerSpec::FullyConnected { out }) => {
                let flat = x.reshape(&[x.len()])?;
                let cols = flat.len();
                let dyd = dy.data();
                for r in 0..*out {
                    let gw = &mut g[0].data_mut()[r * cols..(r + 1) * cols];
                    for (gv, xv) in gw.iter_mut().zip(flat.data()) {
                        *gv += dyd[r] * xv;
                    }
                    g[1].data_mut()[r] += dyd[r];
                }
                let wm = t[0].data();
                let mut dx = vec![0.0f32; cols];
                for r in 0..*out {
                    let row = &wm[r * cols..(r + 1) * cols];
                    for (dv, wv) in dx.iter_mut().zip(row) {
                        *dv += dyd[r] * wv;
                    }
                }
                Tensor::from_vec(x.shape(), dx)?
            }
            (Cache::Prelu { x }, LayerSpec::Prelu { .. }) => {
                let (_, c, h, w) = x.nchw();
                let plane = h * w;
                let slopes = t[0].data();
                let xd = x.data();
                let dyd = dy.data();
                let mut dx = vec![0.0f32; xd.len()];
                for ch in 0..c {
                    let mut dslope = 0.0f32;
                    let s = slopes[ch];
                    for i in ch * plane..(ch + 1) * plane {
                        if xd[i] > 0.0 {
                            dx[i] = dyd[i];
                        } else {
                            dx[i] = dyd[i] * s;
                            dslope += dyd[i] * xd[i];
                        }
                    }
                    g[0].data_mut()[ch] += dslope;
                }
                Tensor::from_vec(x.shape(), dx)?
            }
            (Cache::Relu { x }, LayerSpec::Relu) => relu_bwd(x, &dy),
            (Cache::Maxpool { in_shape, argmax }, LayerSpec::Maxpool { .. }) => {
                let mut dx = vec![0.0f32; in_shape.iter().product()];
                for (j, &src) in argmax.iter().enumerate() {
                    dx[src] += dy.data()[j];
                }
                Tensor::from_vec(in_shape, dx)?
            }
            (Cache::Conv { x }, LayerSpec::Conv { k, stride, pad, .. }) => {
                let geom = ConvGeom { k: *k, stride: *stride, pad: *pad };
                let (dx, dw, db) = conv_bwd(x, &t[0], &dy, &geom)?;
                accumulate(&mut g[0], &dw);
                accumulate(&mut g[1], &db);
                dx
            }
            (Cache::Fire { x, s_pre, s_post, e_pre }, LayerSpec::Fire { e1, e3, e5, .. }) => {
                let plane = s_pre.h() * s_pre.w();
                let mut ds_post = Tensor::zeros(s_post.shape())?;
                let branch_geoms = [
                    ConvGeom { k: 1, stride: 1, pad: 0 },
                    ConvGeom { k: 3, stride: 1, pad: 1 },
                    ConvGeom { k: 5, stride: 1, pad: 2 },
                ];
                let counts = [*e1, *e3, e5.unwrap_or(0)];
                let mut ch_off = 0;
                for (bi, pre) in e_pre.iter().enumerate() {
                    let n_ch = counts[bi];
                    let block = &dy.data()[ch_off * plane..(ch_off + n_ch) * plane];
                    let dy_b = Tensor::from_vec(&[1, n_ch, s_pre.h(), s_pre.w()], block.to_vec())?;
                    let de = relu_bwd(pre, &dy_b);
                    let (ds, dw, db) = conv_bwd(s_post, &t[2 + 2 * bi], &de, &branch_geoms[bi])?;
                    accumulate(&mut g[2 + 2 * bi], &dw);
                    accumulate(&mut g[3 + 2 * bi], &db);
                    for (a, b) in ds_post.data_mut().iter_mut().zip(ds.data()) {
                        *a += b;
                    }
                    ch_off += n_ch;
                }
                let ds_pre = relu_bwd(s_pre, &ds_post);
                let (dx, dw, db) = conv_bwd(x, &t[0], &ds_pre, &ConvGeom { k: 1, stride: 1, pad: 0 })?;
                accumulate(&mut g[0], &dw);
                accumulate(&mut g[1], &db);
                dx
            }
            _ => unreachable!("cache/layer mismatch"),
        };
    }
    Ok((grads, loss))
}

fn accumulate(into: &mut Tensor, from: &Tensor) {
    for (a, b) in into.data_mut().iter_mut().zip(from.data()) {
        *a += b;
    }
}

/// Distance from the nearest nondifferentiable point along the forward
/// pass: the smallest |pre-activation| feeding a relu/prelu (including
/// the ones inside fire blocks) and the smallest top-two gap of any
/// maxpool window. Finite-difference harnesses re-draw instances whose
/// margin is below their perturbation scale, since central differences
/// across a kink or an argmax flip do not estimate the derivative.
pub fn kink_margin(spec: &NetworkSpec, weights: &Weights, x: &Tensor) -> Result<f32> {
    let (c, h, w) = spec.input();
    let mut cur = x.reshape(&[1, c, h, w])?;
    let mut margin = f32::INFINITY;
    let note_abs = |t: &Tensor, margin: &mut f32| {
        for v in t.data() {
            *margin = margin.min(v.abs());
        }
    };
    for (li, layer) in spec.layers().iter().enumerate() {
        let t = &weights.layers[li];
        cur = match layer {
            LayerSpec::Conv { k, stride, pad, .. } => {
                conv_fwd(&cur, &t[0], &t[1], &ConvGeom { k: *k, stride: *stride, pad: *pad })?
            }
            LayerSpec::Fire { e5, .. } => {
                let s_pre = conv_fwd(&cur, &t[0], &t[1], &ConvGeom { k: 1, stride: 1, pad: 0 })?;
                note_abs(&s_pre, &mut margin);
                let s_post = relu_fwd(&s_pre);
                let mut parts = Vec::new();
                let geoms = [
                    ConvGeom { k: 1, stride: 1, pad: 0 },
                    ConvGeom { k: 3, stride: 1, pad: 1 },
                    ConvGeom { k: 5, stride: 1, pad: 2 },
                ];
                let branches = if e5.is_some() { 3 } else { 2 };
                for bi in 0..branches {
                    let pre = conv_fwd(&s_post, &t[2 + 2 * bi], &t[3 + 2 * bi], &geoms[bi])?;
                    note_abs(&pre, &mut margin);
                    parts.push(relu_fwd(&pre));
                }
                crate::tensor::channel_concat(&parts)?
            }
            LayerSpec::Maxpool { k, stride } => {
                margin = margin.min(pool_gap(&cur, *k, *stride));
                maxpool_fwd(&cur, *k, *stride)?.0
            }
            LayerSpec::Relu => {
                note_abs(&cur, &mut margin);
                relu_fwd(&cur)
            }
            LayerSpec::Prelu { .. } => {
                note_abs(&cur, &mut margin);
                crate::kernels::prelu(&cur, t[0].data())?
            }
            LayerSpec::FullyConnected { out } => {
                let flat = cur.reshape(&[cur.len()])?;
                let cols = flat.len();
                let mut y = Vec::with_capacity(*out);
                for r in 0..*out {
                    let row = &t[0].data()[r * cols..(r + 1) * cols];
                    let acc: f32 = row.iter().zip(flat.data()).map(|(a, b)| a * b).sum();
                    y.push(acc + t[1].data()[r]);
                }
                Tensor::from_vec(&[*out], y)?
            }
            LayerSpec::Softmax => crate::kernels::softmax(&cur.reshape(&[cur.len()])?)?,
        };
    }
    Ok(margin)
}

/// Smallest (max - runner_up) over all pooling windows.
fn pool_gap(x: &Tensor, k: usize, stride: usize) -> f32 {
    if k == 1 {
        return f32::INFINITY;
    }
    let (n, c, h, w) = x.nchw();
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let data = x.data();
    let mut gap = f32::INFINITY;
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = f32::NEG_INFINITY;
                    let mut second = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let v = data[base + (oy * stride + ky) * w + ox * stride + kx];
                            if v > best {
                                second = best;
                                best = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    gap = gap.min(best - second);
                }
            }
        }
    }
    gap
}

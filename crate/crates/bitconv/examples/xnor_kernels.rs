//! Bit-packed kernels from the ground up: sign packing, XNOR dot
//! products, binary gemm, and filter binarization with its scale factor.
//!
//! ```bash
//! cargo run --release --example xnor_kernels
//! ```

use bitconv::binary::{
    binarize_weights, binary_gemm, hardware_popcount, pack_signs, xnor_conv_forward, xnor_dot,
    BitMatrix,
};
use bitconv::kernels::{conv_forward, gemm, ConvParams, Mat};
use bitconv::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // one bit per element: a dot product becomes n - 2*popcount(a ^ b)
    let a: Vec<f32> = (0..200).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let b: Vec<f32> = (0..200).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let float_dot: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let bit_dot = xnor_dot(&pack_signs(&a), &pack_signs(&b)).unwrap();
    println!("dot over 200 elements: float {float_dot}, xnor {bit_dot}");

    // binarize a filter bank: signs + per-filter alpha = mean |W|
    let p = ConvParams::new(
        8,
        16,
        3,
        1,
        1,
        Tensor::from_vec(&[16, 8, 3, 3], (0..16 * 72).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        Tensor::zeros(&[16]).unwrap(),
    )
    .unwrap();
    let bank = binarize_weights(&p);
    println!(
        "filter bank: {} B packed vs {} B float ({}x smaller), alpha[0] = {:.4}",
        bank.sign_bytes(),
        bank.float_weight_bytes(),
        bank.float_weight_bytes() / bank.sign_bytes(),
        bank.alphas[0]
    );

    // on sign-valued input the binary conv equals the float conv run
    // with weights alpha * sign(W)
    let x = Tensor::from_vec(
        &[1, 8, 10, 10],
        (0..800).map(|_| if rng.random::<bool>() { 1.0f32 } else { -1.0 }).collect(),
    )
    .unwrap();
    let y_bin = xnor_conv_forward(&x, &bank, false).unwrap();
    let mut scaled = p.clone();
    for (i, v) in scaled.weights.data_mut().iter_mut().enumerate() {
        *v = bank.alphas[i / 72] * if *v >= 0.0 { 1.0 } else { -1.0 };
    }
    let y_flt = conv_forward(&x, &scaled).unwrap();
    let max_err = y_bin
        .data()
        .iter()
        .zip(y_flt.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("binary conv vs scaled-sign float conv: max |diff| = {max_err:e}");

    // throughput at a large inner dimension
    let (m, k, n) = (64usize, 4096usize, 64usize);
    let fa = Mat::from_vec(m, k, (0..m * k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).unwrap();
    let fb = Mat::from_vec(k, n, (0..k * n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).unwrap();
    let pa = BitMatrix::pack_rows(&fa);
    let pb = BitMatrix::pack_cols(&fb);
    let _ = gemm(&fa, &fb).unwrap();
    let t = Instant::now();
    let _ = gemm(&fa, &fb).unwrap();
    let t_float = t.elapsed().as_secs_f64() * 1e3;
    let _ = binary_gemm(&pa, &pb).unwrap();
    let t = Instant::now();
    let _ = binary_gemm(&pa, &pb).unwrap();
    let t_bin = t.elapsed().as_secs_f64() * 1e3;
    println!(
        "gemm {m}x{k} . {k}x{n}: float {t_float:.2} ms, binary {t_bin:.3} ms ({:.1}x, hardware popcount: {})",
        t_float / t_bin,
        hardware_popcount()
    );
}

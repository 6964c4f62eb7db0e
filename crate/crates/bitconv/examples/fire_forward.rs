//! Parse a network description with a squeeze/expand ("fire") block, run
//! a forward pass, and inspect shapes, parameter counts and binarization
//! warnings.
//!
//! ```bash
//! cargo run --example fire_forward
//! ```

use bitconv::net::{forward, parse_netspec, validate_binarization, Weights};
use bitconv::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/configs/squeeze24.netspec"
    ))
    .expect("shipped config");
    let spec = parse_netspec(&text).expect("config parses");

    println!("network ({} classes):", spec.classes());
    let shapes = spec.layer_shapes();
    for (layer, shape) in spec.layers().iter().zip(&shapes) {
        println!("  {layer:<28} -> {}x{}x{}", shape.c, shape.h, shape.w);
    }
    println!("parameters: {}", spec.count_params());
    println!("multiply-accumulates per pass: {}", spec.estimate_macs());

    let weights = Weights::init(&spec, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (c, h, w) = spec.input();
    let x = Tensor::from_vec(
        &[c, h, w],
        (0..c * h * w).map(|_| rng.random_range(0.0f32..1.0)).collect(),
    )
    .unwrap();
    let probs = forward(&spec, &weights, &x).unwrap();
    println!("fresh-init class probabilities: {:?}", probs.data());

    // flagging an edge convolution as binary draws a warning
    let risky = parse_netspec("input 3x24x24\nconv out=8 k=3 binary\nfc out=2\nsoftmax\n").unwrap();
    for w in validate_binarization(&risky) {
        println!("warning: {w}");
    }
}

//! Train a small classifier on the synthetic disk-vs-square dataset,
//! evaluate it, and round-trip the weights through the on-disk format.
//!
//! ```bash
//! cargo run --example train_classifier
//! ```

use bitconv::net::{load_weights, parse_netspec, save_weights};
use bitconv::synth::classification_dataset;
use bitconv::train::{evaluate, train, TrainConfig};

fn main() {
    let data = classification_dataset(400, 24, 11);
    let (train_set, val_set) = data.split(0.2, 0);
    println!("dataset: {} train / {} val, classes {:?}", train_set.len(), val_set.len(), data.classes);

    let spec = parse_netspec(
        "input 3x24x24\nconv out=8 k=3\nrelu\nmaxpool k=2 s=2\nconv out=16 k=3\nrelu\nmaxpool k=2 s=2\nfc out=2\nsoftmax\n",
    )
    .unwrap();
    let cfg = TrainConfig { lr: 0.05, momentum: 0.9, epochs: 6, batch: 16, seed: 7 };
    let (weights, history) = train(&spec, &train_set, Some(&val_set), &cfg).unwrap();
    println!("epoch,loss,train_acc,val_acc");
    for h in &history {
        println!("{},{:.4},{:.4},{:.4}", h.epoch, h.loss, h.train_acc, h.val_acc);
    }

    let (acc, confusion) = evaluate(&spec, &weights, &val_set).unwrap();
    println!("validation accuracy: {acc:.4}");
    println!("confusion: {confusion:?}");

    let dir = std::env::temp_dir().join("bitconv_train_example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.weights");
    save_weights(&spec, &weights, &path).unwrap();
    let reloaded = load_weights(&spec, &path).unwrap();
    assert_eq!(reloaded, weights);
    println!("weights round-tripped bit-exact through {}", path.display());
}

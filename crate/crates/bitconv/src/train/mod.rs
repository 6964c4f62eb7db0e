//! Full-precision trainer: dataset loading, SGD with momentum, and
//! accuracy evaluation. The trainer exists to rank architectures during
//! search, so it stays deliberately small: no augmentation, no schedules.

mod backprop;

pub use backprop::{backward, kink_margin};

use crate::error::{Error, Result};
use crate::net::{forward, NetworkSpec, Weights};
use crate::pnm;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Labeled images sharing one declared shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<(Tensor, usize)>,
    pub classes: Vec<String>,
    pub shape: (usize, usize, usize),
}

impl Dataset {
    pub fn new(
        items: Vec<(Tensor, usize)>,
        classes: Vec<String>,
        shape: (usize, usize, usize),
    ) -> Result<Dataset> {
        for (img, label) in &items {
            let (n, c, h, w) = img.nchw();
            if n != 1 || (c, h, w) != shape {
                return Err(Error::shape(format!(
                    "item shape {:?} does not match declared {shape:?}",
                    img.shape()
                )));
            }
            if *label >= classes.len() {
                return Err(Error::arg(format!(
                    "label {label} out of range for {} classes",
                    classes.len()
                )));
            }
        }
        Ok(Dataset { items, classes, shape })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Deterministic stratified split; `val_frac` of each class goes to
    /// the second half, but every class keeps at least one training item.
    pub fn split(&self, val_frac: f64, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for class in 0..self.classes.len() {
            let mut idx: Vec<usize> = (0..self.items.len())
                .filter(|&i| self.items[i].1 == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * val_frac).round() as usize).min(idx.len().saturating_sub(1));
            for (pos, &i) in idx.iter().enumerate() {
                if pos < n_val {
                    val.push(self.items[i].clone());
                } else {
                    train.push(self.items[i].clone());
                }
            }
        }
        (
            Dataset { items: train, classes: self.classes.clone(), shape: self.shape },
            Dataset { items: val, classes: self.classes.clone(), shape: self.shape },
        )
    }
}

/// Loads a directory-per-class image dataset.
///
/// `root` must contain one subdirectory per class (class index =
/// lexicographic rank of the name), each holding binary PGM or PPM
/// files. Pixels map to `[0, 1]` as value/255; items come out
/// path-sorted.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::arg(format!("cannot read dataset root {}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::arg(format!("no class directories under {}", root.display())));
    }

    let mut classes = Vec::new();
    let mut items = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None;
    for (class_idx, dir) in class_dirs.iter().enumerate() {
        classes.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.path())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::arg(format!("class directory {} is empty", dir.display())));
        }
        for file in files {
            let img = pnm::read(&file)?;
            let this_shape = (img.channels, img.height, img.width);
            match shape {
                None => shape = Some(this_shape),
                Some(s) if s != this_shape => {
                    return Err(Error::shape(format!(
                        "{} has shape {:?}, dataset is {:?}",
                        file.display(),
                        this_shape,
                        s
                    )))
                }
                _ => {}
            }
            items.push((image_to_tensor(&img), class_idx));
        }
    }
    let shape = shape.unwrap();
    Dataset::new(items, classes, shape)
}

/// Interleaved 8-bit pixels to a planar `[C, H, W]` tensor in `[0, 1]`.
pub fn image_to_tensor(img: &pnm::PnmImage) -> Tensor {
    let (c, h, w) = (img.channels, img.height, img.width);
    let mut data = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = img.data[(y * w + x) * c + ch] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr: f32,
    pub momentum: f32,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.05, momentum: 0.9, epochs: 10, batch: 16, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.momentum.is_finite() {
            return Err(Error::arg("learning rate must be >= 0 and momentum finite".to_string()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::arg("epochs and batch must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One SGD-with-momentum update: `v <- momentum*v - lr*g; w <- w + v`.
pub fn sgd_step(weights: &mut Weights, grads: &Weights, velocity: &mut Weights, cfg: &TrainConfig) {
    for ((wl, gl), vl) in weights
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        for ((wt, gt), vt) in wl.iter_mut().zip(gl).zip(vl) {
            for ((w, g), v) in wt
                .data_mut()
                .iter_mut()
                .zip(gt.data())
                .zip(vt.data_mut())
            {
                *v = cfg.momentum * *v - cfg.lr * g;
                *w += *v;
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Trains from a fresh seeded init; deterministic given the config.
///
/// `val` feeds the `val_acc` column; without it the train-set accuracy is
/// repeated there.
pub fn train(
    spec: &NetworkSpec,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(Weights, Vec<EpochStats>)> {
    cfg.validate()?;
    check_conforms(spec, data)?;
    if let Some(v) = val {
        check_conforms(spec, v)?;
    }
    let mut per_class = vec![0usize; spec.classes()];
    for (_, label) in &data.items {
        per_class[*label] += 1;
    }
    if per_class.iter().any(|&n| n == 0) {
        return Err(Error::arg("every class needs at least one training item".to_string()));
    }

    let mut weights = Weights::init(spec, cfg.seed);
    let mut velocity = Weights::zeros_like(spec);
    // distinct stream from the init rng
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.items.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let mut batch_grads = Weights::zeros_like(spec);
            let mut ok = 0usize;
            for &i in chunk {
                let (img, label) = &data.items[i];
                let (g, loss) = backward(spec, &weights, img, *label)?;
                epoch_loss += loss as f64;
                add_scaled(&mut batch_grads, &g, 1.0);
                ok += 1;
            }
            if ok > 0 {
                scale(&mut batch_grads, 1.0 / ok as f32);
                sgd_step(&mut weights, &batch_grads, &mut velocity, cfg);
            }
        }
        let train_acc = evaluate(spec, &weights, data)?.0;
        let val_acc = match val {
            Some(v) => evaluate(spec, &weights, v)?.0,
            None => train_acc,
        };
        history.push(EpochStats {
            epoch: epoch + 1,
            loss: epoch_loss / data.items.len() as f64,
            train_acc,
            val_acc,
        });
    }
    Ok((weights, history))
}

fn check_conforms(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.shape != spec.input() {
        return Err(Error::shape(format!(
            "dataset shape {:?} does not match net input {:?}",
            data.shape,
            spec.input()
        )));
    }
    if data.classes.len() != spec.classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, net emits {}",
            data.classes.len(),
            spec.classes()
        )));
    }
    Ok(())
}

fn add_scaled(into: &mut Weights, from: &Weights, s: f32) {
    for (il, fl) in into.layers.iter_mut().zip(&from.layers) {
        for (it, ft) in il.iter_mut().zip(fl) {
            for (a, b) in it.data_mut().iter_mut().zip(ft.data()) {
                *a += s * b;
            }
        }
    }
}

fn scale(w: &mut Weights, s: f32) {
    for l in &mut w.layers {
        for t in l {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Argmax accuracy (ties go to the lower class index) plus a
/// `[true][predicted]` confusion matrix.
pub fn evaluate(
    spec: &NetworkSpec,
    weights: &Weights,
    data: &Dataset,
) -> Result<(f64, Vec<Vec<usize>>)> {
    if data.items.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset".to_string()));
    }
    check_conforms(spec, data)?;
    let classes = spec.classes();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0usize;
    for (img, label) in &data.items {
        let probs = forward(spec, weights, img)?;
        let pred = argmax(probs.data());
        confusion[*label][pred] += 1;
        if pred == *label {
            correct += 1;
        }
    }
    Ok((correct as f64 / data.items.len() as f64, confusion))
}

/// First index of the maximum value.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Writes the `epoch,loss,train_acc,val_acc` CSV log.
pub fn write_train_log(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,train_acc,val_acc")?;
    for e in history {
        writeln!(f, "{},{:.6},{:.6},{:.6}", e.epoch, e.loss, e.train_acc, e.val_acc)?;
    }
    Ok(())
}

//! Weight containers and the on-disk weight file.
//!
//! File layout: magic `BCV1`, u32-LE layer count, then one record per
//! network layer: u64-LE float count followed by that many f32-LE values
//! (weights, then bias, then slopes, concatenated in layer order). Files
//! always hold full-precision floats; binary-flagged layers are binarized
//! when the net is prepared for execution, so one file serves both paths.

use super::{weight_shapes, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const WEIGHT_MAGIC: &[u8; 4] = b"BCV1";

/// All trainable tensors of a network, grouped per layer in storage
/// order (weights, bias, slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<Vec<Tensor>>,
}

impl Weights {
    /// Seeded init: weight tensors uniform in +-sqrt(6/(fan_in+fan_out)),
    /// biases zero, prelu slopes at their declared init.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Weights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = weight_shapes(spec);
        let layers = shapes
            .iter()
            .zip(spec.layers())
            .map(|(tensors, layer)| {
                tensors
                    .iter()
                    .map(|shape| init_tensor(shape, layer, &mut rng))
                    .collect()
            })
            .collect();
        Weights { layers }
    }

    pub fn zeros_like(spec: &NetworkSpec) -> Weights {
        let layers = weight_shapes(spec)
            .iter()
            .map(|tensors| tensors.iter().map(|s| Tensor::zeros(s).unwrap()).collect())
            .collect();
        Weights { layers }
    }

    /// Checks tensor shapes against the spec's schema.
    pub fn conforms(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = weight_shapes(spec);
        if self.layers.len() != shapes.len() {
            return Err(Error::shape(format!(
                "weights hold {} layers, spec has {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, (have, want)) in self.layers.iter().zip(&shapes).enumerate() {
            if have.len() != want.len()
                || have.iter().zip(want).any(|(t, s)| t.shape() != s.as_slice())
            {
                return Err(Error::shape(format!("layer {i} weight shapes do not match spec")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flatten().map(Tensor::len).sum()
    }
}

fn init_tensor(shape: &[usize], layer: &super::LayerSpec, rng: &mut ChaCha8Rng) -> Tensor {
    use super::LayerSpec;
    if let LayerSpec::Prelu { init } = layer {
        return Tensor::new(shape, *init).unwrap();
    }
    if shape.len() == 1 {
        // bias
        return Tensor::zeros(shape).unwrap();
    }
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[1], shape[0]),
        4 => (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]),
        _ => (shape.iter().product(), 1),
    };
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let data = (0..shape.iter().product())
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn save_weights(spec: &NetworkSpec, weights: &Weights, path: impl AsRef<Path>) -> Result<()> {
    weights.conforms(spec)?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&(weights.layers.len() as u32).to_le_bytes())?;
    for tensors in &weights.layers {
        let count: usize = tensors.iter().map(Tensor::len).sum();
        w.write_all(&(count as u64).to_le_bytes())?;
        for t in tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads and validates a weight file against `spec`; any mismatch fails
/// before tensors are handed out.
pub fn load_weights(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<Weights> {
    let mut r = BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            magic, WEIGHT_MAGIC
        )));
    }

    let mut buf4 = [0u8; 4];
    read_exact(&mut r, &mut buf4)?;
    let layer_count = u32::from_le_bytes(buf4) as usize;
    let shapes = weight_shapes(spec);
    if layer_count != shapes.len() {
        return Err(Error::format(format!(
            "file holds {layer_count} layers, spec has {}",
            shapes.len()
        )));
    }

    let mut layers = Vec::with_capacity(layer_count);
    let mut buf8 = [0u8; 8];
    for (i, tensor_shapes) in shapes.iter().enumerate() {
        read_exact(&mut r, &mut buf8)?;
        let count = u64::from_le_bytes(buf8) as usize;
        let expected: usize = tensor_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if count != expected {
            return Err(Error::format(format!(
                "layer {i} holds {count} floats, spec expects {expected}"
            )));
        }
        let mut flat = vec![0f32; count];
        for v in &mut flat {
            read_exact(&mut r, &mut buf4)?;
            *v = f32::from_le_bytes(buf4);
        }
        let mut tensors = Vec::with_capacity(tensor_shapes.len());
        let mut offset = 0;
        for shape in tensor_shapes {
            let len: usize = shape.iter().product();
            tensors.push(Tensor::from_vec(shape, flat[offset..offset + len].to_vec())?);
            offset += len;
        }
        layers.push(tensors);
    }

    // anything left over means the file disagrees with the spec
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("trailing bytes after last layer".to_string()));
    }
    Ok(Weights { layers })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::format("file truncated".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::parse_netspec;

    fn spec() -> NetworkSpec {
        parse_netspec(
            "input 1x8x8\nconv out=2 k=3\nrelu\nfire s=2 e1=2 e3=2 e5=2\nprelu\nmaxpool k=2 s=2\nfc out=2\nsoftmax\n",
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let s = spec();
        let w = Weights::init(&s, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        save_weights(&s, &w, &path).unwrap();
        let back = load_weights(&s, &path).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn truncated_file_rejected() {
        let s = spec();
        let w = Weights::init(&s, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        save_weights(&s, &w, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_weights(&s, &path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let s = spec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        std::fs::write(&path, b"NOPE____").unwrap();
        assert!(matches!(load_weights(&s, &path), Err(Error::Format(_))));
    }

    #[test]
    fn layer_count_mismatch_rejected() {
        let s = spec();
        let w = Weights::init(&s, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        save_weights(&s, &w, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = bytes[4].wrapping_add(1); // layer count LE byte 0
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_weights(&s, &path), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_spec_rejected() {
        let s = spec();
        let w = Weights::init(&s, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        save_weights(&s, &w, &path).unwrap();
        let other = parse_netspec("input 1x8x8\nconv out=3 k=3\nfc out=2\nsoftmax\n").unwrap();
        assert!(load_weights(&other, &path).is_err());
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        let s = spec();
        let a = Weights::init(&s, 7);
        let b = Weights::init(&s, 7);
        assert_eq!(a, b);
        assert_eq!(a.param_count(), s.count_params());
        assert_ne!(a, Weights::init(&s, 8));
    }
}

//! Seeded synthetic data: disk/square crops for classifier training and
//! green-field scenes with planted objects for detector tests. Everything
//! is generated from a `ChaCha8` stream, so a seed fully determines the
//! data.

use crate::detect::Proposal;
use crate::error::Result;
use crate::pnm::PnmImage;
use crate::tensor::Tensor;
use crate::train::{image_to_tensor, Dataset};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    /// Negative class ("neg", index 0).
    Square,
    /// Positive class ("pos", index 1).
    Disk,
}

/// Ground truth for one planted object.
#[derive(Debug, Clone, Copy)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub bbox: Proposal,
}

/// Textured green field pixel: green strictly dominates red and blue.
fn field_pixel(rng: &mut ChaCha8Rng) -> [u8; 3] {
    let r = rng.random_range(10u8..60);
    let b = rng.random_range(10u8..60);
    let g = r.max(b) + rng.random_range(25u8..80);
    [r, g, b]
}

/// Non-green object pixel around a base luminance.
fn object_pixel(rng: &mut ChaCha8Rng, lum: u8) -> [u8; 3] {
    let jitter = |rng: &mut ChaCha8Rng, v: u8| -> u8 {
        (v as i16 + rng.random_range(-8i16..=8)).clamp(0, 255) as u8
    };
    let r = jitter(rng, lum);
    let b = jitter(rng, lum);
    // keep green at or below red so the green test can never pass
    let g = jitter(rng, lum).min(r);
    [r, g, b]
}

fn fill_field(img: &mut PnmImage, rng: &mut ChaCha8Rng) {
    for i in 0..img.width * img.height {
        let px = field_pixel(rng);
        img.data[i * 3..i * 3 + 3].copy_from_slice(&px);
    }
}

fn draw_object(img: &mut PnmImage, kind: ObjectKind, bbox: &Proposal, rng: &mut ChaCha8Rng) {
    let lum = rng.random_range(60u8..230);
    let (cx, cy) = (
        (bbox.x0 + bbox.x1) as f32 / 2.0,
        (bbox.y0 + bbox.y1) as f32 / 2.0,
    );
    let rad = (bbox.x1 - bbox.x0).min(bbox.y1 - bbox.y0) as f32 / 2.0;
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            let inside = match kind {
                ObjectKind::Square => true,
                ObjectKind::Disk => {
                    let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                    dx * dx + dy * dy <= rad * rad
                }
            };
            if inside {
                let px = object_pixel(rng, lum);
                img.data[(y * img.width + x) * 3..(y * img.width + x) * 3 + 3]
                    .copy_from_slice(&px);
            }
        }
    }
}

/// One `side`-sized training crop: a single centered-ish object on a
/// textured field.
fn crop_image(kind: ObjectKind, side: usize, rng: &mut ChaCha8Rng) -> PnmImage {
    let mut img = PnmImage::new(side, side, 3, vec![0; side * side * 3]).unwrap();
    fill_field(&mut img, rng);
    let half = rng.random_range(side / 4..=side * 2 / 5); // object half-extent
    let cx = side / 2 + rng.random_range(0..=4) - 2;
    let cy = side / 2 + rng.random_range(0..=4) - 2;
    let bbox = Proposal {
        x0: cx.saturating_sub(half).max(1),
        y0: cy.saturating_sub(half).max(1),
        x1: (cx + half).min(side - 2),
        y1: (cy + half).min(side - 2),
    };
    draw_object(&mut img, kind, &bbox, rng);
    img
}

/// Balanced two-class crop dataset: squares are class "neg" (0), disks
/// class "pos" (1). Both classes share the same size, position and color
/// distributions, so shape is the only separating cue.
pub fn classification_dataset(n: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<(Tensor, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let kind = if i % 2 == 0 { ObjectKind::Square } else { ObjectKind::Disk };
        let img = crop_image(kind, side, &mut rng);
        items.push((image_to_tensor(&img), if kind == ObjectKind::Disk { 1 } else { 0 }));
    }
    Dataset::new(items, vec!["neg".into(), "pos".into()], (3, side, side)).unwrap()
}

/// A `width x height` field scene with planted disks (positives) and
/// squares (distractors). Objects are large enough for the default
/// proposal settings and never overlap.
pub fn scene(
    width: usize,
    height: usize,
    n_disks: usize,
    n_squares: usize,
    seed: u64,
) -> (PnmImage, Vec<SceneObject>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_e5ce);
    let mut img = PnmImage::new(width, height, 3, vec![0; width * height * 3]).unwrap();
    fill_field(&mut img, &mut rng);

    let mut objects: Vec<SceneObject> = Vec::new();
    let mut kinds: Vec<ObjectKind> = Vec::new();
    kinds.extend(std::iter::repeat_n(ObjectKind::Disk, n_disks));
    kinds.extend(std::iter::repeat_n(ObjectKind::Square, n_squares));
    for kind in kinds {
        // rejection-sample a free box
        for _ in 0..200 {
            let size = rng.random_range(18usize..=36).min(width - 4).min(height - 4);
            let x0 = rng.random_range(1..width - size - 1);
            let y0 = rng.random_range(1..height - size - 1);
            let bbox = Proposal { x0, y0, x1: x0 + size - 1, y1: y0 + size - 1 };
            let padded = Proposal {
                x0: bbox.x0.saturating_sub(8),
                y0: bbox.y0.saturating_sub(8),
                x1: (bbox.x1 + 8).min(width - 1),
                y1: (bbox.y1 + 8).min(height - 1),
            };
            if objects.iter().all(|o| !padded.intersects(&o.bbox)) {
                draw_object(&mut img, kind, &bbox, &mut rng);
                objects.push(SceneObject { kind, bbox });
                break;
            }
        }
    }
    (img, objects)
}

/// Writes a dataset back out as one PGM/PPM directory per class.
pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    for (i, (img, label)) in data.items.iter().enumerate() {
        let class_dir = dir.join(&data.classes[*label]);
        std::fs::create_dir_all(&class_dir)?;
        let (c, h, w) = data.shape;
        let mut bytes = vec![0u8; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    bytes[(y * w + x) * c + ch] =
                        (img.get(&[ch, y, x])? * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        let out = PnmImage::new(w, h, c, bytes)?;
        let ext = if c == 1 { "pgm" } else { "ppm" };
        crate::pnm::write(&out, class_dir.join(format!("{i:05}.{ext}")))?;
    }
    Ok(())
}

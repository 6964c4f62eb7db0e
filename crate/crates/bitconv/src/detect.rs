//! Scanline region proposals and the end-to-end detector.
//!
//! Vertical scanlines are walked top to bottom; runs of non-green pixels
//! become spots, spots on adjacent scanlines with overlapping vertical
//! extents merge into clusters, and each cluster's bounding box (padded
//! to cover the unscanned gap between scanlines) is a proposal. Proposals
//! are cropped, resized and handed to a classifier.

use crate::error::{Error, Result};
use crate::net::Prepared;
use crate::pnm::PnmImage;
use crate::tensor::Tensor;
use serde::Serialize;
use std::time::Instant;

/// Axis-aligned pixel box, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proposal {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Proposal {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn intersects(&self, other: &Proposal) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }

    pub fn contains(&self, other: &Proposal) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// A classified proposal.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub proposal: Proposal,
    pub label: usize,
    pub confidence: f32,
}

/// Additive two-stage timing model: proposals once, inference per
/// proposal.
#[derive(Debug, Clone, Copy)]
pub struct TimingModel {
    pub t_prop_ms: f64,
    pub t_inf_ms: f64,
    pub avg_proposals: f64,
}

/// `t_prop + avg_proposals * t_inf`.
pub fn total_time(m: &TimingModel) -> f64 {
    m.t_prop_ms + m.avg_proposals * m.t_inf_ms
}

/// Proposal generator knobs (defaults in parentheses).
#[derive(Debug, Clone, Copy)]
pub struct ProposalConfig {
    /// Columns between scanlines (8).
    pub spacing: usize,
    /// Non-green runs must be strictly longer than this (4).
    pub min_run: usize,
    /// Extra pixels around each emitted box (2).
    pub margin_px: usize,
    /// Boxes narrower or shorter than this are dropped (8).
    pub min_box: usize,
    /// Green must beat red and blue by more than this (10).
    pub green_margin: u8,
    /// Green channel must exceed this to count as field (30).
    pub min_brightness: u8,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            spacing: 8,
            min_run: 4,
            margin_px: 2,
            min_box: 8,
            green_margin: 10,
            min_brightness: 30,
        }
    }
}

/// Channel-dominance green test.
pub fn is_green(r: u8, g: u8, b: u8, cfg: &ProposalConfig) -> bool {
    let g = g as i32;
    g > r as i32 + cfg.green_margin as i32
        && g > b as i32 + cfg.green_margin as i32
        && g > cfg.min_brightness as i32
}

fn rgb_at(img: &PnmImage, x: usize, y: usize) -> (u8, u8, u8) {
    if img.channels == 3 {
        let i = (y * img.width + x) * 3;
        (img.data[i], img.data[i + 1], img.data[i + 2])
    } else {
        let v = img.data[y * img.width + x];
        (v, v, v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Spot {
    scanline: usize, // index into the scanned columns
    x: usize,
    y0: usize,
    y1: usize,
}

/// Scans vertical lines every `spacing` columns and merges overlapping
/// non-green runs into proposals.
///
/// A cluster's box is widened by `spacing - 1` on each side in addition
/// to `margin_px`: an object can extend that far past its outermost hit
/// scanline without touching the next one, and the emitted box must
/// still cover it.
pub fn scan_proposals(img: &PnmImage, cfg: &ProposalConfig) -> Vec<Proposal> {
    let spacing = cfg.spacing.max(1);
    let mut spots: Vec<Spot> = Vec::new();
    let mut scan_index = 0usize;
    let mut x = 0usize;
    while x < img.width {
        let mut run_start: Option<usize> = None;
        for y in 0..=img.height {
            let non_green = y < img.height && {
                let (r, g, b) = rgb_at(img, x, y);
                !is_green(r, g, b, cfg)
            };
            match (non_green, run_start) {
                (true, None) => run_start = Some(y),
                (false, Some(start)) => {
                    if y - start > cfg.min_run {
                        spots.push(Spot { scanline: scan_index, x, y0: start, y1: y - 1 });
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        scan_index += 1;
        x += spacing;
    }

    // transitive merge of vertically overlapping spots on adjacent scanlines
    let mut parent: Vec<usize> = (0..spots.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..spots.len() {
        for j in i + 1..spots.len() {
            if spots[j].scanline > spots[i].scanline + 1 {
                break; // spots are ordered by scanline
            }
            if spots[j].scanline == spots[i].scanline + 1
                && spots[i].y0 <= spots[j].y1
                && spots[j].y0 <= spots[i].y1
            {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }

    let mut clusters: std::collections::HashMap<usize, Proposal> = std::collections::HashMap::new();
    for i in 0..spots.len() {
        let root = find(&mut parent, i);
        let s = spots[i];
        clusters
            .entry(root)
            .and_modify(|p| {
                p.x0 = p.x0.min(s.x);
                p.x1 = p.x1.max(s.x);
                p.y0 = p.y0.min(s.y0);
                p.y1 = p.y1.max(s.y1);
            })
            .or_insert(Proposal { x0: s.x, y0: s.y0, x1: s.x, y1: s.y1 });
    }

    let grow_x = spacing - 1 + cfg.margin_px;
    let grow_y = cfg.margin_px;
    let mut out: Vec<Proposal> = clusters
        .into_values()
        .map(|p| Proposal {
            x0: p.x0.saturating_sub(grow_x),
            y0: p.y0.saturating_sub(grow_y),
            x1: (p.x1 + grow_x).min(img.width - 1),
            y1: (p.y1 + grow_y).min(img.height - 1),
        })
        .filter(|p| p.width() >= cfg.min_box && p.height() >= cfg.min_box)
        .collect();
    out.sort_by_key(|p| (p.x0, p.y0, p.x1, p.y1));
    out
}

/// Bilinear crop-and-resize to a `[3, side, side]` tensor in `[0, 1]`.
/// Grayscale sources replicate their channel.
pub fn crop_resize(img: &PnmImage, p: &Proposal, side: usize) -> Result<Tensor> {
    if p.x1 >= img.width || p.y1 >= img.height || side == 0 {
        return Err(Error::arg(format!(
            "proposal {p:?} outside {}x{} image",
            img.width, img.height
        )));
    }
    let (cw, ch) = (p.width(), p.height());
    let src = |x: usize, y: usize, c: usize| -> f32 {
        let (r, g, b) = rgb_at(img, p.x0 + x, p.y0 + y);
        (match c {
            0 => r,
            1 => g,
            _ => b,
        }) as f32
            / 255.0
    };
    // endpoint-aligned sampling keeps a same-size crop bit-exact
    let coord = |i: usize, out: usize, input: usize| -> f32 {
        if out == 1 {
            (input - 1) as f32 / 2.0
        } else {
            i as f32 * (input - 1) as f32 / (out - 1) as f32
        }
    };
    let mut data = vec![0.0f32; 3 * side * side];
    for c in 0..3 {
        for oy in 0..side {
            let fy = coord(oy, side, ch);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(ch - 1);
            let wy = fy - y0 as f32;
            for ox in 0..side {
                let fx = coord(ox, side, cw);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(cw - 1);
                let wx = fx - x0 as f32;
                let top = src(x0, y0, c) * (1.0 - wx) + src(x1, y0, c) * wx;
                let bot = src(x0, y1, c) * (1.0 - wx) + src(x1, y1, c) * wx;
                data[(c * side + oy) * side + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::from_vec(&[3, side, side], data)
}

/// Detector knobs beyond the proposal stage.
#[derive(Debug, Clone, Copy)]
pub struct DetectConfig {
    pub proposals: ProposalConfig,
    /// Softmax confidence needed to keep a detection (0.5).
    pub confidence: f32,
    /// Class index whose confidence is thresholded (1).
    pub positive_class: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { proposals: ProposalConfig::default(), confidence: 0.5, positive_class: 1 }
    }
}

/// Per-image timing report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetectTiming {
    pub t_prop_ms: f64,
    pub mean_t_inf_ms: f64,
    pub n_proposals: usize,
    pub total_ms: f64,
}

/// Full pipeline over a prepared network. The net must take
/// `[3, side, side]` inputs with equal sides.
pub fn detect(
    img: &PnmImage,
    net: &Prepared,
    cfg: &DetectConfig,
) -> Result<(Vec<Detection>, DetectTiming)> {
    let (c, h, w) = net.input_shape();
    if c != 3 || h != w {
        return Err(Error::shape(format!(
            "detector network must take 3xSxS input, got {c}x{h}x{w}"
        )));
    }
    detect_with(img, |crop| Ok(net.forward(crop)?.data().to_vec()), h, cfg)
}

/// Pipeline with a pluggable classifier (probability vector per crop).
pub fn detect_with<F>(
    img: &PnmImage,
    mut classify: F,
    side: usize,
    cfg: &DetectConfig,
) -> Result<(Vec<Detection>, DetectTiming)>
where
    F: FnMut(&Tensor) -> Result<Vec<f32>>,
{
    let t_start = Instant::now();
    let t0 = Instant::now();
    let proposals = scan_proposals(img, &cfg.proposals);
    let t_prop_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut detections = Vec::new();
    let mut inf_total = 0.0f64;
    for p in &proposals {
        let crop = crop_resize(img, p, side)?;
        let t1 = Instant::now();
        let probs = classify(&crop)?;
        inf_total += t1.elapsed().as_secs_f64() * 1e3;
        let conf = *probs.get(cfg.positive_class).ok_or_else(|| {
            Error::arg(format!(
                "positive class {} out of range for {} outputs",
                cfg.positive_class,
                probs.len()
            ))
        })?;
        if conf >= cfg.confidence {
            detections.push(Detection { proposal: *p, label: cfg.positive_class, confidence: conf });
        }
    }
    let timing = DetectTiming {
        t_prop_ms,
        mean_t_inf_ms: if proposals.is_empty() { 0.0 } else { inf_total / proposals.len() as f64 },
        n_proposals: proposals.len(),
        total_ms: t_start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((detections, timing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn green_image(w: usize, h: usize) -> PnmImage {
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&[30, 120, 40]);
        }
        PnmImage::new(w, h, 3, data).unwrap()
    }

    fn paint_rect(img: &mut PnmImage, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = (y * img.width + x) * 3;
                img.data[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    #[test]
    fn green_rule_examples() {
        let cfg = ProposalConfig::default();
        assert!(is_green(0, 255, 0, &cfg));
        assert!(!is_green(200, 200, 200, &cfg));
        assert!(!is_green(0, 25, 0, &cfg));
        assert!(!is_green(0, 30, 0, &cfg)); // brightness must exceed 30
    }

    #[test]
    fn all_green_yields_nothing() {
        let img = green_image(64, 48);
        assert!(scan_proposals(&img, &ProposalConfig::default()).is_empty());
    }

    #[test]
    fn single_rectangle_one_containing_proposal() {
        let mut img = green_image(80, 60);
        let target = Proposal { x0: 23, y0: 10, x1: 42, y1: 49 }; // 20x40
        paint_rect(&mut img, target.x0, target.y0, target.x1, target.y1, [240, 240, 240]);
        let props = scan_proposals(&img, &ProposalConfig::default());
        assert_eq!(props.len(), 1);
        assert!(props[0].contains(&target), "{:?} should contain {target:?}", props[0]);
    }

    #[test]
    fn two_separated_rectangles_two_proposals() {
        let mut img = green_image(120, 60);
        paint_rect(&mut img, 5, 10, 24, 49, [240, 240, 240]);
        // separated by >= 2*spacing green columns
        paint_rect(&mut img, 70, 10, 89, 49, [20, 20, 20]);
        let props = scan_proposals(&img, &ProposalConfig::default());
        assert_eq!(props.len(), 2);
    }

    #[test]
    fn short_runs_filtered() {
        let mut img = green_image(64, 48);
        // 3 pixels tall: not longer than min_run = 4
        paint_rect(&mut img, 16, 10, 30, 12, [240, 240, 240]);
        assert!(scan_proposals(&img, &ProposalConfig::default()).is_empty());
    }

    #[test]
    fn proposals_stay_in_bounds() {
        let mut img = green_image(40, 40);
        paint_rect(&mut img, 0, 0, 15, 15, [240, 240, 240]); // touches the corner
        for p in scan_proposals(&img, &ProposalConfig::default()) {
            assert!(p.x1 < 40 && p.y1 < 40);
        }
    }

    #[test]
    fn crop_identity_when_sides_match() {
        let mut img = green_image(30, 30);
        paint_rect(&mut img, 4, 4, 13, 13, [200, 100, 50]);
        let p = Proposal { x0: 2, y0: 2, x1: 25, y1: 25 }; // 24x24
        let t = crop_resize(&img, &p, 24).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let (r, g, b) = rgb_at(&img, 2 + x, 2 + y);
                assert_eq!(t.get(&[0, y, x]).unwrap(), r as f32 / 255.0);
                assert_eq!(t.get(&[1, y, x]).unwrap(), g as f32 / 255.0);
                assert_eq!(t.get(&[2, y, x]).unwrap(), b as f32 / 255.0);
            }
        }
    }

    #[test]
    fn crop_constant_stays_constant() {
        let img = green_image(30, 30);
        let p = Proposal { x0: 3, y0: 5, x1: 17, y1: 12 };
        let t = crop_resize(&img, &p, 24).unwrap();
        for c in 0..3 {
            let want = [30.0, 120.0, 40.0][c] / 255.0;
            for v in &t.data()[c * 576..(c + 1) * 576] {
                assert!((v - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn checkerboard_bilinear_weights() {
        // 2x2 checkerboard 255/0 upsampled to 4x4 with endpoint alignment:
        // sample positions 0, 1/3, 2/3, 1.
        let data = vec![
            255, 255, 255, 0, 0, 0, //
            0, 0, 0, 255, 255, 255,
        ];
        let img = PnmImage::new(2, 2, 3, data).unwrap();
        let p = Proposal { x0: 0, y0: 0, x1: 1, y1: 1 };
        let t = crop_resize(&img, &p, 4).unwrap();
        let at = |y: usize, x: usize| t.get(&[0, y, x]).unwrap();
        assert!((at(0, 0) - 1.0).abs() < 1e-6);
        assert!((at(0, 3) - 0.0).abs() < 1e-6);
        // one third of the way across the top edge: (1 - 1/3) * 1
        assert!((at(0, 1) - 2.0 / 3.0).abs() < 1e-5);
        // (1/3, 1/3): (2/3)(2/3)*1 + (1/3)(1/3)*1 = 5/9
        assert!((at(1, 1) - 5.0 / 9.0).abs() < 1e-5);
    }

    #[test]
    fn total_time_examples() {
        let m = TimingModel { t_prop_ms: 0.85, t_inf_ms: 0.95, avg_proposals: 1.5 };
        assert_eq!(total_time(&m), 2.275);
        let m = TimingModel { t_prop_ms: 0.7, t_inf_ms: 3.0, avg_proposals: 0.0 };
        assert_eq!(total_time(&m), 0.7);
        let m = TimingModel { t_prop_ms: 0.85, t_inf_ms: 1.05, avg_proposals: 1.5 };
        assert!((total_time(&m) - 2.425).abs() < 1e-12);
    }

    #[test]
    fn detect_with_stub_classifier() {
        let mut img = green_image(100, 80);
        paint_rect(&mut img, 20, 20, 45, 50, [230, 230, 230]);

        // perfect stub: bright crops are positive
        let stub = |crop: &Tensor| -> crate::error::Result<Vec<f32>> {
            let mean: f32 = crop.data().iter().sum::<f32>() / crop.len() as f32;
            Ok(if mean > 0.4 { vec![0.0, 1.0] } else { vec![1.0, 0.0] })
        };
        let cfg = DetectConfig::default();
        let (dets, timing) = detect_with(&img, stub, 24, &cfg).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(timing.n_proposals, 1);
        assert!(dets[0].proposal.intersects(&Proposal { x0: 20, y0: 20, x1: 45, y1: 50 }));
        assert!(timing.total_ms >= timing.t_prop_ms);

        // unreachable threshold keeps nothing
        let cfg = DetectConfig { confidence: 1.01, ..cfg };
        let (dets, _) = detect_with(&img, stub, 24, &cfg).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn zero_proposals_zero_inference() {
        let img = green_image(64, 48);
        let mut calls = 0usize;
        let stub = |_: &Tensor| -> crate::error::Result<Vec<f32>> {
            calls += 1;
            Ok(vec![0.5, 0.5])
        };
        let (dets, timing) = detect_with(&img, stub, 24, &DetectConfig::default()).unwrap();
        assert!(dets.is_empty());
        assert_eq!(timing.n_proposals, 0);
        assert_eq!(timing.mean_t_inf_ms, 0.0);
        assert_eq!(calls, 0);
    }

    #[test]
    fn planted_objects_are_recalled() {
        // module invariant: every planted object wider than `spacing` and
        // taller than `min_run` intersects at least one proposal
        let cfg = ProposalConfig::default();
        let mut hit = 0usize;
        let mut total = 0usize;
        for seed in 0..1000u64 {
            let (img, objects) = synth::scene(128, 96, 1, 1, seed);
            let props = scan_proposals(&img, &cfg);
            for obj in &objects {
                total += 1;
                if props.iter().any(|p| p.intersects(&obj.bbox)) {
                    hit += 1;
                }
            }
        }
        let recall = hit as f64 / total as f64;
        assert!(recall >= 0.99, "recall {recall} over {total} objects");
    }
}

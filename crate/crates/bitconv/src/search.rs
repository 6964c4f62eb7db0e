//! Latency-vs-accuracy architecture search.
//!
//! A greedy best-first loop over a catalogue of network transforms:
//! every evaluated candidate is trained from scratch, timed, and kept
//! only while no other point is at least as fast *and* at least as
//! accurate. Feasibility is a hard inference-time threshold; the result
//! is the non-dominated front of feasible points plus a replayable
//! ledger of every evaluation.

use crate::error::{Error, Result};
use crate::net::{LayerSpec, NetworkSpec, Prepared, Weights};
use crate::tensor::Tensor;
use crate::train::{evaluate, train, Dataset, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

/// Median plus spread (max/min ratio) of a timing run.
#[derive(Debug, Clone, Copy)]
pub struct Timing {
    pub median_ms: f64,
    pub spread: f64,
}

/// Median of a non-empty slice (mean of the middle pair when even).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median single-threaded forward wall time over `reps` runs (clamped to
/// at least 5) after two discarded warm-ups.
pub fn measure_time(net: &Prepared, reps: usize) -> Timing {
    let reps = reps.max(5);
    let (c, h, w) = net.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(0xbea7);
    let input = Tensor::from_vec(
        &[c, h, w],
        (0..c * h * w).map(|_| rng.random_range(0.0f32..1.0)).collect(),
    )
    .unwrap();

    for _ in 0..2 {
        let _ = net.forward(&input);
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let _ = net.forward(&input);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let max = times.iter().cloned().fold(f64::MIN, f64::max);
    let min = times.iter().cloned().fold(f64::MAX, f64::min);
    Timing { median_ms: median(&times), spread: if min > 0.0 { max / min } else { f64::INFINITY } }
}

/// Source of inference-time measurements; pluggable so search logic can
/// be exercised with a deterministic clock.
pub trait InferenceTimer: Sync {
    fn measure(&self, spec: &NetworkSpec, net: &Prepared, reps: usize) -> Timing;
}

/// Real wall-clock measurements.
pub struct WallTimer;

impl InferenceTimer for WallTimer {
    fn measure(&self, _spec: &NetworkSpec, net: &Prepared, reps: usize) -> Timing {
        measure_time(net, reps)
    }
}

/// Deterministic stand-in clock: time proportional to the multiply
/// accumulate count. Makes search runs exactly reproducible in tests.
pub struct ProxyTimer {
    pub ns_per_mac: f64,
}

impl Default for ProxyTimer {
    fn default() -> Self {
        ProxyTimer { ns_per_mac: 1.0 }
    }
}

impl InferenceTimer for ProxyTimer {
    fn measure(&self, spec: &NetworkSpec, _net: &Prepared, _reps: usize) -> Timing {
        // +1 keeps degenerate zero-mac nets strictly positive
        Timing { median_ms: (spec.estimate_macs() + 1) as f64 * self.ns_per_mac * 1e-6, spread: 1.0 }
    }
}

/// One evaluated design point.
#[derive(Debug, Clone)]
pub struct ParetoPoint {
    pub spec: NetworkSpec,
    pub time_ms: f64,
    pub accuracy: f64,
    pub lineage: Vec<Transform>,
}

/// 5% logarithmic time buckets. Comparing bucket indices instead of raw
/// times keeps dominance transitive while still treating measurements
/// within the noise band as ties.
fn time_key(ms: f64) -> i64 {
    debug_assert!(ms > 0.0);
    (ms.ln() / 1.05f64.ln()).floor() as i64
}

/// True when `p` is no slower (within the 5% band) and no less accurate
/// than `q`, and strictly better on at least one axis.
pub fn dominates(p: &ParetoPoint, q: &ParetoPoint) -> bool {
    let (tp, tq) = (time_key(p.time_ms), time_key(q.time_ms));
    tp <= tq && p.accuracy >= q.accuracy && (tp < tq || p.accuracy > q.accuracy)
}

/// The transform catalogue. Each variant is replayable: applying the
/// recorded transforms to the base spec reproduces a front member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Drop one layer (never the classifier head).
    RemoveLayer(usize),
    /// Multiply one layer's filter counts by the configured scale
    /// (rounding up).
    ScaleFilters(usize),
    /// Swap the first standalone relu for a prelu.
    PreluFirst,
    /// Give one fire module a 5x5 expand branch with e5 = e3.
    ExtendFire(usize),
    /// Set every maxpool stride equal to its window.
    PoolNonOverlap,
    /// Shave the configured number of pixels off each input side.
    ShrinkInput,
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::RemoveLayer(i) => write!(f, "remove_layer({i})"),
            Transform::ScaleFilters(i) => write!(f, "scale_filters({i})"),
            Transform::PreluFirst => write!(f, "prelu_first"),
            Transform::ExtendFire(i) => write!(f, "extend_fire({i})"),
            Transform::PoolNonOverlap => write!(f, "pool_nonoverlap"),
            Transform::ShrinkInput => write!(f, "shrink_input"),
        }
    }
}

/// Search settings. Transform constants are exposed here so the
/// catalogue can be tuned without touching the algorithm.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Feasibility bound on median inference time.
    pub threshold_ms: f64,
    /// Maximum number of candidates trained (the base point counts).
    pub budget: usize,
    pub train: TrainConfig,
    pub timing_reps: usize,
    pub seed: u64,
    /// Candidate-level training parallelism (1 = serial).
    pub jobs: usize,
    /// Filter-count multiplier for [`Transform::ScaleFilters`].
    pub filter_scale: f64,
    /// Pixels removed per side by [`Transform::ShrinkInput`].
    pub input_shrink: usize,
    /// Smallest allowed input side.
    pub input_floor: usize,
    /// Fraction of the dataset held out for validation accuracy.
    pub val_frac: f64,
    /// Accuracy drop (fraction) below the parent that counts as "lower
    /// than desired" and unlocks the prelu/extend-fire transforms.
    pub acc_drop: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            threshold_ms: 2.0,
            budget: 16,
            train: TrainConfig::default(),
            timing_reps: 7,
            seed: 0,
            jobs: 1,
            filter_scale: 0.75,
            input_shrink: 4,
            input_floor: 16,
            val_frac: 0.25,
            acc_drop: 0.005,
        }
    }
}

fn scale_count(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).ceil() as usize).max(1)
}

/// Applies one transform; fails when it is inapplicable or the result no
/// longer validates with the base class count.
pub fn apply_transform(spec: &NetworkSpec, t: Transform, cfg: &SearchConfig) -> Result<NetworkSpec> {
    let mut input = spec.input();
    let mut layers = spec.layers().to_vec();
    match t {
        Transform::RemoveLayer(i) => {
            // only compute layers are removed; pools have their own
            // transform and bare activations change nothing
            let parameterized = matches!(
                layers.get(i),
                Some(LayerSpec::Conv { .. } | LayerSpec::Fire { .. } | LayerSpec::FullyConnected { .. })
            );
            if !parameterized || is_head(&layers, i) {
                return Err(Error::arg(format!("layer {i} cannot be removed")));
            }
            layers.remove(i);
        }
        Transform::ScaleFilters(i) => {
            let changed = match layers.get_mut(i) {
                Some(LayerSpec::Conv { out, .. }) => {
                    let new = scale_count(*out, cfg.filter_scale);
                    let changed = new != *out;
                    *out = new;
                    changed
                }
                Some(LayerSpec::Fire { squeeze, e1, e3, e5, .. }) => {
                    let old = (*squeeze, *e1, *e3, *e5);
                    *squeeze = scale_count(*squeeze, cfg.filter_scale);
                    *e1 = scale_count(*e1, cfg.filter_scale);
                    *e3 = scale_count(*e3, cfg.filter_scale);
                    if let Some(e5) = e5 {
                        *e5 = scale_count(*e5, cfg.filter_scale);
                    }
                    old != (*squeeze, *e1, *e3, *e5)
                }
                _ => return Err(Error::arg(format!("layer {i} has no filter count"))),
            };
            if !changed {
                return Err(Error::arg(format!("scaling layer {i} changes nothing")));
            }
        }
        Transform::PreluFirst => {
            let first = layers.iter().position(|l| matches!(l, LayerSpec::Relu));
            match first {
                Some(i) => layers[i] = LayerSpec::Prelu { init: crate::net::PRELU_DEFAULT_INIT },
                None => return Err(Error::arg("no standalone relu to replace".to_string())),
            }
        }
        Transform::ExtendFire(i) => match layers.get_mut(i) {
            Some(LayerSpec::Fire { e3, e5: e5 @ None, .. }) => *e5 = Some(*e3),
            _ => return Err(Error::arg(format!("layer {i} is not a plain fire module"))),
        },
        Transform::PoolNonOverlap => {
            let mut changed = false;
            for l in &mut layers {
                if let LayerSpec::Maxpool { k, stride } = l {
                    if stride != k {
                        *stride = *k;
                        changed = true;
                    }
                }
            }
            if !changed {
                return Err(Error::arg("all pools already non-overlapping".to_string()));
            }
        }
        Transform::ShrinkInput => {
            let (c, h, w) = input;
            if h < cfg.input_shrink + cfg.input_floor || w < cfg.input_shrink + cfg.input_floor {
                return Err(Error::arg("input already at the floor size".to_string()));
            }
            input = (c, h - cfg.input_shrink, w - cfg.input_shrink);
        }
    }
    NetworkSpec::with_classes(input, layers, spec.classes())
}

/// The classifier head: the final softmax and the last parameterized
/// layer feeding it stay.
fn is_head(layers: &[LayerSpec], i: usize) -> bool {
    if matches!(layers[i], LayerSpec::Softmax) && i == layers.len() - 1 {
        return true;
    }
    let last_param = layers.iter().rposition(|l| {
        matches!(
            l,
            LayerSpec::Conv { .. } | LayerSpec::Fire { .. } | LayerSpec::FullyConnected { .. }
        )
    });
    last_param == Some(i)
}

/// Replays a lineage from the base spec.
pub fn replay(base: &NetworkSpec, lineage: &[Transform], cfg: &SearchConfig) -> Result<NetworkSpec> {
    let mut spec = base.clone();
    for t in lineage {
        spec = apply_transform(&spec, *t, cfg)?;
    }
    Ok(spec)
}

/// Every applicable transform of the catalogue, with its result.
/// Inapplicable or invalid candidates are silently skipped.
pub fn transforms(spec: &NetworkSpec, cfg: &SearchConfig) -> Vec<(Transform, NetworkSpec)> {
    let mut out = Vec::new();
    let mut push = |t: Transform| {
        if let Ok(s) = apply_transform(spec, t, cfg) {
            out.push((t, s));
        }
    };
    for i in 0..spec.layers().len() {
        push(Transform::RemoveLayer(i));
    }
    for i in 0..spec.layers().len() {
        push(Transform::ScaleFilters(i));
    }
    push(Transform::PreluFirst);
    for i in 0..spec.layers().len() {
        if matches!(spec.layers()[i], LayerSpec::Fire { e5: None, .. }) {
            push(Transform::ExtendFire(i));
        }
    }
    push(Transform::PoolNonOverlap);
    push(Transform::ShrinkInput);
    out
}

/// One row of the evaluation ledger.
#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub candidate_id: usize,
    pub parent_id: Option<usize>,
    pub transform: Option<Transform>,
    pub params: usize,
    pub macs: usize,
    pub time_ms: f64,
    pub accuracy: f64,
    pub feasible: bool,
    pub on_front: bool,
}

/// Search output: the feasible non-dominated front plus the ledger of
/// every trained candidate.
#[derive(Debug)]
pub struct SearchResult {
    pub front: Vec<ParetoPoint>,
    pub ledger: Vec<LedgerEntry>,
}

/// FNV-1a over the canonical spec text; used to derive per-candidate
/// training seeds that are stable across runs and exploration order.
pub fn spec_hash(spec: &NetworkSpec) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in spec.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Node {
    id: usize,
    spec: NetworkSpec,
    time_ms: f64,
    accuracy: f64,
    lineage: Vec<Transform>,
    parent_acc: Option<f64>,
    expanded: bool,
    on_front: bool,
}

impl Node {
    fn point(&self) -> ParetoPoint {
        ParetoPoint {
            spec: self.spec.clone(),
            time_ms: self.time_ms,
            accuracy: self.accuracy,
            lineage: self.lineage.clone(),
        }
    }
}

/// Runs the search with wall-clock timing.
pub fn search(base: &NetworkSpec, data: &Dataset, cfg: &SearchConfig) -> Result<SearchResult> {
    search_with_timer(base, data, cfg, &WallTimer)
}

/// Trains and evaluates one candidate; separated so candidates can run
/// on a thread pool.
fn evaluate_candidate(
    spec: &NetworkSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &SearchConfig,
) -> Result<(Weights, f64)> {
    let mut tc = cfg.train;
    tc.seed = cfg.seed ^ spec_hash(spec);
    let (weights, _) = train(spec, train_set, Some(val_set), &tc)?;
    let (acc, _) = evaluate(spec, &weights, val_set)?;
    Ok((weights, acc))
}

pub fn search_with_timer(
    base: &NetworkSpec,
    data: &Dataset,
    cfg: &SearchConfig,
    timer: &dyn InferenceTimer,
) -> Result<SearchResult> {
    if cfg.threshold_ms <= 0.0 || cfg.budget == 0 {
        return Err(Error::arg("threshold must be > 0 and budget >= 1".to_string()));
    }
    let (train_set, val_set) = data.split(cfg.val_frac, cfg.seed);
    if val_set.is_empty() {
        return Err(Error::arg("dataset too small to hold out a validation split".to_string()));
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut ledger: Vec<LedgerEntry> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut front: Vec<usize> = Vec::new();
    let mut trained = 0usize;

    // timing is always serialized on this thread; only training runs on
    // the pool, so medians stay meaningful
    let record = |spec: NetworkSpec,
                  acc: f64,
                  weights: &Weights,
                  lineage: Vec<Transform>,
                  parent: Option<(usize, f64)>,
                  nodes: &mut Vec<Node>,
                  ledger: &mut Vec<LedgerEntry>|
     -> Result<usize> {
        let prepared = Prepared::new(&spec, weights)?;
        let timing = timer.measure(&spec, &prepared, cfg.timing_reps);
        let id = nodes.len();
        ledger.push(LedgerEntry {
            candidate_id: id,
            parent_id: parent.map(|(p, _)| p),
            transform: lineage.last().copied(),
            params: spec.count_params(),
            macs: spec.estimate_macs(),
            time_ms: timing.median_ms,
            accuracy: acc,
            feasible: timing.median_ms <= cfg.threshold_ms,
            on_front: false,
        });
        nodes.push(Node {
            id,
            spec,
            time_ms: timing.median_ms,
            accuracy: acc,
            lineage,
            parent_acc: parent.map(|(_, a)| a),
            expanded: false,
            on_front: false,
        });
        Ok(id)
    };

    // seed with the base point
    let (base_w, base_acc) = evaluate_candidate(base, &train_set, &val_set, cfg)?;
    let base_id = record(base.clone(), base_acc, &base_w, Vec::new(), None, &mut nodes, &mut ledger)?;
    seen.insert(base.to_string(), base_id);
    trained += 1;
    insert_front(&mut front, &mut nodes, base_id);

    while trained < cfg.budget {
        // expand the unexpanded front member with the best accuracy among
        // feasible points; with nothing feasible yet, chase feasibility by
        // expanding the fastest member instead
        let pick = {
            let mut best: Option<usize> = None;
            for &id in &front {
                if nodes[id].expanded {
                    continue;
                }
                let n = &nodes[id];
                let feasible = n.time_ms <= cfg.threshold_ms;
                best = match best {
                    None => Some(id),
                    Some(b) => {
                        let bn = &nodes[b];
                        let b_feasible = bn.time_ms <= cfg.threshold_ms;
                        let better = match (feasible, b_feasible) {
                            (true, false) => true,
                            (false, true) => false,
                            (true, true) => (n.accuracy, -n.time_ms, -(n.id as f64))
                                > (bn.accuracy, -bn.time_ms, -(bn.id as f64)),
                            (false, false) => n.time_ms < bn.time_ms,
                        };
                        Some(if better { id } else { b })
                    }
                };
            }
            match best {
                Some(id) => id,
                None => break, // domination stall: nothing left to expand
            }
        };
        nodes[pick].expanded = true;

        let unlock_upgrades = nodes[pick]
            .parent_acc
            .is_some_and(|pa| nodes[pick].accuracy < pa - cfg.acc_drop);
        let parent_info = (nodes[pick].id, nodes[pick].accuracy);
        let parent_lineage = nodes[pick].lineage.clone();
        let candidates: Vec<(Transform, NetworkSpec)> = transforms(&nodes[pick].spec, cfg)
            .into_iter()
            .filter(|(t, _)| match t {
                Transform::PreluFirst | Transform::ExtendFire(_) => unlock_upgrades,
                _ => true,
            })
            .filter(|(_, s)| !seen.contains_key(&s.to_string()))
            .take(cfg.budget - trained)
            .collect();

        // per-candidate seeds come from the spec itself, so the outcome
        // does not depend on pool scheduling
        let outcomes: Vec<Result<(Weights, f64)>> = if cfg.jobs > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| Error::arg(format!("cannot build thread pool: {e}")))?;
            pool.install(|| {
                candidates
                    .par_iter()
                    .map(|(_, s)| evaluate_candidate(s, &train_set, &val_set, cfg))
                    .collect()
            })
        } else {
            candidates
                .iter()
                .map(|(_, s)| evaluate_candidate(s, &train_set, &val_set, cfg))
                .collect()
        };

        for ((t, spec), outcome) in candidates.into_iter().zip(outcomes) {
            let (weights, acc) = outcome?;
            let key = spec.to_string();
            let mut lineage = parent_lineage.clone();
            lineage.push(t);
            let id = record(spec, acc, &weights, lineage, Some(parent_info), &mut nodes, &mut ledger)?;
            seen.insert(key, id);
            trained += 1;
            insert_front(&mut front, &mut nodes, id);
        }
    }

    // final front: feasible members only, in time order
    let mut result: Vec<&Node> = front
        .iter()
        .map(|&id| &nodes[id])
        .filter(|n| n.time_ms <= cfg.threshold_ms)
        .collect();
    result.sort_by(|a, b| a.time_ms.partial_cmp(&b.time_ms).unwrap());
    let front_points: Vec<ParetoPoint> = result.iter().map(|n| n.point()).collect();
    let front_ids: Vec<usize> = result.iter().map(|n| n.id).collect();
    for id in front_ids {
        ledger[id].on_front = true;
    }
    Ok(SearchResult { front: front_points, ledger })
}

/// Adds `id` to the front unless dominated; evicts members it dominates.
fn insert_front(front: &mut Vec<usize>, nodes: &mut [Node], id: usize) {
    let candidate = nodes[id].point();
    for &f in front.iter() {
        if dominates(&nodes[f].point(), &candidate) {
            return;
        }
    }
    front.retain(|&f| !dominates(&candidate, &nodes[f].point()));
    front.push(id);
    nodes[id].on_front = true;
}

/// Writes the evaluation ledger CSV.
pub fn write_ledger(path: impl AsRef<Path>, ledger: &[LedgerEntry]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "candidate_id,parent_id,transform,params,macs,time_ms,accuracy,feasible,on_front")?;
    for e in ledger {
        writeln!(
            f,
            "{},{},{},{},{},{:.6},{:.6},{},{}",
            e.candidate_id,
            e.parent_id.map(|p| p.to_string()).unwrap_or_default(),
            e.transform.map(|t| t.to_string()).unwrap_or_else(|| "base".to_string()),
            e.params,
            e.macs,
            e.time_ms,
            e.accuracy,
            e.feasible,
            e.on_front
        )?;
    }
    Ok(())
}

/// Writes `front.csv` plus one netspec file per front member.
pub fn write_front(dir: impl AsRef<Path>, front: &[ParetoPoint]) -> Result<()> {
    use std::io::Write;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("front.csv"))?);
    writeln!(f, "name,time_ms,accuracy_pct")?;
    for (i, p) in front.iter().enumerate() {
        let name = format!("front_{i}");
        writeln!(f, "{name},{:.6},{:.4}", p.time_ms, p.accuracy * 100.0)?;
        std::fs::write(dir.join(format!("{name}.netspec")), p.spec.to_string())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::parse_netspec;
    use proptest::prelude::*;

    fn pt(time_ms: f64, accuracy: f64) -> ParetoPoint {
        ParetoPoint {
            spec: parse_netspec("input 1x4x4\nfc out=2\nsoftmax\n").unwrap(),
            time_ms,
            accuracy,
            lineage: vec![],
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[1.0, 2.0, 100.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn dominates_examples() {
        assert!(dominates(&pt(1.0, 0.90), &pt(2.0, 0.80)));
        assert!(!dominates(&pt(1.0, 0.80), &pt(2.0, 0.90)));
        assert!(!dominates(&pt(2.0, 0.90), &pt(1.0, 0.80)));
        let p = pt(1.5, 0.7);
        assert!(!dominates(&p, &p));
        // within the 5% band equal accuracy is a tie, not dominance
        assert!(!dominates(&pt(1.0, 0.8), &pt(1.02, 0.8)));
        assert!(dominates(&pt(1.0, 0.81), &pt(1.02, 0.8)));
    }

    proptest! {
        #[test]
        fn dominates_is_strict_partial_order(
            times in prop::collection::vec(0.1f64..100.0, 3),
            accs in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let a = pt(times[0], accs[0]);
            let b = pt(times[1], accs[1]);
            let c = pt(times[2], accs[2]);
            prop_assert!(!dominates(&a, &a));
            if dominates(&a, &b) {
                prop_assert!(!dominates(&b, &a));
            }
            if dominates(&a, &b) && dominates(&b, &c) {
                prop_assert!(dominates(&a, &c));
            }
        }
    }

    fn base_spec() -> NetworkSpec {
        parse_netspec(
            "input 1x20x20\nconv out=8 k=3\nrelu\nmaxpool k=2 s=1\nfire s=2 e1=4 e3=4\nfc out=2\nsoftmax\n",
        )
        .unwrap()
    }

    #[test]
    fn transform_catalogue() {
        let cfg = SearchConfig::default();
        let spec = base_spec();
        let cands = transforms(&spec, &cfg);

        // (b): conv out=8 scales to 6
        let scaled = cands
            .iter()
            .find(|(t, _)| *t == Transform::ScaleFilters(0))
            .expect("conv must scale");
        assert!(matches!(scaled.1.layers()[0], LayerSpec::Conv { out: 6, .. }));

        // (c): first relu becomes prelu
        let prelu = cands.iter().find(|(t, _)| *t == Transform::PreluFirst).unwrap();
        assert!(matches!(prelu.1.layers()[1], LayerSpec::Prelu { .. }));

        // (d): fire gains e5 = e3
        let ext = cands.iter().find(|(t, _)| *t == Transform::ExtendFire(3)).unwrap();
        assert!(matches!(ext.1.layers()[3], LayerSpec::Fire { e5: Some(4), .. }));

        // (e): stride-1 pool becomes stride 2
        let pool = cands.iter().find(|(t, _)| *t == Transform::PoolNonOverlap).unwrap();
        assert!(matches!(pool.1.layers()[2], LayerSpec::Maxpool { k: 2, stride: 2 }));

        // (f): 20x20 shrinks to 16x16
        let shrink = cands.iter().find(|(t, _)| *t == Transform::ShrinkInput).unwrap();
        assert_eq!(shrink.1.input(), (1, 16, 16));

        // every candidate re-validates with the same class count
        for (_, s) in &cands {
            assert_eq!(s.classes(), 2);
        }
    }

    #[test]
    fn head_is_preserved() {
        let cfg = SearchConfig::default();
        // the only parameterized layer feeds the softmax: nothing to remove
        let spec = parse_netspec("input 1x1x1\nconv out=2 k=1\nsoftmax\n").unwrap();
        let cands = transforms(&spec, &cfg);
        assert!(cands.iter().all(|(t, _)| !matches!(t, Transform::RemoveLayer(_))));

        // with an fc head the conv is removable but fc/softmax are not
        let spec = parse_netspec("input 1x6x6\nconv out=2 k=3\nfc out=2\nsoftmax\n").unwrap();
        let removals: Vec<_> = transforms(&spec, &cfg)
            .into_iter()
            .filter(|(t, _)| matches!(t, Transform::RemoveLayer(_)))
            .collect();
        assert_eq!(removals.len(), 1);
        assert_eq!(removals[0].0, Transform::RemoveLayer(0));
    }

    #[test]
    fn shrink_respects_floor() {
        let cfg = SearchConfig::default();
        let spec = parse_netspec("input 1x18x18\nfc out=2\nsoftmax\n").unwrap();
        assert!(apply_transform(&spec, Transform::ShrinkInput, &cfg).is_err());
    }

    #[test]
    fn scaling_saturates_at_identity() {
        let cfg = SearchConfig::default();
        // ceil(3 * 0.75) = 3: no candidate
        let spec = parse_netspec("input 1x6x6\nconv out=3 k=3\nfc out=2\nsoftmax\n").unwrap();
        assert!(apply_transform(&spec, Transform::ScaleFilters(0), &cfg).is_err());
    }

    #[test]
    fn shrinking_transforms_reduce_params() {
        let cfg = SearchConfig::default();
        let spec = base_spec();
        for (t, s) in transforms(&spec, &cfg) {
            match t {
                Transform::RemoveLayer(_) | Transform::ScaleFilters(_) | Transform::ShrinkInput => {
                    assert!(
                        s.count_params() < spec.count_params(),
                        "{t} must shrink params"
                    );
                }
                Transform::PoolNonOverlap => assert!(s.count_params() <= spec.count_params()),
                _ => {}
            }
        }
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        // brightness-separable so every toy spec trains to accuracy 1
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        for class in 0..2usize {
            for _ in 0..12 {
                let base = if class == 0 { rng.random_range(0.05f32..0.25) } else { rng.random_range(0.75f32..0.95) };
                items.push((Tensor::new(&[1, 8, 8], base).unwrap(), class));
            }
        }
        Dataset::new(items, vec!["a".into(), "b".into()], (1, 8, 8)).unwrap()
    }

    #[test]
    fn budget_one_returns_base_when_feasible() {
        let base = parse_netspec("input 1x8x8\nconv out=2 k=3\nfc out=2\nsoftmax\n").unwrap();
        let data = tiny_dataset(1);
        let cfg = SearchConfig {
            budget: 1,
            threshold_ms: 1e9,
            train: TrainConfig { epochs: 2, ..Default::default() },
            ..Default::default()
        };
        let res = search_with_timer(&base, &data, &cfg, &ProxyTimer::default()).unwrap();
        assert_eq!(res.front.len(), 1);
        assert_eq!(res.front[0].spec, base);
        assert_eq!(res.ledger.len(), 1);

        // infeasible base, budget exhausted: empty front, not an error
        let cfg = SearchConfig { budget: 1, threshold_ms: 1e-9, ..cfg };
        let res = search_with_timer(&base, &data, &cfg, &ProxyTimer::default()).unwrap();
        assert!(res.front.is_empty());
    }

    #[test]
    fn front_is_nondominated_feasible_and_replayable() {
        let base = parse_netspec(
            "input 1x8x8\nconv out=4 k=3\nmaxpool k=2 s=2\nfc out=2\nsoftmax\n",
        )
        .unwrap();
        let data = tiny_dataset(2);
        let cfg = SearchConfig {
            budget: 10,
            threshold_ms: 1e9,
            train: TrainConfig { epochs: 2, ..Default::default() },
            ..Default::default()
        };
        let res = search(&base, &data, &cfg).unwrap();
        assert!(!res.front.is_empty());
        for (i, p) in res.front.iter().enumerate() {
            assert!(p.time_ms <= cfg.threshold_ms);
            let replayed = replay(&base, &p.lineage, &cfg).unwrap();
            assert_eq!(replayed, p.spec);
            for (j, q) in res.front.iter().enumerate() {
                if i != j {
                    assert!(!dominates(p, q), "front members {i} and {j} overlap");
                }
            }
        }
        assert!(res.ledger.len() <= cfg.budget);
    }
}

//! Command-line front end: train / eval / bench / search / detect /
//! binarize over netspec + weight files. All logic lives in the library;
//! this binary parses flags, resolves config-file defaults and formats
//! output.
//!
//! Exit codes: 0 success, 2 user error, 3 internal error.

use bitconv::binary::binarize_weights;
use bitconv::detect::{detect, DetectConfig, ProposalConfig};
use bitconv::error::Error;
use bitconv::kernels::ConvParams;
use bitconv::net::{
    load_weights, parse_netspec, save_weights, validate_binarization, LayerSpec, NetworkSpec,
    PrepareOptions, Prepared, Weights,
};
use bitconv::search::{search, write_front, write_ledger, SearchConfig};
use bitconv::train::{evaluate, load_dataset, train, write_train_log, TrainConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bitconv", version, about = "Micro-CNN toolkit: binary kernels, netspec training, latency search, scanline detection")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed (falls back to $BITCONV_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network on a directory-per-class PGM/PPM dataset.
    Train(TrainArgs),
    /// Evaluate a trained network on a dataset.
    Eval(EvalArgs),
    /// Per-layer and total inference timing.
    Bench(BenchArgs),
    /// Latency-vs-accuracy architecture search from a base netspec.
    Search(SearchArgs),
    /// Run the proposal + classifier pipeline over images.
    Detect(DetectArgs),
    /// Report binarization statistics for a weight file.
    Binarize(BinarizeArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Network description file.
    #[arg(long)]
    net: PathBuf,
    /// Training dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Optional validation dataset root.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Output weights file.
    #[arg(long, default_value = "model.weights")]
    out: PathBuf,
    /// Output CSV log.
    #[arg(long, default_value = "train.csv")]
    log: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    net: PathBuf,
    /// Weights file (seeded random weights when omitted).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Run binary-flagged layers on the XNOR path ("on") or force the
    /// float path ("off").
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    binary: String,
    /// Also print the float-vs-binary time ratio per binary-flagged layer.
    #[arg(long)]
    compare: bool,
}

#[derive(Args)]
struct SearchArgs {
    /// Base network description.
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    threshold_ms: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    /// Candidate-training parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Results directory (ledger.csv, front.csv, front netspecs).
    #[arg(long, default_value = "search_out")]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// A PPM/PGM file or a directory of them.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    spacing: Option<usize>,
    #[arg(long)]
    min_run: Option<usize>,
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long)]
    min_box: Option<usize>,
    #[arg(long)]
    green_margin: Option<u8>,
    #[arg(long)]
    min_brightness: Option<u8>,
    #[arg(long)]
    confidence: Option<f32>,
    #[arg(long)]
    positive_class: Option<usize>,
}

#[derive(Args)]
struct BinarizeArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    weights: PathBuf,
}

/// Optional TOML defaults, one table per subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    #[serde(default)]
    train: TrainFileConfig,
    #[serde(default)]
    bench: BenchFileConfig,
    #[serde(default)]
    search: SearchFileConfig,
    #[serde(default)]
    detect: DetectFileConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    lr: Option<f32>,
    momentum: Option<f32>,
    epochs: Option<usize>,
    batch: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFileConfig {
    reps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchFileConfig {
    threshold_ms: Option<f64>,
    budget: Option<usize>,
    jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectFileConfig {
    spacing: Option<usize>,
    min_run: Option<usize>,
    margin: Option<usize>,
    min_box: Option<usize>,
    green_margin: Option<u8>,
    min_brightness: Option<u8>,
    confidence: Option<f32>,
    positive_class: Option<usize>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, Error> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Arg(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Arg(format!("bad config file: {e}")))
        }
    }
}

fn load_spec(path: &Path) -> Result<NetworkSpec, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Arg(format!("cannot read netspec {}: {e}", path.display())))?;
    parse_netspec(&text)
}

fn main() {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli)));
    let code = match result {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(_) => {
            eprintln!("internal error (unexpected panic)");
            3
        }
    };
    std::process::exit(code);
}

fn resolve_seed(cli_seed: Option<u64>, file: &FileConfig) -> u64 {
    cli_seed
        .or(file.seed)
        .or_else(|| std::env::var("BITCONV_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

fn run(cli: Cli) -> Result<(), Error> {
    let file = load_config(&cli.config)?;
    let seed = resolve_seed(cli.seed, &file);
    match cli.cmd {
        Cmd::Train(a) => cmd_train(a, &file, seed),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(a, &file, seed),
        Cmd::Search(a) => cmd_search(a, &file, seed),
        Cmd::Detect(a) => cmd_detect(a, &file),
        Cmd::Binarize(a) => cmd_binarize(a),
    }
}

fn train_config(
    lr: Option<f32>,
    momentum: Option<f32>,
    epochs: Option<usize>,
    batch: Option<usize>,
    file: &TrainFileConfig,
    seed: u64,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr: lr.or(file.lr).unwrap_or(d.lr),
        momentum: momentum.or(file.momentum).unwrap_or(d.momentum),
        epochs: epochs.or(file.epochs).unwrap_or(d.epochs),
        batch: batch.or(file.batch).unwrap_or(d.batch),
        seed,
    }
}

fn cmd_train(a: TrainArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    for w in validate_binarization(&spec) {
        eprintln!("warning: {w}");
    }
    let data = load_dataset(&a.data)?;
    let val = a.val.as_ref().map(load_dataset).transpose()?;
    let cfg = train_config(a.lr, a.momentum, a.epochs, a.batch, &file.train, seed);
    let (weights, history) = train(&spec, &data, val.as_ref(), &cfg)?;
    save_weights(&spec, &weights, &a.out)?;
    write_train_log(&a.log, &history)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs: loss {:.4}, train acc {:.4}, val acc {:.4}",
        history.len(),
        last.loss,
        last.train_acc,
        last.val_acc
    );
    println!("weights -> {}", a.out.display());
    println!("log -> {}", a.log.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    let weights = load_weights(&spec, &a.weights)?;
    let data = load_dataset(&a.data)?;
    let (acc, confusion) = evaluate(&spec, &weights, &data)?;
    println!("accuracy,{acc:.6}");
    println!("confusion (rows = true class):");
    for (i, row) in confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("{},{}", data.classes.get(i).cloned().unwrap_or_default(), cells.join(","));
    }
    Ok(())
}

fn load_or_init_weights(
    spec: &NetworkSpec,
    path: &Option<PathBuf>,
    seed: u64,
) -> Result<Weights, Error> {
    match path {
        Some(p) => load_weights(spec, p),
        None => Ok(Weights::init(spec, seed)),
    }
}

fn cmd_bench(a: BenchArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    let weights = load_or_init_weights(&spec, &a.weights, seed)?;
    let reps = a.reps.or(file.bench.reps).unwrap_or(20).max(5);
    let use_binary = a.binary == "on";
    let opts = PrepareOptions { use_binary, ..Default::default() };
    let net = Prepared::with_options(&spec, &weights, opts)?;

    let layer_times = profile(&net, reps)?;
    println!("layer,label,median_ms");
    for (i, label) in net.layer_labels().iter().enumerate() {
        println!("{i},{label},{:.6}", layer_times[i]);
    }
    let timing = bitconv::search::measure_time(&net, reps);
    println!("total,forward,{:.6}", timing.median_ms);
    println!("spread,max_over_min,{:.3}", timing.spread);

    if a.compare {
        let float_net = Prepared::with_options(
            &spec,
            &weights,
            PrepareOptions { use_binary: false, ..Default::default() },
        )?;
        let binary_net = Prepared::new(&spec, &weights)?;
        let tf = profile(&float_net, reps)?;
        let tb = profile(&binary_net, reps)?;
        println!("compare_layer,label,float_ms,binary_ms,ratio");
        for (i, layer) in spec.layers().iter().enumerate() {
            if layer.is_binary() {
                let ratio = if tb[i] > 0.0 { tf[i] / tb[i] } else { f64::INFINITY };
                println!(
                    "{i},{},{:.6},{:.6},{:.3}",
                    net.layer_labels()[i],
                    tf[i],
                    tb[i],
                    ratio
                );
            }
        }
    }
    Ok(())
}

/// Median per-layer times over `reps` profiled passes.
fn profile(net: &Prepared, reps: usize) -> Result<Vec<f64>, Error> {
    let (c, h, w) = net.input_shape();
    let input = bitconv::Tensor::new(&[c, h, w], 0.5)?;
    let _ = net.forward_profiled(&input)?; // warm-up
    let mut per_layer: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); net.layer_labels().len()];
    for _ in 0..reps {
        let (_, times) = net.forward_profiled(&input)?;
        for (bucket, t) in per_layer.iter_mut().zip(times) {
            bucket.push(t);
        }
    }
    Ok(per_layer.iter().map(|v| bitconv::search::median(v)).collect())
}

fn cmd_search(a: SearchArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    let data = load_dataset(&a.data)?;
    let cfg = SearchConfig {
        threshold_ms: a.threshold_ms.or(file.search.threshold_ms).unwrap_or(2.0),
        budget: a.budget.or(file.search.budget).unwrap_or(16),
        jobs: a.jobs.or(file.search.jobs).unwrap_or(1),
        train: train_config(a.lr, a.momentum, a.epochs, a.batch, &file.train, seed),
        seed,
        ..Default::default()
    };
    let result = search(&spec, &data, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    write_ledger(a.out.join("ledger.csv"), &result.ledger)?;
    write_front(&a.out, &result.front)?;
    if result.front.is_empty() {
        eprintln!(
            "warning: no feasible point within {} ms after {} evaluations",
            cfg.threshold_ms,
            result.ledger.len()
        );
    }
    println!("name,time_ms,accuracy_pct,params,macs");
    for (i, p) in result.front.iter().enumerate() {
        println!(
            "front_{i},{:.6},{:.4},{},{}",
            p.time_ms,
            p.accuracy * 100.0,
            p.spec.count_params(),
            p.spec.estimate_macs()
        );
    }
    println!("results -> {}", a.out.display());
    Ok(())
}

fn cmd_detect(a: DetectArgs, file: &FileConfig) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    let weights = load_weights(&spec, &a.weights)?;
    let net = Prepared::new(&spec, &weights)?;

    let d = &file.detect;
    let pd = ProposalConfig::default();
    let cfg = DetectConfig {
        proposals: ProposalConfig {
            spacing: a.spacing.or(d.spacing).unwrap_or(pd.spacing),
            min_run: a.min_run.or(d.min_run).unwrap_or(pd.min_run),
            margin_px: a.margin.or(d.margin).unwrap_or(pd.margin_px),
            min_box: a.min_box.or(d.min_box).unwrap_or(pd.min_box),
            green_margin: a.green_margin.or(d.green_margin).unwrap_or(pd.green_margin),
            min_brightness: a
                .min_brightness
                .or(d.min_brightness)
                .unwrap_or(pd.min_brightness),
        },
        confidence: a.confidence.or(d.confidence).unwrap_or(0.5),
        positive_class: a.positive_class.or(d.positive_class).unwrap_or(1),
    };

    let mut images: Vec<PathBuf> = if a.image.is_dir() {
        std::fs::read_dir(&a.image)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(p.extension().and_then(|e| e.to_str()), Some("ppm") | Some("pgm"))
            })
            .collect()
    } else {
        vec![a.image.clone()]
    };
    images.sort();
    if images.is_empty() {
        return Err(Error::Arg(format!("no .ppm/.pgm images under {}", a.image.display())));
    }

    for path in images {
        let img = bitconv::pnm::read(&path)?;
        let (detections, timing) = detect(&img, &net, &cfg)?;
        println!("# {}", path.display());
        for det in &detections {
            println!(
                "{} {} {} {} {} {:.4}",
                det.proposal.x0, det.proposal.y0, det.proposal.x1, det.proposal.y1, det.label,
                det.confidence
            );
        }
        println!("{}", serde_json::to_string(&timing).expect("timing serializes"));
    }
    Ok(())
}

fn cmd_binarize(a: BinarizeArgs) -> Result<(), Error> {
    let spec = load_spec(&a.net)?;
    let weights = load_weights(&spec, &a.weights)?;
    for w in validate_binarization(&spec) {
        eprintln!("warning: {w}");
    }

    println!("layer,label,filters,alpha_mean,alpha_min,alpha_max,float_bytes,packed_bytes,ratio");
    let ins = spec.input_shapes();
    let mut total_float = 0usize;
    let mut total_packed = 0usize;
    for (i, layer) in spec.layers().iter().enumerate() {
        let t = &weights.layers[i];
        let convs: Vec<ConvParams> = match layer {
            LayerSpec::Conv { out, k, stride, pad, .. } => vec![ConvParams::new(
                ins[i].c,
                *out,
                *k,
                *stride,
                *pad,
                t[0].clone(),
                t[1].clone(),
            )?],
            LayerSpec::Fire { squeeze, e1, e3, e5, .. } => {
                let mut v = vec![
                    ConvParams::new(ins[i].c, *squeeze, 1, 1, 0, t[0].clone(), t[1].clone())?,
                    ConvParams::new(*squeeze, *e1, 1, 1, 0, t[2].clone(), t[3].clone())?,
                    ConvParams::new(*squeeze, *e3, 3, 1, 1, t[4].clone(), t[5].clone())?,
                ];
                if let Some(e5) = e5 {
                    v.push(ConvParams::new(*squeeze, *e5, 5, 1, 2, t[6].clone(), t[7].clone())?);
                }
                v
            }
            _ => continue,
        };
        let mut alphas = Vec::new();
        let mut float_bytes = 0usize;
        let mut packed_bytes = 0usize;
        for p in &convs {
            let bank = binarize_weights(p);
            float_bytes += bank.float_weight_bytes();
            packed_bytes += bank.sign_bytes() + bank.alphas.len() * 4;
            alphas.extend(bank.alphas);
        }
        total_float += float_bytes;
        total_packed += packed_bytes;
        let mean = alphas.iter().sum::<f32>() / alphas.len() as f32;
        let min = alphas.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = alphas.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        println!(
            "{i},{},{},{:.6},{:.6},{:.6},{},{},{:.4}",
            layer.kind_name(),
            alphas.len(),
            mean,
            min,
            max,
            float_bytes,
            packed_bytes,
            packed_bytes as f64 / float_bytes as f64
        );
    }
    if total_float > 0 {
        println!(
            "total,all,,,,,{},{},{:.4}",
            total_float,
            total_packed,
            total_packed as f64 / total_float as f64
        );
    } else {
        println!("total,all,0,0,0,0,0,0,0");
    }
    Ok(())
}

//! Line-oriented network description format.
//!
//! ```text
//! # comment
//! input 3x24x24
//! conv out=8 k=3 s=1 pad=1 binary
//! relu
//! maxpool k=2 s=2
//! fire s=4 e1=8 e3=8 e5=8
//! fc out=2
//! softmax
//! ```
//!
//! Defaults: conv `s=1`, `pad=k/2`; maxpool `s=1`. A `fire` line with
//! `e5=` is the extended variant. Unknown kinds or keys are errors; every
//! error carries the offending line number.

use super::{propagate, LayerSpec, NetworkSpec, PRELU_DEFAULT_INIT};
use crate::error::{Error, Result};
use std::collections::HashMap;

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct Args {
    line: usize,
    values: HashMap<&'static str, usize>,
    binary: bool,
}

const KEYS: &[&str] = &["out", "k", "s", "pad", "e1", "e3", "e5"];

impl Args {
    fn parse(line: usize, kind: &str, tokens: &[&str], allowed: &[&str], flag_ok: bool) -> Result<Args> {
        let mut values = HashMap::new();
        let mut binary = false;
        for tok in tokens {
            if *tok == "binary" {
                if !flag_ok {
                    return Err(err(line, format!("`binary` is not valid on {kind}")));
                }
                binary = true;
                continue;
            }
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected key=value, got `{tok}`")))?;
            let key = KEYS
                .iter()
                .find(|k| **k == key)
                .filter(|k| allowed.contains(*k))
                .ok_or_else(|| err(line, format!("unknown key `{key}` for {kind}")))?;
            let value: usize = value
                .parse()
                .map_err(|_| err(line, format!("`{key}` needs a non-negative integer, got `{value}`")))?;
            if values.insert(*key, value).is_some() {
                return Err(err(line, format!("duplicate key `{key}`")));
            }
        }
        Ok(Args { line, values, binary })
    }

    fn require(&self, key: &str, kind: &str) -> Result<usize> {
        self.values
            .get(key)
            .copied()
            .ok_or_else(|| err(self.line, format!("{kind} needs `{key}=`")))
    }

    fn get_or(&self, key: &str, default: usize) -> usize {
        self.values.get(key).copied().unwrap_or(default)
    }
}

/// Parses and fully shape-checks a network description.
pub fn parse_netspec(text: &str) -> Result<NetworkSpec> {
    let mut input: Option<(usize, usize, usize)> = None;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut layer_lines: Vec<usize> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let kind = tokens[0];
        let rest = &tokens[1..];

        if kind == "input" {
            if input.is_some() {
                return Err(err(line, "duplicate input declaration"));
            }
            if !layers.is_empty() {
                return Err(err(line, "input must come before the first layer"));
            }
            let dims = rest.join("");
            let parts: Vec<&str> = dims.split('x').collect();
            if parts.len() != 3 {
                return Err(err(line, format!("expected `input CxHxW`, got `{content}`")));
            }
            let mut e = [0usize; 3];
            for (i, p) in parts.iter().enumerate() {
                e[i] = p
                    .parse()
                    .map_err(|_| err(line, format!("bad extent `{p}` in input shape")))?;
                if e[i] == 0 {
                    return Err(err(line, "input extents must be >= 1"));
                }
            }
            input = Some((e[0], e[1], e[2]));
            continue;
        }

        if input.is_none() {
            return Err(err(line, "network must start with `input CxHxW`"));
        }

        let layer = match kind {
            "conv" => {
                let a = Args::parse(line, kind, rest, &["out", "k", "s", "pad"], true)?;
                let k = a.require("k", kind)?;
                LayerSpec::Conv {
                    out: a.require("out", kind)?,
                    k,
                    stride: a.get_or("s", 1),
                    pad: a.get_or("pad", k / 2),
                    binary: a.binary,
                }
            }
            "fire" => {
                let a = Args::parse(line, kind, rest, &["s", "e1", "e3", "e5"], true)?;
                LayerSpec::Fire {
                    squeeze: a.require("s", kind)?,
                    e1: a.require("e1", kind)?,
                    e3: a.require("e3", kind)?,
                    e5: a.values.get("e5").copied(),
                    binary: a.binary,
                }
            }
            "maxpool" => {
                let a = Args::parse(line, kind, rest, &["k", "s"], false)?;
                LayerSpec::Maxpool { k: a.require("k", kind)?, stride: a.get_or("s", 1) }
            }
            "relu" => {
                Args::parse(line, kind, rest, &[], false)?;
                LayerSpec::Relu
            }
            "prelu" => {
                Args::parse(line, kind, rest, &[], false)?;
                LayerSpec::Prelu { init: PRELU_DEFAULT_INIT }
            }
            "fc" => {
                let a = Args::parse(line, kind, rest, &["out"], false)?;
                LayerSpec::FullyConnected { out: a.require("out", kind)? }
            }
            "softmax" => {
                Args::parse(line, kind, rest, &[], false)?;
                LayerSpec::Softmax
            }
            other => return Err(err(line, format!("unknown layer kind `{other}`"))),
        };
        layers.push(layer);
        layer_lines.push(line);
    }

    let input = input.ok_or_else(|| err(last_line.max(1), "missing `input CxHxW` declaration"))?;
    if layers.is_empty() {
        return Err(err(last_line.max(1), "network has no layers"));
    }

    // re-run propagation so shape errors point at their source line
    if let Err(e) = propagate(input, &layers) {
        if let Error::Shape(msg) = &e {
            if let Some(idx) = msg
                .strip_prefix("layer ")
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse::<usize>().ok())
            {
                return Err(err(layer_lines[idx], msg.clone()));
            }
        }
        return Err(e);
    }
    NetworkSpec::new(input, layers)
}

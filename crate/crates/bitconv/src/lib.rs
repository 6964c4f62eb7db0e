//! Micro-CNN inference and design toolkit for CPU-constrained targets.
//!
//! The crate bundles:
//!
//! - dense tensors plus full-precision reference kernels ([`tensor`], [`kernels`]);
//! - a bit-packed XNOR convolution path with popcount dot products ([`binary`]);
//! - a line-oriented network description format with squeeze/expand
//!   ("fire") composite layers, forward execution over the float or the
//!   binary path, and a compact weight file ([`net`]);
//! - a small full-precision trainer with gradient checking ([`train`]);
//! - a latency-vs-accuracy Pareto architecture search ([`search`]);
//! - a scanline region-proposal generator and end-to-end detector
//!   ([`detect`]), with PGM/PPM image I/O ([`pnm`]) and synthetic data
//!   generators ([`synth`]).
//!
//! Start with the runnable examples (`cargo run --example ...`); the
//! `bitconv` binary wraps the same entry points as subcommands.

pub mod binary;
pub mod error;
pub mod kernels;
pub mod net;
pub mod detect;
pub mod pnm;
pub mod search;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{channel_concat, Tensor};

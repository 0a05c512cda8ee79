//! Software twin of an infrared grain-probe pest monitor and its analysis stack.
//!
//! The crate simulates pest drops through a two-pair infrared beam gate,
//! reproduces the on-device trigger firmware over the resulting ADC streams,
//! curates the captured waveforms into labeled counting/species datasets, and
//! trains a device-conditioned transformer classifier on them.
//!
//! Module map:
//!
//! - [`optics`] — radiation intensity, shading geometry, layout coverage
//! - [`circuit`] — receiver voltages, RC response, ADC quantization, component tuning
//! - [`firmware`] — ring buffer, adaptive thresholds, jump triggers, acquisition loop
//! - [`dropsim`] — ground-truth drop scenarios and waveform synthesis
//! - [`curation`] — post-processing pipeline and dataset construction
//! - [`features`] — counting-task features and the feed-forward counting head
//! - [`cmmformer`] — the conditional-modification transformer for species identification
//! - [`metrics`] — sensitivity, trigger accuracy, and classification metrics
//! - [`config`] / [`cli`] — flat key-value run configs and the command surface
//!
//! Most example programs under `examples/` exercise one capability each; the
//! `pestsim` binary exposes the same capabilities as subcommands.

pub mod circuit;
pub mod cli;
pub mod cmmformer;
pub mod config;
pub mod curation;
pub mod dropsim;
pub mod features;
pub mod firmware;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod optics;

/// Crate-wide error type. Variants map onto the CLI exit-code classes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an operation's contract (index parity, shape, emptiness).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Component tuning has no solution; names the violated constraint.
    #[error("no feasible solution: {0}")]
    Infeasible(String),
    /// Malformed or unknown configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed data files or inconsistent datasets.
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

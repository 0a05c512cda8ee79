//! Species-identification model: a residual stack of conditional modification
//! blocks that project the input waveform through a weight matrix generated
//! from a sample of the device's black-sphere reference pool, apply learnable
//! positional encoding and multi-head attention over time, and aggregate
//! channels with multi-scale square kernels, followed by a small
//! classification head over the time-mean.
//!
//! Everything is f64 with hand-derived gradients; `grad_check` verifies the
//! backward pass against central finite differences.

mod ckpt;
mod model;
mod train;

pub use ckpt::{load_params, save_params, CKPT_MAGIC, CKPT_VERSION};
pub use model::{zero_channel_merge, Ablation, CmmModel, ForwardCache};
pub use train::{
    accuracy, evaluate, train, EpochStats, SpeciesData, SpeciesExample, TrainConfig, TrainHistory,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Mat;
use crate::{Error, Result};

/// ADC full scale used to bring raw count statistics to unit order before
/// they enter the projection generator.
pub const COUNT_SCALE: f64 = 4096.0;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Sequence length T (samples per channel).
    pub seq_len: usize,
    /// Input channels C.
    pub channels: usize,
    /// Expanded channels C' inside a block.
    pub expanded: usize,
    /// Number of conditional modification blocks.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Attention width; divisible by `heads`.
    pub d_model: usize,
    /// Ref-wave sample size k.
    pub k_ref: usize,
    /// Reference pool capacity N.
    pub pool_capacity: usize,
    /// Square kernel sizes of the cross-channel aggregation.
    pub kernel_scales: Vec<usize>,
    /// Output classes.
    pub classes: usize,
    /// Hidden width of the projection generator.
    pub gen_hidden: usize,
    /// Hidden width of the classification head.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 128,
            channels: 2,
            expanded: 16,
            layers: 2,
            heads: 4,
            d_model: 32,
            k_ref: 8,
            pool_capacity: 100,
            kernel_scales: vec![1, 3, 5],
            classes: 5,
            gen_hidden: 16,
            head_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_ref == 0 || self.k_ref > self.pool_capacity {
            return Err(Error::Config(format!(
                "ref sample size must satisfy 1 <= k <= N, got k={} N={}",
                self.k_ref, self.pool_capacity
            )));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "attention width {} must divide into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.kernel_scales.is_empty() || self.kernel_scales.iter().any(|&s| s == 0 || s % 2 == 0)
        {
            return Err(Error::Config(
                "kernel scales must be odd and nonzero (same-padding contract)".into(),
            ));
        }
        if self.seq_len == 0 || self.channels == 0 || self.expanded == 0 || self.classes == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        Ok(())
    }
}

/// A sampled set of reference waveforms, k × (T×C).
#[derive(Debug, Clone)]
pub struct RefWaves {
    pub waves: Vec<Mat>,
}

/// Uniform sampling without replacement from a device's reference pool.
/// Sampling with `k > N` is impossible by construction.
pub fn sample_refwaves(pool: &[Mat], k: usize, seed: u64) -> Result<RefWaves> {
    if k == 0 {
        return Err(Error::Contract("ref sample size must be at least 1".into()));
    }
    if k > pool.len() {
        return Err(Error::Contract(format!(
            "ref sample size {k} exceeds pool capacity {}",
            pool.len()
        )));
    }
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(k);
    Ok(RefWaves { waves: indices.into_iter().map(|i| pool[i].clone()).collect() })
}

/// Per-instance, per-channel standardization: `(x - mean) / max(sd, 1e-6)`.
/// Exactly idempotent on already-standardized input; a constant channel maps
/// to zeros.
pub fn normalize(x: &Mat) -> Mat {
    let (t, c) = (x.rows, x.cols);
    let mut out = Mat::zeros(t, c);
    for ch in 0..c {
        let mut mean = 0.0;
        for i in 0..t {
            mean += x.at(i, ch);
        }
        mean /= t as f64;
        let mut var = 0.0;
        for i in 0..t {
            let d = x.at(i, ch) - mean;
            var += d * d;
        }
        let sd = (var / t as f64).sqrt().max(1e-6);
        for i in 0..t {
            *out.at_mut(i, ch) = (x.at(i, ch) - mean) / sd;
        }
    }
    out
}

/// Pooled per-channel statistics of the Ref-waves: channel means then channel
/// standard deviations over all k×T samples, scaled to unit order. This is
/// the permutation-invariant summary the projection generator consumes, and
/// it is where device character (gain, offset) enters the model.
pub fn pool_statistics(refs: &RefWaves) -> Vec<f64> {
    assert!(!refs.waves.is_empty(), "empty ref sample");
    let c = refs.waves[0].cols;
    let mut out = vec![0.0; 2 * c];
    for ch in 0..c {
        let mut n = 0usize;
        let mut mean = 0.0;
        for w in &refs.waves {
            for i in 0..w.rows {
                mean += w.at(i, ch);
                n += 1;
            }
        }
        mean /= n as f64;
        let mut var = 0.0;
        for w in &refs.waves {
            for i in 0..w.rows {
                let d = w.at(i, ch) - mean;
                var += d * d;
            }
        }
        let sd = (var / n as f64).sqrt();
        out[ch] = mean / COUNT_SCALE;
        out[c + ch] = sd / COUNT_SCALE;
    }
    out
}

/// Raw counts of a record as a T×C matrix (channel 1 in column 0).
pub fn record_matrix(rec: &crate::firmware::WaveformRecord) -> Mat {
    let t = rec.ch1.len();
    let mut m = Mat::zeros(t, 2);
    for i in 0..t {
        *m.at_mut(i, 0) = rec.ch1[i] as f64;
        *m.at_mut(i, 1) = rec.ch2[i] as f64;
    }
    m
}

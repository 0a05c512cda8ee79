//! Counting-task feature extraction and the feed-forward counting head.
//!
//! Waveforms enter as baseline-subtracted counts (per-channel median removed)
//! so device offsets never leak into the features. The exported feature
//! vector order is a stable contract, documented at [`CountingFeatures`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::firmware::WaveformRecord;
use crate::nn::{cross_entropy, softmax, Adam, Mat, ParamStore, TensorId};
use crate::{Error, Result};

/// Default number of reduction bins per domain.
pub const DEFAULT_BINS: usize = 16;

/// The ten statistics computed for one channel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub energy: f64,
}

/// Linear-interpolation quantile of a sorted slice (R type-7 convention).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - h.floor()) * (sorted[hi] - sorted[lo])
}

/// Statistical moments of one sequence. Standardized-moment skewness and
/// excess kurtosis; both defined as zero for (near-)constant input so
/// downstream training never sees non-finite values.
pub fn stat_moments(xs: &[f64]) -> ChannelStats {
    assert!(!xs.is_empty(), "stat_moments of empty sequence");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let sd = m2.sqrt();
    let (skewness, kurtosis) = if m2 > 1e-12 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q25 = quantile_sorted(&sorted, 0.25);
    let q75 = quantile_sorted(&sorted, 0.75);
    ChannelStats {
        mean,
        sd,
        max: *sorted.last().unwrap(),
        median: quantile_sorted(&sorted, 0.5),
        q25,
        q75,
        iqr: q75 - q25,
        skewness,
        kurtosis,
        energy: xs.iter().map(|x| x * x).sum(),
    }
}

/// Per-channel baseline-subtracted samples of a record (median removed).
pub fn baseline_subtracted(record: &WaveformRecord) -> [Vec<f64>; 2] {
    let sub = |ch: &[u16]| -> Vec<f64> {
        let mut sorted: Vec<f64> = ch.iter().map(|&c| c as f64).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let baseline = quantile_sorted(&sorted, 0.5);
        ch.iter().map(|&c| c as f64 - baseline).collect()
    };
    [sub(&record.ch1), sub(&record.ch2)]
}

/// The ten statistics for both baseline-subtracted channels of a record.
pub fn stat_features(record: &WaveformRecord) -> Result<[ChannelStats; 2]> {
    if record.ch1.is_empty() || record.ch2.is_empty() {
        return Err(Error::Contract("record has an empty channel".into()));
    }
    let [a, b] = baseline_subtracted(record);
    Ok([stat_moments(&a), stat_moments(&b)])
}

/// Magnitudes of the full discrete Fourier transform of `xs`.
pub fn dft_magnitude(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        let w = -std::f64::consts::TAU * k as f64 / n as f64;
        for (t, &x) in xs.iter().enumerate() {
            let ang = w * t as f64;
            re += x * ang.cos();
            im += x * ang.sin();
        }
        out.push((re * re + im * im).sqrt());
    }
    out
}

/// Non-overlapping bin means over a sequence, edge-replicating when the
/// length does not divide evenly.
pub fn reduce_sequence(xs: &[f64], bins: usize) -> Vec<f64> {
    assert!(bins > 0 && !xs.is_empty());
    let per = xs.len().div_ceil(bins);
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut acc = 0.0;
        for k in 0..per {
            // Edge replication pads the tail when bins do not divide the length.
            acc += xs[(b * per + k).min(xs.len() - 1)];
        }
        out.push(acc / per as f64);
    }
    out
}

/// Time-domain and spectral reductions of both channels: bin means over the
/// baseline-subtracted samples, and bin means over the first half of the DFT
/// magnitude spectrum (the mirrored half excluded).
pub fn reduce(record: &WaveformRecord, bins: usize) -> Result<([Vec<f64>; 2], [Vec<f64>; 2])> {
    if record.ch1.is_empty() || record.ch2.is_empty() {
        return Err(Error::Contract("record has an empty channel".into()));
    }
    let chans = baseline_subtracted(record);
    let time = [reduce_sequence(&chans[0], bins), reduce_sequence(&chans[1], bins)];
    let freq = std::array::from_fn(|c| {
        let mag = dft_magnitude(&chans[c]);
        let half = &mag[..mag.len() / 2];
        reduce_sequence(half, bins)
    });
    Ok((time, freq))
}

/// Full counting feature vector of one record.
///
/// Stable column order: channel-1 stats (mean, sd, max, median, q25, q75,
/// iqr, skewness, kurtosis, energy), channel-2 stats, channel-1 time bins,
/// channel-2 time bins, channel-1 frequency bins, channel-2 frequency bins.
#[derive(Debug, Clone)]
pub struct CountingFeatures {
    pub stats: [ChannelStats; 2],
    pub time_reduced: [Vec<f64>; 2],
    pub freq_reduced: [Vec<f64>; 2],
}

impl CountingFeatures {
    pub fn from_record(record: &WaveformRecord, bins: usize) -> Result<Self> {
        let stats = stat_features(record)?;
        let (time_reduced, freq_reduced) = reduce(record, bins)?;
        Ok(Self { stats, time_reduced, freq_reduced })
    }

    pub fn dim(bins: usize) -> usize {
        20 + 4 * bins
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.time_reduced[0].len()));
        for s in &self.stats {
            v.extend_from_slice(&[
                s.mean, s.sd, s.max, s.median, s.q25, s.q75, s.iqr, s.skewness, s.kurtosis,
                s.energy,
            ]);
        }
        for ch in &self.time_reduced {
            v.extend_from_slice(ch);
        }
        for ch in &self.freq_reduced {
            v.extend_from_slice(ch);
        }
        v
    }

    /// CSV header matching `to_vec` order.
    pub fn csv_header(bins: usize) -> String {
        let mut cols = Vec::new();
        for c in 1..=2 {
            for s in
                ["mean", "sd", "max", "median", "q25", "q75", "iqr", "skewness", "kurtosis", "energy"]
            {
                cols.push(format!("ch{c}_{s}"));
            }
        }
        for c in 1..=2 {
            for b in 0..bins {
                cols.push(format!("ch{c}_time{b:02}"));
            }
        }
        for c in 1..=2 {
            for b in 0..bins {
                cols.push(format!("ch{c}_freq{b:02}"));
            }
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.to_vec().iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(",")
    }
}

/// Two-layer feed-forward counting head: standardized features → hidden
/// ReLU → 3 logits. The per-dimension normalizer comes from the training
/// set; it is part of the model, not of the optimizer state.
#[derive(Debug, Clone)]
pub struct CountingNet {
    pub params: ParamStore,
    pub in_dim: usize,
    pub hidden: usize,
    pub feat_center: Vec<f64>,
    pub feat_scale: Vec<f64>,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

pub const COUNTING_CLASSES: usize = 3;

impl CountingNet {
    pub fn new(in_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let sd1 = (2.0 / in_dim as f64).sqrt();
        let sd2 = (2.0 / hidden as f64).sqrt();
        let w1 = params.add("w1", Mat::randn(in_dim, hidden, sd1, &mut rng));
        let b1 = params.add("b1", Mat::zeros(1, hidden));
        let w2 = params.add("w2", Mat::randn(hidden, COUNTING_CLASSES, sd2, &mut rng));
        let b2 = params.add("b2", Mat::zeros(1, COUNTING_CLASSES));
        Self {
            params,
            in_dim,
            hidden,
            feat_center: vec![0.0; in_dim],
            feat_scale: vec![1.0; in_dim],
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Install the feature normalizer (per-dimension center and scale).
    pub fn set_normalizer(&mut self, center: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        if center.len() != self.in_dim || scale.len() != self.in_dim {
            return Err(Error::Contract("normalizer dimension mismatch".into()));
        }
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Contract("normalizer scales must be positive".into()));
        }
        self.feat_center = center;
        self.feat_scale = scale;
        Ok(())
    }

    /// Logits for one feature vector; a pure function of (features, params).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(&self.params, x)
    }

    fn forward_with(&self, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Contract(format!(
                "feature dimension {} does not match network input {}",
                x.len(),
                self.in_dim
            )));
        }
        let x_std = self.standardize(x);
        let z1 = self.hidden_with(params, &x_std);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let w2 = params.get(self.w2);
        let b2 = params.get(self.b2);
        let mut logits = b2.row(0).to_vec();
        for (j, &a) in a1.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for k in 0..COUNTING_CLASSES {
                logits[k] += a * w2.at(j, k);
            }
        }
        Ok(logits)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.feat_center[i]) / self.feat_scale[i])
            .collect()
    }

    fn hidden_with(&self, params: &ParamStore, x_std: &[f64]) -> Vec<f64> {
        let w1 = params.get(self.w1);
        let b1 = params.get(self.b1);
        let mut z1 = b1.row(0).to_vec();
        for (i, &xi) in x_std.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for j in 0..self.hidden {
                z1[j] += xi * w1.at(i, j);
            }
        }
        z1
    }

    /// Mean cross-entropy over a batch plus parameter gradients.
    pub fn loss_and_grads(
        &self,
        params: &ParamStore,
        batch: &[(Vec<f64>, usize)],
    ) -> Result<(f64, ParamStore)> {
        let mut grads = params.zeros_like();
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (x, label) in batch {
            let x_std = self.standardize(x);
            let x = &x_std;
            let z1 = self.hidden_with(params, x);
            let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
            let w2 = params.get(self.w2);
            let b2 = params.get(self.b2);
            let mut logits = b2.row(0).to_vec();
            for (j, &a) in a1.iter().enumerate() {
                for k in 0..COUNTING_CLASSES {
                    logits[k] += a * w2.at(j, k);
                }
            }
            let (loss, dlogits) = cross_entropy(&logits, *label);
            total += loss * scale;

            // Output layer.
            for k in 0..COUNTING_CLASSES {
                let g = dlogits[k] * scale;
                grads.get_mut(self.b2).data[k] += g;
            }
            for j in 0..self.hidden {
                if a1[j] == 0.0 {
                    continue;
                }
                for k in 0..COUNTING_CLASSES {
                    grads.get_mut(self.w2).data[j * COUNTING_CLASSES + k] +=
                        a1[j] * dlogits[k] * scale;
                }
            }
            // Hidden layer through the ReLU gate.
            let w2 = params.get(self.w2);
            let mut dz1 = vec![0.0; self.hidden];
            for (j, dz) in dz1.iter_mut().enumerate() {
                if z1[j] <= 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for k in 0..COUNTING_CLASSES {
                    acc += dlogits[k] * w2.at(j, k);
                }
                *dz = acc * scale;
            }
            for j in 0..self.hidden {
                grads.get_mut(self.b1).data[j] += dz1[j];
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for j in 0..self.hidden {
                    grads.get_mut(self.w1).data[i * self.hidden + j] += xi * dz1[j];
                }
            }
        }
        Ok((total, grads))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(&logits))
    }

    /// Rebuild a network around restored parameters (shape-checked by name).
    pub fn with_params(in_dim: usize, hidden: usize, restored: ParamStore) -> Result<Self> {
        let template = Self::new(in_dim, hidden, 0);
        if template.params.len() != restored.len()
            || template.params.tensor_count() != restored.tensor_count()
        {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, the {}x{} head needs {}",
                restored.len(),
                in_dim,
                hidden,
                template.params.len()
            )));
        }
        for ((tn, tt), (rn, rt)) in template.params.iter().zip(restored.iter()) {
            if tn != rn || tt.rows != rt.rows || tt.cols != rt.cols {
                return Err(Error::Data(format!(
                    "checkpoint tensor {rn} ({}x{}) does not match head tensor {tn} ({}x{})",
                    rt.rows, rt.cols, tt.rows, tt.cols
                )));
            }
        }
        Ok(Self { params: restored, ..template })
    }

    /// Maximum relative error of the analytic gradients against central
    /// finite differences on the given batch.
    pub fn grad_check(&mut self, batch: &[(Vec<f64>, usize)], n_params: usize, seed: u64) -> Result<f64> {
        let (_, analytic) = self.loss_and_grads(&self.params, batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.params.len();
        let mut indices: Vec<usize> = (0..len).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n_params.min(len));
        let net = self.clone();
        let err = crate::nn::grad_check_indices(&mut self.params, &analytic, &indices, 1e-5, |p| {
            net.loss_and_grads(p, batch).map(|(l, _)| l).unwrap_or(f64::NAN)
        });
        Ok(err)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).map(|(i, _)| i).unwrap_or(0)
}

/// Training settings for the counting head.
#[derive(Debug, Clone, Copy)]
pub struct CountingTrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CountingTrainConfig {
    fn default() -> Self {
        Self { hidden: 64, lr: 1e-3, batch_size: 16, epochs: 60, seed: 7 }
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CountingHistory {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Train the counting head with softmax cross-entropy and the
/// adaptive-moment optimizer; deterministic for a given seed.
pub fn counting_train(
    data: &[(Vec<f64>, usize)],
    cfg: &CountingTrainConfig,
) -> Result<(CountingNet, CountingHistory)> {
    if data.is_empty() {
        return Err(Error::Data("empty counting training set".into()));
    }
    let in_dim = data[0].0.len();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != in_dim) {
        return Err(Error::Contract(format!(
            "inconsistent feature dimensions: {} vs {}",
            x.len(),
            in_dim
        )));
    }
    let mut net = CountingNet::new(in_dim, cfg.hidden, cfg.seed);
    // Per-dimension standardization from the training set keeps features of
    // wildly different magnitudes (energy vs skewness) on one footing.
    let n = data.len() as f64;
    let mut center = vec![0.0; in_dim];
    for (x, _) in data {
        for (c, v) in center.iter_mut().zip(x) {
            *c += v / n;
        }
    }
    let mut scale = vec![0.0; in_dim];
    for (x, _) in data {
        for (i, v) in x.iter().enumerate() {
            scale[i] += (v - center[i]) * (v - center[i]) / n;
        }
    }
    for s in &mut scale {
        *s = s.sqrt().max(1e-9);
    }
    net.set_normalizer(center, scale)?;
    let mut opt = Adam::new(cfg.lr, net.params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5151);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Vec<f64>, usize)> =
                chunk.iter().map(|&i| (data[i].0.clone(), data[i].1)).collect();
            let (loss, grads) = net.loss_and_grads(&net.params, &batch)?;
            opt.step(&mut net.params, &grads)?;
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    let correct = data
        .iter()
        .filter(|(x, label)| net.predict(x).map(|p| p == *label).unwrap_or(false))
        .count();
    let history = CountingHistory { epoch_losses, train_accuracy: correct as f64 / data.len() as f64 };
    Ok((net, history))
}

/// Softmax probabilities of the counting head for one input.
pub fn counting_probabilities(net: &CountingNet, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&net.forward(x)?))
}

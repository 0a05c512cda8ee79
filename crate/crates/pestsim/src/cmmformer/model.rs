//! Forward and hand-derived backward passes of the conditional modification
//! stack. The layer math, per block with input `H` (T×C):
//!
//! 1. the projection generator maps pooled Ref-wave statistics through a tanh
//!    layer to a C×C' weight matrix `W`;
//! 2. `H~ = H W`, then `E = H~ + P` with learnable positional embeddings;
//! 3. multi-head scaled dot-product attention over the time axis at width
//!    `d_model`, entered and left through learned linear maps;
//! 4. square kernels at several scales convolve the T×C' plane
//!    (same-padding), their outputs are averaged, and a channel-merge map
//!    returns to T×C;
//! 5. the block output adds to `H` residually.
//!
//! The head consumes the time-mean of the final residual stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normalize, pool_statistics, ModelConfig, RefWaves};
use crate::nn::{cross_entropy, grad_check_indices, Mat, ParamStore, TensorId};
use crate::{Error, Result};

/// Component knockouts for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Replace the generated projection with a constant identity padding.
    Cmm,
    /// Drop the learnable positional embeddings.
    PosEnc,
    /// Bypass the attention sub-block.
    Attention,
    /// Use only the smallest kernel instead of the multi-scale average.
    Aggregation,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Ablation::None,
            "cmm" => Ablation::Cmm,
            "pos_enc" => Ablation::PosEnc,
            "attention" => Ablation::Attention,
            "aggregation" => Ablation::Aggregation,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}; expected cmm|pos_enc|attention|aggregation"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    gen_w1: TensorId,
    gen_b1: TensorId,
    gen_w2: TensorId,
    gen_b2: TensorId,
    pos: TensorId,
    attn_in: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    wo: TensorId,
    attn_out: TensorId,
    merge: TensorId,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

/// The species model: config, parameters, and tensor handles.
#[derive(Debug, Clone)]
pub struct CmmModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    layers: Vec<LayerIds>,
    kernel_ids: Vec<Vec<TensorId>>,
    head: HeadIds,
}

/// Identity-padded C×C' projection: channel c passes through to column c.
fn identity_padded(c: usize, c_prime: usize) -> Mat {
    let mut w = Mat::zeros(c, c_prime);
    for i in 0..c.min(c_prime) {
        *w.at_mut(i, i) = 1.0;
    }
    w
}

impl CmmModel {
    /// Seeded initialization. The generator's bias starts at the identity
    /// padding so training begins near the unconditioned projection.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (c, cp, d, g) = (cfg.channels, cfg.expanded, cfg.d_model, cfg.gen_hidden);
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut kernel_ids = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let sd_g1 = 0.5 / (2.0 * c as f64).sqrt();
            let gen_w1 = params.add(format!("l{l}.gen_w1"), Mat::randn(2 * c, g, sd_g1, &mut rng));
            let gen_b1 = params.add(format!("l{l}.gen_b1"), Mat::zeros(1, g));
            let sd_g2 = 0.1 / (g as f64).sqrt();
            let gen_w2 =
                params.add(format!("l{l}.gen_w2"), Mat::randn(g, c * cp, sd_g2, &mut rng));
            let ident = identity_padded(c, cp);
            let gen_b2 =
                params.add(format!("l{l}.gen_b2"), Mat::from_vec(1, c * cp, ident.data.clone()));
            let pos = params.add(format!("l{l}.pos"), Mat::randn(cfg.seq_len, cp, 0.02, &mut rng));
            let attn_in =
                params.add(format!("l{l}.attn_in"), Mat::randn(cp, d, 1.0 / (cp as f64).sqrt(), &mut rng));
            let sd_d = 1.0 / (d as f64).sqrt();
            let wq = params.add(format!("l{l}.wq"), Mat::randn(d, d, sd_d, &mut rng));
            let wk = params.add(format!("l{l}.wk"), Mat::randn(d, d, sd_d, &mut rng));
            let wv = params.add(format!("l{l}.wv"), Mat::randn(d, d, sd_d, &mut rng));
            let wo = params.add(format!("l{l}.wo"), Mat::randn(d, d, sd_d, &mut rng));
            let attn_out =
                params.add(format!("l{l}.attn_out"), Mat::randn(d, cp, sd_d, &mut rng));
            let mut kids = Vec::new();
            for &s in &cfg.kernel_scales {
                // Start near a delta kernel so the aggregation is initially
                // close to a pass-through.
                let mut k = Mat::randn(s, s, 0.02, &mut rng);
                *k.at_mut(s / 2, s / 2) += 1.0;
                kids.push(params.add(format!("l{l}.kernel{s}"), k));
            }
            let merge = params.add(format!("l{l}.merge"), Mat::randn(cp, c, 0.05, &mut rng));
            layers.push(LayerIds {
                gen_w1,
                gen_b1,
                gen_w2,
                gen_b2,
                pos,
                attn_in,
                wq,
                wk,
                wv,
                wo,
                attn_out,
                merge,
            });
            kernel_ids.push(kids);
        }
        let head = HeadIds {
            w1: params.add("head.w1", Mat::randn(c, cfg.head_hidden, 0.5, &mut rng)),
            b1: params.add("head.b1", Mat::zeros(1, cfg.head_hidden)),
            w2: params.add(
                "head.w2",
                Mat::randn(cfg.head_hidden, cfg.classes, 1.0 / (cfg.head_hidden as f64).sqrt(), &mut rng),
            ),
            b2: params.add("head.b2", Mat::zeros(1, cfg.classes)),
        };
        Ok(Self { cfg, params, layers, kernel_ids, head })
    }

    /// Rebuild a model around restored parameters (shape-checked by name).
    pub fn from_params(cfg: ModelConfig, restored: ParamStore) -> Result<Self> {
        let template = Self::new(cfg.clone(), 0)?;
        if template.params.len() != restored.len() || template.params.tensor_count() != restored.tensor_count() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters in {} tensors, expected {} in {}",
                restored.len(),
                restored.tensor_count(),
                template.params.len(),
                template.params.tensor_count()
            )));
        }
        for ((tn, tt), (rn, rt)) in template.params.iter().zip(restored.iter()) {
            if tn != rn || tt.rows != rt.rows || tt.cols != rt.cols {
                return Err(Error::Data(format!(
                    "checkpoint tensor {rn} ({}x{}) does not match model tensor {tn} ({}x{})",
                    rt.rows, rt.cols, tt.rows, tt.cols
                )));
            }
        }
        Ok(Self { params: restored, ..template })
    }

    /// One conditional modification block applied to a residual-stream state:
    /// returns `H_next = H + block(H, Ref-waves)`.
    pub fn block_forward(&self, layer: usize, h: &Mat, refs: &RefWaves) -> Result<Mat> {
        if layer >= self.cfg.layers {
            return Err(Error::Contract(format!(
                "layer {layer} out of range ({} blocks)",
                self.cfg.layers
            )));
        }
        if h.rows != self.cfg.seq_len || h.cols != self.cfg.channels {
            return Err(Error::Contract(format!(
                "residual state is {}x{}, model expects {}x{}",
                h.rows, h.cols, self.cfg.seq_len, self.cfg.channels
            )));
        }
        let stats = pool_statistics(refs);
        let cache =
            self.layer_forward(&self.params, layer, &self.layers[layer], h, &stats, Ablation::None);
        Ok(cache.h_out)
    }

    /// Logits for a raw waveform and a Ref-wave sample.
    pub fn forward(&self, x: &Mat, refs: &RefWaves) -> Result<Vec<f64>> {
        let (logits, _) = self.forward_cached(&self.params, x, refs, Ablation::None)?;
        Ok(logits)
    }

    /// Forward pass keeping every intermediate for the backward pass and for
    /// inspection (attention probabilities, residual stream).
    pub fn forward_cached(
        &self,
        params: &ParamStore,
        x: &Mat,
        refs: &RefWaves,
        ablation: Ablation,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let stats = pool_statistics(refs);
        self.forward_stats(params, x, &stats, ablation)
    }

    /// Forward pass from precomputed pool statistics.
    pub fn forward_stats(
        &self,
        params: &ParamStore,
        x: &Mat,
        pool_stats: &[f64],
        ablation: Ablation,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let cfg = &self.cfg;
        if x.rows != cfg.seq_len || x.cols != cfg.channels {
            return Err(Error::Contract(format!(
                "input is {}x{}, model expects {}x{}",
                x.rows, x.cols, cfg.seq_len, cfg.channels
            )));
        }
        if pool_stats.len() != 2 * cfg.channels {
            return Err(Error::Contract(format!(
                "pool statistics length {} != {}",
                pool_stats.len(),
                2 * cfg.channels
            )));
        }
        let h0 = normalize(x);
        let mut h = h0.clone();
        let mut layer_caches = Vec::with_capacity(cfg.layers);
        for (l, ids) in self.layers.iter().enumerate() {
            let cache = self.layer_forward(params, l, ids, &h, pool_stats, ablation);
            let h_next = cache.h_out.clone();
            layer_caches.push(cache);
            h = h_next;
        }
        // Head over the time-mean of the residual stream.
        let c = cfg.channels;
        let mut hbar = vec![0.0; c];
        for i in 0..cfg.seq_len {
            for ch in 0..c {
                hbar[ch] += h.at(i, ch);
            }
        }
        for v in &mut hbar {
            *v /= cfg.seq_len as f64;
        }
        let w1 = params.get(self.head.w1);
        let b1 = params.get(self.head.b1);
        let mut z1 = b1.row(0).to_vec();
        for (ch, &hv) in hbar.iter().enumerate() {
            for j in 0..cfg.head_hidden {
                z1[j] += hv * w1.at(ch, j);
            }
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let w2 = params.get(self.head.w2);
        let b2 = params.get(self.head.b2);
        let mut logits = b2.row(0).to_vec();
        for (j, &a) in a1.iter().enumerate() {
            for k in 0..cfg.classes {
                logits[k] += a * w2.at(j, k);
            }
        }
        let cache = ForwardCache { h0, layers: layer_caches, h_final: h, hbar, z1 };
        Ok((logits, cache))
    }

    fn layer_forward(
        &self,
        params: &ParamStore,
        layer: usize,
        ids: &LayerIds,
        h_in: &Mat,
        pool_stats: &[f64],
        ablation: Ablation,
    ) -> LayerCache {
        let cfg = &self.cfg;
        let (t, cp, d) = (cfg.seq_len, cfg.expanded, cfg.d_model);

        // (a) Projection generator: pooled stats -> W in C x C'.
        let (w, g1) = if ablation == Ablation::Cmm {
            (identity_padded(cfg.channels, cp), Vec::new())
        } else {
            let gen_w1 = params.get(ids.gen_w1);
            let gen_b1 = params.get(ids.gen_b1);
            let mut zg = gen_b1.row(0).to_vec();
            for (i, &sv) in pool_stats.iter().enumerate() {
                for j in 0..cfg.gen_hidden {
                    zg[j] += sv * gen_w1.at(i, j);
                }
            }
            let g1: Vec<f64> = zg.iter().map(|z| z.tanh()).collect();
            let gen_w2 = params.get(ids.gen_w2);
            let gen_b2 = params.get(ids.gen_b2);
            let mut wvec = gen_b2.row(0).to_vec();
            for (i, &gv) in g1.iter().enumerate() {
                for j in 0..cfg.channels * cp {
                    wvec[j] += gv * gen_w2.at(i, j);
                }
            }
            (Mat::from_vec(cfg.channels, cp, wvec), g1)
        };

        // (b) Channel expansion and (c) positional encoding.
        let ht = h_in.matmul(&w);
        let mut e = ht.clone();
        if ablation != Ablation::PosEnc {
            e.add_assign(params.get(ids.pos));
        }

        // (d) Multi-head attention over the time axis.
        let (u, attn) = if ablation == Ablation::Attention {
            (e.clone(), None)
        } else {
            let a = e.matmul(params.get(ids.attn_in));
            let q = a.matmul(params.get(ids.wq));
            let k = a.matmul(params.get(ids.wk));
            let v = a.matmul(params.get(ids.wv));
            let dk = d / cfg.heads;
            let scale = 1.0 / (dk as f64).sqrt();
            let mut o = Mat::zeros(t, d);
            let mut probs = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let qh = col_block(&q, head * dk, dk);
                let kh = col_block(&k, head * dk, dk);
                let vh = col_block(&v, head * dk, dk);
                let mut scores = qh.matmul_nt(&kh);
                scores.scale(scale);
                let p = softmax_rows(&scores);
                let oh = p.matmul(&vh);
                set_col_block(&mut o, head * dk, &oh);
                probs.push(p);
            }
            let m = o.matmul(params.get(ids.wo));
            let u = m.matmul(params.get(ids.attn_out));
            (u, Some(AttnCache { a, q, k, v, probs, o, m }))
        };

        // (e) Multi-scale cross-channel aggregation.
        let kernels = self.active_kernels(layer, ablation);
        let mut g_avg = Mat::zeros(t, cp);
        for &kid in &kernels {
            let conv = conv2_same(&u, params.get(kid));
            g_avg.add_assign(&conv);
        }
        g_avg.scale(1.0 / kernels.len() as f64);

        // (f) Channel merge and residual add.
        let out = g_avg.matmul(params.get(ids.merge));
        let mut h_out = h_in.clone();
        h_out.add_assign(&out);

        LayerCache { g1, w, h_in: h_in.clone(), ht, e, attn, u, g_avg, h_out }
    }

    fn active_kernels(&self, layer: usize, ablation: Ablation) -> Vec<TensorId> {
        if ablation == Ablation::Aggregation {
            vec![self.kernel_ids[layer][0]]
        } else {
            self.kernel_ids[layer].clone()
        }
    }

    /// Mean cross-entropy over a batch and the parameter gradients.
    ///
    /// `batch` pairs a raw input with its device's pooled Ref-wave statistics
    /// and a label.
    pub fn loss_and_grads(
        &self,
        params: &ParamStore,
        batch: &[(Mat, Vec<f64>, usize)],
        ablation: Ablation,
    ) -> Result<(f64, ParamStore)> {
        let mut grads = params.zeros_like();
        let mut total = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (x, stats, label) in batch {
            let (logits, cache) = self.forward_stats(params, x, stats, ablation)?;
            let (loss, mut dlogits) = cross_entropy(&logits, *label);
            total += loss * scale;
            for g in &mut dlogits {
                *g *= scale;
            }
            self.backward(params, &cache, stats, &dlogits, ablation, &mut grads);
        }
        Ok((total, grads))
    }

    fn backward(
        &self,
        params: &ParamStore,
        cache: &ForwardCache,
        pool_stats: &[f64],
        dlogits: &[f64],
        ablation: Ablation,
        grads: &mut ParamStore,
    ) {
        let cfg = &self.cfg;
        let (t, c, cp, d) = (cfg.seq_len, cfg.channels, cfg.expanded, cfg.d_model);

        // Head.
        let a1: Vec<f64> = cache.z1.iter().map(|&z| z.max(0.0)).collect();
        for (j, &a) in a1.iter().enumerate() {
            for k in 0..cfg.classes {
                grads.get_mut(self.head.w2).data[j * cfg.classes + k] += a * dlogits[k];
            }
        }
        for k in 0..cfg.classes {
            grads.get_mut(self.head.b2).data[k] += dlogits[k];
        }
        let w2 = params.get(self.head.w2);
        let mut dz1 = vec![0.0; cfg.head_hidden];
        for (j, dz) in dz1.iter_mut().enumerate() {
            if cache.z1[j] <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..cfg.classes {
                acc += dlogits[k] * w2.at(j, k);
            }
            *dz = acc;
        }
        for ch in 0..c {
            for j in 0..cfg.head_hidden {
                grads.get_mut(self.head.w1).data[ch * cfg.head_hidden + j] +=
                    cache.hbar[ch] * dz1[j];
            }
        }
        for j in 0..cfg.head_hidden {
            grads.get_mut(self.head.b1).data[j] += dz1[j];
        }
        let w1 = params.get(self.head.w1);
        let mut dhbar = vec![0.0; c];
        for (ch, dv) in dhbar.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..cfg.head_hidden {
                acc += dz1[j] * w1.at(ch, j);
            }
            *dv = acc;
        }
        let mut dh = Mat::zeros(t, c);
        for i in 0..t {
            for ch in 0..c {
                *dh.at_mut(i, ch) = dhbar[ch] / t as f64;
            }
        }

        // Blocks in reverse.
        for (l, ids) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let dout = dh.clone(); // residual branch
            let mut dh_in = dh; // skip path

            // Channel merge.
            let dmerge = lc.g_avg.matmul_tn(&dout);
            grads.get_mut(ids.merge).add_assign(&dmerge);
            let dg_avg = dout.matmul_nt(params.get(ids.merge));

            // Multi-scale aggregation.
            let kernels = self.active_kernels(l, ablation);
            let mut du = Mat::zeros(t, cp);
            let per = 1.0 / kernels.len() as f64;
            let mut dv_s = dg_avg;
            dv_s.scale(per);
            for &kid in &kernels {
                let kmat = params.get(kid);
                du.add_assign(&conv2_same_backward_input(&dv_s, kmat));
                let dk = conv2_same_backward_kernel(&dv_s, &lc.u, kmat.rows);
                grads.get_mut(kid).add_assign(&dk);
            }

            // Attention (or identity bypass).
            let mut de = if ablation == Ablation::Attention {
                du
            } else {
                let attn = lc.attn.as_ref().expect("attention cache");
                let dm = du.matmul_nt(params.get(ids.attn_out));
                grads.get_mut(ids.attn_out).add_assign(&attn.m.matmul_tn(&du));
                let do_ = dm.matmul_nt(params.get(ids.wo));
                grads.get_mut(ids.wo).add_assign(&attn.o.matmul_tn(&dm));

                let dk_head = d / cfg.heads;
                let scale = 1.0 / (dk_head as f64).sqrt();
                let mut dq = Mat::zeros(t, d);
                let mut dk_mat = Mat::zeros(t, d);
                let mut dv_mat = Mat::zeros(t, d);
                for head in 0..cfg.heads {
                    let off = head * dk_head;
                    let doh = col_block(&do_, off, dk_head);
                    let qh = col_block(&attn.q, off, dk_head);
                    let kh = col_block(&attn.k, off, dk_head);
                    let vh = col_block(&attn.v, off, dk_head);
                    let p = &attn.probs[head];
                    let dp = doh.matmul_nt(&vh);
                    let dvh = p.matmul_tn(&doh);
                    // Softmax backward, rowwise.
                    let mut ds = Mat::zeros(t, t);
                    for i in 0..t {
                        let prow = p.row(i);
                        let dprow = dp.row(i);
                        let dot: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
                        for j in 0..t {
                            ds.data[i * t + j] = prow[j] * (dprow[j] - dot);
                        }
                    }
                    ds.scale(scale);
                    let dqh = ds.matmul(&kh);
                    let dkh = ds.matmul_tn(&qh);
                    set_col_block(&mut dq, off, &dqh);
                    set_col_block(&mut dk_mat, off, &dkh);
                    set_col_block(&mut dv_mat, off, &dvh);
                }
                grads.get_mut(ids.wq).add_assign(&attn.a.matmul_tn(&dq));
                grads.get_mut(ids.wk).add_assign(&attn.a.matmul_tn(&dk_mat));
                grads.get_mut(ids.wv).add_assign(&attn.a.matmul_tn(&dv_mat));
                let mut da = dq.matmul_nt(params.get(ids.wq));
                da.add_assign(&dk_mat.matmul_nt(params.get(ids.wk)));
                da.add_assign(&dv_mat.matmul_nt(params.get(ids.wv)));
                grads.get_mut(ids.attn_in).add_assign(&lc.e.matmul_tn(&da));
                da.matmul_nt(params.get(ids.attn_in))
            };

            // Positional embeddings and the projection.
            if ablation != Ablation::PosEnc {
                grads.get_mut(ids.pos).add_assign(&de);
            }
            let dht = &mut de; // same tensor: dE/dH~ is the identity
            let dw = lc.h_in.matmul_tn(dht);
            dh_in.add_assign(&dht.matmul_nt(&lc.w));

            if ablation != Ablation::Cmm {
                // Generator backward: dW flattens into the bias/weight path.
                let dwvec = dw.data;
                let gen_w2 = params.get(ids.gen_w2);
                let mut dg1 = vec![0.0; cfg.gen_hidden];
                for (i, dgv) in dg1.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..c * cp {
                        acc += dwvec[j] * gen_w2.at(i, j);
                    }
                    *dgv = acc;
                }
                for (i, &gv) in lc.g1.iter().enumerate() {
                    for j in 0..c * cp {
                        grads.get_mut(ids.gen_w2).data[i * (c * cp) + j] += gv * dwvec[j];
                    }
                }
                for (j, &dv) in dwvec.iter().enumerate() {
                    grads.get_mut(ids.gen_b2).data[j] += dv;
                }
                let dzg: Vec<f64> =
                    dg1.iter().zip(&lc.g1).map(|(dg, g)| dg * (1.0 - g * g)).collect();
                for (i, &sv) in pool_stats.iter().enumerate() {
                    for j in 0..cfg.gen_hidden {
                        grads.get_mut(ids.gen_w1).data[i * cfg.gen_hidden + j] += sv * dzg[j];
                    }
                }
                for (j, &dz) in dzg.iter().enumerate() {
                    grads.get_mut(ids.gen_b1).data[j] += dz;
                }
            }

            dh = dh_in;
        }
    }

    /// Central finite differences against the analytic gradients on a random
    /// subset of at least `n_params` parameters. Returns the max relative
    /// error.
    pub fn grad_check(
        &mut self,
        batch: &[(Mat, Vec<f64>, usize)],
        n_params: usize,
        step: f64,
        seed: u64,
    ) -> Result<f64> {
        let (_, analytic) = self.loss_and_grads(&self.params, batch, Ablation::None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..self.params.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n_params.min(self.params.len()));
        let model = self.clone();
        let err = grad_check_indices(&mut self.params, &analytic, &indices, step, |p| {
            model.loss_and_grads(p, batch, Ablation::None).map(|(l, _)| l).unwrap_or(f64::NAN)
        });
        Ok(err)
    }
}

/// Zero every channel-merge map: the residual stream then passes through the
/// stack unchanged and the logits depend only on the head.
pub fn zero_channel_merge(params: &mut ParamStore) {
    params.for_each_tensor_mut(|name, t| {
        if name.ends_with(".merge") {
            for v in &mut t.data {
                *v = 0.0;
            }
        }
    });
}

struct AttnCache {
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    o: Mat,
    m: Mat,
}

/// Everything the backward pass and the tests need from one forward pass.
pub struct ForwardCache {
    pub h0: Mat,
    layers: Vec<LayerCache>,
    pub h_final: Mat,
    pub hbar: Vec<f64>,
    z1: Vec<f64>,
}

impl ForwardCache {
    /// Attention probability rows of one block, one matrix per head.
    pub fn attention_probs(&self, layer: usize) -> Option<&[Mat]> {
        self.layers[layer].attn.as_ref().map(|a| a.probs.as_slice())
    }

    /// The projection matrix the generator produced for one block.
    pub fn projection(&self, layer: usize) -> &Mat {
        &self.layers[layer].w
    }
}

struct LayerCache {
    g1: Vec<f64>,
    w: Mat,
    h_in: Mat,
    #[allow(dead_code)]
    ht: Mat,
    e: Mat,
    attn: Option<AttnCache>,
    u: Mat,
    g_avg: Mat,
    h_out: Mat,
}

fn col_block(m: &Mat, offset: usize, width: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, width);
    for i in 0..m.rows {
        out.data[i * width..(i + 1) * width]
            .copy_from_slice(&m.data[i * m.cols + offset..i * m.cols + offset + width]);
    }
    out
}

fn set_col_block(m: &mut Mat, offset: usize, block: &Mat) {
    for i in 0..m.rows {
        m.data[i * m.cols + offset..i * m.cols + offset + block.cols]
            .copy_from_slice(&block.data[i * block.cols..(i + 1) * block.cols]);
    }
}

fn softmax_rows(scores: &Mat) -> Mat {
    let mut out = Mat::zeros(scores.rows, scores.cols);
    for i in 0..scores.rows {
        let row = scores.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..scores.cols {
            let e = (row[j] - max).exp();
            out.data[i * scores.cols + j] = e;
            sum += e;
        }
        for j in 0..scores.cols {
            out.data[i * scores.cols + j] /= sum;
        }
    }
    out
}

/// 2-D convolution of a single-plane image with same (zero) padding.
fn conv2_same(img: &Mat, kernel: &Mat) -> Mat {
    let (h, w) = (img.rows, img.cols);
    let s = kernel.rows;
    let off = s / 2;
    let mut out = Mat::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for p in 0..s {
                let y = i + p;
                if y < off || y - off >= h {
                    continue;
                }
                for q in 0..s {
                    let x = j + q;
                    if x < off || x - off >= w {
                        continue;
                    }
                    acc += img.at(y - off, x - off) * kernel.at(p, q);
                }
            }
            out.data[i * w + j] = acc;
        }
    }
    out
}

/// Gradient of `conv2_same` w.r.t. the image (full correlation with the kernel).
fn conv2_same_backward_input(dout: &Mat, kernel: &Mat) -> Mat {
    let (h, w) = (dout.rows, dout.cols);
    let s = kernel.rows;
    let off = s / 2;
    let mut dimg = Mat::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let d = dout.at(i, j);
            if d == 0.0 {
                continue;
            }
            for p in 0..s {
                let y = i + p;
                if y < off || y - off >= h {
                    continue;
                }
                for q in 0..s {
                    let x = j + q;
                    if x < off || x - off >= w {
                        continue;
                    }
                    *dimg.at_mut(y - off, x - off) += d * kernel.at(p, q);
                }
            }
        }
    }
    dimg
}

/// Gradient of `conv2_same` w.r.t. the kernel.
fn conv2_same_backward_kernel(dout: &Mat, img: &Mat, kernel_size: usize) -> Mat {
    let (h, w) = (img.rows, img.cols);
    let s = kernel_size;
    let off = s / 2;
    let mut dk = Mat::zeros(s, s);
    for p in 0..s {
        for q in 0..s {
            let mut acc = 0.0;
            for i in 0..h {
                let y = i + p;
                if y < off || y - off >= h {
                    continue;
                }
                for j in 0..w {
                    let x = j + q;
                    if x < off || x - off >= w {
                        continue;
                    }
                    acc += dout.at(i, j) * img.at(y - off, x - off);
                }
            }
            *dk.at_mut(p, q) = acc;
        }
    }
    dk
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            seq_len: 24,
            channels: 2,
            expanded: 6,
            layers: 2,
            heads: 2,
            d_model: 8,
            k_ref: 3,
            pool_capacity: 4,
            kernel_scales: vec![1, 3],
            classes: 5,
            gen_hidden: 5,
            head_hidden: 7,
        }
    }

    fn random_batch(
        cfg: &ModelConfig,
        n: usize,
        seed: u64,
    ) -> Vec<(Mat, Vec<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut x = Mat::zeros(cfg.seq_len, cfg.channels);
                for v in &mut x.data {
                    *v = 2000.0 + rng.gen_range(-300.0..300.0);
                }
                let stats: Vec<f64> =
                    (0..2 * cfg.channels).map(|_| rng.gen_range(0.0..0.8)).collect();
                (x, stats, rng.gen_range(0..cfg.classes))
            })
            .collect()
    }

    #[test]
    fn logits_have_expected_arity_and_are_finite() {
        let model = CmmModel::new(small_cfg(), 1).unwrap();
        let batch = random_batch(&model.cfg, 1, 2);
        let (logits, _) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        assert_eq!(logits.len(), 5);
        assert!(logits.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = CmmModel::new(small_cfg(), 3).unwrap();
        let batch = random_batch(&model.cfg, 1, 4);
        let (a, _) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        let (b, _) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_identity_with_zeroed_merge_maps() {
        let mut model = CmmModel::new(small_cfg(), 5).unwrap();
        zero_channel_merge(&mut model.params);
        let batch = random_batch(&model.cfg, 2, 6);
        let (logits_a, cache_a) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        // The residual stream passes through unchanged, bit for bit.
        assert_eq!(cache_a.h0.data, cache_a.h_final.data);
        // Per-channel z-scoring zeroes the time-mean, so the head sees the
        // same (zero) input for any waveform: logits depend only on the head.
        let (logits_b, cache_b) = model
            .forward_stats(&model.params, &batch[1].0, &batch[1].1, Ablation::None)
            .unwrap();
        assert_eq!(cache_b.h0.data, cache_b.h_final.data);
        for (a, b) in logits_a.iter().zip(&logits_b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_probability_vectors() {
        let model = CmmModel::new(small_cfg(), 7).unwrap();
        let batch = random_batch(&model.cfg, 1, 8);
        let (_, cache) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        for layer in 0..model.cfg.layers {
            let probs = cache.attention_probs(layer).expect("attention ran");
            assert_eq!(probs.len(), model.cfg.heads);
            for p in probs {
                for i in 0..p.rows {
                    let row = p.row(i);
                    assert!(row.iter().all(|&v| v >= 0.0));
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "row sums to {sum}");
                }
            }
        }
    }

    #[test]
    fn different_pool_statistics_give_different_projections() {
        let model = CmmModel::new(small_cfg(), 9).unwrap();
        let batch = random_batch(&model.cfg, 1, 10);
        let stats_a = vec![0.45, 0.47, 0.08, 0.09];
        let stats_b = vec![0.58, 0.61, 0.11, 0.12];
        let (_, cache_a) =
            model.forward_stats(&model.params, &batch[0].0, &stats_a, Ablation::None).unwrap();
        let (_, cache_b) =
            model.forward_stats(&model.params, &batch[0].0, &stats_b, Ablation::None).unwrap();
        let wa = &cache_a.layers[0].w;
        let wb = &cache_b.layers[0].w;
        let diff: f64 = wa.data.iter().zip(&wb.data).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-9, "projection matrices unexpectedly identical");
    }

    #[test]
    fn time_permutation_changes_logits_when_positional_encoding_is_on() {
        let model = CmmModel::new(small_cfg(), 11).unwrap();
        let batch = random_batch(&model.cfg, 1, 12);
        let x = &batch[0].0;
        let mut permuted = x.clone();
        // Reverse the time axis.
        for i in 0..x.rows {
            for c in 0..x.cols {
                *permuted.at_mut(i, c) = x.at(x.rows - 1 - i, c);
            }
        }
        let (a, _) =
            model.forward_stats(&model.params, x, &batch[0].1, Ablation::None).unwrap();
        let (b, _) =
            model.forward_stats(&model.params, &permuted, &batch[0].1, Ablation::None).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "logits insensitive to time permutation");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = CmmModel::new(small_cfg(), 13).unwrap();
        let batch = random_batch(&model.cfg, 3, 14);
        let err = model.grad_check(&batch, 250, 1e-5, 15).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences_under_ablations() {
        // The ablated forward paths must stay consistent with their backward
        // passes too; checked on a few parameters each.
        for ablation in [Ablation::PosEnc, Ablation::Attention, Ablation::Aggregation] {
            let model = CmmModel::new(small_cfg(), 16).unwrap();
            let batch = random_batch(&model.cfg, 2, 17);
            let (_, analytic) = model.loss_and_grads(&model.params, &batch, ablation).unwrap();
            let mut params = model.params.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(18);
            let mut indices: Vec<usize> = (0..params.len()).collect();
            indices.shuffle(&mut rng);
            indices.truncate(60);
            let m2 = model.clone();
            let err =
                grad_check_indices(&mut params, &analytic, &indices, 1e-5, |p| {
                    m2.loss_and_grads(p, &batch, ablation).map(|(l, _)| l).unwrap_or(f64::NAN)
                });
            assert!(err < 1e-4, "{ablation:?}: max relative error {err}");
        }
    }

    #[test]
    fn zero_input_batch_keeps_gradients_finite() {
        let mut model = CmmModel::new(small_cfg(), 19).unwrap();
        let cfg = model.cfg.clone();
        let batch = vec![(Mat::zeros(cfg.seq_len, cfg.channels), vec![0.0; 4], 2usize)];
        let (loss, grads) = model.loss_and_grads(&model.params, &batch, Ablation::None).unwrap();
        assert!(loss.is_finite());
        for (_, t) in grads.iter() {
            assert!(t.data.iter().all(|v| v.is_finite()));
        }
        let err = model.grad_check(&batch, 120, 1e-5, 20).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn finite_difference_error_degrades_quadratically_with_step() {
        // Second-order stencil sanity: in the regime where truncation
        // dominates rounding, doubling the step roughly quadruples the
        // discrepancy. Median over a smooth parameter path resists the
        // occasional ReLU kink.
        let model = CmmModel::new(small_cfg(), 21).unwrap();
        let batch = random_batch(&model.cfg, 2, 22);
        let (_, analytic) = model.loss_and_grads(&model.params, &batch, Ablation::None).unwrap();
        // Flat indices of the first generator weight tensor (tanh path).
        let gen_len = model.params.get(model.layers[0].gen_w1).data.len();
        let indices: Vec<usize> = (0..gen_len).collect();

        let median_abs_err = |step: f64| -> f64 {
            let mut params = model.params.clone();
            let m2 = model.clone();
            let mut errs: Vec<f64> = indices
                .iter()
                .map(|&k| {
                    let orig = params.flat_get(k);
                    params.flat_set(k, orig + step);
                    let up = m2.loss_and_grads(&params, &batch, Ablation::None).unwrap().0;
                    params.flat_set(k, orig - step);
                    let down = m2.loss_and_grads(&params, &batch, Ablation::None).unwrap().0;
                    params.flat_set(k, orig);
                    ((up - down) / (2.0 * step) - analytic.flat_get(k)).abs()
                })
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            errs[errs.len() / 2]
        };
        let e1 = median_abs_err(2e-3);
        let e2 = median_abs_err(4e-3);
        let ratio = e2 / e1.max(1e-300);
        assert!(
            (2.0..8.0).contains(&ratio),
            "expected roughly quadratic degradation, got ratio {ratio} ({e1} -> {e2})"
        );
    }

    #[test]
    fn checkpoint_restores_an_identical_model() {
        let model = CmmModel::new(small_cfg(), 24).unwrap();
        let bytes = super::super::ckpt::params_to_bytes(&model.params);
        let restored = super::super::ckpt::params_from_bytes(&bytes).unwrap();
        let rebuilt = CmmModel::from_params(small_cfg(), restored).unwrap();
        let batch = random_batch(&model.cfg, 1, 25);
        let (a, _) = model
            .forward_stats(&model.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        let (b, _) = rebuilt
            .forward_stats(&rebuilt.params, &batch[0].0, &batch[0].1, Ablation::None)
            .unwrap();
        assert_eq!(a, b);
    }
}

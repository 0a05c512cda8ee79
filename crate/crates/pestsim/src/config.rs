//! Flat key-value run configuration: UTF-8 `key = value` lines with `#`
//! comments. Unknown keys are rejected, and every command writes the fully
//! resolved configuration next to its outputs so a run can be reproduced
//! from the output directory alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::circuit::CircuitParams;
use crate::cmmformer::ModelConfig;
use crate::curation::{CurationConfig, DebrisCount};
use crate::dropsim::{CampaignConfig, DeviceIndividuality, NoiseParams};
use crate::firmware::TriggerConfig;
use crate::optics::{BeamGeometry, Layout};
use crate::{Error, Result};

/// Everything a run needs, resolved to concrete values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub n_events: usize,
    pub n_devices: usize,
    pub reference_drops: usize,
    pub species_mix: [f64; 5],
    pub scenario_mix: [f64; 5],
    pub gain_sigma: f64,
    pub offset_sd_v: f64,

    pub layout: Layout,
    pub emitter_distance_mm: f64,
    pub dropzone_radius_mm: f64,
    pub emitter_half_angle_deg: f64,
    pub receiver_half_angle_deg: f64,
    pub second_pair_rotation_deg: f64,
    pub receiver_range_base_mm: f64,

    pub vcc: f64,
    pub r_e: f64,
    pub r_r: f64,
    pub k1: f64,
    pub c1: f64,
    pub a: f64,
    pub k2: f64,
    pub c2: f64,
    pub ambient: f64,
    pub c0: f64,
    pub adc_bits: u32,

    pub theta1: i64,
    pub theta2: i64,
    pub delta1: i64,
    pub delta2: i64,
    pub jump1: i64,
    pub jump2: i64,
    pub refresh_period_s: f64,
    pub sample_period_s: f64,

    pub noise_sd_v: f64,
    pub wander_amp_v: f64,
    pub wander_period_s: f64,
    pub fluctuation_burst_v: f64,

    pub low_sum_threshold: f64,
    pub valley_depth_frac: f64,
    pub min_peak_gap: usize,
    pub smooth_window: usize,
    /// Negative means "count debris from the truth table".
    pub debris_count: i64,
    pub paper_order: bool,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    pub expanded_channels: usize,
    pub model_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub k_ref: usize,
    pub kernel_scales: Vec<usize>,
    pub gen_hidden: usize,
    pub head_hidden: usize,

    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,

    pub counting_hidden: usize,
    pub counting_bins: usize,
    pub counting_epochs: usize,

    pub bench_drops: usize,
    pub bench_devices: usize,
    pub bench_conv_r_r: f64,
    pub bench_conv_r_e: f64,
    pub bench_max_response_time_s: f64,
    pub bench_linearity_margin_v: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let geometry = BeamGeometry::default();
        let circuit = CircuitParams::default();
        let trigger = TriggerConfig::default();
        let noise = NoiseParams::default();
        let indiv = DeviceIndividuality::default();
        let curation = CurationConfig::default();
        let model = ModelConfig::default();
        Self {
            seed: 1,
            n_events: 1000,
            n_devices: 3,
            reference_drops: 100,
            species_mix: [0.23, 0.21, 0.24, 0.24, 0.08],
            scenario_mix: [0.9708, 0.0100, 0.0055, 0.0082, 0.0055],
            gain_sigma: indiv.gain_sigma,
            offset_sd_v: indiv.offset_sd_v,
            layout: geometry.layout,
            emitter_distance_mm: geometry.emitter_distance,
            dropzone_radius_mm: geometry.dropzone_radius,
            emitter_half_angle_deg: geometry.emitter_half_power_deg,
            receiver_half_angle_deg: geometry.receiver_half_angle_deg,
            second_pair_rotation_deg: geometry.second_pair_rotation_deg,
            receiver_range_base_mm: geometry.receiver_range_base,
            vcc: circuit.vcc,
            r_e: circuit.r_e,
            r_r: circuit.r_r,
            k1: circuit.k1,
            c1: circuit.c1,
            a: circuit.a,
            k2: circuit.k2,
            c2: circuit.c2,
            ambient: circuit.ambient,
            c0: circuit.c0,
            adc_bits: circuit.adc_bits,
            theta1: trigger.theta1,
            theta2: trigger.theta2,
            delta1: trigger.delta_off1,
            delta2: trigger.delta_off2,
            jump1: trigger.jump1,
            jump2: trigger.jump2,
            refresh_period_s: trigger.refresh_period,
            sample_period_s: trigger.sample_period,
            noise_sd_v: noise.noise_sd_v,
            wander_amp_v: noise.wander_amp_v,
            wander_period_s: noise.wander_period_s,
            fluctuation_burst_v: noise.fluctuation_burst_v,
            low_sum_threshold: curation.low_sum_threshold,
            valley_depth_frac: curation.valley_depth_frac,
            min_peak_gap: curation.min_peak_gap,
            smooth_window: curation.smooth_window,
            debris_count: -1,
            paper_order: curation.paper_order,
            split_train: curation.split_fractions[0],
            split_val: curation.split_fractions[1],
            split_test: curation.split_fractions[2],
            expanded_channels: model.expanded,
            model_layers: model.layers,
            heads: model.heads,
            d_model: model.d_model,
            k_ref: model.k_ref,
            kernel_scales: model.kernel_scales.clone(),
            gen_hidden: model.gen_hidden,
            head_hidden: model.head_hidden,
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 50,
            patience: 10,
            counting_hidden: 64,
            counting_bins: 16,
            counting_epochs: 60,
            bench_drops: 10,
            bench_devices: 3,
            bench_conv_r_r: 2200.0,
            bench_conv_r_e: 100.0,
            bench_max_response_time_s: 1e-3,
            bench_linearity_margin_v: 1.0,
        }
    }
}

fn parse_list5(value: &str, key: &str) -> Result<[f64; 5]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!("{key}: expected 5 comma-separated values")));
    }
    let mut out = [0.0; 5];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p.parse().map_err(|e| Error::Config(format!("{key}: {e}")))?;
    }
    Ok(out)
}

macro_rules! take_parse {
    ($map:expr, $key:expr, $field:expr) => {
        if let Some(v) = $map.remove($key) {
            $field = v.parse().map_err(|e| Error::Config(format!("{}: {e}", $key)))?;
        }
    };
}

impl RunConfig {
    /// Parse a config text. Every key must be known; later duplicates of a
    /// key are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", ln + 1)));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }
        Self::from_map(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        take_parse!(map, "seed", cfg.seed);
        take_parse!(map, "campaign.n_events", cfg.n_events);
        take_parse!(map, "campaign.n_devices", cfg.n_devices);
        take_parse!(map, "campaign.reference_drops", cfg.reference_drops);
        if let Some(v) = map.remove("campaign.species_mix") {
            cfg.species_mix = parse_list5(&v, "campaign.species_mix")?;
        }
        if let Some(v) = map.remove("campaign.scenario_mix") {
            cfg.scenario_mix = parse_list5(&v, "campaign.scenario_mix")?;
        }
        take_parse!(map, "campaign.gain_sigma", cfg.gain_sigma);
        take_parse!(map, "campaign.offset_sd_v", cfg.offset_sd_v);
        if let Some(v) = map.remove("geometry.layout") {
            cfg.layout = match v.as_str() {
                "symmetric" => Layout::Symmetric,
                "asymmetric_orthogonal" => Layout::AsymmetricOrthogonal,
                other => {
                    return Err(Error::Config(format!(
                        "geometry.layout: unknown layout {other:?} (symmetric | asymmetric_orthogonal)"
                    )))
                }
            };
        }
        take_parse!(map, "geometry.emitter_distance_mm", cfg.emitter_distance_mm);
        take_parse!(map, "geometry.dropzone_radius_mm", cfg.dropzone_radius_mm);
        take_parse!(map, "geometry.emitter_half_angle_deg", cfg.emitter_half_angle_deg);
        take_parse!(map, "geometry.receiver_half_angle_deg", cfg.receiver_half_angle_deg);
        take_parse!(map, "geometry.second_pair_rotation_deg", cfg.second_pair_rotation_deg);
        take_parse!(map, "geometry.receiver_range_base_mm", cfg.receiver_range_base_mm);
        take_parse!(map, "circuit.vcc", cfg.vcc);
        take_parse!(map, "circuit.r_e", cfg.r_e);
        take_parse!(map, "circuit.r_r", cfg.r_r);
        take_parse!(map, "circuit.k1", cfg.k1);
        take_parse!(map, "circuit.c1", cfg.c1);
        take_parse!(map, "circuit.a", cfg.a);
        take_parse!(map, "circuit.k2", cfg.k2);
        take_parse!(map, "circuit.c2", cfg.c2);
        take_parse!(map, "circuit.ambient", cfg.ambient);
        take_parse!(map, "circuit.c0", cfg.c0);
        take_parse!(map, "circuit.adc_bits", cfg.adc_bits);
        take_parse!(map, "trigger.theta1", cfg.theta1);
        take_parse!(map, "trigger.theta2", cfg.theta2);
        take_parse!(map, "trigger.delta1", cfg.delta1);
        take_parse!(map, "trigger.delta2", cfg.delta2);
        take_parse!(map, "trigger.jump1", cfg.jump1);
        take_parse!(map, "trigger.jump2", cfg.jump2);
        take_parse!(map, "trigger.refresh_period_s", cfg.refresh_period_s);
        take_parse!(map, "trigger.sample_period_s", cfg.sample_period_s);
        take_parse!(map, "noise.sd_v", cfg.noise_sd_v);
        take_parse!(map, "noise.wander_amp_v", cfg.wander_amp_v);
        take_parse!(map, "noise.wander_period_s", cfg.wander_period_s);
        take_parse!(map, "noise.fluctuation_burst_v", cfg.fluctuation_burst_v);
        take_parse!(map, "curation.low_sum_threshold", cfg.low_sum_threshold);
        take_parse!(map, "curation.valley_depth_frac", cfg.valley_depth_frac);
        take_parse!(map, "curation.min_peak_gap", cfg.min_peak_gap);
        take_parse!(map, "curation.smooth_window", cfg.smooth_window);
        take_parse!(map, "curation.debris_count", cfg.debris_count);
        take_parse!(map, "curation.paper_order", cfg.paper_order);
        take_parse!(map, "curation.split_train", cfg.split_train);
        take_parse!(map, "curation.split_val", cfg.split_val);
        take_parse!(map, "curation.split_test", cfg.split_test);
        take_parse!(map, "model.expanded_channels", cfg.expanded_channels);
        take_parse!(map, "model.layers", cfg.model_layers);
        take_parse!(map, "model.heads", cfg.heads);
        take_parse!(map, "model.d_model", cfg.d_model);
        take_parse!(map, "model.k_ref", cfg.k_ref);
        if let Some(v) = map.remove("model.kernel_scales") {
            cfg.kernel_scales = v
                .split(',')
                .map(|p| p.trim().parse().map_err(|e| Error::Config(format!("model.kernel_scales: {e}"))))
                .collect::<Result<Vec<usize>>>()?;
        }
        take_parse!(map, "model.gen_hidden", cfg.gen_hidden);
        take_parse!(map, "model.head_hidden", cfg.head_hidden);
        take_parse!(map, "train.lr", cfg.lr);
        take_parse!(map, "train.batch_size", cfg.batch_size);
        take_parse!(map, "train.max_epochs", cfg.max_epochs);
        take_parse!(map, "train.patience", cfg.patience);
        take_parse!(map, "counting.hidden", cfg.counting_hidden);
        take_parse!(map, "counting.bins", cfg.counting_bins);
        take_parse!(map, "counting.epochs", cfg.counting_epochs);
        take_parse!(map, "bench.drops_per_combo", cfg.bench_drops);
        take_parse!(map, "bench.devices", cfg.bench_devices);
        take_parse!(map, "bench.conv_r_r", cfg.bench_conv_r_r);
        take_parse!(map, "bench.conv_r_e", cfg.bench_conv_r_e);
        take_parse!(map, "bench.max_response_time_s", cfg.bench_max_response_time_s);
        take_parse!(map, "bench.linearity_margin_v", cfg.bench_linearity_margin_v);
        if let Some((key, _)) = map.into_iter().next() {
            return Err(Error::Config(format!("unknown key {key}")));
        }
        Ok(cfg)
    }

    /// Fully resolved text form; parsing it back yields an identical config.
    pub fn to_text(&self) -> String {
        let list5 =
            |v: &[f64; 5]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::from("# resolved run configuration\n");
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("campaign.n_events", self.n_events.to_string());
        kv("campaign.n_devices", self.n_devices.to_string());
        kv("campaign.reference_drops", self.reference_drops.to_string());
        kv("campaign.species_mix", list5(&self.species_mix));
        kv("campaign.scenario_mix", list5(&self.scenario_mix));
        kv("campaign.gain_sigma", self.gain_sigma.to_string());
        kv("campaign.offset_sd_v", self.offset_sd_v.to_string());
        kv(
            "geometry.layout",
            match self.layout {
                Layout::Symmetric => "symmetric".into(),
                Layout::AsymmetricOrthogonal => "asymmetric_orthogonal".into(),
            },
        );
        kv("geometry.emitter_distance_mm", self.emitter_distance_mm.to_string());
        kv("geometry.dropzone_radius_mm", self.dropzone_radius_mm.to_string());
        kv("geometry.emitter_half_angle_deg", self.emitter_half_angle_deg.to_string());
        kv("geometry.receiver_half_angle_deg", self.receiver_half_angle_deg.to_string());
        kv("geometry.second_pair_rotation_deg", self.second_pair_rotation_deg.to_string());
        kv("geometry.receiver_range_base_mm", self.receiver_range_base_mm.to_string());
        kv("circuit.vcc", self.vcc.to_string());
        kv("circuit.r_e", self.r_e.to_string());
        kv("circuit.r_r", self.r_r.to_string());
        kv("circuit.k1", self.k1.to_string());
        kv("circuit.c1", self.c1.to_string());
        kv("circuit.a", self.a.to_string());
        kv("circuit.k2", self.k2.to_string());
        kv("circuit.c2", self.c2.to_string());
        kv("circuit.ambient", self.ambient.to_string());
        kv("circuit.c0", self.c0.to_string());
        kv("circuit.adc_bits", self.adc_bits.to_string());
        kv("trigger.theta1", self.theta1.to_string());
        kv("trigger.theta2", self.theta2.to_string());
        kv("trigger.delta1", self.delta1.to_string());
        kv("trigger.delta2", self.delta2.to_string());
        kv("trigger.jump1", self.jump1.to_string());
        kv("trigger.jump2", self.jump2.to_string());
        kv("trigger.refresh_period_s", self.refresh_period_s.to_string());
        kv("trigger.sample_period_s", self.sample_period_s.to_string());
        kv("noise.sd_v", self.noise_sd_v.to_string());
        kv("noise.wander_amp_v", self.wander_amp_v.to_string());
        kv("noise.wander_period_s", self.wander_period_s.to_string());
        kv("noise.fluctuation_burst_v", self.fluctuation_burst_v.to_string());
        kv("curation.low_sum_threshold", self.low_sum_threshold.to_string());
        kv("curation.valley_depth_frac", self.valley_depth_frac.to_string());
        kv("curation.min_peak_gap", self.min_peak_gap.to_string());
        kv("curation.smooth_window", self.smooth_window.to_string());
        kv("curation.debris_count", self.debris_count.to_string());
        kv("curation.paper_order", self.paper_order.to_string());
        kv("curation.split_train", self.split_train.to_string());
        kv("curation.split_val", self.split_val.to_string());
        kv("curation.split_test", self.split_test.to_string());
        kv("model.expanded_channels", self.expanded_channels.to_string());
        kv("model.layers", self.model_layers.to_string());
        kv("model.heads", self.heads.to_string());
        kv("model.d_model", self.d_model.to_string());
        kv("model.k_ref", self.k_ref.to_string());
        kv(
            "model.kernel_scales",
            self.kernel_scales.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv("model.gen_hidden", self.gen_hidden.to_string());
        kv("model.head_hidden", self.head_hidden.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.max_epochs", self.max_epochs.to_string());
        kv("train.patience", self.patience.to_string());
        kv("counting.hidden", self.counting_hidden.to_string());
        kv("counting.bins", self.counting_bins.to_string());
        kv("counting.epochs", self.counting_epochs.to_string());
        kv("bench.drops_per_combo", self.bench_drops.to_string());
        kv("bench.devices", self.bench_devices.to_string());
        kv("bench.conv_r_r", self.bench_conv_r_r.to_string());
        kv("bench.conv_r_e", self.bench_conv_r_e.to_string());
        kv("bench.max_response_time_s", self.bench_max_response_time_s.to_string());
        kv("bench.linearity_margin_v", self.bench_linearity_margin_v.to_string());
        out
    }

    pub fn geometry(&self) -> BeamGeometry {
        BeamGeometry {
            emitter_distance: self.emitter_distance_mm,
            dropzone_radius: self.dropzone_radius_mm,
            emitter_half_power_deg: self.emitter_half_angle_deg,
            receiver_half_angle_deg: self.receiver_half_angle_deg,
            layout: self.layout,
            second_pair_rotation_deg: self.second_pair_rotation_deg,
            receiver_range_base: self.receiver_range_base_mm,
        }
    }

    pub fn circuit(&self) -> CircuitParams {
        CircuitParams {
            vcc: self.vcc,
            r_e: self.r_e,
            r_r: self.r_r,
            k1: self.k1,
            c1: self.c1,
            a: self.a,
            k2: self.k2,
            c2: self.c2,
            ambient: self.ambient,
            c0: self.c0,
            adc_bits: self.adc_bits,
        }
    }

    pub fn trigger(&self) -> TriggerConfig {
        TriggerConfig {
            theta1: self.theta1,
            theta2: self.theta2,
            delta_off1: self.delta1,
            delta_off2: self.delta2,
            jump1: self.jump1,
            jump2: self.jump2,
            refresh_period: self.refresh_period_s,
            sample_period: self.sample_period_s,
        }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            noise_sd_v: self.noise_sd_v,
            wander_amp_v: self.wander_amp_v,
            wander_period_s: self.wander_period_s,
            fluctuation_burst_v: self.fluctuation_burst_v,
        }
    }

    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig {
            n_events: self.n_events,
            species_mix: self.species_mix,
            scenario_mix: self.scenario_mix,
            n_devices: self.n_devices,
            reference_drops: self.reference_drops,
            seed: self.seed,
            individuality: DeviceIndividuality {
                gain_sigma: self.gain_sigma,
                offset_sd_v: self.offset_sd_v,
            },
            geometry: self.geometry(),
            circuit: self.circuit(),
            trigger: self.trigger(),
            noise: self.noise(),
        }
    }

    pub fn curation(&self) -> CurationConfig {
        CurationConfig {
            low_sum_threshold: self.low_sum_threshold,
            valley_depth_frac: self.valley_depth_frac,
            min_peak_gap: self.min_peak_gap,
            smooth_window: self.smooth_window,
            debris_count: if self.debris_count < 0 {
                DebrisCount::FromTruth
            } else {
                DebrisCount::Fixed(self.debris_count as usize)
            },
            split_fractions: [self.split_train, self.split_val, self.split_test],
            seed: self.seed,
            paper_order: self.paper_order,
            sample_period: self.sample_period_s,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            seq_len: crate::firmware::SAMPLES_PER_CHANNEL,
            channels: 2,
            expanded: self.expanded_channels,
            layers: self.model_layers,
            heads: self.heads,
            d_model: self.d_model,
            k_ref: self.k_ref,
            pool_capacity: self.reference_drops,
            kernel_scales: self.kernel_scales.clone(),
            classes: 5,
            gen_hidden: self.gen_hidden,
            head_hidden: self.head_hidden,
        }
    }

    /// Apply the `PESTSIM_SEED` environment override, when present.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("PESTSIM_SEED") {
            self.seed = v
                .parse()
                .map_err(|e| Error::Config(format!("PESTSIM_SEED must be an integer: {e}")))?;
        }
        Ok(())
    }
}

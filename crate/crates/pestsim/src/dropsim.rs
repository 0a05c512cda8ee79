//! Ground-truth drop scenarios: five pest species, black-sphere reference
//! drops, debris, and baseline-fluctuation anomalies, synthesized through the
//! optics and circuit models into per-channel ADC streams and fed to the
//! firmware acquisition loop.
//!
//! Determinism contract: every random draw derives from (campaign seed, event
//! index) or (device seed, drop index) only, so identical configs reproduce
//! byte-identical records on any number of workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::circuit::{
    adc_quantize, emitter_intensity, rc_response, received_intensity, receiver_voltage,
    CircuitParams,
};
use crate::firmware::{run_acquisition, TriggerConfig, WaveformRecord};
use crate::optics::{shaded_fraction, BeamGeometry, Occluder, Pair};
use crate::{Error, Result};

/// Quiet ticks synthesized before the first transit of an event.
const LEAD_TICKS: usize = 96;
/// Quiet ticks after the last transit. A trigger raised at the last half
/// boundary still needs a full following half for its capture, so the tail
/// spans three halves and the stream rounds up to a half boundary.
const TAIL_TICKS: usize = 192;
/// Ticks per completed half conversion.
const HALF_TICKS: usize = crate::firmware::HALF_LEN / 2;

/// What dropped (or appeared to drop).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum SpeciesClass {
    Sz,
    Rd,
    Tc,
    Os,
    Cp,
    BlackSphere,
    Debris,
}

impl SpeciesClass {
    /// The five pest species, in mix order.
    pub const PESTS: [SpeciesClass; 5] =
        [SpeciesClass::Sz, SpeciesClass::Rd, SpeciesClass::Tc, SpeciesClass::Os, SpeciesClass::Cp];

    pub fn as_str(&self) -> &'static str {
        match self {
            SpeciesClass::Sz => "Sz",
            SpeciesClass::Rd => "Rd",
            SpeciesClass::Tc => "Tc",
            SpeciesClass::Os => "Os",
            SpeciesClass::Cp => "Cp",
            SpeciesClass::BlackSphere => "BlackSphere",
            SpeciesClass::Debris => "Debris",
        }
    }
}

/// Shape and fall behavior of one dropping body.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SpeciesProfile {
    pub name: SpeciesClass,
    /// Body length, mm; this is the extent that crosses the sensing plane.
    pub body_length: f64,
    /// Effective occluder radius = body_length * ratio / 2.
    pub occluder_ratio: f64,
    /// Fall speed distribution, m/s.
    pub fall_speed_mean: f64,
    pub fall_speed_sd: f64,
    /// Relative modulation of the occluder radius while tumbling.
    pub tumble_amplitude: f64,
}

impl SpeciesProfile {
    /// Standard profile for a class. Body lengths follow the reference sizes
    /// (Sz 3.6, Rd 3.0, Tc 3.5, Os 2.7, Cp 1.6 mm; sphere diameter 3.5 mm).
    pub fn standard(class: SpeciesClass) -> Self {
        let (body_length, occluder_ratio, fall_speed_mean, fall_speed_sd, tumble_amplitude) =
            match class {
                SpeciesClass::Sz => (3.6, 0.35, 0.95, 0.18, 0.12),
                SpeciesClass::Rd => (3.0, 0.35, 1.00, 0.15, 0.10),
                SpeciesClass::Tc => (3.5, 0.35, 1.05, 0.18, 0.08),
                SpeciesClass::Os => (2.7, 0.35, 1.10, 0.20, 0.06),
                SpeciesClass::Cp => (1.6, 0.35, 1.20, 0.20, 0.05),
                SpeciesClass::BlackSphere => (3.5, 1.0, 1.00, 0.05, 0.0),
                // Grain-powder streak: long, faint, fluttering descent —
                // characteristically unlike any pest in (duration, peak).
                SpeciesClass::Debris => (3.0, 0.25, 0.30, 0.04, 0.15),
            };
        Self { name: class, body_length, occluder_ratio, fall_speed_mean, fall_speed_sd, tumble_amplitude }
    }

    pub fn effective_radius(&self) -> f64 {
        self.body_length * self.occluder_ratio / 2.0
    }
}

/// The anomaly taxonomy of captured waveforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NormalSingle,
    SpanTwoCycles,
    DebrisNoPest,
    ConsecutiveDouble,
    FluctuationNoPest,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::NormalSingle,
        Scenario::SpanTwoCycles,
        Scenario::DebrisNoPest,
        Scenario::ConsecutiveDouble,
        Scenario::FluctuationNoPest,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::NormalSingle => "normal_single",
            Scenario::SpanTwoCycles => "span_two_cycles",
            Scenario::DebrisNoPest => "debris_no_pest",
            Scenario::ConsecutiveDouble => "consecutive_double",
            Scenario::FluctuationNoPest => "fluctuation_no_pest",
        }
    }
}

/// Ground truth attached to records produced by the simulator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruthLabel {
    pub species: Option<SpeciesClass>,
    pub count: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub reference: bool,
}

/// One scripted drop through the beam gate.
#[derive(Debug, Clone)]
pub struct DropEvent {
    pub profile: SpeciesProfile,
    /// Entry position in the drop-zone cross-section, mm.
    pub entry_t: f64,
    pub entry_r: f64,
    /// Fall speed, m/s.
    pub speed: f64,
    pub scenario: Scenario,
    pub seed: u64,
}

impl DropEvent {
    pub fn validate(&self, geom: &BeamGeometry) -> Result<()> {
        let r2 = geom.dropzone_radius * geom.dropzone_radius;
        if self.entry_t * self.entry_t + self.entry_r * self.entry_r > r2 {
            return Err(Error::Domain(format!(
                "entry position ({}, {}) outside the drop zone",
                self.entry_t, self.entry_r
            )));
        }
        if !(self.speed > 0.0) {
            return Err(Error::Domain(format!("speed must be positive, got {}", self.speed)));
        }
        Ok(())
    }
}

/// Per-device manufacturing individuality, drawn once from the device seed.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DeviceIndividuality {
    /// Lognormal sigma of the per-channel optical gain.
    pub gain_sigma: f64,
    /// Standard deviation of the per-channel baseline offset, volts.
    pub offset_sd_v: f64,
}

impl Default for DeviceIndividuality {
    fn default() -> Self {
        Self { gain_sigma: 0.05, offset_sd_v: 0.02 }
    }
}

/// Baseline disturbance processes superimposed on every synthesized stream.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NoiseParams {
    /// White noise standard deviation, volts.
    pub noise_sd_v: f64,
    /// Slow sinusoidal wander amplitude, volts.
    pub wander_amp_v: f64,
    /// Wander period, seconds.
    pub wander_period_s: f64,
    /// Amplitude of fluctuation bursts (the no-pest anomaly source), volts.
    pub fluctuation_burst_v: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            noise_sd_v: 0.0024,
            wander_amp_v: 0.012,
            wander_period_s: 7.0,
            fluctuation_burst_v: 0.18,
        }
    }
}

/// Everything that determines one simulated monitor.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeviceConfig {
    pub device_id: String,
    pub geometry: BeamGeometry,
    pub circuit: CircuitParams,
    pub trigger: TriggerConfig,
    pub noise: NoiseParams,
    pub seed: u64,
    /// Per-channel multiplicative gain on the received intensity.
    pub gain: [f64; 2],
    /// Per-channel additive baseline offset, volts.
    pub offset_v: [f64; 2],
}

impl DeviceConfig {
    /// Build a device with individuality drawn from its seed.
    pub fn new(
        device_id: impl Into<String>,
        seed: u64,
        geometry: BeamGeometry,
        circuit: CircuitParams,
        trigger: TriggerConfig,
        noise: NoiseParams,
        indiv: &DeviceIndividuality,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD0D0));
        let gain_dist = Normal::new(0.0, indiv.gain_sigma.max(0.0)).unwrap();
        let off_dist = Normal::new(0.0, indiv.offset_sd_v.max(0.0)).unwrap();
        let gain = [gain_dist.sample(&mut rng).exp(), gain_dist.sample(&mut rng).exp()];
        let offset_v = [off_dist.sample(&mut rng), off_dist.sample(&mut rng)];
        Self {
            device_id: device_id.into(),
            geometry,
            circuit,
            trigger,
            noise,
            seed,
            gain,
            offset_v,
        }
    }

    pub fn standard(device_id: impl Into<String>, seed: u64) -> Self {
        Self::new(
            device_id,
            seed,
            BeamGeometry::default(),
            CircuitParams::default(),
            TriggerConfig::default(),
            NoiseParams::default(),
            &DeviceIndividuality::default(),
        )
    }
}

/// Synthesized per-channel streams plus ground truth for one event.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub ch1: Vec<u16>,
    pub ch2: Vec<u16>,
    pub truth: TruthLabel,
    /// Tick spans `[start, end)` of the synthesized transits.
    pub pulse_spans: Vec<(u64, u64)>,
}

/// Cross-section profile of a body passing the sensing plane.
enum TransitShape {
    /// Free fall: the chord of the body sweeping through the plane.
    Chord,
    /// Slow slide-through: entry ramp, sustained shading, exit ramp. This is
    /// what makes a single pest span two acquisition cycles.
    Sustained { ramp: usize },
}

struct Transit {
    start: usize,
    duration: usize,
    entry_t: f64,
    entry_r: f64,
    eff_radius: f64,
    tumble_amplitude: f64,
    tumble_freq_hz: f64,
    tumble_phase: f64,
    shape: TransitShape,
}

impl Transit {
    fn cross_section(&self, tick_in_transit: usize) -> f64 {
        let u = (tick_in_transit as f64 + 0.5) / self.duration as f64;
        match self.shape {
            TransitShape::Chord => (1.0 - (2.0 * u - 1.0).powi(2)).max(0.0).sqrt(),
            TransitShape::Sustained { ramp } => {
                let k = tick_in_transit as f64 + 0.5;
                let r = ramp.max(1) as f64;
                let remaining = self.duration as f64 - k;
                if k < r {
                    (std::f64::consts::FRAC_PI_2 * k / r).sin()
                } else if remaining < r {
                    (std::f64::consts::FRAC_PI_2 * remaining / r).sin().max(0.0)
                } else {
                    1.0
                }
            }
        }
    }
}

fn mix_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the xored inputs
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a deterministic per-event seed from a campaign seed and event index.
pub fn event_seed(campaign_seed: u64, event_index: u64) -> u64 {
    mix_seed(campaign_seed, 0xE0E0_0000 ^ event_index)
}

fn transit_ticks(body_length_mm: f64, speed_mps: f64, dt: f64) -> usize {
    ((body_length_mm / 1000.0 / speed_mps / dt).round() as usize).max(2)
}

/// Synthesize the ADC count streams one event produces on one device.
///
/// Per tick the occluder's plane cross-section shades each pair, the circuit
/// maps shading to a terminal voltage, baseline wander and white noise are
/// superimposed, and the RC response plus ADC quantization produce counts.
pub fn synth_event(event: &DropEvent, device: &DeviceConfig) -> Result<SynthOutput> {
    event.validate(&device.geometry)?;
    let dt = device.trigger.sample_period;
    let mut rng = ChaCha8Rng::seed_from_u64(event.seed);

    // Drawn unconditionally so streams stay aligned across scenario variants.
    let tumble_freq_hz = rng.gen_range(30.0..80.0);
    let tumble_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let wander_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut transits: Vec<Transit> = Vec::new();
    let mut burst: Option<(usize, f64)> = None;
    let count;
    match event.scenario {
        Scenario::NormalSingle | Scenario::DebrisNoPest => {
            // A falling body sweeps its chord through the plane; a powder
            // streak drifts through as a sustained faint shadow with a
            // sharp-enough onset to trigger promptly.
            let shape = if event.scenario == Scenario::DebrisNoPest {
                TransitShape::Sustained { ramp: 6 }
            } else {
                TransitShape::Chord
            };
            transits.push(Transit {
                start: LEAD_TICKS,
                duration: transit_ticks(event.profile.body_length, event.speed, dt),
                entry_t: event.entry_t,
                entry_r: event.entry_r,
                eff_radius: event.profile.effective_radius(),
                tumble_amplitude: event.profile.tumble_amplitude,
                tumble_freq_hz,
                tumble_phase,
                shape,
            });
            count = if event.scenario == Scenario::DebrisNoPest { 0 } else { 1 };
        }
        Scenario::SpanTwoCycles => {
            // A pest sliding through slowly: the sustained shade outlasts the
            // capture window that the entry trigger opens, so the release
            // edge raises a second capture in the following cycle while the
            // two triggers stay within one buffer of each other (the merge
            // window downstream). The ramp spans more than the trigger
            // comparison window so the release edge cannot vanish into a
            // scan-boundary blind strip.
            let ramp = (transit_ticks(event.profile.body_length, event.speed.max(0.8), dt) / 2).max(8);
            transits.push(Transit {
                start: LEAD_TICKS,
                duration: rng.gen_range(100..121),
                entry_t: event.entry_t,
                entry_r: event.entry_r,
                eff_radius: event.profile.effective_radius(),
                tumble_amplitude: event.profile.tumble_amplitude,
                tumble_freq_hz,
                tumble_phase,
                shape: TransitShape::Sustained { ramp },
            });
            count = 1;
        }
        Scenario::ConsecutiveDouble => {
            // Entrained pair: similar speeds, a short quiet gap, so both
            // pulses land inside one captured window.
            let speed1 = event.speed.max(0.9);
            let d1 = transit_ticks(event.profile.body_length, speed1, dt);
            let gap = rng.gen_range(12..=18usize);
            let speed2 = (speed1 * rng.gen_range(0.95..1.05)).max(0.9);
            let d2 = transit_ticks(event.profile.body_length, speed2, dt);
            let (jt, jr) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let (mut t2, mut r2) = (event.entry_t + jt, event.entry_r + jr);
            let rr = device.geometry.dropzone_radius;
            let norm = (t2 * t2 + r2 * r2).sqrt();
            if norm > rr {
                t2 *= rr / norm * 0.99;
                r2 *= rr / norm * 0.99;
            }
            transits.push(Transit {
                start: LEAD_TICKS,
                duration: d1,
                entry_t: event.entry_t,
                entry_r: event.entry_r,
                eff_radius: event.profile.effective_radius(),
                tumble_amplitude: event.profile.tumble_amplitude,
                tumble_freq_hz,
                tumble_phase,
                shape: TransitShape::Chord,
            });
            transits.push(Transit {
                start: LEAD_TICKS + d1 + gap,
                duration: d2,
                entry_t: t2,
                entry_r: r2,
                eff_radius: event.profile.effective_radius(),
                tumble_amplitude: event.profile.tumble_amplitude,
                tumble_freq_hz: tumble_freq_hz * 1.1,
                tumble_phase: tumble_phase + 1.0,
                shape: TransitShape::Chord,
            });
            count = 2;
        }
        Scenario::FluctuationNoPest => {
            let at = LEAD_TICKS + rng.gen_range(0..32);
            let amp = device.noise.fluctuation_burst_v * rng.gen_range(0.8..1.2);
            burst = Some((at, amp));
            count = 0;
        }
    }

    let busy_end = transits
        .iter()
        .map(|t| t.start + t.duration)
        .chain(burst.iter().map(|(at, _)| at + 4))
        .max()
        .unwrap_or(LEAD_TICKS);
    let total = (busy_end + TAIL_TICKS).div_ceil(HALF_TICKS) * HALF_TICKS;

    let e_e = emitter_intensity(&device.circuit);
    let noise = Normal::new(0.0, device.noise.noise_sd_v.max(0.0))
        .map_err(|e| Error::Domain(format!("noise sd: {e}")))?;
    let mut targets = [Vec::with_capacity(total), Vec::with_capacity(total)];
    let mut spans: Vec<(u64, u64)> = transits.iter().map(|t| (t.start as u64, (t.start + t.duration) as u64)).collect();
    spans.sort_unstable();

    for tick in 0..total {
        let t_s = tick as f64 * dt;
        // Occluder cross-section at this tick, if a transit covers it.
        let mut shade = [0.0f64; 2];
        for tr in &transits {
            if tick < tr.start || tick >= tr.start + tr.duration {
                continue;
            }
            // Cross-section of the body in the plane, modulated by tumbling.
            let section = tr.cross_section(tick - tr.start);
            let tumble = 1.0
                + tr.tumble_amplitude
                    * (std::f64::consts::TAU * tr.tumble_freq_hz * t_s + tr.tumble_phase).sin();
            let rho = (tr.eff_radius * section * tumble).max(0.0);
            if rho > 0.0 {
                let occ = Occluder::new(rho, tr.entry_t, tr.entry_r, &device.geometry)?;
                shade[0] = shaded_fraction(&occ, &device.geometry, Pair::One);
                shade[1] = shaded_fraction(&occ, &device.geometry, Pair::Two);
            }
        }
        let wander = device.noise.wander_amp_v
            * (std::f64::consts::TAU * t_s / device.noise.wander_period_s + wander_phase).sin();
        let burst_v = match burst {
            Some((at, amp)) if tick >= at && tick < at + 3 => {
                // 1-tick ramps around a short flat top
                if tick == at || tick == at + 2 {
                    0.6 * amp
                } else {
                    amp
                }
            }
            _ => 0.0,
        };
        for c in 0..2 {
            let e_r = received_intensity(e_e * device.gain[c], shade[c], &device.circuit);
            let u = receiver_voltage(e_r, &device.circuit).volts;
            let v = u + device.offset_v[c] + wander + burst_v + noise.sample(&mut rng);
            targets[c].push(v);
        }
    }

    let ch1: Vec<u16> = rc_response(&targets[0], dt, &device.circuit)
        .into_iter()
        .map(|u| adc_quantize(u, &device.circuit).counts)
        .collect();
    let ch2: Vec<u16> = rc_response(&targets[1], dt, &device.circuit)
        .into_iter()
        .map(|u| adc_quantize(u, &device.circuit).counts)
        .collect();

    let species = match event.scenario {
        Scenario::FluctuationNoPest => None,
        _ => Some(event.profile.name),
    };
    Ok(SynthOutput {
        ch1,
        ch2,
        truth: TruthLabel { species, count, scenario: Some(event.scenario), reference: false },
        pulse_spans: spans,
    })
}

/// Campaign-level generation parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CampaignConfig {
    pub n_events: usize,
    /// Species shares in `SpeciesClass::PESTS` order; sums to 1.
    pub species_mix: [f64; 5],
    /// Scenario shares in `Scenario::ALL` order; sums to 1.
    pub scenario_mix: [f64; 5],
    pub n_devices: usize,
    /// Black-sphere reference drops collected per device.
    pub reference_drops: usize,
    pub seed: u64,
    pub individuality: DeviceIndividuality,
    pub geometry: BeamGeometry,
    pub circuit: CircuitParams,
    pub trigger: TriggerConfig,
    pub noise: NoiseParams,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n_events: 100,
            species_mix: [0.23, 0.21, 0.24, 0.24, 0.08],
            // Counting classes proportional to 140 : 12389 : 103 overall.
            scenario_mix: [0.9708, 0.0100, 0.0055, 0.0082, 0.0055],
            n_devices: 3,
            reference_drops: 100,
            seed: 1,
            individuality: DeviceIndividuality::default(),
            geometry: BeamGeometry::default(),
            circuit: CircuitParams::default(),
            trigger: TriggerConfig::default(),
            noise: NoiseParams::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.species_mix.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("species_mix sums to {s}, expected 1")));
        }
        let s: f64 = self.scenario_mix.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("scenario_mix sums to {s}, expected 1")));
        }
        if self.n_devices == 0 {
            return Err(Error::Config("n_devices must be at least 1".into()));
        }
        self.geometry.validate()?;
        self.circuit.validate()?;
        self.trigger.validate()?;
        Ok(())
    }

    /// The device roster this campaign runs on.
    pub fn devices(&self) -> Vec<DeviceConfig> {
        (0..self.n_devices)
            .map(|d| {
                DeviceConfig::new(
                    format!("dev{:02}", d + 1),
                    mix_seed(self.seed, 0xD117 ^ d as u64),
                    self.geometry,
                    self.circuit,
                    self.trigger,
                    self.noise,
                    &self.individuality,
                )
            })
            .collect()
    }
}

/// Ground truth for one generated event.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EventTruth {
    pub event_id: u64,
    pub device_id: String,
    pub scenario: Scenario,
    pub species: Option<SpeciesClass>,
    pub count: u32,
    /// Records attributed to this event, by record id.
    pub record_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub devices: Vec<DeviceConfig>,
    /// Campaign records (truth attached) followed by reference records.
    pub records: Vec<WaveformRecord>,
    pub truth: Vec<EventTruth>,
}

fn draw_index(rng: &mut ChaCha8Rng, mix: &[f64]) -> usize {
    let x: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, w) in mix.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    mix.len() - 1
}

fn sample_entry(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    // Uniform over the disc.
    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * phi.cos(), r * phi.sin())
}

/// Draw events from the configured mixes, synthesize them per device, run the
/// acquisition loop, and attribute records back to events by trigger tick.
pub fn simulate_campaign(cfg: &CampaignConfig) -> Result<CampaignOutput> {
    cfg.validate()?;
    let devices = cfg.devices();

    // Draw all events, round-robin across devices.
    struct Planned {
        event_id: u64,
        device: usize,
        event: DropEvent,
    }
    let mut planned: Vec<Planned> = Vec::with_capacity(cfg.n_events);
    for e in 0..cfg.n_events {
        let seed = event_seed(cfg.seed, e as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x11AA));
        let scenario = Scenario::ALL[draw_index(&mut rng, &cfg.scenario_mix)];
        let profile = match scenario {
            Scenario::DebrisNoPest | Scenario::FluctuationNoPest => {
                SpeciesProfile::standard(SpeciesClass::Debris)
            }
            _ => SpeciesProfile::standard(SpeciesClass::PESTS[draw_index(&mut rng, &cfg.species_mix)]),
        };
        let (entry_t, entry_r) = sample_entry(&mut rng, cfg.geometry.dropzone_radius);
        let speed_raw = profile.fall_speed_mean + profile.fall_speed_sd * normal_draw(&mut rng);
        let speed = speed_raw.clamp(0.4, 2.0);
        planned.push(Planned {
            event_id: e as u64,
            device: e % cfg.n_devices,
            event: DropEvent { profile, entry_t, entry_r, speed, scenario, seed },
        });
    }

    let mut records: Vec<WaveformRecord> = Vec::new();
    let mut truth: Vec<EventTruth> = planned
        .iter()
        .map(|p| EventTruth {
            event_id: p.event_id,
            device_id: devices[p.device].device_id.clone(),
            scenario: p.event.scenario,
            species: truth_species(p.event.scenario, &p.event.profile),
            count: 0,
            record_ids: Vec::new(),
        })
        .collect();

    let mut device_stream_ticks: Vec<u64> = vec![0; cfg.n_devices];
    for (d, device) in devices.iter().enumerate() {
        let mut ch1: Vec<u16> = Vec::new();
        let mut ch2: Vec<u16> = Vec::new();
        // (event index in `planned`, start tick, end tick, truth label)
        let mut intervals: Vec<(usize, u64, u64, TruthLabel)> = Vec::new();
        for (pi, p) in planned.iter().enumerate() {
            if p.device != d {
                continue;
            }
            let synth = synth_event(&p.event, device)?;
            let start = ch1.len() as u64;
            let end = start + synth.ch1.len() as u64;
            truth[pi].count = synth.truth.count;
            intervals.push((pi, start, end, synth.truth.clone()));
            ch1.extend_from_slice(&synth.ch1);
            ch2.extend_from_slice(&synth.ch2);
        }
        device_stream_ticks[d] = ch1.len() as u64;
        let mut out = run_acquisition(&device.device_id, &ch1, &ch2, &device.trigger)?;
        for cap in &out.captures {
            let rec = &mut out.records[cap.record_index];
            if let Some((pi, _, _, label)) =
                intervals.iter().find(|(_, s, e, _)| cap.trigger_tick >= *s && cap.trigger_tick < *e)
            {
                rec.truth = Some(label.clone());
                truth[*pi].record_ids.push(rec.record_id());
            }
        }
        records.extend(out.records);
    }

    // Reference pools: a separate collection session per device.
    for (d, device) in devices.iter().enumerate() {
        let mut refs = build_reference_drops(device, cfg.reference_drops)?;
        let base_seq = records
            .iter()
            .filter(|r| r.device_id == device.device_id)
            .map(|r| r.seq + 1)
            .max()
            .unwrap_or(0);
        let t_offset = (device_stream_ticks[d] as f64) * device.trigger.sample_period + 3600.0;
        for r in &mut refs {
            r.seq += base_seq;
            r.timestamp += t_offset;
        }
        records.extend(refs);
    }

    Ok(CampaignOutput { devices, records, truth })
}

fn truth_species(scenario: Scenario, profile: &SpeciesProfile) -> Option<SpeciesClass> {
    match scenario {
        Scenario::FluctuationNoPest => None,
        _ => Some(profile.name),
    }
}

fn normal_draw(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Collect a device's reference pool: `n` black-sphere drops at the zone
/// center with that device's individual gain/offset signature.
pub fn build_reference_drops(device: &DeviceConfig, n: usize) -> Result<Vec<WaveformRecord>> {
    if n == 0 {
        return Err(Error::Contract("reference pool needs at least one drop".into()));
    }
    let mut ch1: Vec<u16> = Vec::new();
    let mut ch2: Vec<u16> = Vec::new();
    let profile = SpeciesProfile::standard(SpeciesClass::BlackSphere);
    for k in 0..n {
        let seed = mix_seed(device.seed, 0x5EF0_0000 ^ k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 7));
        let speed =
            (profile.fall_speed_mean + profile.fall_speed_sd * normal_draw(&mut rng)).clamp(0.6, 1.6);
        let event = DropEvent {
            profile,
            entry_t: 0.0,
            entry_r: 0.0,
            speed,
            scenario: Scenario::NormalSingle,
            seed,
        };
        let synth = synth_event(&event, device)?;
        ch1.extend_from_slice(&synth.ch1);
        ch2.extend_from_slice(&synth.ch2);
    }
    let mut out = run_acquisition(&device.device_id, &ch1, &ch2, &device.trigger)?;
    for rec in &mut out.records {
        rec.truth = Some(TruthLabel {
            species: Some(SpeciesClass::BlackSphere),
            count: 1,
            scenario: None,
            reference: true,
        });
    }
    Ok(out.records)
}

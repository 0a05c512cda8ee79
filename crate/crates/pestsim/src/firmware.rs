//! Cycle-accurate re-implementation of the on-device acquisition loop: the
//! interleaved two-channel DMA ring buffer, half/full completion events,
//! adaptive thresholds, jump triggering, and waveform transfer.
//!
//! All windows are half-open `[i, j)` with even endpoints; pairs interleave
//! as (even index → channel 1, odd index → channel 2).

use crate::dropsim::TruthLabel;
use crate::{Error, Result};

/// Ring length in interleaved entries: 128 samples per channel.
pub const RING_LEN: usize = 256;
/// Entries per completed half conversion.
pub const HALF_LEN: usize = RING_LEN / 2;
/// Samples per channel in one captured record.
pub const SAMPLES_PER_CHANNEL: usize = RING_LEN / 2;

/// Interleaved two-channel DMA ring buffer.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    data: Vec<u16>,
    cursor: usize,
}

impl RingBuffer {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || len % 2 != 0 {
            return Err(Error::Contract(format!("ring length must be even and nonzero, got {len}")));
        }
        Ok(Self { data: vec![0; len], cursor: 0 })
    }

    /// Write one tick's pair of samples; the cursor wraps at the end.
    pub fn push_pair(&mut self, ch1: u16, ch2: u16) {
        let l = self.data.len();
        self.data[self.cursor] = ch1;
        self.data[self.cursor + 1] = ch2;
        self.cursor = (self.cursor + 2) % l;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    fn check_window(&self, i: usize, j: usize) -> Result<usize> {
        if i % 2 != 0 || j % 2 != 0 {
            return Err(Error::Contract(format!("window [{i}, {j}) must have even endpoints")));
        }
        if i >= j || j > self.data.len() {
            return Err(Error::Contract(format!(
                "window [{i}, {j}) is empty or exceeds ring length {}",
                self.data.len()
            )));
        }
        Ok((j - i) / 2)
    }
}

/// Deinterleaved waveform rows: per row, `[0, L/2)` holds channel 1 and
/// `[L/2, L)` channel 2.
#[derive(Debug, Clone)]
pub struct WaveList {
    rows: Vec<Vec<u16>>,
    write_index: usize,
}

impl WaveList {
    pub fn new(rows: usize, row_len: usize) -> Self {
        Self { rows: vec![vec![0; row_len]; rows], write_index: 0 }
    }

    pub fn write_index(&self) -> usize {
        self.write_index
    }

    pub fn row(&self, m: usize) -> &[u16] {
        &self.rows[m]
    }
}

/// Trigger and timing configuration of the acquisition loop.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TriggerConfig {
    /// Initial trigger thresholds, counts.
    pub theta1: i64,
    pub theta2: i64,
    /// Voltage offsets added to the windowed means, counts.
    pub delta_off1: i64,
    pub delta_off2: i64,
    /// Minimum jump across the 8-entry comparison window, counts.
    pub jump1: i64,
    pub jump2: i64,
    /// How often the thresholds re-adapt, seconds of simulated time.
    pub refresh_period: f64,
    /// Sampling period per channel, seconds (5 kHz default).
    pub sample_period: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            theta1: 2150,
            theta2: 2150,
            delta_off1: 120,
            delta_off2: 120,
            jump1: 60,
            jump2: 60,
            refresh_period: 60.0,
            sample_period: 200e-6,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.jump1 <= 0 || self.jump2 <= 0 {
            return Err(Error::Domain("jump ranges must be positive".into()));
        }
        if !(self.sample_period > 0.0) {
            return Err(Error::Domain("sample period must be positive".into()));
        }
        if !(self.refresh_period > 0.0) {
            return Err(Error::Domain("refresh period must be positive".into()));
        }
        Ok(())
    }
}

/// Transfer the window `[i, j)` of the ring into the wave list's current row,
/// deinterleaving the channels right-aligned within each half of the row.
///
/// Pair `q` (source index `i + 2q`) lands at row indices `L/2 - n + q`
/// (channel 1) and `L - n + q` (channel 2) where `n = (j - i)/2`. Untouched
/// row cells keep their prior contents; the write index advances modulo the
/// number of rows.
pub fn transfer_data(buf: &RingBuffer, i: usize, j: usize, wl: &mut WaveList) -> Result<()> {
    let n = buf.check_window(i, j)?;
    let l = buf.len();
    let row_len = wl.rows[wl.write_index].len();
    if row_len < l {
        return Err(Error::Contract(format!("wave list row length {row_len} shorter than ring {l}")));
    }
    if n > l / 2 {
        return Err(Error::Contract(format!("window holds {n} pairs, more than {} per half", l / 2)));
    }
    let row = &mut wl.rows[wl.write_index];
    for q in 0..n {
        row[l / 2 - n + q] = buf.data[i + 2 * q];
        row[l - n + q] = buf.data[i + 2 * q + 1];
    }
    wl.write_index = (wl.write_index + 1) % wl.rows.len();
    Ok(())
}

/// Adapted trigger thresholds from the window `[i, j)`: per channel, the
/// integer mean (divisor `(j - i)/2`) plus that channel's offset.
pub fn adaptive_threshold(
    buf: &RingBuffer,
    i: usize,
    j: usize,
    cfg: &TriggerConfig,
) -> Result<(i64, i64)> {
    let n = buf.check_window(i, j)? as u64;
    let (mut sum1, mut sum2) = (0u64, 0u64);
    let mut l = i;
    while l < j {
        sum1 += buf.data[l] as u64;
        sum2 += buf.data[l + 1] as u64;
        l += 2;
    }
    Ok(((sum1 / n) as i64 + cfg.delta_off1, (sum2 / n) as i64 + cfg.delta_off2))
}

/// Scan the window `[i, j)` for a significant jump: a sample at or above its
/// channel threshold whose value differs from the sample 8 entries later by
/// at least the channel's jump range, in either direction.
///
/// Channel 1 is tested before channel 2 at each position; the first firing
/// position is returned. A plateau above the threshold with no jump never
/// fires — that is the guard against pests clinging to the sensor.
pub fn check_threshold(
    buf: &RingBuffer,
    i: usize,
    j: usize,
    theta: (i64, i64),
    cfg: &TriggerConfig,
) -> Option<usize> {
    let j_eff = j.saturating_sub(8);
    let mut l = i;
    while l < j_eff {
        let v1 = buf.data[l] as i64;
        let w1 = buf.data[l + 8] as i64;
        if v1 >= theta.0 && (v1 + cfg.jump1 <= w1 || v1 >= w1 + cfg.jump1) {
            return Some(l);
        }
        let v2 = buf.data[l + 1] as i64;
        let w2 = buf.data[l + 9] as i64;
        if v2 >= theta.1 && (v2 + cfg.jump2 <= w2 || v2 >= w2 + cfg.jump2) {
            return Some(l + 1);
        }
        l += 2;
    }
    None
}

/// One captured trigger event.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WaveformRecord {
    pub device_id: String,
    /// Per-device capture counter.
    pub seq: u64,
    /// Trigger sample time, seconds of simulated device time.
    pub timestamp: f64,
    /// Ring index at which the trigger fired, if any.
    pub trigger_pos: Option<usize>,
    pub ch1: Vec<u16>,
    pub ch2: Vec<u16>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truth: Option<TruthLabel>,
}

impl WaveformRecord {
    /// Stable identifier used by manifests and truth tables.
    pub fn record_id(&self) -> String {
        format!("{}:{}", self.device_id, self.seq)
    }
}

/// Where a capture came from, tick-accurate; used to attribute ground truth.
#[derive(Debug, Clone, Copy)]
pub struct CaptureMeta {
    pub record_index: usize,
    /// Absolute sample tick of the trigger.
    pub trigger_tick: u64,
    /// Absolute sample tick at which the transfer executed.
    pub capture_tick: u64,
}

#[derive(Debug, Clone, Default)]
pub struct AcquisitionOutput {
    pub records: Vec<WaveformRecord>,
    pub captures: Vec<CaptureMeta>,
}

/// Run the acquisition event loop over a pair of per-channel count streams
/// sampled at `cfg.sample_period`.
///
/// Every half completion checks the completed half; a trigger arms a capture
/// that transfers the full ring at the end of the *following* half, so each
/// record carries context on both sides of the trigger. Thresholds initialize
/// from the first completed half and re-adapt every `refresh_period` on the
/// most recent untriggered half. Triggers landing while a capture is armed
/// coalesce into that capture.
pub fn run_acquisition(
    device_id: &str,
    ch1: &[u16],
    ch2: &[u16],
    cfg: &TriggerConfig,
) -> Result<AcquisitionOutput> {
    if ch1.len() != ch2.len() {
        return Err(Error::Contract(format!(
            "channel streams differ in length: {} vs {}",
            ch1.len(),
            ch2.len()
        )));
    }
    cfg.validate()?;

    struct Armed {
        trigger_pos: usize,
        trigger_tick: u64,
        /// Stream tick (exclusive) at which the transfer executes: the end of
        /// the half following the one that triggered.
        capture_at: u64,
    }

    let mut ring = RingBuffer::new(RING_LEN)?;
    let mut wl = WaveList::new(1, RING_LEN);
    let mut out = AcquisitionOutput::default();
    let mut theta: Option<(i64, i64)> = None;
    let mut armed: Option<Armed> = None;
    let mut last_refresh = 0.0f64;
    let mut seq = 0u64;
    let half_ticks = (HALF_LEN / 2) as u64;

    for tick in 0..ch1.len() as u64 {
        ring.push_pair(ch1[tick as usize], ch2[tick as usize]);
        let boundary = tick + 1;
        if boundary % half_ticks != 0 {
            continue;
        }
        // A half conversion completed; locate it inside the ring.
        let halves_done = boundary / half_ticks;
        let (i, j) = if halves_done % 2 == 1 { (0, HALF_LEN) } else { (HALF_LEN, RING_LEN) };
        let now = boundary as f64 * cfg.sample_period;

        if theta.is_none() {
            theta = Some(adaptive_threshold(&ring, i, j, cfg)?);
            last_refresh = now;
        }
        let th = theta.unwrap();

        // Check before capturing: a trigger in the half that completes the
        // armed window (typically the tail of the same pulse) coalesces into
        // the pending capture instead of spawning a duplicate record.
        let hit = check_threshold(&ring, i, j, th, cfg);
        match hit {
            Some(p) => {
                if armed.is_none() {
                    let trigger_tick = boundary - half_ticks + ((p - i) / 2) as u64;
                    armed = Some(Armed {
                        trigger_pos: p,
                        trigger_tick,
                        capture_at: boundary + half_ticks,
                    });
                }
            }
            None => {
                if now - last_refresh >= cfg.refresh_period {
                    theta = Some(adaptive_threshold(&ring, i, j, cfg)?);
                    last_refresh = now;
                }
            }
        }

        if armed.as_ref().is_some_and(|a| a.capture_at == boundary) {
            let arm = armed.take().unwrap();
            transfer_data(&ring, 0, RING_LEN, &mut wl)?;
            let row = wl.row((wl.write_index() + wl.rows.len() - 1) % wl.rows.len());
            let record = WaveformRecord {
                device_id: device_id.to_string(),
                seq,
                timestamp: arm.trigger_tick as f64 * cfg.sample_period,
                trigger_pos: Some(arm.trigger_pos),
                ch1: row[..SAMPLES_PER_CHANNEL].to_vec(),
                ch2: row[SAMPLES_PER_CHANNEL..].to_vec(),
                truth: None,
            };
            out.captures.push(CaptureMeta {
                record_index: out.records.len(),
                trigger_tick: arm.trigger_tick,
                capture_tick: boundary,
            });
            out.records.push(record);
            seq += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ring_from(values: &[u16]) -> RingBuffer {
        let mut rb = RingBuffer::new(values.len()).unwrap();
        rb.data_mut().copy_from_slice(values);
        rb
    }

    #[test]
    fn transfer_full_buffer_deinterleaves() {
        let buf = ring_from(&[10, 20, 11, 21, 12, 22, 13, 23]);
        let mut wl = WaveList::new(1, 8);
        transfer_data(&buf, 0, 8, &mut wl).unwrap();
        assert_eq!(wl.row(0), &[10, 11, 12, 13, 20, 21, 22, 23]);
    }

    #[test]
    fn transfer_half_window_right_aligns() {
        let buf = ring_from(&[10, 20, 11, 21, 12, 22, 13, 23]);
        let mut wl = WaveList::new(1, 8);
        transfer_data(&buf, 0, 4, &mut wl).unwrap();
        assert_eq!(wl.row(0), &[0, 0, 10, 11, 0, 0, 20, 21]);
    }

    #[test]
    fn transfer_wraps_write_index() {
        let buf = ring_from(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let mut wl = WaveList::new(2, 8);
        transfer_data(&buf, 0, 8, &mut wl).unwrap();
        assert_eq!(wl.write_index(), 1);
        transfer_data(&buf, 0, 8, &mut wl).unwrap();
        assert_eq!(wl.write_index(), 0);
    }

    #[test]
    fn transfer_rejects_bad_windows() {
        let buf = ring_from(&[1, 2, 3, 4]);
        let mut wl = WaveList::new(1, 4);
        assert!(transfer_data(&buf, 1, 4, &mut wl).is_err());
        assert!(transfer_data(&buf, 0, 3, &mut wl).is_err());
        assert!(transfer_data(&buf, 2, 2, &mut wl).is_err());
        assert!(transfer_data(&buf, 0, 6, &mut wl).is_err());
    }

    #[test]
    fn transfer_preserves_channel_multisets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let values: Vec<u16> = (0..64).map(|_| rng.gen_range(0..4096)).collect();
            let buf = ring_from(&values);
            let a = rng.gen_range(0..31usize);
            let b = rng.gen_range(a + 1..=32usize);
            let (i, j) = (2 * a, 2 * b);
            let n = b - a;
            let mut wl = WaveList::new(1, 64);
            transfer_data(&buf, i, j, &mut wl).unwrap();
            let row = wl.row(0);
            let mut src1: Vec<u16> = (0..n).map(|q| values[i + 2 * q]).collect();
            let mut src2: Vec<u16> = (0..n).map(|q| values[i + 2 * q + 1]).collect();
            let mut dst1 = row[32 - n..32].to_vec();
            let mut dst2 = row[64 - n..64].to_vec();
            src1.sort_unstable();
            src2.sort_unstable();
            dst1.sort_unstable();
            dst2.sort_unstable();
            assert_eq!(src1, dst1);
            assert_eq!(src2, dst2);
        }
    }

    #[test]
    fn adaptive_threshold_mean_plus_offset() {
        let cfg = TriggerConfig { delta_off1: 150, delta_off2: 150, ..Default::default() };
        let buf = ring_from(&vec![2000u16; 64]);
        assert_eq!(adaptive_threshold(&buf, 0, 64, &cfg).unwrap(), (2150, 2150));

        let cfg0 = TriggerConfig { delta_off1: 0, delta_off2: 0, ..Default::default() };
        let buf = ring_from(&[100, 50, 300, 150]);
        assert_eq!(adaptive_threshold(&buf, 0, 4, &cfg0).unwrap(), (200, 100));
    }

    #[test]
    fn adaptive_threshold_offset_is_exactly_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let values: Vec<u16> = (0..128).map(|_| rng.gen_range(0..4000)).collect();
            let buf = ring_from(&values);
            let base = TriggerConfig { delta_off1: 0, delta_off2: 0, ..Default::default() };
            let x = rng.gen_range(-500..500);
            let shifted = TriggerConfig { delta_off1: x, delta_off2: x, ..Default::default() };
            let (a1, a2) = adaptive_threshold(&buf, 0, 128, &base).unwrap();
            let (b1, b2) = adaptive_threshold(&buf, 0, 128, &shifted).unwrap();
            assert_eq!((b1, b2), (a1 + x, a2 + x));
        }
    }

    #[test]
    fn adaptive_threshold_mean_shift_property() {
        // Shifting every sample by s shifts both thresholds by exactly s.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let values: Vec<u16> = (0..64).map(|_| rng.gen_range(0..3000)).collect();
            let s: u16 = rng.gen_range(0..1000);
            let shifted: Vec<u16> = values.iter().map(|v| v + s).collect();
            let cfg = TriggerConfig::default();
            let (a1, a2) = adaptive_threshold(&ring_from(&values), 0, 64, &cfg).unwrap();
            let (b1, b2) = adaptive_threshold(&ring_from(&shifted), 0, 64, &cfg).unwrap();
            assert_eq!((b1, b2), (a1 + s as i64, a2 + s as i64));
        }
    }

    #[test]
    fn adaptive_threshold_rejects_empty_window() {
        let buf = ring_from(&[1, 2, 3, 4]);
        assert!(adaptive_threshold(&buf, 2, 2, &TriggerConfig::default()).is_err());
    }

    #[test]
    fn check_threshold_quiet_buffer_never_fires() {
        let cfg = TriggerConfig::default();
        let buf = ring_from(&vec![2000u16; 256]);
        assert_eq!(check_threshold(&buf, 0, 256, (2150, 2150), &cfg), None);
    }

    #[test]
    fn check_threshold_hand_traced_jump() {
        let cfg = TriggerConfig { jump1: 60, ..Default::default() };
        let mut values = vec![2000u16; 64];
        values[10] = 2100; // channel 1 at l = 10
        values[18] = 2160; // channel 1 at l + 8: 2100 + 60 <= 2160
        let buf = ring_from(&values);
        assert_eq!(check_threshold(&buf, 0, 64, (2050, 2050), &cfg), Some(10));
    }

    #[test]
    fn check_threshold_plateau_does_not_fire() {
        // Entirely above theta but with sub-jump variation: the anti-cling rule.
        let cfg = TriggerConfig { jump1: 60, jump2: 60, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let values: Vec<u16> = (0..256).map(|_| 2500 + rng.gen_range(0..30u16)).collect();
        let buf = ring_from(&values);
        assert_eq!(check_threshold(&buf, 0, 256, (2100, 2100), &cfg), None);
    }

    /// Independent scanner: enumerate every candidate (position, channel),
    /// collect all hits, and return the first in (position, channel) order.
    fn brute_force_check(
        data: &[u16],
        i: usize,
        j: usize,
        theta: (i64, i64),
        cfg: &TriggerConfig,
    ) -> Option<usize> {
        let mut hits: Vec<usize> = Vec::new();
        let j_eff = j.saturating_sub(8);
        for l in (i..j_eff.max(i)).step_by(2) {
            for ch in 0..2usize {
                let (th, jump) = if ch == 0 { (theta.0, cfg.jump1) } else { (theta.1, cfg.jump2) };
                let v = data[l + ch] as i64;
                let w = data[l + ch + 8] as i64;
                if v >= th && (v + jump <= w || v >= w + jump) {
                    hits.push(l + ch);
                }
            }
        }
        hits.into_iter().min_by_key(|p| (p / 2, p % 2))
    }

    #[test]
    fn check_threshold_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..10_000 {
            let values: Vec<u16> = (0..256).map(|_| rng.gen_range(1800..2600)).collect();
            let theta = (rng.gen_range(1900..2500) as i64, rng.gen_range(1900..2500) as i64);
            let cfg = TriggerConfig {
                jump1: rng.gen_range(5..300),
                jump2: rng.gen_range(5..300),
                ..Default::default()
            };
            let (i, j) = match case % 3 {
                0 => (0, 128),
                1 => (128, 256),
                _ => (0, 256),
            };
            let buf = ring_from(&values);
            assert_eq!(
                check_threshold(&buf, i, j, theta, &cfg),
                brute_force_check(&values, i, j, theta, &cfg),
                "divergence on case {case}"
            );
        }
    }

    fn quiet_stream(len: usize, level: u16) -> (Vec<u16>, Vec<u16>) {
        (vec![level; len], vec![level; len])
    }

    fn inject_pulse(ch: &mut [u16], at: usize, width: usize, amplitude: u16) {
        for k in 0..width {
            if at + k < ch.len() {
                ch[at + k] = ch[at + k].saturating_add(amplitude);
            }
        }
    }

    #[test]
    fn acquisition_quiet_stream_produces_no_records() {
        let (ch1, ch2) = quiet_stream(2000, 2000);
        let out = run_acquisition("dev", &ch1, &ch2, &TriggerConfig::default()).unwrap();
        assert!(out.records.is_empty());
    }

    #[test]
    fn acquisition_single_pulse_yields_one_record_with_apex() {
        let (mut ch1, mut ch2) = quiet_stream(2000, 2000);
        inject_pulse(&mut ch1, 300, 12, 400);
        inject_pulse(&mut ch2, 300, 12, 350);
        let out = run_acquisition("dev", &ch1, &ch2, &TriggerConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        let rec = &out.records[0];
        assert!(rec.ch1.contains(&2400), "apex missing from captured channel 1");
        assert!(rec.trigger_pos.is_some());
        assert_eq!(rec.seq, 0);
        // Trigger time matches the injected pulse within one half buffer.
        assert!((rec.timestamp - 300.0 * 200e-6).abs() < 64.0 * 200e-6);
    }

    #[test]
    fn acquisition_two_separated_pulses_yield_two_records() {
        let (mut ch1, mut ch2) = quiet_stream(3000, 2000);
        // Separation of 800 ticks is far more than one full buffer (128 ticks).
        inject_pulse(&mut ch1, 400, 12, 400);
        inject_pulse(&mut ch2, 400, 12, 400);
        inject_pulse(&mut ch1, 1200, 12, 400);
        inject_pulse(&mut ch2, 1200, 12, 400);
        let out = run_acquisition("dev", &ch1, &ch2, &TriggerConfig::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records[1].timestamp > out.records[0].timestamp);
    }

    #[test]
    fn acquisition_is_replay_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch1: Vec<u16> = (0..4000).map(|_| rng.gen_range(1990..2010)).collect();
        let mut ch1 = ch1;
        inject_pulse(&mut ch1, 900, 10, 500);
        let ch2 = ch1.clone();
        let a = run_acquisition("dev", &ch1, &ch2, &TriggerConfig::default()).unwrap();
        let b = run_acquisition("dev", &ch1, &ch2, &TriggerConfig::default()).unwrap();
        assert_eq!(a.records, b.records);
    }
}

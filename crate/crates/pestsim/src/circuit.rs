//! Detection-circuit model: emitter drive, receiver terminal voltage, the
//! junction-capacitance RC limit, ADC quantization, and resistor selection.
//!
//! Shading lowers the received intensity, which lowers the receiver current
//! and therefore *raises* the terminal voltage — pulses point upward, which is
//! what the firmware's `>= theta` trigger test expects.

use crate::{Error, Result};

/// 10%→90% rise of a first-order system takes ln(9) time constants.
const RISE_1090_TAU: f64 = 2.197224577336220;

/// Constants of one detection channel's drive and receive circuit.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CircuitParams {
    /// Supply voltage, volts.
    pub vcc: f64,
    /// Emitter resistor, ohms.
    pub r_e: f64,
    /// Receiver resistor, ohms.
    pub r_r: f64,
    /// Emitter transfer: intensity = k1 * (a / r_e) + c1.
    pub k1: f64,
    pub c1: f64,
    pub a: f64,
    /// Receiver transfer: current = k2 * intensity + c2.
    pub k2: f64,
    pub c2: f64,
    /// Ambient light reaching the receiver, intensity units.
    pub ambient: f64,
    /// Junction-capacitance scale, farads at the full supply voltage.
    pub c0: f64,
    /// ADC resolution in bits.
    pub adc_bits: u32,
}

impl Default for CircuitParams {
    /// Defaults place the unshaded operating point near mid-scale
    /// (~2000 counts at 12 bits) so pulses have headroom in both directions.
    fn default() -> Self {
        Self {
            vcc: 3.3,
            r_e: 100.0,
            r_r: 10_000.0,
            k1: 1.0,
            c1: 0.0,
            a: 100.0,
            k2: 1.7e-4,
            c2: 0.0,
            ambient: 0.0,
            c0: 1e-9,
            adc_bits: 12,
        }
    }
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.a > 0.0) {
            return Err(Error::Domain("k1, k2 and a must be positive".into()));
        }
        if !(self.vcc > 0.0 && self.r_e > 0.0 && self.r_r > 0.0) {
            return Err(Error::Domain("vcc, r_e and r_r must be positive".into()));
        }
        if !(self.c0 > 0.0) {
            return Err(Error::Domain("junction capacitance scale must be positive".into()));
        }
        if !(1..=16).contains(&self.adc_bits) {
            return Err(Error::Domain(format!("adc_bits must be 1..=16, got {}", self.adc_bits)));
        }
        Ok(())
    }

    /// Full-scale ADC count, e.g. 4095 for 12 bits.
    pub fn adc_max(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }

    /// Volts represented by one ADC count.
    pub fn volts_per_count(&self) -> f64 {
        self.vcc / self.adc_max() as f64
    }
}

/// A voltage together with a flag noting that clamping occurred (operating
/// point left the linear region).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageSample {
    pub volts: f64,
    pub saturated: bool,
}

/// A quantized ADC sample; `saturated` marks inputs outside [0, VCC].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdcSample {
    pub counts: u16,
    pub saturated: bool,
}

/// Total radiation intensity emitted by the drive circuit:
/// `E_e = k1 * a / R_e + c1`. Strictly decreasing in `R_e`.
pub fn emitter_intensity(p: &CircuitParams) -> f64 {
    p.k1 * (p.a / p.r_e) + p.c1
}

/// Intensity arriving at the receiver for a given emitted intensity and
/// shading ratio in [0, 1]. The optical coupling gain is folded into `k2`.
pub fn received_intensity(e_e: f64, shade: f64, p: &CircuitParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&shade), "shade ratio out of range: {shade}");
    e_e * (1.0 - shade) + p.ambient
}

/// Receiver terminal voltage `U_r = VCC - R_r (k2 E_r + c2)`, clamped to
/// [0, VCC] with the clamp recorded as saturation.
pub fn receiver_voltage(e_r: f64, p: &CircuitParams) -> VoltageSample {
    let raw = p.vcc - p.r_r * (p.k2 * e_r + p.c2);
    if raw < 0.0 {
        VoltageSample { volts: 0.0, saturated: true }
    } else if raw > p.vcc {
        VoltageSample { volts: p.vcc, saturated: true }
    } else {
        VoltageSample { volts: raw, saturated: false }
    }
}

/// Photodiode junction capacitance at the given photodiode voltage. Grows as
/// the reverse bias shrinks (abrupt-junction law), floored at 5% of VCC to
/// keep the model finite near zero bias.
pub fn junction_capacitance(u_pd: f64, p: &CircuitParams) -> f64 {
    let floor = 0.05 * p.vcc;
    p.c0 * (p.vcc / u_pd.max(floor)).sqrt()
}

/// RC time constant seen by the receiver at the given photodiode voltage.
pub fn time_constant(u_pd: f64, p: &CircuitParams) -> f64 {
    p.r_r * junction_capacitance(u_pd, p)
}

/// First-order low-pass of a uniformly sampled target-voltage sequence with
/// the state carried explicitly in the returned sequence.
///
/// `out[n] = out[n-1] + (1 - exp(-dt/tau)) * (target[n] - out[n-1])`, with
/// `tau` evaluated at the current target (the asymptotic photodiode voltage)
/// and `out[0] = target[0]`.
pub fn rc_response(u_target: &[f64], dt: f64, p: &CircuitParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(u_target.len());
    let Some(&first) = u_target.first() else {
        return out;
    };
    out.push(first);
    let mut state = first;
    for &target in &u_target[1..] {
        let tau = time_constant(target, p);
        let alpha = 1.0 - (-dt / tau).exp();
        state += alpha * (target - state);
        out.push(state);
    }
    out
}

/// Quantize a voltage to ADC counts, rounding half up. Inputs outside
/// [0, VCC] clamp to the end scales with the saturation flag set.
pub fn adc_quantize(u: f64, p: &CircuitParams) -> AdcSample {
    let max = p.adc_max();
    if u < 0.0 {
        return AdcSample { counts: 0, saturated: true };
    }
    if u > p.vcc {
        return AdcSample { counts: max, saturated: true };
    }
    let counts = (u / p.vcc * max as f64 + 0.5).floor() as u16;
    AdcSample { counts: counts.min(max), saturated: false }
}

/// Candidate resistor values for component selection.
#[derive(Debug, Clone)]
pub struct ResistorLadder {
    /// Ascending candidate values, ohms.
    pub values: Vec<f64>,
}

/// The E12 preferred-number series mantissas.
const E12: [f64; 12] = [1.0, 1.2, 1.5, 1.8, 2.2, 2.7, 3.3, 3.9, 4.7, 5.6, 6.8, 8.2];

impl ResistorLadder {
    /// E12 series values within `[min_ohms, max_ohms]`, ascending.
    pub fn e12(min_ohms: f64, max_ohms: f64) -> Self {
        let mut values = Vec::new();
        let mut decade = 10f64.powf(min_ohms.log10().floor());
        while decade <= max_ohms {
            for m in E12 {
                let v = m * decade;
                if v >= min_ohms && v <= max_ohms {
                    values.push(v);
                }
            }
            decade *= 10.0;
        }
        Self { values }
    }

    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { values }
    }
}

/// Constraints for `tune_components`.
#[derive(Debug, Clone, Copy)]
pub struct TuneConstraints {
    /// Maximum allowed 10%→90% step response time, seconds.
    pub max_response_time: f64,
    /// Minimum photodiode voltage at the unshaded operating point, volts.
    pub linearity_margin: f64,
}

/// 10%→90% step response time for a candidate receiver resistor, with the
/// junction capacitance taken at the mid-scale reference voltage.
pub fn step_response_time(r_r: f64, p: &CircuitParams) -> f64 {
    RISE_1090_TAU * r_r * junction_capacitance(0.5 * p.vcc, p)
}

/// Select circuit resistors from a candidate ladder: the largest receiver
/// resistor whose step response meets `max_response_time`, then the smallest
/// emitter resistor (largest drive) that keeps the unshaded operating point
/// at or above `linearity_margin` without saturating.
pub fn tune_components(
    p: &CircuitParams,
    cons: &TuneConstraints,
    ladder: &ResistorLadder,
) -> Result<(f64, f64)> {
    if ladder.values.is_empty() {
        return Err(Error::Infeasible("empty resistor ladder".into()));
    }
    let r_r = ladder
        .values
        .iter()
        .rev()
        .copied()
        .find(|&rr| step_response_time(rr, p) <= cons.max_response_time)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "response-time constraint: even the smallest ladder resistor ({} ohm) responds \
                 in {:.3e} s > {:.3e} s",
                ladder.values[0],
                step_response_time(ladder.values[0], p),
                cons.max_response_time
            ))
        })?;

    let mut tuned = *p;
    tuned.r_r = r_r;
    for &re in &ladder.values {
        tuned.r_e = re;
        let e_r = received_intensity(emitter_intensity(&tuned), 0.0, &tuned);
        let op = receiver_voltage(e_r, &tuned);
        if !op.saturated && op.volts >= cons.linearity_margin {
            return Ok((r_r, re));
        }
    }
    Err(Error::Infeasible(format!(
        "linearity-margin constraint: no emitter resistor keeps the unshaded operating point \
         above {} V with receiver resistor {} ohm",
        cons.linearity_margin, r_r
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn emitter_intensity_direct_substitution() {
        let mut p = CircuitParams::default();
        p.k1 = 1.0;
        p.a = 100.0;
        p.c1 = 0.0;
        p.r_e = 100.0;
        assert_eq!(emitter_intensity(&p), 1.0);

        p.k1 = 2.0;
        p.a = 50.0;
        p.c1 = 5.0;
        p.r_e = 10.0;
        assert_eq!(emitter_intensity(&p), 15.0);
    }

    #[test]
    fn emitter_intensity_halving_resistor_doubles_drive_term() {
        let mut p = CircuitParams::default();
        p.c1 = 0.0;
        let full = emitter_intensity(&p);
        p.r_e /= 2.0;
        assert!((emitter_intensity(&p) - 2.0 * full).abs() < 1e-12);
    }

    #[test]
    fn receiver_voltage_dark_condition() {
        let mut p = CircuitParams::default();
        p.c2 = 0.0;
        let v = receiver_voltage(0.0, &p);
        assert_eq!(v.volts, p.vcc);
        assert!(!v.saturated);
    }

    #[test]
    fn receiver_voltage_frozen_value() {
        let mut p = CircuitParams::default();
        p.vcc = 3.3;
        p.r_r = 10_000.0;
        p.k2 = 1e-5;
        p.c2 = 0.0;
        let v = receiver_voltage(10.0, &p);
        assert!((v.volts - 2.3).abs() < 1e-12);
    }

    #[test]
    fn receiver_voltage_saturates_low() {
        let p = CircuitParams::default();
        let v = receiver_voltage(1e9, &p);
        assert_eq!(v.volts, 0.0);
        assert!(v.saturated);
    }

    #[test]
    fn received_intensity_occlusion_limits() {
        let mut p = CircuitParams::default();
        p.ambient = 0.0;
        assert_eq!(received_intensity(5.0, 1.0, &p), 0.0);
        p.ambient = 0.25;
        assert_eq!(received_intensity(5.0, 0.0, &p), 5.25);
    }

    #[test]
    fn received_intensity_monotone_in_emitted() {
        let p = CircuitParams::default();
        for shade in [0.0, 0.3, 0.9] {
            assert!(received_intensity(2.0, shade, &p) > received_intensity(1.0, shade, &p));
        }
    }

    #[test]
    fn rc_step_settles_within_one_percent_after_five_tau() {
        let p = CircuitParams::default();
        let level = 2.0;
        let tau = time_constant(level, &p);
        let dt = tau / 10.0;
        let steps = (5.0 * tau / dt).ceil() as usize;
        let mut target = vec![0.0];
        target.extend(std::iter::repeat(level).take(steps + 4));
        let out = rc_response(&target, dt, &p);
        let settled = out[steps];
        assert!(
            (settled - level).abs() / level < 0.01,
            "after 5 tau the output is {settled}, expected within 1% of {level}"
        );
    }

    #[test]
    fn time_constant_scales_with_receiver_resistor() {
        let mut p = CircuitParams::default();
        let t1 = time_constant(1.5, &p);
        p.r_r *= 2.0;
        assert!((time_constant(1.5, &p) - 2.0 * t1).abs() < 1e-18);
    }

    #[test]
    fn rc_constant_input_is_a_fixed_point() {
        let p = CircuitParams::default();
        let target = vec![1.234; 64];
        let out = rc_response(&target, 2e-4, &p);
        for v in out {
            assert_eq!(v, 1.234);
        }
    }

    #[test]
    fn rc_never_overshoots_monotone_input() {
        let p = CircuitParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut target: Vec<f64> = vec![0.1];
            for _ in 0..200 {
                let prev = *target.last().unwrap();
                target.push((prev + rng.gen_range(0.0..0.05)).min(3.3));
            }
            let out = rc_response(&target, 5e-5, &p);
            let mut high = target[0];
            for (o, t) in out.iter().zip(&target) {
                high = high.max(*t);
                assert!(*o <= high + 1e-12, "overshoot: {o} above running max {high}");
            }
        }
    }

    #[test]
    fn adc_endpoints_and_midpoint() {
        let p = CircuitParams::default();
        assert_eq!(adc_quantize(0.0, &p).counts, 0);
        assert_eq!(adc_quantize(p.vcc, &p).counts, 4095);
        // 0.5 * 4095 = 2047.5 rounds half up.
        assert_eq!(adc_quantize(p.vcc / 2.0, &p).counts, 2048);
    }

    #[test]
    fn adc_frozen_value() {
        let p = CircuitParams::default();
        assert_eq!(adc_quantize(2.3, &p).counts, 2854);
    }

    #[test]
    fn adc_clamps_out_of_range_with_flag() {
        let p = CircuitParams::default();
        let low = adc_quantize(-0.1, &p);
        assert_eq!((low.counts, low.saturated), (0, true));
        let high = adc_quantize(3.4, &p);
        assert_eq!((high.counts, high.saturated), (4095, true));
    }

    #[test]
    fn adc_monotone_and_idempotent_on_reconstruction() {
        let p = CircuitParams::default();
        let mut prev = 0;
        for k in 0..=2000 {
            let u = k as f64 / 2000.0 * p.vcc;
            let c = adc_quantize(u, &p).counts;
            assert!(c >= prev);
            prev = c;
        }
        for c in (0..=4095).step_by(17) {
            let u = c as f64 * p.volts_per_count();
            assert_eq!(adc_quantize(u, &p).counts, c as u16);
        }
    }

    #[test]
    fn quantization_error_at_most_half_lsb() {
        let p = CircuitParams::default();
        let lsb = p.volts_per_count();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let u = rng.gen_range(0.0..p.vcc);
            let c = adc_quantize(u, &p).counts;
            assert!((c as f64 * lsb - u).abs() <= 0.5 * lsb + 1e-12);
        }
    }

    #[test]
    fn voltage_change_grows_with_receiver_resistor() {
        // Fixed shading pulse at five non-saturating ladder points.
        let shade = 0.2;
        let mut prev_delta = 0.0;
        for rr in [1_000.0, 2_200.0, 4_700.0, 10_000.0, 18_000.0] {
            let mut p = CircuitParams::default();
            p.r_r = rr;
            let e_e = emitter_intensity(&p);
            let base = receiver_voltage(received_intensity(e_e, 0.0, &p), &p);
            let shaded = receiver_voltage(received_intensity(e_e, shade, &p), &p);
            assert!(!base.saturated && !shaded.saturated);
            let delta = shaded.volts - base.volts;
            assert!(delta > prev_delta, "delta did not grow at r_r={rr}");
            prev_delta = delta;
        }
    }

    #[test]
    fn voltage_monotone_in_shade_until_saturation() {
        let p = CircuitParams::default();
        let e_e = emitter_intensity(&p);
        let mut prev = -1.0;
        for k in 0..=100 {
            let shade = k as f64 / 100.0;
            let v = receiver_voltage(received_intensity(e_e, shade, &p), &p);
            assert!(v.volts >= prev);
            if !v.saturated {
                assert!(v.volts > prev);
            }
            prev = v.volts;
        }
    }

    #[test]
    fn tune_loose_constraints_returns_ladder_extremes() {
        let p = CircuitParams::default();
        let ladder = ResistorLadder::from_values(vec![100.0, 1_000.0, 10_000.0]);
        let cons = TuneConstraints { max_response_time: 10.0, linearity_margin: 0.0 };
        let (rr, re) = tune_components(&p, &cons, &ladder).unwrap();
        assert_eq!((rr, re), (10_000.0, 100.0));
    }

    #[test]
    fn tune_unachievable_response_time_is_infeasible() {
        let p = CircuitParams::default();
        let ladder = ResistorLadder::from_values(vec![1_000.0, 10_000.0]);
        let cons = TuneConstraints { max_response_time: 1e-12, linearity_margin: 0.5 };
        let err = tune_components(&p, &cons, &ladder).unwrap_err();
        assert!(err.to_string().contains("response-time"), "{err}");
    }

    #[test]
    fn tune_single_feasible_pair_matches_exhaustive_check() {
        let p = CircuitParams::default();
        let ladder = ResistorLadder::from_values(vec![470.0, 4_700.0, 47_000.0]);
        // Response budget admits only 470 ohm; the margin admits only the
        // weakest drive, leaving a single feasible pair.
        let cons = TuneConstraints { max_response_time: 5e-6, linearity_margin: 3.299 };

        let feasible = |rr: f64, re: f64| {
            let mut q = p;
            q.r_r = rr;
            q.r_e = re;
            let op = receiver_voltage(received_intensity(emitter_intensity(&q), 0.0, &q), &q);
            step_response_time(rr, &q) <= cons.max_response_time
                && !op.saturated
                && op.volts >= cons.linearity_margin
        };
        let mut all: Vec<(f64, f64)> = Vec::new();
        for &rr in &ladder.values {
            for &re in &ladder.values {
                if feasible(rr, re) {
                    all.push((rr, re));
                }
            }
        }
        assert_eq!(all.len(), 1, "expected exactly one feasible pair, got {all:?}");
        assert_eq!(tune_components(&p, &cons, &ladder).unwrap(), all[0]);
    }

    #[test]
    fn e12_ladder_spans_requested_bounds() {
        let ladder = ResistorLadder::e12(1_000.0, 1_000_000.0);
        assert_eq!(*ladder.values.first().unwrap(), 1_000.0);
        assert_eq!(*ladder.values.last().unwrap(), 1_000_000.0);
        assert!(ladder.values.windows(2).all(|w| w[0] < w[1]));
    }
}

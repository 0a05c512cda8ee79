//! Evaluation quantities: the two-channel sensitivity measure, trigger
//! accuracy, and multi-class classification metrics.

use crate::{Error, Result};

/// Overall sensitivity of a two-channel detection: a simplified harmonic mean
/// of the per-channel peak voltage changes (millivolts). The weaker channel
/// dominates — a dead channel drives the measure toward zero.
pub fn eta(dv1: f64, dv2: f64) -> Result<f64> {
    if dv1 < 0.0 || dv2 < 0.0 {
        return Err(Error::Domain(format!("peak voltage changes must be >= 0, got {dv1}, {dv2}")));
    }
    if dv1 + dv2 == 0.0 {
        return Err(Error::Domain("eta undefined when both channels are zero".into()));
    }
    Ok(dv1 * dv2 / (dv1 + dv2))
}

/// Convert an ADC count excursion to millivolts for a given supply/width.
pub fn counts_to_millivolts(counts: f64, vcc: f64, adc_bits: u32) -> f64 {
    counts * vcc * 1000.0 / ((1u32 << adc_bits) - 1) as f64
}

/// Trigger accuracy in percent: `100 * (1 - |triggered - actual| / actual)`.
pub fn trigger_accuracy(triggered: u64, actual: u64) -> Result<f64> {
    if actual == 0 {
        return Err(Error::Domain("trigger accuracy undefined for zero actual drops".into()));
    }
    let diff = triggered.abs_diff(actual) as f64;
    Ok(100.0 * (1.0 - diff / actual as f64))
}

/// Row-major K×K confusion matrix; rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        Self { class_names, counts: vec![vec![0; k]; k] }
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        self.counts[truth][prediction] += 1;
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new((0..k).map(|i| i.to_string()).collect());
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Elementwise merge; confusion matrices add associatively, so shards
    /// computed in parallel can be reduced in any order.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names != self.class_names {
            return Err(Error::Contract("cannot merge matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\prediction");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// The metric block reported for every classification evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub kappa: f64,
}

impl ClassificationMetrics {
    pub const CSV_HEADER: &'static str = "accuracy,macro_precision,macro_recall,macro_f1,kappa";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1, self.kappa
        )
    }
}

/// Accuracy, macro-averaged precision/recall/F1 (empty classes score zero),
/// and Cohen's kappa with chance agreement from the marginal products.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("empty confusion matrix".into()));
    }
    let k = cm.class_names.len();
    let n = total as f64;
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let accuracy = trace as f64 / n;

    let mut macro_precision = 0.0;
    let mut macro_recall = 0.0;
    let mut macro_f1 = 0.0;
    let mut p_e = 0.0;
    for i in 0..k {
        let tp = cm.counts[i][i] as f64;
        let row: u64 = cm.counts[i].iter().sum();
        let col: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let precision = if col == 0 { 0.0 } else { tp / col as f64 };
        let recall = if row == 0 { 0.0 } else { tp / row as f64 };
        let f1 =
            if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        macro_precision += precision;
        macro_recall += recall;
        macro_f1 += f1;
        p_e += (row as f64 / n) * (col as f64 / n);
    }
    macro_precision /= k as f64;
    macro_recall /= k as f64;
    macro_f1 /= k as f64;

    let kappa = if (1.0 - p_e).abs() < 1e-15 {
        // Degenerate marginals: all mass in one class. Perfect agreement if
        // the trace holds everything, no skill otherwise.
        if trace == total {
            1.0
        } else {
            0.0
        }
    } else {
        (accuracy - p_e) / (1.0 - p_e)
    };

    Ok(ClassificationMetrics { accuracy, macro_precision, macro_recall, macro_f1, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eta_symmetric_case_halves() {
        assert_eq!(eta(100.0, 100.0).unwrap(), 50.0);
    }

    #[test]
    fn eta_direct_substitution() {
        assert!((eta(100.0, 50.0).unwrap() - 33.33).abs() <= 0.01);
    }

    #[test]
    fn eta_dominated_by_weak_channel() {
        let mut prev = f64::INFINITY;
        for dv2 in [50.0, 10.0, 1.0, 0.01, 0.0] {
            let v = eta(100.0, dv2).unwrap_or(f64::NAN);
            if dv2 == 0.0 {
                // One live channel still defines eta (= 0); both-zero errors.
                assert_eq!(v, 0.0);
            } else {
                assert!(v < prev && v <= dv2);
                prev = v;
            }
        }
        assert!(eta(0.0, 0.0).is_err());
    }

    #[test]
    fn eta_symmetry_and_weak_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let a = rng.gen_range(0.001..200.0);
            let b = rng.gen_range(0.001..200.0);
            let e1 = eta(a, b).unwrap();
            let e2 = eta(b, a).unwrap();
            assert!((e1 - e2).abs() < 1e-12);
            assert!(e1 <= a.min(b) + 1e-12);
        }
    }

    #[test]
    fn trigger_accuracy_cases() {
        assert_eq!(trigger_accuracy(200, 200).unwrap(), 100.0);
        assert_eq!(trigger_accuracy(204, 200).unwrap(), 98.0);
        assert_eq!(trigger_accuracy(0, 200).unwrap(), 0.0);
        assert!(trigger_accuracy(5, 0).is_err());
    }

    #[test]
    fn perfect_classifier_metrics() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for i in 0..3 {
            for _ in 0..10 {
                cm.record(i, i);
            }
        }
        let m = classification_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.kappa, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn two_class_frozen_kappa() {
        let mut cm = ConfusionMatrix::new(vec!["0".into(), "1".into()]);
        cm.counts = vec![vec![40, 10], vec![20, 30]];
        let m = classification_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.kappa - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_one_iff_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let k = rng.gen_range(2..5usize);
            let mut cm = ConfusionMatrix::new((0..k).map(|i| i.to_string()).collect());
            let mut diagonal = true;
            for t in 0..k {
                for p in 0..k {
                    let c = if rng.gen_bool(0.5) { rng.gen_range(0..20) } else { 0 };
                    cm.counts[t][p] = c;
                    if t != p && c > 0 {
                        diagonal = false;
                    }
                }
            }
            if cm.total() == 0 {
                continue;
            }
            let m = classification_metrics(&cm).unwrap();
            assert_eq!((m.kappa - 1.0).abs() < 1e-12, diagonal, "matrix {:?}", cm.counts);
        }
    }

    #[test]
    fn metrics_match_per_sample_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let k = rng.gen_range(2..6usize);
            let n = rng.gen_range(1..60usize);
            let pairs: Vec<(usize, usize)> =
                (0..n).map(|_| (rng.gen_range(0..k), rng.gen_range(0..k))).collect();
            let cm = ConfusionMatrix::from_pairs(k, pairs.iter().copied());
            let m = classification_metrics(&cm).unwrap();

            // Brute force straight from the label pairs.
            let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
            let acc = correct / n as f64;
            let (mut mp, mut mr, mut mf) = (0.0, 0.0, 0.0);
            let mut pe = 0.0;
            for c in 0..k {
                let tp = pairs.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
                let pred_c = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
                let truth_c = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
                let prec = if pred_c == 0.0 { 0.0 } else { tp / pred_c };
                let rec = if truth_c == 0.0 { 0.0 } else { tp / truth_c };
                mp += prec;
                mr += rec;
                mf += if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
                pe += (truth_c / n as f64) * (pred_c / n as f64);
            }
            let k_f = k as f64;
            assert!((m.accuracy - acc).abs() < 1e-12);
            assert!((m.macro_precision - mp / k_f).abs() < 1e-12);
            assert!((m.macro_recall - mr / k_f).abs() < 1e-12);
            assert!((m.macro_f1 - mf / k_f).abs() < 1e-12);
            if (1.0 - pe).abs() > 1e-15 {
                assert!((m.kappa - (acc - pe) / (1.0 - pe)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn independent_predictions_have_near_zero_kappa() {
        // Null model: predictions drawn independently of truth, matched marginals.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p_truth = [0.5, 0.3, 0.2];
        let p_pred = [0.4, 0.4, 0.2];
        let draw = |rng: &mut ChaCha8Rng, p: &[f64]| {
            let x: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            for (i, w) in p.iter().enumerate() {
                acc += w;
                if x < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        for _ in 0..100_000 {
            cm.record(draw(&mut rng, &p_truth), draw(&mut rng, &p_pred));
        }
        let m = classification_metrics(&cm).unwrap();
        assert!(m.kappa.abs() < 0.02, "kappa {:.4} not near zero", m.kappa);
    }

    #[test]
    fn merge_is_elementwise_addition() {
        let mut a = ConfusionMatrix::from_pairs(3, [(0, 0), (1, 2)]);
        let b = ConfusionMatrix::from_pairs(3, [(0, 0), (2, 2)]);
        a.merge(&b).unwrap();
        assert_eq!(a.counts[0][0], 2);
        assert_eq!(a.counts[1][2], 1);
        assert_eq!(a.counts[2][2], 1);
    }

    #[test]
    fn metrics_json_report_has_fixed_fields() {
        let cm = ConfusionMatrix::from_pairs(2, [(0, 0), (1, 1), (0, 1)]);
        let m = classification_metrics(&cm).unwrap();
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        for key in ["accuracy", "macro_precision", "macro_recall", "macro_f1", "kappa"] {
            assert!(v.get(key).is_some(), "missing report field {key}");
        }
    }
}

//! Attack-cost measure, success-rate aggregation, and confusion matrices.
//!
//! The cost of an adversarial example is a segmental signal-to-perturbation
//! ratio: split the window into fixed-size segments, take
//! `log10(signal energy / noise energy)` per segment and average. Higher
//! cost means a stealthier attack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::NUM_CLASSES;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

/// Segmentation policy for the attack cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// Segment size S; segments tile the window from the start and a final
    /// partial segment is dropped.
    pub segment_size: usize,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { segment_size: 256 }
    }
}

/// Signal energy: sum of squared samples.
pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Segmental energy-ratio cost of one adversarial example.
///
/// Per segment starting at `0, S, 2S, ..`: `log10(E_seg(x) / E_seg(n))`;
/// the cost is the mean over segments. A segment with zero noise energy
/// makes the whole cost `+inf` — the zero-perturbation sentinel; callers
/// exclude such rows from mean-cost aggregation.
pub fn attack_cost(x: &[f64], noise: &[f64], cfg: CostConfig) -> Result<f64, MetricsError> {
    let s = cfg.segment_size;
    if s == 0 {
        return Err(MetricsError::Config("segment size must be >= 1".into()));
    }
    if x.len() != noise.len() {
        return Err(MetricsError::Config(format!(
            "signal has {} samples, noise {}",
            x.len(),
            noise.len()
        )));
    }
    if x.len() < s {
        return Err(MetricsError::Config(format!(
            "no full segment: {} samples with segment size {s}",
            x.len()
        )));
    }
    let segments = x.len() / s;
    let mut acc = 0.0;
    for j in 0..segments {
        let ex = energy(&x[j * s..(j + 1) * s]);
        let en = energy(&noise[j * s..(j + 1) * s]);
        if en == 0.0 {
            return Ok(f64::INFINITY);
        }
        acc += (ex / en).log10();
    }
    Ok(acc / segments as f64)
}

/// `attack_cost` expressed in decibels (10·log10 instead of log10).
pub fn attack_cost_db(x: &[f64], noise: &[f64], cfg: CostConfig) -> Result<f64, MetricsError> {
    Ok(10.0 * attack_cost(x, noise, cfg)?)
}

/// One row of the success-rate tables: per (model, method, mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub model: String,
    pub method: String,
    pub mode: String,
    /// Percent success over all eligible rows.
    pub mean: f64,
    /// Percent success of the best consecutive 64-row batch.
    pub best: f64,
    /// Mean per-row cost over rows with finite cost.
    pub mean_cost: f64,
    /// Cost segment size the row was computed with.
    pub segment_size: usize,
    pub seed: u64,
}

/// Batch granularity for the "best" column.
pub const REPORT_BATCH: usize = 64;

/// Aggregate per-row outcomes into mean/best/mean-cost.
///
/// `best` is the maximum success fraction over consecutive `REPORT_BATCH`-row
/// batches (a trailing partial batch counts with its own size). Rows with
/// non-finite cost (zero-noise sentinel) are excluded from the cost mean;
/// if no row has finite cost the mean cost is `+inf`.
pub fn success_rates(
    success: &[bool],
    costs: &[f64],
    model: &str,
    method: &str,
    mode: &str,
    segment_size: usize,
    seed: u64,
) -> Result<SuccessReport, MetricsError> {
    if success.is_empty() {
        return Err(MetricsError::Evaluation("no eligible rows".into()));
    }
    if success.len() != costs.len() {
        return Err(MetricsError::Evaluation(format!(
            "{} success flags vs {} costs",
            success.len(),
            costs.len()
        )));
    }
    let total = success.len() as f64;
    let wins = success.iter().filter(|&&s| s).count() as f64;
    let mean = 100.0 * wins / total;
    let best = success
        .chunks(REPORT_BATCH)
        .map(|chunk| {
            100.0 * chunk.iter().filter(|&&s| s).count() as f64 / chunk.len() as f64
        })
        .fold(0.0, f64::max);
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let mean_cost = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(SuccessReport {
        model: model.to_string(),
        method: method.to_string(),
        mode: mode.to_string(),
        mean,
        best,
        mean_cost,
        segment_size,
        seed,
    })
}

/// CSV header shared by every report file.
pub const REPORT_CSV_HEADER: &str = "Model,Method,Mode,Mean,Best,Cost,S,Seed";

impl SuccessReport {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model,
            self.method,
            self.mode,
            self.mean,
            self.best,
            self.mean_cost,
            self.segment_size,
            self.seed
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self, MetricsError> {
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(MetricsError::Evaluation(format!(
                "want 8 CSV fields, got {} in {row:?}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64, MetricsError> {
            s.parse()
                .map_err(|e| MetricsError::Evaluation(format!("bad number {s:?}: {e}")))
        };
        Ok(Self {
            model: fields[0].to_string(),
            method: fields[1].to_string(),
            mode: fields[2].to_string(),
            mean: num(fields[3])?,
            best: num(fields[4])?,
            mean_cost: num(fields[5])?,
            segment_size: fields[6]
                .parse()
                .map_err(|e| MetricsError::Evaluation(format!("bad segment size: {e}")))?,
            seed: fields[7]
                .parse()
                .map_err(|e| MetricsError::Evaluation(format!("bad seed: {e}")))?,
        })
    }
}

/// 10x10 counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Fraction of all counts landing in each predicted-class column.
    pub fn column_mass(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        (0..NUM_CLASSES)
            .map(|j| self.counts.iter().map(|row| row[j]).sum::<u64>() as f64 / total)
            .collect()
    }

    /// Largest column mass and its class id — the dominant "sink" class.
    pub fn max_column_mass(&self) -> (usize, f64) {
        self.column_mass()
            .into_iter()
            .enumerate()
            .fold((0, 0.0), |acc, (j, m)| if m > acc.1 { (j, m) } else { acc })
    }
}

/// Count (true, predicted) label pairs.
pub fn confusion(true_labels: &[usize], preds: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if true_labels.len() != preds.len() {
        return Err(MetricsError::Evaluation(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            preds.len()
        )));
    }
    let mut counts = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&t, &p) in true_labels.iter().zip(preds) {
        if t >= NUM_CLASSES {
            return Err(MetricsError::LabelOutOfRange(t));
        }
        if p >= NUM_CLASSES {
            return Err(MetricsError::LabelOutOfRange(p));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_trivial_values() {
        assert_eq!(energy(&[0.0; 16]), 0.0);
        assert_eq!(energy(&[1.0, 1.0, 1.0, 1.0]), 4.0);
    }

    #[test]
    fn energy_matches_scalar_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..2048).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut oracle = 0.0;
        for &v in &x {
            oracle += v.abs().powi(2);
        }
        let got = energy(&x);
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn cost_of_noise_equal_to_signal_is_zero() {
        let x: Vec<f64> = (0..2048).map(|i| ((i as f64) * 0.01).sin() + 0.5).collect();
        let cost = attack_cost(&x, &x, CostConfig::default()).unwrap();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn cost_of_tenth_scale_noise_is_two() {
        let x: Vec<f64> = (0..2048).map(|i| ((i as f64) * 0.037).cos() + 0.4).collect();
        let n: Vec<f64> = x.iter().map(|v| v / 10.0).collect();
        let cost = attack_cost(&x, &n, CostConfig::default()).unwrap();
        assert!((cost - 2.0).abs() < 1e-12);
        let db = attack_cost_db(&x, &n, CostConfig::default()).unwrap();
        assert!((db - 20.0).abs() < 1e-11);
    }

    #[test]
    fn constant_magnitude_noise_matches_scalar_oracle() {
        // Unclipped FGSM noise with nonzero sign everywhere: |n(k)| = eps,
        // so each segment's noise energy is exactly S * eps^2.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let eps = 0.03;
        let x: Vec<f64> = (0..2048).map(|_| rng.gen_range(0.0..1.0)).collect();
        let n: Vec<f64> = (0..2048)
            .map(|_| if rng.gen_bool(0.5) { eps } else { -eps })
            .collect();
        let cfg = CostConfig::default();
        let cost = attack_cost(&x, &n, cfg).unwrap();

        let s = cfg.segment_size;
        let seg_noise = s as f64 * eps * eps;
        let mut oracle = 0.0;
        let segs = x.len() / s;
        for j in 0..segs {
            let mut ex = 0.0;
            for k in j * s..(j + 1) * s {
                ex += x[k] * x[k];
            }
            oracle += (ex / seg_noise).log10();
        }
        oracle /= segs as f64;
        assert!((cost - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_returns_infinity_sentinel() {
        let x = vec![0.5; 2048];
        let n = vec![0.0; 2048];
        assert_eq!(attack_cost(&x, &n, CostConfig::default()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn cost_requires_full_segment() {
        let x = vec![0.5; 100];
        let n = vec![0.1; 100];
        assert!(attack_cost(&x, &n, CostConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn cost_of_scaled_signal_is_minus_log10_c_squared(
            c in 0.001f64..100.0,
            s in prop::sample::select(vec![64usize, 128, 256, 512]),
        ) {
            let x: Vec<f64> = (0..2048).map(|i| ((i as f64) * 0.013).sin() + 0.7).collect();
            let n: Vec<f64> = x.iter().map(|v| c * v).collect();
            let cost = attack_cost(&x, &n, CostConfig { segment_size: s }).unwrap();
            let want = -(c * c).log10();
            prop_assert!((cost - want).abs() < 1e-9, "cost {cost} want {want}");
        }

        #[test]
        fn energy_is_homogeneous_degree_two(c in 0.01f64..50.0) {
            let x: Vec<f64> = (0..512).map(|i| ((i as f64) * 0.21).sin() * 1.3).collect();
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let lhs = energy(&scaled);
            let rhs = c * c * energy(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }
    }

    #[test]
    fn cost_invariant_to_segment_order() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let s = 256;
        let x: Vec<f64> = (0..2048).map(|_| rng.gen_range(0.1..1.0)).collect();
        let n: Vec<f64> = (0..2048).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let cfg = CostConfig { segment_size: s };
        let base = attack_cost(&x, &n, cfg).unwrap();

        let mut order: Vec<usize> = (0..x.len() / s).collect();
        order.shuffle(&mut rng);
        let mut xp = Vec::new();
        let mut np = Vec::new();
        for &j in &order {
            xp.extend_from_slice(&x[j * s..(j + 1) * s]);
            np.extend_from_slice(&n[j * s..(j + 1) * s]);
        }
        let permuted = attack_cost(&xp, &np, cfg).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn success_rates_all_and_single() {
        let all = success_rates(&[true; 130], &[1.0; 130], "m", "fgsm", "untargeted", 256, 0).unwrap();
        assert_eq!(all.mean, 100.0);
        assert_eq!(all.best, 100.0);

        let mut success = vec![false; 128];
        success[3] = true;
        let one = success_rates(&success, &[1.0; 128], "m", "fgsm", "untargeted", 256, 0).unwrap();
        assert!((one.best - 100.0 / 64.0).abs() < 1e-12); // 1.5625
        assert!((one.mean - 100.0 / 128.0).abs() < 1e-12);
        assert!(one.mean <= one.best);
    }

    #[test]
    fn success_rates_skip_infinite_costs() {
        let r = success_rates(
            &[true, false, true],
            &[2.0, f64::INFINITY, 4.0],
            "m",
            "pgd",
            "targeted",
            256,
            1,
        )
        .unwrap();
        assert!((r.mean_cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rows_error() {
        assert!(success_rates(&[], &[], "m", "fgsm", "untargeted", 256, 0).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let r = SuccessReport {
            model: "wdcnn".into(),
            method: "pgd".into(),
            mode: "untargeted".into(),
            mean: 97.55,
            best: 100.0,
            mean_cost: 0.7312345678901234,
            segment_size: 256,
            seed: 7,
        };
        let row = r.to_csv_row();
        assert_eq!(SuccessReport::from_csv_row(&row).unwrap(), r);

        let inf = SuccessReport { mean_cost: f64::INFINITY, ..r };
        let row = inf.to_csv_row();
        assert_eq!(SuccessReport::from_csv_row(&row).unwrap(), inf);
    }

    #[test]
    fn confusion_diagonal_and_single_column() {
        let labels: Vec<usize> = (0..10).cycle().take(50).collect();
        let diag = confusion(&labels, &labels).unwrap();
        for (i, row) in diag.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert_eq!(c > 0, i == j);
            }
        }

        let nines = vec![9usize; 50];
        let m = confusion(&labels, &nines).unwrap();
        let mass = m.column_mass();
        assert_eq!(mass[9], 1.0);
        assert_eq!(m.max_column_mass(), (9, 1.0));
        for j in 0..9 {
            assert_eq!(mass[j], 0.0);
        }
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        assert!(matches!(
            confusion(&[11], &[0]),
            Err(MetricsError::LabelOutOfRange(11))
        ));
    }
}

//! Evaluation: rank-based AUC, macro-averaged F1 and the multi-run
//! trimmed-mean protocol.

use crate::error::{Error, Result};
use crate::graph::Role;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub f1_macro: f64,
    /// Anomaly-probability threshold used for F1 (0.5 = argmax).
    pub threshold: f64,
    pub split: Role,
}

/// Mann–Whitney AUC over anomaly scores; ties contribute 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-class F1 (0/0 → 0) averaged over both classes.
pub fn f1_macro(predictions: &[u8], labels: &[u8]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!labels.is_empty());
    let f1_for = |class: u8| -> f64 {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &l) in predictions.iter().zip(labels) {
            match ((p == class), (l == class)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if 2 * tp + fp + fn_ == 0 {
            return 0.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    (f1_for(0) + f1_for(1)) / 2.0
}

/// Mean after removing exactly one maximum and one minimum occurrence.
pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "trimmed mean needs at least 3 values, got {}",
            values.len()
        )));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let total: f64 = values.iter().sum();
    Ok((total - max - min) / (values.len() - 2) as f64)
}

/// Anomaly scores (probability of class 1) from `N×2` logits.
pub fn anomaly_scores(logits: &[f64]) -> Vec<f64> {
    logits
        .chunks(2)
        .map(|row| {
            let m = row[0].max(row[1]);
            let e0 = (row[0] - m).exp();
            let e1 = (row[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect()
}

/// Scores → binary predictions at a probability threshold.
pub fn predict(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| (s > threshold) as u8).collect()
}

/// Sweeps 51 evenly spaced thresholds on `[0, 1]` and returns the one with
/// the best F1 on the given (validation) scores.
pub fn best_threshold(scores: &[f64], labels: &[u8]) -> f64 {
    let mut best = (0.5, f64::NEG_INFINITY);
    for i in 0..=50 {
        let t = i as f64 / 50.0;
        let f1 = f1_macro(&predict(scores, t), labels);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best.0
}

/// Per-run results with trimmed-mean aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunAggregate {
    pub per_run: Vec<RunResult>,
    pub auc_trimmed_mean: f64,
    pub f1_trimmed_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub test: EvalResult,
    pub best_epoch: usize,
    pub best_validation_auc: f64,
}

impl RunAggregate {
    pub fn from_runs(per_run: Vec<RunResult>) -> Result<Self> {
        let aucs: Vec<f64> = per_run.iter().map(|r| r.test.auc).collect();
        let f1s: Vec<f64> = per_run.iter().map(|r| r.test.f1_macro).collect();
        Ok(RunAggregate {
            auc_trimmed_mean: trimmed_mean(&aucs)?,
            f1_trimmed_mean: trimmed_mean(&f1s)?,
            per_run,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force pair-counting oracle with tie handling.
    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
            if li != 1 {
                continue;
            }
            for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
                if lj != 0 || i == j {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_closed_forms() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!((auc(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = crate::graph::seeded_rng(17);
        for trial in 0..100 {
            let n = 5 + trial % 40;
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            // quantized scores to force ties
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() * 8.0).round() / 8.0)
                .collect();
            let got = auc(&scores, &labels).unwrap();
            let want = auc_oracle(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = crate::graph::seeded_rng(18);
        let n = 60;
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.25) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| s.tanh() * 3.0 + 10.0).collect();
        assert!((auc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn f1_closed_forms() {
        assert_eq!(f1_macro(&[1, 0, 1, 0], &[1, 0, 1, 0]), 1.0);
        let got = f1_macro(&[1, 0, 1, 0], &[1, 0, 0, 0]);
        assert!((got - (2.0 / 3.0 + 4.0 / 5.0) / 2.0).abs() < 1e-12);
        // all-negative predictions: positive-class F1 is 0 by convention
        let got = f1_macro(&[0, 0, 0, 0], &[1, 0, 1, 0]);
        assert!((got - 0.5 * (2.0 * 2.0 / (2.0 * 2.0 + 2.0))).abs() < 1e-12);
    }

    #[test]
    fn f1_symmetric_under_class_swap() {
        let mut rng = crate::graph::seeded_rng(19);
        for _ in 0..50 {
            let n = 20;
            let preds: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
            let swapped_p: Vec<u8> = preds.iter().map(|&p| 1 - p).collect();
            let swapped_l: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
            assert!((f1_macro(&preds, &labels) - f1_macro(&swapped_p, &swapped_l)).abs() < 1e-12);
        }
    }

    #[test]
    fn trimmed_mean_cases() {
        assert_eq!(trimmed_mean(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(trimmed_mean(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 5.0);
        assert_eq!(trimmed_mean(&[0.0, 1.0, 2.0, 3.0, 100.0]).unwrap(), 2.0);
        assert!(trimmed_mean(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn anomaly_scores_match_softmax() {
        let logits = [0.0, 0.0, -2.0, 2.0];
        let scores = anomaly_scores(&logits);
        assert!((scores[0] - 0.5).abs() < 1e-12);
        assert!((scores[1] - 1.0 / (1.0 + (-4.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn threshold_sweep_beats_default_on_skewed_data() {
        // 1 positive with score 0.4 among negatives below 0.3: argmax (0.5)
        // misses it, the sweep finds a separating threshold
        let scores = [0.1, 0.2, 0.25, 0.4, 0.15];
        let labels = [0, 0, 0, 1, 0];
        let t = best_threshold(&scores, &labels);
        let swept = f1_macro(&predict(&scores, t), &labels);
        let argmax = f1_macro(&predict(&scores, 0.5), &labels);
        assert!(swept > argmax);
        assert_eq!(swept, 1.0);
    }
}

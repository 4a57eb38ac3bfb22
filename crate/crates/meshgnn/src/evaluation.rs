//! ROC curves and AUC for binary scores.

use serde::Serialize;

use crate::error::{Error, Result};

/// ROC curve over all distinct score thresholds plus a leading sentinel at
/// +inf, so the curve runs from (0,0) to (1,1). `auc` is the trapezoidal
/// integral of tpr over fpr. Equal scores collapse into a single step.
#[derive(Debug, Clone, Serialize)]
pub struct RocResult {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(
            "both classes must be present to build a ROC curve".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(threshold);
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
    }

    let mut auc = 0.0;
    for k in 1..fpr.len() {
        auc += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2.0;
    }

    Ok(RocResult {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

impl RocResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for ((t, f), p) in self.thresholds.iter().zip(&self.fpr).zip(&self.tpr) {
            out.push_str(&format!("{t},{f},{p}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// Pair-counting oracle: (concordant + 0.5 * ties) / (n_pos * n_neg).
    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
            for (&sj, &lj) in scores.iter().zip(labels).skip(i + 1) {
                let (pos, neg) = match (li, lj) {
                    (1, 0) => (si, sj),
                    (0, 1) => (sj, si),
                    _ => continue,
                };
                pairs += 1.0;
                if pos > neg {
                    concordant += 1.0;
                } else if pos == neg {
                    concordant += 0.5;
                }
            }
        }
        concordant / pairs
    }

    #[test]
    fn perfect_separation_is_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let roc = roc_auc(&scores, &labels).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(*roc.fpr.first().unwrap(), 0.0);
        assert_eq!(*roc.tpr.last().unwrap(), 1.0);
    }

    #[test]
    fn reversed_scores_are_auc_zero() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc(&scores, &labels).unwrap().auc, 0.0);
    }

    #[test]
    fn matches_pairwise_statistic_with_ties() {
        let mut rng = stream(17, "test/auc");
        for trial in 0..30 {
            let n = rng.random_range(10..200);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0.0f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let roc = roc_auc(&scores, &labels).unwrap();
            let oracle = pairwise_auc(&scores, &labels);
            assert!(
                (roc.auc - oracle).abs() < 1e-12,
                "trial {trial}: {} vs {oracle}",
                roc.auc
            );
        }
    }

    #[test]
    fn curve_is_monotone_from_origin_to_one_one() {
        let mut rng = stream(18, "test/curve");
        let scores: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let roc = roc_auc(&scores, &labels).unwrap();
        assert_eq!((roc.fpr[0], roc.tpr[0]), (0.0, 0.0));
        assert_eq!((*roc.fpr.last().unwrap(), *roc.tpr.last().unwrap()), (1.0, 1.0));
        for k in 1..roc.fpr.len() {
            assert!(roc.fpr[k] >= roc.fpr[k - 1]);
            assert!(roc.tpr[k] >= roc.tpr[k - 1]);
        }
    }

    #[test]
    fn invariant_under_monotone_transform_and_negation_symmetry() {
        let mut rng = stream(19, "test/invariance");
        let scores: Vec<f64> = (0..150).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<u8> = (0..150).map(|_| rng.random_range(0..2) as u8).collect();
        let base = roc_auc(&scores, &labels).unwrap().auc;

        let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp()).collect();
        let warped_auc = roc_auc(&warped, &labels).unwrap().auc;
        assert!((base - warped_auc).abs() < 1e-12);

        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let negated_auc = roc_auc(&negated, &labels).unwrap().auc;
        assert!((base + negated_auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn negation_and_monotone_invariance(
                mut data in proptest::collection::vec((-1e3f64..1e3, any::<bool>()), 2..80)
            ) {
                data.push((0.25, true));
                data.push((0.75, false));
                // Quantize so strictly increasing maps cannot merge scores
                // through rounding.
                let scores: Vec<f64> = data.iter().map(|(s, _)| (s * 16.0).round() / 16.0).collect();
                let labels: Vec<u8> = data.iter().map(|(_, l)| u8::from(*l)).collect();
                let base = roc_auc(&scores, &labels).unwrap().auc;

                let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
                let neg_auc = roc_auc(&negated, &labels).unwrap().auc;
                prop_assert!((base + neg_auc - 1.0).abs() < 1e-12);

                let warped: Vec<f64> = scores.iter().map(|s| s.atan()).collect();
                let warped_auc = roc_auc(&warped, &labels).unwrap().auc;
                prop_assert!((base - warped_auc).abs() < 1e-12);

                let scaled: Vec<f64> = scores.iter().map(|s| s * 4.0).collect();
                let scaled_auc = roc_auc(&scaled, &labels).unwrap().auc;
                prop_assert_eq!(base, scaled_auc);
            }
        }
    }
}

//! Ranking evaluation metrics.
//!
//! | Metric | Range | Notes |
//! |--------|-------|-------|
//! | SPC | [-1, 1] | Spearman, average ranks for tied predictions |
//! | KTC | [-1, 1] | Kendall tau-b, O(n log n) |
//! | PRC | [-1, 1] | Pearson against percentile ranks `y / n` |
//! | PAcc | [0, 1] | pairwise accuracy, ties earn half credit |
//! | NDCG@k | (0, 1] | linear gain `rel = y / n` |
//!
//! `truth` is always a tie-free vector of integer ranks (larger is better),
//! `pred` a vector of real scores (larger is better).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::densify;
use crate::error::{Error, Result};

fn check(truth: &[usize], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "truth has {} entries, prediction {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("ranking metrics need at least two items"));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction contains a non-finite score".into()));
    }
    let mut sorted = truth.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("truth ranks contain ties"));
    }
    Ok(())
}

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share rank (start+1 + end) / 2
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = avg;
        }
        start = end;
    }
    out
}

pub fn spearman(truth: &[usize], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let n = truth.len() as f64;
    let rt = densify(truth);
    let rp = average_ranks(pred);
    let d2: f64 = rt.iter().zip(&rp).map(|(&a, &b)| (a as f64 - b).powi(2)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Pair counts with the truth as reference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairCounts {
    total: u64,
    discordant: u64,
    pred_ties: u64,
}

impl PairCounts {
    fn concordant(&self) -> u64 {
        self.total - self.discordant - self.pred_ties
    }
}

/// Sorts by truth, then counts strict inversions of the prediction sequence
/// with a bottom-up merge sort.
fn pair_counts(truth: &[usize], pred: &[f64]) -> PairCounts {
    let n = truth.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by_key(|&i| truth[i]);
    let mut seq: Vec<f64> = order.iter().map(|&i| pred[i]).collect();

    let mut sorted = seq.clone();
    sorted.sort_by(f64::total_cmp);
    let mut pred_ties = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            pred_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    pred_ties += run * (run - 1) / 2;

    let mut buf = vec![0.0; n];
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                // Equal values are not inversions: take from the left first.
                if seq[i] <= seq[j] {
                    buf[k] = seq[i];
                    i += 1;
                } else {
                    buf[k] = seq[j];
                    inversions += (mid - i) as u64;
                    j += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&seq[i..mid]);
            k += mid - i;
            buf[k..k + (hi - j)].copy_from_slice(&seq[j..hi]);
            lo = hi;
        }
        std::mem::swap(&mut seq, &mut buf);
        width *= 2;
    }
    let total = (n as u64) * (n as u64 - 1) / 2;
    PairCounts { total, discordant: inversions, pred_ties }
}

/// Kendall tau-b. Returns 0 when every prediction is tied.
pub fn kendall_tau(truth: &[usize], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let c = pair_counts(truth, pred);
    let denom = ((c.total as f64) * ((c.total - c.pred_ties) as f64)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((c.concordant() as f64 - c.discordant as f64) / denom)
}

/// Share of pairs ordered correctly, ties counted as half:
/// `(C + T/2) / P`, evaluated as `(1 + (C - D) / P) / 2` so that it equals
/// `(1 + kendall_tau) / 2` to the bit when there are no ties.
pub fn pairwise_accuracy(truth: &[usize], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let c = pair_counts(truth, pred);
    let diff = c.concordant() as f64 - c.discordant as f64;
    Ok((1.0 + diff / c.total as f64) / 2.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson correlation undefined for zero variance"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Pearson between percentile ranks `y / n` and predicted scores.
pub fn pearson_ranks(truth: &[usize], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let n = truth.len() as f64;
    let dense = densify(truth);
    let pct: Vec<f64> = dense.iter().map(|&y| y as f64 / n).collect();
    pearson(&pct, pred)
}

/// NDCG@k with linear gain `y / n`; prediction ties keep input order.
pub fn ndcg_at_k(truth: &[usize], pred: &[f64], k: usize) -> Result<f64> {
    check(truth, pred)?;
    let n = truth.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("ndcg cutoff {k} outside 1..={n}")));
    }
    let rel: Vec<f64> = densify(truth).iter().map(|&y| y as f64 / n as f64).collect();
    let mut by_pred: Vec<usize> = (0..n).collect();
    by_pred.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let mut ideal = rel.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = by_pred.iter().take(k).enumerate().map(|(i, &j)| rel[j] * discount(i)).sum();
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| r * discount(i)).sum();
    Ok(dcg / idcg)
}

pub const REPORT_NDCG_CUTOFFS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub spc: f64,
    pub pacc: f64,
    pub prc: f64,
    pub ktc: f64,
    pub ndcg: BTreeMap<usize, f64>,
}

impl MetricReport {
    /// Evaluates all metrics; NDCG cutoffs larger than the list are clipped.
    pub fn evaluate(truth: &[usize], pred: &[f64]) -> Result<Self> {
        let ndcg = REPORT_NDCG_CUTOFFS
            .iter()
            .map(|&k| Ok((k, ndcg_at_k(truth, pred, k.min(truth.len()))?)))
            .collect::<Result<_>>()?;
        // A constant predictor has no Pearson correlation; report 0.
        let prc = pearson_ranks(truth, pred).unwrap_or(0.0);
        Ok(Self {
            spc: spearman(truth, pred)?,
            pacc: pairwise_accuracy(truth, pred)?,
            prc,
            ktc: kendall_tau(truth, pred)?,
            ndcg,
        })
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub const CSV_HEADER: &'static str = "method,fold,spc,pacc,prc,ktc,ndcg@3,ndcg@5";

    pub fn csv_row(&self, method: &str, fold: &str) -> String {
        format!(
            "{method},{fold},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.spc,
            self.pacc,
            self.prc,
            self.ktc,
            self.ndcg_at(3),
            self.ndcg_at(5)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order_to_scores(order: &[usize]) -> Vec<f64> {
        order.iter().map(|&v| v as f64).collect()
    }

    #[test]
    fn spearman_examples() {
        let t = [1, 2, 3, 4];
        assert_eq!(spearman(&t, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(spearman(&t, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&t, &order_to_scores(&[1, 3, 2, 4])).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1, 2, 3], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((kendall_tau(&[1, 2, 3], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1, 2, 3], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn kendall_tau_b_with_ties() {
        // pairs: (1,2) tie, (1,3) c, (2,3) c -> (2-0)/sqrt(3*2)
        let v = kendall_tau(&[1, 2, 3], &[0.0, 0.0, 1.0]).unwrap();
        assert!((v - 2.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1, 2], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn pacc_examples() {
        assert_eq!(pairwise_accuracy(&[1, 2, 3], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((pairwise_accuracy(&[1, 2, 3], &[1.0, 3.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pairwise_accuracy(&[1, 2, 3], &[1.0, 1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn pearson_examples() {
        let x = [0.1, 0.5, 0.2, 0.9];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let t = [1, 2, 3];
        for k in 1..=3 {
            assert!((ndcg_at_k(&t, &[0.1, 0.2, 0.3], k).unwrap() - 1.0).abs() < 1e-15);
        }
        // worst item first: rel 1/3 against ideal 1
        assert!((ndcg_at_k(&t, &[0.9, 0.2, 0.3], 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(ndcg_at_k(&t, &[0.9, 0.2, 0.3], 0).is_err());
        assert!(ndcg_at_k(&t, &[0.9, 0.2, 0.3], 4).is_err());
    }

    #[test]
    fn input_validation() {
        assert!(spearman(&[1, 2], &[1.0]).is_err());
        assert!(spearman(&[1], &[1.0]).is_err());
        assert!(kendall_tau(&[1, 1, 2], &[1.0, 2.0, 3.0]).is_err());
        assert!(pairwise_accuracy(&[1, 2], &[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_row() {
        let r = MetricReport::evaluate(&[1, 2, 3, 4, 5, 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.csv_row("orbnet", "0"), "orbnet,0,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000");
        assert_eq!(MetricReport::CSV_HEADER.split(',').count(), r.csv_row("x", "y").split(',').count());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn perm_and_scores() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
            (2usize..40).prop_flat_map(|n| {
                (
                    Just((1..=n).collect::<Vec<_>>()).prop_shuffle(),
                    proptest::collection::vec(-10.0f64..10.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn rank_metrics_invariant_to_monotone_transform((t, p) in perm_and_scores()) {
                let q: Vec<f64> = p.iter().map(|v| (v * 0.3).exp() * 5.0 - 2.0).collect();
                prop_assert_eq!(spearman(&t, &p).unwrap(), spearman(&t, &q).unwrap());
                prop_assert_eq!(kendall_tau(&t, &p).unwrap(), kendall_tau(&t, &q).unwrap());
                prop_assert_eq!(pairwise_accuracy(&t, &p).unwrap(), pairwise_accuracy(&t, &q).unwrap());
                for k in 1..=t.len().min(5) {
                    prop_assert_eq!(ndcg_at_k(&t, &p, k).unwrap(), ndcg_at_k(&t, &q, k).unwrap());
                }
            }

            #[test]
            fn reversal_antisymmetry((t, p) in perm_and_scores()) {
                let neg: Vec<f64> = p.iter().map(|v| -v).collect();
                prop_assert!((spearman(&t, &p).unwrap() + spearman(&t, &neg).unwrap()).abs() < 1e-12);
                prop_assert!((kendall_tau(&t, &p).unwrap() + kendall_tau(&t, &neg).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn ndcg_in_unit_interval((t, p) in perm_and_scores(), k in 1usize..40) {
                let v = ndcg_at_k(&t, &p, k.min(t.len())).unwrap();
                prop_assert!(v > 0.0 && v <= 1.0 + 1e-15);
            }
        }
    }
}

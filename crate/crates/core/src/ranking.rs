//! Ordinal bin encoding, pairwise preference targets and the coarse + offset
//! score composition.
//!
//! Ranks are 1-based and larger means better. With `n` items split into `m`
//! bins of width `tau = n / m`, a rank `y` is encoded as `m - 1` threshold
//! bits, bit `j` set iff `y >= j * tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    n: usize,
    m: usize,
    tau: f64,
}

impl EncodingConfig {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("bin count m must be >= 2, got {m}")));
        }
        if n < m {
            return Err(Error::invalid(format!("dataset size {n} smaller than bin count {m}")));
        }
        Ok(Self { n, m, tau: n as f64 / m as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Bin width in rank units.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn thresholds(&self) -> usize {
        self.m - 1
    }
}

/// Threshold bits, 1s before 0s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdinalTarget {
    bits: Vec<u8>,
}

impl OrdinalTarget {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of thresholds cleared, i.e. the zero-based bin index.
    pub fn bin(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }
}

pub fn encode_ordinal(y: usize, cfg: &EncodingConfig) -> Result<OrdinalTarget> {
    if y == 0 || y > cfg.n {
        return Err(Error::invalid(format!("rank {y} outside 1..={}", cfg.n)));
    }
    let bits = (1..cfg.m)
        .map(|j| u8::from(y as f64 >= j as f64 * cfg.tau))
        .collect();
    Ok(OrdinalTarget { bits })
}

/// Pairwise preference target: 1 if `i` ranks above `j`, 0 below, 0.5 tied.
pub fn pairwise_target(y_i: usize, y_j: usize) -> f64 {
    match y_i.cmp(&y_j) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => 0.5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseMode {
    /// Left bound of the predicted bin; used at inference.
    Hard,
    /// Sum of threshold probabilities; differentiable, used in training.
    Soft,
}

pub fn coarse_score(logits: &[f64], tau: f64, mode: CoarseMode) -> f64 {
    let total: f64 = match mode {
        CoarseMode::Hard => logits.iter().filter(|&&l| sigmoid(l) > 0.5).count() as f64,
        CoarseMode::Soft => logits.iter().map(|&l| sigmoid(l)).sum(),
    };
    tau * total
}

/// `s = s_bar + tau * sigmoid(s_tilde)`; the offset term lies in `(0, tau)`.
pub fn final_score(s_bar: f64, s_tilde: f64, tau: f64) -> f64 {
    s_bar + tau * sigmoid(s_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn encode_examples() {
        let cfg = EncodingConfig::new(10, 5).unwrap();
        assert_eq!(encode_ordinal(7, &cfg).unwrap().bits(), &[1, 1, 1, 0]);
        assert_eq!(encode_ordinal(10, &cfg).unwrap().bits(), &[1, 1, 1, 1]);
        let cfg = EncodingConfig::new(10, 10).unwrap();
        assert_eq!(encode_ordinal(1, &cfg).unwrap().bits(), &[1, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(encode_ordinal(0, &cfg).is_err());
        assert!(encode_ordinal(11, &cfg).is_err());
    }

    #[test]
    fn encode_with_fractional_tau() {
        // tau = 7/3: thresholds 2.33.., 4.66..
        let cfg = EncodingConfig::new(7, 3).unwrap();
        assert_eq!(encode_ordinal(2, &cfg).unwrap().bits(), &[0, 0]);
        assert_eq!(encode_ordinal(3, &cfg).unwrap().bits(), &[1, 0]);
        assert_eq!(encode_ordinal(5, &cfg).unwrap().bits(), &[1, 1]);
    }

    #[test]
    fn config_validation() {
        assert!(EncodingConfig::new(10, 1).is_err());
        assert!(EncodingConfig::new(3, 4).is_err());
        assert_eq!(EncodingConfig::new(300, 10).unwrap().tau(), 30.0);
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_target(5, 3), 1.0);
        assert_eq!(pairwise_target(3, 5), 0.0);
        assert_eq!(pairwise_target(4, 4), 0.5);
    }

    #[test]
    fn coarse_examples() {
        assert_eq!(coarse_score(&[0.0; 9], 1.0, CoarseMode::Hard), 0.0);
        let l = [logit(0.9), logit(0.6), logit(0.2)];
        assert!((coarse_score(&l, 2.0, CoarseMode::Hard) - 4.0).abs() < 1e-12);
        assert!((coarse_score(&l, 2.0, CoarseMode::Soft) - 3.4).abs() < 1e-12);
        assert_eq!(coarse_score(&[50.0; 4], 2.5, CoarseMode::Hard), 10.0);
    }

    #[test]
    fn final_score_examples() {
        assert_eq!(final_score(4.0, 0.0, 2.0), 5.0);
        assert_eq!(final_score(4.0, 0.0, 2.0) / 10.0, 0.5);
        assert!((final_score(4.0, -1e3, 2.0) - 4.0).abs() < 1e-300);
        for st in [-30.0, -1.0, 0.0, 2.0, 30.0] {
            let off = final_score(3.0, st, 2.0) - 3.0;
            assert!(off > 0.0 && off < 2.0);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encoding_monotone(n in 2usize..200, m_raw in 2usize..20, y in 1usize..200, y2 in 1usize..200) {
                let m = m_raw.min(n);
                let cfg = EncodingConfig::new(n, m).unwrap();
                let (a, b) = (y.min(n), y2.min(n));
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let blo = encode_ordinal(lo, &cfg).unwrap();
                let bhi = encode_ordinal(hi, &cfg).unwrap();
                prop_assert!(blo.bits().windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(blo.bits().iter().zip(bhi.bits()).all(|(x, y)| x <= y));
            }

            #[test]
            fn pairwise_antisymmetric(a in 1usize..1000, b in 1usize..1000) {
                prop_assert_eq!(pairwise_target(a, b) + pairwise_target(b, a), 1.0);
            }

            #[test]
            fn hard_coarse_ignores_sign_preserving_noise(
                l in proptest::collection::vec(-5.0f64..5.0, 1..12),
                scale in 0.01f64..10.0,
            ) {
                let l2: Vec<f64> = l.iter().map(|v| v * scale).collect();
                prop_assert_eq!(coarse_score(&l, 1.5, CoarseMode::Hard), coarse_score(&l2, 1.5, CoarseMode::Hard));
            }

            #[test]
            fn final_score_increasing(sbar in 0.0f64..100.0, a in -20.0f64..20.0, da in 1e-3f64..5.0) {
                prop_assert!(final_score(sbar, a + da, 3.0) > final_score(sbar, a, 3.0));
            }
        }
    }
}

//! Pairwise ranking confidence from MC-dropout passes.
//!
//! Pass `t` draws one set of dropout masks from the stream
//! `(seed, "mc-dropout", t)` and applies it to both items, so swapping the
//! pair yields exactly complementary confidences. Within a pass a tie earns
//! half credit.

use serde::{Deserialize, Serialize};

use crate::dataset::RankedDataset;
use crate::error::{Error, Result};
use crate::nn::DropoutMasks;
use crate::numerics::RngStream;
use crate::orbnet::OrbNetParams;
use crate::parallel::Exec;
use crate::ranking::CoarseMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub passes: usize,
    pub dropout_p: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { passes: 10, dropout_p: 0.5, seed: 0, exec: Exec::default() }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::invalid("need at least one MC pass"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    fn masks(&self, params: &OrbNetParams, pass: usize) -> Option<DropoutMasks> {
        (self.dropout_p > 0.0).then(|| {
            let mut rng = RngStream::derived(self.seed, "mc-dropout", pass as u64);
            DropoutMasks::sample(params.trunk.arch().hidden, self.dropout_p, &mut rng)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEstimate {
    pub id_a: String,
    pub id_b: String,
    /// Share of passes in which `a` outscored `b`.
    pub confidence: f64,
    /// Favourable passes counted in halves (a tie is one half).
    pub favorable_halves: usize,
    pub passes: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

/// Per-pass scores of one item, pass `t` at index `t - 1`.
fn pass_scores(params: &OrbNetParams, f: &[f64], cfg: &McConfig) -> Result<Vec<f64>> {
    (1..=cfg.passes)
        .map(|t| Ok(params.forward_masked(f, cfg.masks(params, t).as_ref(), CoarseMode::Hard)?.s))
        .collect()
}

fn tally(a: &[f64], b: &[f64]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => 2,
            Some(std::cmp::Ordering::Equal) => 1,
            _ => 0,
        })
        .sum()
}

fn estimate(id_a: &str, id_b: &str, halves: usize, cfg: &McConfig) -> ConfidenceEstimate {
    ConfidenceEstimate {
        id_a: id_a.to_string(),
        id_b: id_b.to_string(),
        confidence: halves as f64 / (2 * cfg.passes) as f64,
        favorable_halves: halves,
        passes: cfg.passes,
        dropout_p: cfg.dropout_p,
        seed: cfg.seed,
    }
}

pub fn mc_pairwise_confidence(
    params: &OrbNetParams,
    (id_a, f_a): (&str, &[f64]),
    (id_b, f_b): (&str, &[f64]),
    cfg: &McConfig,
) -> Result<ConfidenceEstimate> {
    cfg.validate()?;
    let per_pass = cfg.exec.map_range(cfg.passes, |i| -> Result<usize> {
        let masks = cfg.masks(params, i + 1);
        let sa = params.forward_masked(f_a, masks.as_ref(), CoarseMode::Hard)?.s;
        let sb = params.forward_masked(f_b, masks.as_ref(), CoarseMode::Hard)?.s;
        Ok(tally(&[sa], &[sb]))
    });
    let halves = per_pass.into_iter().sum::<Result<usize>>()?;
    Ok(estimate(id_a, id_b, halves, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub query_id: String,
    pub truth_rank: usize,
    pub confidence: f64,
}

/// Confidence that `anchor_id` outranks each other item, ordered by the
/// query's true rank.
pub fn confidence_profile(
    params: &OrbNetParams,
    anchor_id: &str,
    dataset: &RankedDataset,
    cfg: &McConfig,
) -> Result<Vec<ProfileRow>> {
    cfg.validate()?;
    let anchor = dataset
        .find(anchor_id)
        .ok_or_else(|| Error::invalid(format!("unknown anchor {anchor_id:?}")))?;
    let anchor_scores = pass_scores(params, &anchor.features, cfg)?;
    let mut queries: Vec<_> = dataset.items().iter().filter(|it| it.id != anchor_id).collect();
    queries.sort_by_key(|it| it.rank);
    let rows = cfg.exec.map(&queries, |q| -> Result<ProfileRow> {
        let qs = pass_scores(params, &q.features, cfg)?;
        let halves = tally(&anchor_scores, &qs);
        Ok(ProfileRow {
            query_id: q.id.clone(),
            truth_rank: q.rank,
            confidence: halves as f64 / (2 * cfg.passes) as f64,
        })
    });
    rows.into_iter().collect()
}

pub const PROFILE_CSV_HEADER: &str = "query_id,truth_rank,confidence";

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from(PROFILE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{:.6}\n", r.query_id, r.truth_rank, r.confidence));
    }
    out
}

/// Ids of the items at the given 1-based positions of the ranking, best
/// first. Position 0 means "last" (the worst item). Out-of-range positions
/// are skipped.
pub fn anchors_by_position(dataset: &RankedDataset, positions: &[usize]) -> Vec<String> {
    let mut by_rank: Vec<_> = dataset.items().iter().collect();
    by_rank.sort_by_key(|it| std::cmp::Reverse(it.rank));
    positions
        .iter()
        .filter_map(|&p| {
            let idx = if p == 0 { by_rank.len().checked_sub(1)? } else { p - 1 };
            by_rank.get(idx).map(|it| it.id.clone())
        })
        .collect()
}

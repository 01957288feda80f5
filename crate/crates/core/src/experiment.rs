//! Cross-validation, seed-variance and annotation-noise experiments, and
//! their CSV reports. Every report starts with a `# {json}` line holding the
//! resolved configuration.

use std::collections::HashMap;

use serde::Serialize;

use crate::annotation::{simulate, AnnotationSession, NoisyOracle, SimulationStats};
use crate::dataset::{kfold_split, RankedDataset};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::numerics::mix;
use crate::train::{train_method, Method, TrainConfig, TrainedModel};

/// `# {json}` followed by a newline.
pub fn config_comment<T: Serialize>(config: &T) -> String {
    format!("# {}\n", serde_json::to_string(config).expect("config serialises"))
}

/// Training seed of fold `fold` under the experiment seed `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    mix(seed, fold as u64)
}

/// Scores a trained model on `test` against `truth` ranks (dataset order).
pub fn evaluate(model: &TrainedModel, test: &RankedDataset, truth: &[usize], cfg: &TrainConfig) -> Result<MetricReport> {
    let scores: Vec<f64> = model.predict_scores(test, cfg.exec)?.into_iter().map(|(_, s)| s).collect();
    MetricReport::evaluate(truth, &scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<MetricReport>,
}

impl CvResult {
    pub fn mean_spc(&self) -> f64 {
        mean_std(&self.folds.iter().map(|r| r.spc).collect::<Vec<_>>()).0
    }

    pub fn summary(&self) -> (MetricReport, MetricReport) {
        summarize(&self.folds)
    }

    /// Header, one row per fold, then `mean` and `std` rows.
    pub fn csv_body(&self) -> String {
        let name = self.method.name();
        let mut out = format!("{}\n", MetricReport::CSV_HEADER);
        for (i, r) in self.folds.iter().enumerate() {
            out.push_str(&r.csv_row(name, &i.to_string()));
            out.push('\n');
        }
        let (mean, std) = self.summary();
        out.push_str(&mean.csv_row(name, "mean"));
        out.push('\n');
        out.push_str(&std.csv_row(name, "std"));
        out.push('\n');
        out
    }
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(reports: &[MetricReport]) -> (MetricReport, MetricReport) {
    let col = |f: &dyn Fn(&MetricReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (spc, spc_s) = col(&|r| r.spc);
    let (pacc, pacc_s) = col(&|r| r.pacc);
    let (prc, prc_s) = col(&|r| r.prc);
    let (ktc, ktc_s) = col(&|r| r.ktc);
    let keys: Vec<usize> = reports.first().map(|r| r.ndcg.keys().copied().collect()).unwrap_or_default();
    let mut nd_m = std::collections::BTreeMap::new();
    let mut nd_s = std::collections::BTreeMap::new();
    for k in keys {
        let (m, s) = col(&|r| r.ndcg_at(k));
        nd_m.insert(k, m);
        nd_s.insert(k, s);
    }
    (
        MetricReport { spc, pacc, prc, ktc, ndcg: nd_m },
        MetricReport { spc: spc_s, pacc: pacc_s, prc: prc_s, ktc: ktc_s, ndcg: nd_s },
    )
}

/// `k`-fold cross-validation. Folds are split with `cfg.seed` and fold `i`
/// trains with seed [`fold_seed`]`(cfg.seed, i)`. Folds run under
/// `cfg.exec`; results are identical for either policy.
pub fn cross_validate(ds: &RankedDataset, method: Method, k: usize, cfg: &TrainConfig) -> Result<CvResult> {
    cfg.validate()?;
    let folds = kfold_split(ds, k, cfg.seed)?;
    let reports = cfg.exec.map(&folds, |fold| -> Result<MetricReport> {
        let fold_cfg = TrainConfig { seed: fold_seed(cfg.seed, fold.index), ..cfg.clone() };
        let (model, _) = train_method(method, &fold.train, &fold_cfg)?;
        evaluate(&model, &fold.test, &fold.test.ranks(), &fold_cfg)
    });
    Ok(CvResult { method, k, seed: cfg.seed, folds: reports.into_iter().collect::<Result<_>>()? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceResult {
    pub method: Method,
    pub runs: Vec<CvResult>,
}

impl VarianceResult {
    /// Held-out SPC of every trained model.
    pub fn spcs(&self) -> Vec<f64> {
        self.runs.iter().flat_map(|r| r.folds.iter().map(|f| f.spc)).collect()
    }

    pub fn csv_body(&self) -> String {
        let name = self.method.name();
        let mut out = String::from("method,seed,fold,spc\n");
        for run in &self.runs {
            for (i, f) in run.folds.iter().enumerate() {
                out.push_str(&format!("{name},{},{i},{:.6}\n", run.seed, f.spc));
            }
        }
        let (mean, std) = mean_std(&self.spcs());
        out.push_str(&format!("{name},all,mean,{mean:.6}\n{name},all,std,{std:.6}\n"));
        out
    }
}

/// Repeats [`cross_validate`] once per seed.
pub fn seed_variance(
    ds: &RankedDataset,
    method: Method,
    k: usize,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<VarianceResult> {
    let runs = seeds
        .iter()
        .map(|&seed| cross_validate(ds, method, k, &TrainConfig { seed, ..cfg.clone() }))
        .collect::<Result<_>>()?;
    Ok(VarianceResult { method, runs })
}

/// Latent qualities keyed by id; ranks stand in when the dataset has none.
pub fn latent_map(ds: &RankedDataset) -> HashMap<String, f64> {
    match ds.latent() {
        Some(q) => ds.ids().into_iter().zip(q).collect(),
        None => ds.items().iter().map(|it| (it.id.clone(), it.rank as f64)).collect(),
    }
}

/// Re-ranks `ds` through a simulated merge-sort annotation with a noisy
/// oracle; features and latent qualities are kept.
pub fn annotate_dataset(
    ds: &RankedDataset,
    beta: f64,
    sublist_size: usize,
    seed: u64,
) -> Result<(RankedDataset, SimulationStats)> {
    let session = AnnotationSession::new(format!("sim-{seed}"), ds.ids(), sublist_size, seed)?;
    let mut oracle = NoisyOracle::new(beta, latent_map(ds), seed)?;
    let (done, stats) = simulate(&session, &mut oracle)?;
    Ok((ds.with_ranks(&done.export_ranking()?)?, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub sublist_size: usize,
    pub comparisons: usize,
    pub spc: f64,
}

pub const SWEEP_CSV_HEADER: &str = "beta,n_sub,comparisons,spc";

/// One simulated annotation per `(beta, n_sub)`; the oracle seed depends on
/// the grid position only.
pub fn annotation_sweep(ds: &RankedDataset, betas: &[f64], sublist_sizes: &[usize], seed: u64) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(betas.len() * sublist_sizes.len());
    for (bi, &beta) in betas.iter().enumerate() {
        for (si, &n_sub) in sublist_sizes.iter().enumerate() {
            let run_seed = mix(mix(seed, bi as u64), si as u64);
            let (_, stats) = annotate_dataset(ds, beta, n_sub, run_seed)?;
            rows.push(SweepRow { beta, sublist_size: n_sub, comparisons: stats.comparisons, spc: stats.spc });
        }
    }
    Ok(rows)
}

pub fn sweep_csv_body(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let beta = if r.beta.is_infinite() { "inf".to_string() } else { format!("{}", r.beta) };
        out.push_str(&format!("{beta},{},{},{:.6}\n", r.sublist_size, r.comparisons, r.spc));
    }
    out
}

/// Trains once per learning rate and keeps the model with the best
/// validation SPC (first on ties).
pub fn select_learning_rate(
    method: Method,
    data: &RankedDataset,
    lrs: &[f64],
    cfg: &TrainConfig,
) -> Result<(f64, TrainedModel)> {
    let mut best: Option<(f64, f64, TrainedModel)> = None;
    for &lr in lrs {
        let (model, log) = train_method(method, data, &TrainConfig { lr_init: lr, ..cfg.clone() })?;
        let score = if log.best_val_spc.is_finite() { log.best_val_spc } else { f64::NEG_INFINITY };
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((lr, score, model));
        }
    }
    best.map(|(lr, _, m)| (lr, m)).ok_or_else(|| Error::invalid("no learning rates to try"))
}

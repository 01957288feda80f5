//! Optimiser loop shared by ORBNet and the baseline scorers: shuffled
//! minibatches, momentum SGD with L2 decay, best-on-validation selection and
//! plateau learning-rate decay keyed on validation Spearman.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::baselines::ScorerParams;
use crate::dataset::{densify, holdout_split, RankedDataset};
use crate::error::{Error, Result};
use crate::metrics::spearman;
use crate::nn::{Arch, DropoutMasks, Momentum, ParamSet};
use crate::numerics::RngStream;
use crate::orbnet::OrbNetParams;
use crate::parallel::Exec;
use crate::ranking::EncodingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "orbnet")]
    OrbNet,
    #[serde(rename = "ranknet")]
    RankNet,
    #[serde(rename = "hinge")]
    Hinge,
    #[serde(rename = "listnet-local")]
    ListNetLocal,
    #[serde(rename = "listnet-global")]
    ListNetGlobal,
    #[serde(rename = "regression")]
    Regression,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OrbNet,
        Method::RankNet,
        Method::Hinge,
        Method::ListNetLocal,
        Method::ListNetGlobal,
        Method::Regression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::OrbNet => "orbnet",
            Method::RankNet => "ranknet",
            Method::Hinge => "hinge",
            Method::ListNetLocal => "listnet-local",
            Method::ListNetGlobal => "listnet-global",
            Method::Regression => "regression",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Epochs without validation improvement before the LR is decayed.
    pub patience: usize,
    pub m: usize,
    pub seed: u64,
    pub dropout_p: f64,
    pub val_fraction: f64,
    pub hidden: [usize; 2],
    /// Hinge margin; ignored by other methods.
    pub margin: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            momentum: 0.9,
            batch_size: 32,
            weight_decay: 1e-4,
            lr_init: 1e-2,
            lr_decay: 0.1,
            patience: 10,
            m: 10,
            seed: 0,
            dropout_p: 0.5,
            val_fraction: 0.1,
            hidden: [512, 128],
            margin: 1.0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("momentum", self.momentum),
            ("lr_init", self.lr_init),
            ("lr_decay", self.lr_decay),
            ("margin", self.margin),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        if self.epochs == 0 || self.batch_size < 2 || self.patience == 0 {
            return Err(Error::invalid("epochs and patience must be >= 1 and batch_size >= 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.m < 2 {
            return Err(Error::invalid(format!("m must be >= 2, got {}", self.m)));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("weight_decay must be >= 0 and val_fraction in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// A minibatch; `n` is the size of the list the ranks are drawn from.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub ids: Vec<&'a str>,
    pub features: Vec<&'a [f64]>,
    pub ranks: Vec<usize>,
    pub n: usize,
}

impl<'a> Batch<'a> {
    pub fn from_indices(ds: &'a RankedDataset, indices: &[usize]) -> Self {
        let items = ds.items();
        Self {
            ids: indices.iter().map(|&i| items[i].id.as_str()).collect(),
            features: indices.iter().map(|&i| items[i].features.as_slice()).collect(),
            ranks: indices.iter().map(|&i| items[i].rank).collect(),
            n: ds.len(),
        }
    }

    pub fn whole(ds: &'a RankedDataset) -> Self {
        Self::from_indices(ds, &(0..ds.len()).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Batch ranks re-densified to `1..=len`.
    pub fn local_ranks(&self) -> Vec<usize> {
        densify(&self.ranks)
    }
}

/// Total loss plus its named components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub parts: Vec<(String, f64)>,
}

impl Losses {
    pub fn single(name: &str, value: f64) -> Self {
        Self { total: value, parts: vec![(name.to_string(), value)] }
    }

    pub fn part(&self, name: &str) -> Option<f64> {
        self.parts.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// A scorer trainable by [`fit`].
pub trait RankModel: ParamSet + Send + Sync {
    fn arch(&self) -> Arch;
    fn dropout_p(&self) -> f64;

    /// Loss and parameter gradient on `batch`, with one optional dropout
    /// mask set per item.
    fn loss_and_grad(&self, batch: &Batch<'_>, masks: &[Option<DropoutMasks>], exec: Exec)
        -> Result<(Losses, Self)>;

    /// Deterministic (dropout-free) score; larger is better.
    fn score(&self, features: &[f64]) -> f64;
}

pub(crate) fn sample_masks(arch: Arch, p: f64, count: usize, rng: &mut RngStream) -> Vec<Option<DropoutMasks>> {
    (0..count)
        .map(|_| (p > 0.0).then(|| DropoutMasks::sample(arch.hidden, p, rng)))
        .collect()
}

/// One momentum-SGD step on `batch`. Dropout masks are drawn from `rng` in
/// batch order.
pub fn sgd_step<M: RankModel>(
    model: &mut M,
    opt: &mut Momentum<M>,
    batch: &Batch<'_>,
    lr: f64,
    rng: &mut RngStream,
    exec: Exec,
) -> Result<Losses> {
    let masks = sample_masks(model.arch(), model.dropout_p(), batch.len(), rng);
    let (losses, grad) = model.loss_and_grad(batch, &masks, exec)?;
    if !losses.total.is_finite() || !grad.all_finite() {
        return Err(Error::NonFinite(format!(
            "loss {} on batch [{}]",
            losses.total,
            batch.ids.join(", ")
        )));
    }
    opt.step(model, &grad, lr);
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_parts: Vec<(String, f64)>,
    pub val_spc: f64,
    pub lr_decayed: bool,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch indices after which the learning rate was decayed.
    pub decay_events: Vec<usize>,
    pub best_epoch: usize,
    pub best_val_spc: f64,
}

/// How each epoch is split into update steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchPolicy {
    MiniBatch,
    /// One step per epoch on the entire training list.
    FullList,
}

pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    // A singleton tail carries no pairs; fold it into the previous batch.
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

pub fn validation_spc<M: RankModel>(model: &M, val: &RankedDataset, exec: Exec) -> f64 {
    if val.len() < 2 {
        return f64::NAN;
    }
    let scores = exec.map(val.items(), |it| model.score(&it.features));
    spearman(&val.ranks(), &scores).unwrap_or(f64::NAN)
}

/// Runs `cfg.epochs` epochs and returns the parameters with the best
/// validation Spearman (earliest on ties) together with the per-epoch log.
pub fn fit<M: RankModel>(
    mut model: M,
    train: &RankedDataset,
    val: &RankedDataset,
    cfg: &TrainConfig,
    policy: BatchPolicy,
) -> Result<(M, TrainingLog)> {
    cfg.validate()?;
    let mut opt = Momentum::new(&model, cfg.momentum, cfg.weight_decay);
    let mut lr = cfg.lr_init;
    let mut best = model.clone();
    let mut log = TrainingLog { best_val_spc: f64::NEG_INFINITY, ..Default::default() };
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let mut batch_rng = RngStream::derived(cfg.seed, "batching", epoch as u64);
        let mut dropout_rng = RngStream::derived(cfg.seed, "dropout", epoch as u64);
        let batches = match policy {
            BatchPolicy::MiniBatch => epoch_batches(train.len(), cfg.batch_size, &mut batch_rng),
            BatchPolicy::FullList => vec![(0..train.len()).collect()],
        };
        let mut total = 0.0;
        let mut parts: Vec<(String, f64)> = Vec::new();
        for idx in &batches {
            let batch = Batch::from_indices(train, idx);
            let losses = sgd_step(&mut model, &mut opt, &batch, lr, &mut dropout_rng, cfg.exec)?;
            total += losses.total;
            for (name, v) in losses.parts {
                match parts.iter_mut().find(|(n, _)| *n == name) {
                    Some(slot) => slot.1 += v,
                    None => parts.push((name, v)),
                }
            }
        }
        let nb = batches.len() as f64;
        parts.iter_mut().for_each(|(_, v)| *v /= nb);

        let val_spc = validation_spc(&model, val, cfg.exec);
        let improved = val_spc > log.best_val_spc || (log.epochs.is_empty() && !val_spc.is_finite());
        if improved {
            log.best_val_spc = val_spc;
            log.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let lr_used = lr;
        let mut decayed = false;
        if stale >= cfg.patience {
            lr *= cfg.lr_decay;
            stale = 0;
            decayed = true;
            log.decay_events.push(epoch);
        }
        log.epochs.push(EpochLog {
            epoch,
            lr: lr_used,
            train_loss: total / nb,
            train_parts: parts,
            val_spc,
            lr_decayed: decayed,
            improved,
        });
    }
    if !log.best_val_spc.is_finite() {
        warn!("validation Spearman never finite; returning final parameters");
        return Ok((model, log));
    }
    Ok((best, log))
}

/// A trained scorer of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    OrbNet(OrbNetParams),
    Scorer { method: Method, params: ScorerParams },
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::OrbNet(_) => Method::OrbNet,
            TrainedModel::Scorer { method, .. } => *method,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TrainedModel::OrbNet(p) => p.arch().feature_dim,
            TrainedModel::Scorer { params, .. } => params.arch().feature_dim,
        }
    }

    /// Dropout-free scores, one per item in dataset order. ORBNet scores are
    /// normalised by the training-set size into (0, 1].
    pub fn predict_scores(&self, ds: &RankedDataset, exec: Exec) -> Result<Vec<(String, f64)>> {
        if ds.feature_dim() != self.feature_dim() {
            return Err(Error::Dimension(format!(
                "model expects {} features, dataset has {}",
                self.feature_dim(),
                ds.feature_dim()
            )));
        }
        let scores = match self {
            TrainedModel::OrbNet(p) => exec.map(ds.items(), |it| p.normalized_score(&it.features)),
            TrainedModel::Scorer { params, .. } => exec.map(ds.items(), |it| params.score(&it.features)),
        };
        Ok(ds.ids().into_iter().zip(scores).collect())
    }
}

/// Holds out a validation split, initialises the chosen model and trains it.
pub fn train_method(method: Method, data: &RankedDataset, cfg: &TrainConfig) -> Result<(TrainedModel, TrainingLog)> {
    cfg.validate()?;
    let (train, val) = if cfg.val_fraction > 0.0 {
        holdout_split(data, cfg.val_fraction, cfg.seed)?
    } else {
        (data.clone(), data.clone())
    };
    let arch = Arch::with_hidden(data.feature_dim(), cfg.hidden);
    let mut init_rng = RngStream::derived(cfg.seed, "init", 0);
    match method {
        Method::OrbNet => {
            let enc = EncodingConfig::new(train.len(), cfg.m)?;
            let init = OrbNetParams::init(arch, enc, cfg.dropout_p, &mut init_rng);
            let (p, log) = fit(init, &train, &val, cfg, BatchPolicy::MiniBatch)?;
            Ok((TrainedModel::OrbNet(p), log))
        }
        other => {
            let init = ScorerParams::init(arch, other, cfg.margin, cfg.dropout_p, &mut init_rng)?;
            let policy =
                if other == Method::ListNetGlobal { BatchPolicy::FullList } else { BatchPolicy::MiniBatch };
            let (p, log) = fit(init, &train, &val, cfg, policy)?;
            Ok((TrainedModel::Scorer { method: other, params: p }, log))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("sodeep".parse::<Method>().is_err());
    }

    #[test]
    fn batches_cover_everything_without_singletons() {
        let mut rng = RngStream::new(0, 0);
        let b = epoch_batches(65, 32, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 33]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..65).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { dropout_p: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { m: 1, ..Default::default() }.validate().is_err());
    }
}

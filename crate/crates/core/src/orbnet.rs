//! ORBNet: a shared rectifier trunk feeding
//!
//! * an ordinal head with one shared weight vector and `m - 1` independent
//!   biases, producing threshold logits `l`, and
//! * an offset head reading `concat(h, l)` and producing `s_tilde`,
//!
//! combined as `s = s_bar + tau * sigmoid(s_tilde)` where `s_bar` is the
//! coarse bin score. Training minimises
//! `mean_i BCE(l_i, bits(y_i)) + mean_{i != j} BCE(sigmoid(s_i - s_j), p_ij)`
//! with hand-derived gradients through both heads and the trunk.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::RankedDataset;
use crate::error::{Error, Result};
use crate::nn::{trunk_groups, trunk_groups_mut, Arch, DropoutMasks, Momentum, ParamSet, Trunk, TrunkCache};
use crate::numerics::{bce_with_logit, dot, sigmoid, RngStream};
use crate::parallel::Exec;
use crate::ranking::{coarse_score, encode_ordinal, pairwise_target, CoarseMode, EncodingConfig, OrdinalTarget};
use crate::train::{self, Batch, Losses, Method, RankModel, TrainConfig, TrainedModel, TrainingLog};

/// Items per gradient-accumulation chunk. Fixed so the reduction order does
/// not depend on the execution policy.
pub(crate) const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbNetParams {
    pub trunk: Trunk,
    /// Shared ordinal output weight.
    pub ord_w: Vec<f64>,
    /// One bias per threshold.
    pub ord_b: Vec<f64>,
    /// Offset head over `concat(h, l)`.
    pub off_w: Vec<f64>,
    pub off_b: Vec<f64>,
    pub dropout_p: f64,
    pub enc: EncodingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub l: Vec<f64>,
    pub s_bar: f64,
    pub s_tilde: f64,
    pub s: f64,
}

impl OrbNetParams {
    pub fn init(arch: Arch, enc: EncodingConfig, dropout_p: f64, rng: &mut RngStream) -> Self {
        let trunk = Trunk::init(arch, rng);
        let h = arch.hidden[1];
        let k = enc.thresholds();
        let bound = 1.0 / (h as f64).sqrt();
        let ord_w = (0..h).map(|_| rng.uniform(-bound, bound)).collect();
        let ord_b = if k == 1 {
            vec![0.0]
        } else {
            (0..k).map(|j| 1.0 - 2.0 * j as f64 / (k - 1) as f64).collect()
        };
        let off_bound = 1.0 / ((h + k) as f64).sqrt();
        let off_w = (0..h + k).map(|_| rng.uniform(-off_bound, off_bound)).collect();
        Self { trunk, ord_w, ord_b, off_w, off_b: vec![0.0], dropout_p, enc }
    }

    pub fn zeros(arch: Arch, enc: EncodingConfig, dropout_p: f64) -> Self {
        let h = arch.hidden[1];
        let k = enc.thresholds();
        Self {
            trunk: Trunk::zeros(arch),
            ord_w: vec![0.0; h],
            ord_b: vec![0.0; k],
            off_w: vec![0.0; h + k],
            off_b: vec![0.0],
            dropout_p,
            enc,
        }
    }

    pub fn tau(&self) -> f64 {
        self.enc.tau()
    }

    fn forward_cached(&self, f: &[f64], masks: Option<&DropoutMasks>, coarse: CoarseMode) -> (ScoreTriple, TrunkCache) {
        let cache = self.trunk.forward(f, masks);
        let shared = dot(&self.ord_w, &cache.a2);
        let l: Vec<f64> = self.ord_b.iter().map(|b| shared + b).collect();
        let s_bar = coarse_score(&l, self.tau(), coarse);
        let h = cache.a2.len();
        let s_tilde = dot(&self.off_w[..h], &cache.a2) + dot(&self.off_w[h..], &l) + self.off_b[0];
        let s = s_bar + self.tau() * sigmoid(s_tilde);
        (ScoreTriple { l, s_bar, s_tilde, s }, cache)
    }

    /// Forward pass with explicit masks. Inference uses `CoarseMode::Hard`.
    pub fn forward_masked(&self, f: &[f64], masks: Option<&DropoutMasks>, coarse: CoarseMode) -> Result<ScoreTriple> {
        self.check_input(f)?;
        Ok(self.forward_cached(f, masks, coarse).0)
    }

    /// Train mode applies dropout (masks drawn from `mask_rng`) and the soft
    /// coarse score; eval mode is deterministic with the hard coarse score.
    pub fn forward(&self, f: &[f64], mode: Mode, mask_rng: Option<&mut RngStream>) -> Result<ScoreTriple> {
        self.check_input(f)?;
        match mode {
            Mode::Eval => Ok(self.forward_cached(f, None, CoarseMode::Hard).0),
            Mode::Train => {
                let masks = if self.dropout_p > 0.0 {
                    let rng = mask_rng.ok_or_else(|| {
                        Error::invalid("train-mode forward with dropout needs a mask stream")
                    })?;
                    Some(DropoutMasks::sample(self.arch().hidden, self.dropout_p, rng))
                } else {
                    None
                };
                Ok(self.forward_cached(f, masks.as_ref(), CoarseMode::Soft).0)
            }
        }
    }

    /// Eval-mode score divided by the training-set size, in (0, 1].
    pub fn normalized_score(&self, f: &[f64]) -> f64 {
        self.forward_cached(f, None, CoarseMode::Hard).0.s / self.enc.n() as f64
    }

    fn check_input(&self, f: &[f64]) -> Result<()> {
        let d = self.trunk.arch().feature_dim;
        if f.len() != d {
            return Err(Error::Dimension(format!("expected {d} features, got {}", f.len())));
        }
        Ok(())
    }

    /// Adds the gradient of one item's contribution. `dl_coarse` is
    /// `dL/dl` from the ordinal loss, `g_s` is `dL/ds` from the pairwise loss.
    fn backprop_item(
        &self,
        f: &[f64],
        fwd: &(ScoreTriple, TrunkCache),
        masks: Option<&DropoutMasks>,
        dl_coarse: &[f64],
        g_s: f64,
        grad: &mut Self,
    ) {
        let (triple, cache) = fwd;
        let tau = self.tau();
        let h = cache.a2.len();
        let sig_st = sigmoid(triple.s_tilde);
        let g_st = g_s * tau * sig_st * (1.0 - sig_st);

        let dl: Vec<f64> = triple
            .l
            .iter()
            .enumerate()
            .map(|(j, &lj)| {
                let sj = sigmoid(lj);
                dl_coarse[j] + g_s * tau * sj * (1.0 - sj) + g_st * self.off_w[h + j]
            })
            .collect();

        for (gw, a) in grad.off_w[..h].iter_mut().zip(&cache.a2) {
            *gw += g_st * a;
        }
        for (gw, lj) in grad.off_w[h..].iter_mut().zip(&triple.l) {
            *gw += g_st * lj;
        }
        grad.off_b[0] += g_st;

        let sum_dl: f64 = dl.iter().sum();
        for (gw, a) in grad.ord_w.iter_mut().zip(&cache.a2) {
            *gw += sum_dl * a;
        }
        grad.ord_b.iter_mut().zip(&dl).for_each(|(g, d)| *g += d);

        let g_a2: Vec<f64> = self
            .ord_w
            .iter()
            .zip(&self.off_w[..h])
            .map(|(w, ow)| sum_dl * w + g_st * ow)
            .collect();
        self.trunk.backward(f, cache, masks, g_a2, &mut grad.trunk);
    }
}

/// Sum over thresholds of the logit-space binary cross-entropy.
pub fn loss_coarse(l: &[f64], target: &OrdinalTarget) -> Result<f64> {
    if l.len() != target.bits().len() {
        return Err(Error::Dimension(format!(
            "{} logits against {} threshold bits",
            l.len(),
            target.bits().len()
        )));
    }
    Ok(l.iter().zip(target.bits()).map(|(&x, &b)| bce_with_logit(x, f64::from(b))).sum())
}

/// `dL/dl` of [`loss_coarse`]: `sigmoid(l_j) - bit_j`.
pub fn loss_coarse_grad(l: &[f64], target: &OrdinalTarget) -> Vec<f64> {
    l.iter().zip(target.bits()).map(|(&x, &b)| sigmoid(x) - f64::from(b)).collect()
}

/// Mean over ordered pairs `i != j` of `BCE(sigmoid(s_i - s_j), p_ij)`, and
/// its gradient with respect to each score.
pub fn pairwise_logistic(scores: &[f64], ranks: &[usize]) -> (f64, Vec<f64>) {
    let b = scores.len();
    let mut grad = vec![0.0; b];
    if b < 2 {
        return (0.0, grad);
    }
    let pairs = (b * (b - 1)) as f64;
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let delta = scores[i] - scores[j];
            let p = pairwise_target(ranks[i], ranks[j]);
            loss += bce_with_logit(delta, p);
            let g = (sigmoid(delta) - p) / pairs;
            grad[i] += g;
            grad[j] -= g;
        }
    }
    (loss / pairs, grad)
}

/// RankNet loss on the combined scores. A batch of one item has no pairs
/// and contributes zero.
pub fn loss_fine(scores: &[f64], ranks: &[usize]) -> Result<f64> {
    if scores.len() != ranks.len() {
        return Err(Error::Dimension(format!("{} scores for {} ranks", scores.len(), ranks.len())));
    }
    if scores.len() < 2 {
        warn!("pairwise loss on a batch of {} item(s) is zero", scores.len());
    }
    Ok(pairwise_logistic(scores, ranks).0)
}

impl ParamSet for OrbNetParams {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut g = trunk_groups(&self.trunk).to_vec();
        g.extend([
            ("ordinal.weight", self.ord_w.as_slice()),
            ("ordinal.bias", self.ord_b.as_slice()),
            ("offset.weight", self.off_w.as_slice()),
            ("offset.bias", self.off_b.as_slice()),
        ]);
        g
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut g: Vec<&mut [f64]> = trunk_groups_mut(&mut self.trunk).into_iter().collect();
        g.extend([
            self.ord_w.as_mut_slice(),
            self.ord_b.as_mut_slice(),
            self.off_w.as_mut_slice(),
            self.off_b.as_mut_slice(),
        ]);
        g
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.trunk.arch(), self.enc, self.dropout_p)
    }
}

impl RankModel for OrbNetParams {
    fn arch(&self) -> Arch {
        self.trunk.arch()
    }

    fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    fn loss_and_grad(
        &self,
        batch: &Batch<'_>,
        masks: &[Option<DropoutMasks>],
        exec: Exec,
    ) -> Result<(Losses, Self)> {
        let b = batch.len();
        if masks.len() != b {
            return Err(Error::Dimension(format!("{} mask sets for {b} items", masks.len())));
        }
        if let Some(f) = batch.features.iter().find(|f| f.len() != self.arch().feature_dim) {
            return Err(Error::Dimension(format!("expected {} features, got {}", self.arch().feature_dim, f.len())));
        }
        let targets = batch
            .ranks
            .iter()
            .map(|&y| encode_ordinal(y, &self.enc))
            .collect::<Result<Vec<_>>>()?;
        let fwd = exec.map_range(b, |i| self.forward_cached(batch.features[i], masks[i].as_ref(), CoarseMode::Soft));

        let inv_b = 1.0 / b as f64;
        let mut coarse = 0.0;
        let mut dl_coarse = Vec::with_capacity(b);
        for ((triple, _), t) in fwd.iter().zip(&targets) {
            coarse += loss_coarse(&triple.l, t)?;
            dl_coarse.push(loss_coarse_grad(&triple.l, t).into_iter().map(|g| g * inv_b).collect::<Vec<_>>());
        }
        coarse *= inv_b;
        let scores: Vec<f64> = fwd.iter().map(|(t, _)| t.s).collect();
        if b < 2 {
            warn!("pairwise loss on a batch of {b} item(s) is zero");
        }
        let (fine, g_s) = pairwise_logistic(&scores, &batch.ranks);

        let chunks = b.div_ceil(GRAD_CHUNK);
        let partials = exec.map_range(chunks, |c| {
            let mut g = self.zeros_like();
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(b) {
                self.backprop_item(batch.features[i], &fwd[i], masks[i].as_ref(), &dl_coarse[i], g_s[i], &mut g);
            }
            g
        });
        let mut grad = self.zeros_like();
        for p in &partials {
            grad.add_assign(p);
        }
        let losses = Losses {
            total: coarse + fine,
            parts: vec![("coarse".into(), coarse), ("fine".into(), fine)],
        };
        Ok((losses, grad))
    }

    fn score(&self, features: &[f64]) -> f64 {
        self.forward_cached(features, None, CoarseMode::Hard).0.s
    }
}

/// One momentum-SGD update on `l_coarse + l_fine` (plus L2 decay).
/// Returns the updated parameters, the optimiser state and the batch losses.
pub fn train_step(
    params: &OrbNetParams,
    opt: &mut Momentum<OrbNetParams>,
    batch: &Batch<'_>,
    lr: f64,
    rng: &mut RngStream,
    exec: Exec,
) -> Result<(OrbNetParams, Losses)> {
    let mut next = params.clone();
    let losses = train::sgd_step(&mut next, opt, batch, lr, rng, exec)?;
    Ok((next, losses))
}

/// Trains ORBNet on `dataset` with a held-out validation split.
pub fn train(dataset: &RankedDataset, cfg: &TrainConfig) -> Result<(OrbNetParams, TrainingLog)> {
    match train::train_method(Method::OrbNet, dataset, cfg)? {
        (TrainedModel::OrbNet(p), log) => Ok((p, log)),
        _ => unreachable!("orbnet training returns orbnet parameters"),
    }
}

/// `(id, s / n)` for every item, dropout disabled.
pub fn predict_scores(params: &OrbNetParams, dataset: &RankedDataset) -> Result<Vec<(String, f64)>> {
    TrainedModel::OrbNet(params.clone()).predict_scores(dataset, Exec::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_error};

    fn toy(seed: u64) -> (OrbNetParams, Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = RngStream::new(seed, 99);
        let arch = Arch::with_hidden(5, [8, 6]);
        let enc = EncodingConfig::new(4, 3).unwrap();
        let mut p = OrbNetParams::init(arch, enc, 0.5, &mut rng);
        // non-trivial biases everywhere
        for g in p.groups_mut() {
            g.iter_mut().for_each(|v| *v += 0.1 * rng.uniform(-1.0, 1.0));
        }
        let feats = (0..4).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
        let mut ranks = vec![1, 2, 3, 4];
        rng.shuffle(&mut ranks);
        (p, feats, ranks)
    }

    #[test]
    fn zero_network_scores_half_bin() {
        let enc = EncodingConfig::new(10, 5).unwrap();
        let p = OrbNetParams::zeros(Arch::with_hidden(3, [4, 4]), enc, 0.0);
        let t = p.forward(&[1.0, 2.0, 3.0], Mode::Eval, None).unwrap();
        assert_eq!(t.l, vec![0.0; 4]);
        assert_eq!((t.s_bar, t.s_tilde, t.s), (0.0, 0.0, 1.0));
    }

    #[test]
    fn eval_is_deterministic_and_checks_dims() {
        let (p, f, _) = toy(1);
        let a = p.forward(&f[0], Mode::Eval, None).unwrap();
        let b = p.forward(&f[0], Mode::Eval, None).unwrap();
        assert_eq!(a, b);
        assert!(p.forward(&[1.0], Mode::Eval, None).is_err());
        assert!(p.forward(&f[0], Mode::Train, None).is_err());
        let mut q = p.clone();
        q.dropout_p = 0.0;
        assert_eq!(
            q.forward(&f[0], Mode::Train, None).unwrap(),
            q.forward(&f[0], Mode::Train, None).unwrap()
        );
    }

    #[test]
    fn threshold_probabilities_follow_biases() {
        let (p, f, _) = toy(2);
        for x in &f {
            let t = p.forward(x, Mode::Eval, None).unwrap();
            for i in 0..t.l.len() {
                for j in 0..t.l.len() {
                    if p.ord_b[i] > p.ord_b[j] {
                        assert!(sigmoid(t.l[i]) >= sigmoid(t.l[j]));
                    }
                }
            }
        }
    }

    #[test]
    fn coarse_loss_examples() {
        let enc = EncodingConfig::new(10, 10).unwrap();
        let t = encode_ordinal(4, &enc).unwrap();
        let v = loss_coarse(&[0.0; 9], &t).unwrap();
        assert!((v - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let confident: Vec<f64> = t.bits().iter().map(|&b| if b == 1 { 40.0 } else { -40.0 }).collect();
        assert!(loss_coarse(&confident, &t).unwrap() < 1e-15);
        let g = loss_coarse_grad(&[0.0; 9], &t);
        for (gj, &b) in g.iter().zip(t.bits()) {
            assert_eq!(*gj, 0.5 - f64::from(b));
        }
        assert!(loss_coarse(&[0.0; 3], &t).is_err());
    }

    #[test]
    fn fine_loss_examples() {
        assert!((loss_fine(&[1.0, 1.0], &[3, 3]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_fine(&[50.0, 0.0], &[2, 1]).unwrap() < 1e-20);
        let a = loss_fine(&[0.3, -1.2, 2.0], &[2, 1, 3]).unwrap();
        let b = loss_fine(&[-1.2, 0.3, 2.0], &[1, 2, 3]).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert_eq!(loss_fine(&[1.0], &[1]).unwrap(), 0.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let (p, feats, ranks) = toy(seed);
            let mut rng = RngStream::new(seed, 5);
            let masks: Vec<_> = (0..4).map(|_| Some(DropoutMasks::sample([8, 6], 0.5, &mut rng))).collect();
            let batch = Batch {
                ids: vec!["a", "b", "c", "d"],
                features: feats.iter().map(Vec::as_slice).collect(),
                ranks: ranks.clone(),
                n: 4,
            };
            let (_, grad) = p.loss_and_grad(&batch, &masks, Exec::Sequential).unwrap();
            let fd = finite_diff_gradient(
                |x| {
                    let mut q = p.clone();
                    q.assign_flat(x);
                    q.loss_and_grad(&batch, &masks, Exec::Sequential).unwrap().0.total
                },
                &p.flatten(),
                1e-6,
            )
            .unwrap();
            let worst = grad
                .flatten()
                .iter()
                .zip(&fd)
                .map(|(a, n)| relative_error(*a, *n, 1e-3))
                .fold(0.0, f64::max);
            assert!(worst <= 1e-5, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn policies_agree_bitwise() {
        let (p, feats, ranks) = toy(7);
        let batch = Batch {
            ids: vec!["a", "b", "c", "d"],
            features: feats.iter().map(Vec::as_slice).collect(),
            ranks,
            n: 4,
        };
        let masks = vec![None; 4];
        let (la, ga) = p.loss_and_grad(&batch, &masks, Exec::Sequential).unwrap();
        let (lb, gb) = p.loss_and_grad(&batch, &masks, Exec::Parallel).unwrap();
        assert_eq!(la, lb);
        assert_eq!(ga, gb);
        assert_eq!(la.total, la.part("coarse").unwrap() + la.part("fine").unwrap());
    }

    #[test]
    fn zero_lr_and_weight_decay() {
        let (p, feats, ranks) = toy(3);
        let batch = Batch {
            ids: vec!["a", "b", "c", "d"],
            features: feats.iter().map(Vec::as_slice).collect(),
            ranks,
            n: 4,
        };
        let mut opt = Momentum::new(&p, 0.9, 1e-4);
        let mut rng = RngStream::new(0, 0);
        let (same, _) = train_step(&p, &mut opt, &batch, 0.0, &mut rng, Exec::Sequential).unwrap();
        assert_eq!(same, p);

        // decay alone: zero gradient shrinks every weight norm
        let mut q = p.clone();
        let zero = p.zeros_like();
        let mut opt = Momentum::new(&q, 0.0, 0.1);
        opt.step(&mut q, &zero, 0.5);
        assert!(q.sq_norm() < p.sq_norm());
        for ((_, a), (_, b)) in q.groups().iter().zip(p.groups()) {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            assert!(na <= nb);
        }
    }

    #[test]
    fn offset_stays_within_one_bin() {
        let (p, feats, _) = toy(4);
        let mut rng = RngStream::new(4, 4);
        for f in &feats {
            for mode in [Mode::Eval, Mode::Train] {
                let t = p.forward(f, mode, Some(&mut rng)).unwrap();
                let off = t.s - t.s_bar;
                assert!(off > 0.0 && off < p.tau());
            }
        }
    }
}

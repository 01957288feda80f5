//! Comparison scorers: one `d -> 512 -> 128 -> 1` network trained with a
//! pairwise (RankNet, hinge), listwise (ListNet) or pointwise (L1 on the
//! percentile rank) objective.

use crate::dataset::densify;
use crate::error::{Error, Result};
use crate::nn::{trunk_groups, trunk_groups_mut, Arch, DropoutMasks, ParamSet, Trunk, TrunkCache};
use crate::numerics::{dot, log_sum_exp, softmax, RngStream};
use crate::orbnet::{pairwise_logistic, GRAD_CHUNK};
use crate::parallel::Exec;
use crate::train::{Batch, Losses, Method, RankModel};

/// ListNet list scope: the minibatch, or the whole training set once per
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListScope {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub trunk: Trunk,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub dropout_p: f64,
    pub method: Method,
    pub margin: f64,
}

impl ScorerParams {
    pub fn init(arch: Arch, method: Method, margin: f64, dropout_p: f64, rng: &mut RngStream) -> Result<Self> {
        if method == Method::OrbNet {
            return Err(Error::invalid("orbnet is not a single-output baseline"));
        }
        let trunk = Trunk::init(arch, rng);
        let h = arch.hidden[1];
        let bound = 1.0 / (h as f64).sqrt();
        let out_w = (0..h).map(|_| rng.uniform(-bound, bound)).collect();
        Ok(Self { trunk, out_w, out_b: vec![0.0], dropout_p, method, margin })
    }

    fn forward_cached(&self, f: &[f64], masks: Option<&DropoutMasks>) -> (f64, TrunkCache) {
        let cache = self.trunk.forward(f, masks);
        (dot(&self.out_w, &cache.a2) + self.out_b[0], cache)
    }

    pub fn forward_masked(&self, f: &[f64], masks: Option<&DropoutMasks>) -> Result<f64> {
        let d = self.trunk.arch().feature_dim;
        if f.len() != d {
            return Err(Error::Dimension(format!("expected {d} features, got {}", f.len())));
        }
        Ok(self.forward_cached(f, masks).0)
    }

    /// Loss on a batch of scores and its gradient with respect to them.
    fn objective(&self, scores: &[f64], batch: &Batch<'_>) -> (f64, Vec<f64>) {
        match self.method {
            Method::RankNet => pairwise_logistic(scores, &batch.ranks),
            Method::Hinge => hinge_with_grad(scores, &batch.ranks, self.margin),
            Method::ListNetLocal | Method::ListNetGlobal => listnet_with_grad(scores, &batch.ranks),
            Method::Regression => l1_with_grad(scores, &batch.ranks, batch.n),
            Method::OrbNet => unreachable!("rejected at construction"),
        }
    }
}

/// Pairwise logistic loss on single scores; identical to the ORBNet fine loss.
pub fn ranknet_loss(scores: &[f64], ranks: &[usize]) -> f64 {
    pairwise_logistic(scores, ranks).0
}

/// Mean over ordered pairs with `y_i > y_j` of `max(0, margin - (s_i - s_j))`.
pub fn hinge_loss(scores: &[f64], ranks: &[usize], margin: f64) -> f64 {
    hinge_with_grad(scores, ranks, margin).0
}

fn hinge_with_grad(scores: &[f64], ranks: &[usize], margin: f64) -> (f64, Vec<f64>) {
    let b = scores.len();
    let mut grad = vec![0.0; b];
    let mut pairs = 0usize;
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..b {
            if ranks[i] > ranks[j] {
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / pairs as f64;
    for i in 0..b {
        for j in 0..b {
            if ranks[i] <= ranks[j] {
                continue;
            }
            let slack = margin - (scores[i] - scores[j]);
            // subgradient 0 at the kink
            if slack > 0.0 {
                loss += slack;
                grad[i] -= inv;
                grad[j] += inv;
            }
        }
    }
    (loss * inv, grad)
}

/// Top-one ListNet: cross-entropy between `softmax(y / n)` over the list
/// (ranks re-densified within the list) and `softmax(scores)`.
pub fn listnet_loss(scores: &[f64], target_ranks: &[usize], scope: ListScope) -> f64 {
    // Scope only changes which list is passed in; the loss is the same.
    let _ = scope;
    listnet_with_grad(scores, target_ranks).0
}

fn listnet_with_grad(scores: &[f64], ranks: &[usize]) -> (f64, Vec<f64>) {
    let n = scores.len();
    if n < 2 {
        return (0.0, vec![0.0; n]);
    }
    let utilities: Vec<f64> = densify(ranks).iter().map(|&y| y as f64 / n as f64).collect();
    let target = softmax(&utilities);
    let lse = log_sum_exp(scores);
    let loss = -target.iter().zip(scores).map(|(t, s)| t * (s - lse)).sum::<f64>();
    let pred = softmax(scores);
    let grad = pred.iter().zip(&target).map(|(p, t)| p - t).collect();
    (loss, grad)
}

/// Mean `|s - y / n|`.
pub fn l1_regression_loss(scores: &[f64], ranks: &[usize], n: usize) -> f64 {
    l1_with_grad(scores, ranks, n).0
}

fn l1_with_grad(scores: &[f64], ranks: &[usize], n: usize) -> (f64, Vec<f64>) {
    let b = scores.len() as f64;
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(ranks)
        .map(|(&s, &y)| {
            let r = s - y as f64 / n as f64;
            loss += r.abs();
            if r > 0.0 {
                1.0 / b
            } else if r < 0.0 {
                -1.0 / b
            } else {
                0.0
            }
        })
        .collect();
    (loss / b, grad)
}

/// Gradient of the method's loss with respect to the batch scores. Exposed
/// for gradient checks.
pub fn loss_grad_scores(method: Method, margin: f64, scores: &[f64], ranks: &[usize], n: usize) -> (f64, Vec<f64>) {
    match method {
        Method::RankNet => pairwise_logistic(scores, ranks),
        Method::Hinge => hinge_with_grad(scores, ranks, margin),
        Method::ListNetLocal | Method::ListNetGlobal => listnet_with_grad(scores, ranks),
        Method::Regression => l1_with_grad(scores, ranks, n),
        Method::OrbNet => (f64::NAN, vec![f64::NAN; scores.len()]),
    }
}

impl ParamSet for ScorerParams {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut g = trunk_groups(&self.trunk).to_vec();
        g.extend([("output.weight", self.out_w.as_slice()), ("output.bias", self.out_b.as_slice())]);
        g
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut g: Vec<&mut [f64]> = trunk_groups_mut(&mut self.trunk).into_iter().collect();
        g.extend([self.out_w.as_mut_slice(), self.out_b.as_mut_slice()]);
        g
    }

    fn zeros_like(&self) -> Self {
        let arch = self.trunk.arch();
        Self {
            trunk: Trunk::zeros(arch),
            out_w: vec![0.0; arch.hidden[1]],
            out_b: vec![0.0],
            dropout_p: self.dropout_p,
            method: self.method,
            margin: self.margin,
        }
    }
}

impl RankModel for ScorerParams {
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
        let fwd = exec.map_range(b, |i| self.forward_cached(batch.features[i], masks[i].as_ref()));
        let scores: Vec<f64> = fwd.iter().map(|(s, _)| *s).collect();
        let (loss, g_s) = self.objective(&scores, batch);

        let chunks = b.div_ceil(GRAD_CHUNK);
        let partials = exec.map_range(chunks, |c| {
            let mut g = self.zeros_like();
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(b) {
                if g_s[i] == 0.0 {
                    continue;
                }
                let cache = &fwd[i].1;
                for (gw, a) in g.out_w.iter_mut().zip(&cache.a2) {
                    *gw += g_s[i] * a;
                }
                g.out_b[0] += g_s[i];
                let g_a2 = self.out_w.iter().map(|w| g_s[i] * w).collect();
                self.trunk.backward(batch.features[i], cache, masks[i].as_ref(), g_a2, &mut g.trunk);
            }
            g
        });
        let mut grad = self.zeros_like();
        for p in &partials {
            grad.add_assign(p);
        }
        Ok((Losses::single(self.method.name(), loss), grad))
    }

    fn score(&self, features: &[f64]) -> f64 {
        self.forward_cached(features, None).0
    }
}

//! Building blocks shared by every scorer: affine layers, the two-layer
//! rectifier trunk with inverted dropout, flat parameter views and the
//! momentum SGD update.

use serde::{Deserialize, Serialize};

use crate::numerics::{affine_into, relu, Mat, RngStream};

/// Hidden widths of the shared trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub feature_dim: usize,
    pub hidden: [usize; 2],
}

impl Arch {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim, hidden: [512, 128] }
    }

    pub fn with_hidden(feature_dim: usize, hidden: [usize; 2]) -> Self {
        Self { feature_dim, hidden }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: Mat::zeros(out, inp), bias: vec![0.0; out] }
    }

    pub fn init(out: usize, inp: usize, rng: &mut RngStream) -> Self {
        Self { weight: Mat::fan_in_uniform(out, inp, rng), bias: vec![0.0; out] }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Inverted-dropout masks for the two hidden layers. Entries are either 0
/// or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample(hidden: [usize; 2], p: f64, rng: &mut RngStream) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect()
        };
        let h1 = draw(hidden[0]);
        let h2 = draw(hidden[1]);
        Self { h1, h2 }
    }
}

/// `d -> h1 -> h2`, rectifier after each layer, optional dropout after each
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub l1: Dense,
    pub l2: Dense,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct TrunkCache {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
}

impl Trunk {
    pub fn init(arch: Arch, rng: &mut RngStream) -> Self {
        let l1 = Dense::init(arch.hidden[0], arch.feature_dim, rng);
        let l2 = Dense::init(arch.hidden[1], arch.hidden[0], rng);
        Self { l1, l2 }
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            l1: Dense::zeros(arch.hidden[0], arch.feature_dim),
            l2: Dense::zeros(arch.hidden[1], arch.hidden[0]),
        }
    }

    pub fn arch(&self) -> Arch {
        Arch { feature_dim: self.l1.in_dim(), hidden: [self.l1.out_dim(), self.l2.out_dim()] }
    }

    pub fn forward(&self, x: &[f64], masks: Option<&DropoutMasks>) -> TrunkCache {
        let mut z1 = vec![0.0; self.l1.out_dim()];
        affine_into(&self.l1.weight, &self.l1.bias, x, &mut z1);
        let mut a1: Vec<f64> = z1.iter().map(|&v| relu(v)).collect();
        if let Some(m) = masks {
            a1.iter_mut().zip(&m.h1).for_each(|(a, k)| *a *= k);
        }
        let mut z2 = vec![0.0; self.l2.out_dim()];
        affine_into(&self.l2.weight, &self.l2.bias, &a1, &mut z2);
        let mut a2: Vec<f64> = z2.iter().map(|&v| relu(v)).collect();
        if let Some(m) = masks {
            a2.iter_mut().zip(&m.h2).for_each(|(a, k)| *a *= k);
        }
        TrunkCache { z1, a1, z2, a2 }
    }

    /// Accumulates parameter gradients into `grad` given `dL/da2`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &TrunkCache,
        masks: Option<&DropoutMasks>,
        mut g_a2: Vec<f64>,
        grad: &mut Trunk,
    ) {
        // through mask and rectifier of layer 2
        for (i, g) in g_a2.iter_mut().enumerate() {
            let m = masks.map_or(1.0, |m| m.h2[i]);
            *g = if cache.z2[i] > 0.0 { *g * m } else { 0.0 };
        }
        let g_z2 = g_a2;
        grad.l2.weight.add_outer(&g_z2, &cache.a1);
        grad.l2.bias.iter_mut().zip(&g_z2).for_each(|(b, g)| *b += g);

        let mut g_a1 = vec![0.0; self.l1.out_dim()];
        self.l2.weight.transpose_mul_into(&g_z2, &mut g_a1);
        for (i, g) in g_a1.iter_mut().enumerate() {
            let m = masks.map_or(1.0, |m| m.h1[i]);
            *g = if cache.z1[i] > 0.0 { *g * m } else { 0.0 };
        }
        grad.l1.weight.add_outer(&g_a1, x);
        grad.l1.bias.iter_mut().zip(&g_a1).for_each(|(b, g)| *b += g);
    }
}

/// Uniform flat access to every parameter group of a model.
pub trait ParamSet: Clone {
    fn groups(&self) -> Vec<(&'static str, &[f64])>;
    fn groups_mut(&mut self) -> Vec<&mut [f64]>;
    /// Same shape, all parameters zero.
    fn zeros_like(&self) -> Self;

    fn flatten(&self) -> Vec<f64> {
        self.groups().into_iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }

    fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    /// Overwrites parameters from a flat vector in `groups()` order.
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for g in self.groups_mut() {
            let len = g.len();
            g.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }

    /// `self += other`, group by group.
    fn add_assign(&mut self, other: &Self) {
        for (dst, (_, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.groups().iter().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum()
    }

    fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn trunk_groups(t: &Trunk) -> [(&'static str, &[f64]); 4] {
    [
        ("trunk.l1.weight", t.l1.weight.as_slice()),
        ("trunk.l1.bias", &t.l1.bias),
        ("trunk.l2.weight", t.l2.weight.as_slice()),
        ("trunk.l2.bias", &t.l2.bias),
    ]
}

pub(crate) fn trunk_groups_mut(t: &mut Trunk) -> [&mut [f64]; 4] {
    [
        t.l1.weight.as_mut_slice(),
        &mut t.l1.bias,
        t.l2.weight.as_mut_slice(),
        &mut t.l2.bias,
    ]
}

/// Heavy-ball SGD with coupled L2 decay:
/// `v = momentum * v + (g + wd * p)`, `p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Momentum<P: ParamSet> {
    velocity: P,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<P: ParamSet> Momentum<P> {
    pub fn new(params: &P, momentum: f64, weight_decay: f64) -> Self {
        Self { velocity: params.zeros_like(), momentum, weight_decay }
    }

    pub fn step(&mut self, params: &mut P, grad: &P, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let grads = grad.groups();
        for ((p, v), (_, g)) in params.groups_mut().into_iter().zip(self.velocity.groups_mut()).zip(grads) {
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi + gi + wd * *pi;
                *pi -= lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_are_scaled_bernoulli() {
        let mut rng = RngStream::new(1, 1);
        let m = DropoutMasks::sample([2000, 10], 0.5, &mut rng);
        assert!(m.h1.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = m.h1.iter().filter(|&&v| v > 0.0).count();
        assert!((900..1100).contains(&kept), "{kept}");
        let none = DropoutMasks::sample([5, 5], 0.0, &mut rng);
        assert!(none.h1.iter().chain(&none.h2).all(|&v| v == 1.0));
    }

    #[test]
    fn trunk_shapes() {
        let arch = Arch::with_hidden(3, [5, 4]);
        let t = Trunk::init(arch, &mut RngStream::new(0, 0));
        assert_eq!(t.arch(), arch);
        let c = t.forward(&[1.0, -2.0, 0.5], None);
        assert_eq!((c.a1.len(), c.a2.len()), (5, 4));
        assert!(c.a2.iter().all(|&v| v >= 0.0));
    }
}

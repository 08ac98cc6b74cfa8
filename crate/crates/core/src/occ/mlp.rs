use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChangeMap, FeatureStack};
use crate::error::{invalid, shape_err, Result};
use crate::nnkit::{Activation, AdamConfig, AdamState, Gradients, LayerSpec, Network, OutputGrad, Tensor};
use crate::seed;

/// Hidden layer widths of the five ensemble members.
pub const MEMBER_LAYOUTS: [&[usize]; 5] = [&[1000], &[100, 100], &[200, 200], &[100, 100, 100], &[200, 200, 200]];

/// Training hyperparameters shared by all members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub learning_rate: f64,
    /// L2 penalty on the weights (not the biases).
    pub alpha: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Minimum epoch-loss improvement that resets the patience counter.
    pub tol: f64,
    pub n_iter_no_change: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { learning_rate: 1e-3, alpha: 1e-4, batch_size: 200, max_epochs: 200, tol: 1e-4, n_iter_no_change: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEnsemble {
    pub members: Vec<Network>,
    pub dim: usize,
    pub seed: u64,
    pub config: MlpConfig,
    /// Epochs each member trained before stopping.
    pub epochs_run: Vec<usize>,
    pub final_loss: Vec<f64>,
}

pub(crate) fn member_layers(dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = dim;
    for &h in hidden {
        layers.push(LayerSpec::dense(fan_in, h, Activation::Relu));
        fan_in = h;
    }
    layers.push(LayerSpec::dense(fan_in, 1, Activation::Logistic));
    layers
}

pub fn fit_step2(features: &FeatureStack, p: &[usize], rn: &[usize], seed: u64) -> Result<MlpEnsemble> {
    fit_step2_with(features, p, rn, seed, &MlpConfig::default())
}

/// Trains the five members on `P` (label 1) against `RN` (label 0) with
/// binary cross-entropy and Adam. Member `m` is seeded with
/// `derive_seed(seed, m + 1)`; members train in parallel.
pub fn fit_step2_with(features: &FeatureStack, p: &[usize], rn: &[usize], seed: u64, config: &MlpConfig) -> Result<MlpEnsemble> {
    if p.is_empty() || rn.is_empty() {
        return Err(invalid!("step 2 needs labelled positives and reliable negatives ({} / {})", p.len(), rn.len()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || config.n_iter_no_change == 0 {
        return Err(invalid!("batch_size, max_epochs and n_iter_no_change must be positive"));
    }
    if let Some(&i) = p.iter().chain(rn).find(|&&i| i >= features.len()) {
        return Err(invalid!("sample index {i} outside {} pixels", features.len()));
    }
    let d = features.dim;
    let x: Vec<f64> = features.gather(p).into_iter().chain(features.gather(rn)).collect();
    let y: Vec<f64> = std::iter::repeat_n(1.0, p.len()).chain(std::iter::repeat_n(0.0, rn.len())).collect();
    let trained = MEMBER_LAYOUTS
        .par_iter()
        .enumerate()
        .map(|(m, hidden)| train_member(&x, &y, d, hidden, seed::derive_seed(seed, m as u64 + 1), config))
        .collect::<Result<Vec<_>>>()?;
    let mut members = Vec::with_capacity(5);
    let mut epochs_run = Vec::with_capacity(5);
    let mut final_loss = Vec::with_capacity(5);
    for (net, epochs, loss) in trained {
        members.push(net);
        epochs_run.push(epochs);
        final_loss.push(loss);
    }
    Ok(MlpEnsemble { members, dim: d, seed, config: *config, epochs_run, final_loss })
}

fn train_member(x: &[f64], y: &[f64], d: usize, hidden: &[usize], seed: u64, cfg: &MlpConfig) -> Result<(Network, usize, f64)> {
    let n = y.len();
    let mut net = Network::new(member_layers(d, hidden), seed)?;
    let mut adam = AdamState::new(net.params(), AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
    let mut rng = seed::rng(seed::derive_seed(seed, 0));
    let mut order: Vec<usize> = (0..n).collect();
    let bs = cfg.batch_size.min(n);
    let (mut best, mut stale, mut loss, mut epochs) = (f64::INFINITY, 0, f64::NAN, 0);
    let mut xb = Vec::with_capacity(bs * d);
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(bs) {
            let b = batch.len() as f64;
            xb.clear();
            for &i in batch {
                xb.extend_from_slice(&x[i * d..(i + 1) * d]);
            }
            let acts = net.forward(&Tensor::new(vec![batch.len(), d], xb.clone())?)?;
            let out = acts.output().values();
            let mut bce = 0.0;
            let mut delta = Vec::with_capacity(batch.len());
            for (&i, &prob) in batch.iter().zip(out) {
                let pc = prob.clamp(1e-15, 1.0 - 1e-15);
                bce -= y[i] * pc.ln() + (1.0 - y[i]) * (1.0 - pc).ln();
                delta.push((prob - y[i]) / b);
            }
            let mut grads = Gradients::zeros_like(net.params());
            net.backward_into(&acts, OutputGrad::PreActivation(&Tensor::new(vec![batch.len(), 1], delta)?), &mut grads)?;
            let mut l2 = 0.0;
            for (w, g) in net.params().tensors.iter().zip(grads.tensors.iter_mut()).step_by(2) {
                for (gv, &wv) in g.values_mut().iter_mut().zip(w.values()) {
                    *gv += cfg.alpha * wv / b;
                    l2 += wv * wv;
                }
            }
            total += bce + 0.5 * cfg.alpha * l2;
            adam.step(net.params_mut(), &grads)?;
        }
        loss = total / n as f64;
        if loss > best - cfg.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        if loss < best {
            best = loss;
        }
        if stale >= cfg.n_iter_no_change {
            break;
        }
    }
    Ok((net, epochs, loss))
}

impl MlpEnsemble {
    /// Per-member positive decisions (output > 0.5) for every pixel.
    pub fn member_votes(&self, features: &FeatureStack) -> Result<Vec<Vec<bool>>> {
        if features.dim != self.dim {
            return Err(shape_err!("ensemble trained on {} features, got {}", self.dim, features.dim));
        }
        const CHUNK: usize = 4096;
        let n = features.len();
        let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
        self.members
            .iter()
            .map(|net| {
                let parts = chunks
                    .par_iter()
                    .map(|&(s, e)| {
                        let t = Tensor::new(vec![e - s, self.dim], features.vectors[s * self.dim..e * self.dim].to_vec())?;
                        Ok(net.infer(&t)?.values().iter().map(|&v| v > 0.5).collect::<Vec<bool>>())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(parts.concat())
            })
            .collect()
    }
}

/// Vote fraction per pixel and `votes > t` as the decision.
pub fn predict(ensemble: &MlpEnsemble, features: &FeatureStack, threshold: f64) -> Result<ChangeMap> {
    let votes = ensemble.member_votes(features)?;
    let m = votes.len() as f64;
    let frac = (0..features.len()).map(|i| votes.iter().filter(|v| v[i]).count() as f64 / m).collect();
    ChangeMap::from_votes(features.height, features.width, frac, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ::FeatureVariant;

    fn separable() -> (FeatureStack, Vec<usize>, Vec<usize>) {
        let n = 300;
        let mut v = Vec::with_capacity(2 * n);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.37;
            let (a, b) = (t.sin() * 0.8, (t * 1.3).cos() * 0.8);
            if i % 3 == 0 {
                v.extend([1.0 + a.abs(), b]);
                pos.push(i);
            } else {
                v.extend([-1.0 - a.abs(), b]);
                neg.push(i);
            }
        }
        let f = FeatureStack { height: 1, width: n, dim: 2, variant: FeatureVariant::NoOriginals, c1: 1, c2: 1, vectors: v };
        (f, pos, neg)
    }

    #[test]
    fn five_fixed_layouts() {
        let (f, pos, neg) = separable();
        let cfg = MlpConfig { max_epochs: 2, ..Default::default() };
        let e = fit_step2_with(&f, &pos, &neg, 1, &cfg).unwrap();
        assert_eq!(e.members.len(), 5);
        for (net, hidden) in e.members.iter().zip(MEMBER_LAYOUTS) {
            let widths: Vec<usize> = net.layers()[..net.layers().len() - 1].iter().map(|l| l.fan_out).collect();
            assert_eq!(widths, hidden);
            assert_eq!(net.layers().last().unwrap().activation, Activation::Logistic);
            assert!(net.layers()[..hidden.len()].iter().all(|l| l.activation == Activation::Relu));
        }
    }

    #[test]
    fn separable_fixture_trains_perfectly() {
        let (f, pos, neg) = separable();
        let e = fit_step2(&f, &pos, &neg, 3).unwrap();
        let votes = e.member_votes(&f).unwrap();
        for member in &votes {
            let tp = pos.iter().filter(|&&i| member[i]).count();
            let fp = neg.iter().filter(|&&i| member[i]).count();
            assert_eq!((tp, fp), (pos.len(), 0));
        }
        assert!(e.epochs_run.iter().all(|&n| n >= 1 && n <= 200));
    }

    #[test]
    fn deterministic_per_seed() {
        let (f, pos, neg) = separable();
        let cfg = MlpConfig { max_epochs: 3, ..Default::default() };
        let a = fit_step2_with(&f, &pos, &neg, 9, &cfg).unwrap();
        let b = fit_step2_with(&f, &pos, &neg, 9, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sets_rejected() {
        let (f, pos, _) = separable();
        assert!(fit_step2(&f, &pos, &[], 0).is_err());
        assert!(fit_step2(&f, &[], &pos, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (f, pos, neg) = separable();
        let e = fit_step2_with(&f, &pos, &neg, 1, &MlpConfig { max_epochs: 1, ..Default::default() }).unwrap();
        let wide = FeatureStack { dim: 1, c1: 1, c2: 0, vectors: vec![0.0; 300], ..f };
        assert!(predict(&e, &wide, 0.5).is_err());
    }
}

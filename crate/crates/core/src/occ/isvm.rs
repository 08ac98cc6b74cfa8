use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureStack;
use crate::error::{invalid, shape_err, Result};
use crate::raster::{BinaryMask, LabeledSet};
use crate::seed;

/// Stop rule for the iterative loop.
pub const MAX_FNR: f64 = 0.05;
pub const MAX_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn is_positive(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    pub fn predict(&self, features: &FeatureStack) -> Result<BinaryMask> {
        if features.dim != self.weights.len() {
            return Err(shape_err!("SVM trained on {} features, got {}", self.weights.len(), features.dim));
        }
        BinaryMask::new(features.height, features.width, (0..features.len()).map(|i| self.is_positive(features.row(i))).collect())
    }

    /// Fraction of `positives` classified negative.
    pub fn fnr(&self, features: &FeatureStack, positives: &[usize]) -> f64 {
        if positives.is_empty() {
            return 0.0;
        }
        positives.iter().filter(|&&i| !self.is_positive(features.row(i))).count() as f64 / positives.len() as f64
    }
}

/// Anything that fits a linear classifier to positives and negatives.
pub trait SvmTrainer {
    fn train(&mut self, features: &FeatureStack, positives: &[usize], negatives: &[usize]) -> Result<LinearSvm>;
}

/// Class-balanced linear hinge-loss SVM fitted by stochastic subgradient
/// descent (Pegasos with iterate averaging). The penalty is picked from
/// `lambdas` by the lowest false-negative rate on a held-out fraction of the
/// positives, ties going to the lower false-positive rate on the negatives.
#[derive(Debug, Clone)]
pub struct PegasosTrainer {
    pub seed: u64,
    pub epochs: usize,
    pub lambdas: Vec<f64>,
    pub holdout: f64,
    calls: u64,
}

impl PegasosTrainer {
    pub fn new(seed: u64) -> Self {
        PegasosTrainer { seed, epochs: 10, lambdas: (-5..=5).map(|e| 4f64.powi(e)).collect(), holdout: 0.2, calls: 0 }
    }

    fn fit(&self, f: &FeatureStack, pos: &[usize], neg: &[usize], lambda: f64, seed: u64) -> LinearSvm {
        let d = f.dim;
        let n = pos.len() + neg.len();
        let (cp, cn) = (n as f64 / (2.0 * pos.len() as f64), n as f64 / (2.0 * neg.len() as f64));
        let radius = (2.0 / lambda).sqrt();
        let mut rng = seed::rng(seed);
        let mut w = vec![0.0; d + 1];
        let mut avg = vec![0.0; d + 1];
        let steps = (self.epochs * n).max(2);
        for t in 1..=steps {
            let k = rng.random_range(0..n);
            let (i, y, c) = if k < pos.len() { (pos[k], 1.0, cp) } else { (neg[k - pos.len()], -1.0, cn) };
            let x = f.row(i);
            let margin = y * (w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]);
            let eta = 1.0 / (lambda * t as f64);
            let shrink = 1.0 - 1.0 / t as f64;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let s = eta * c * y;
                w[..d].iter_mut().zip(x).for_each(|(v, xv)| *v += s * xv);
                w[d] += s;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            if t > steps / 2 {
                avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
            }
        }
        let count = (steps - steps / 2) as f64;
        avg.iter_mut().for_each(|a| *a /= count);
        let bias = avg[d];
        avg.truncate(d);
        LinearSvm { weights: avg, bias, lambda }
    }
}

impl SvmTrainer for PegasosTrainer {
    fn train(&mut self, f: &FeatureStack, positives: &[usize], negatives: &[usize]) -> Result<LinearSvm> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(invalid!("SVM needs positives and negatives ({} / {})", positives.len(), negatives.len()));
        }
        if self.lambdas.is_empty() {
            return Err(invalid!("empty penalty grid"));
        }
        self.calls += 1;
        let call_seed = seed::derive_seed(self.seed, self.calls);
        let mut shuffled = positives.to_vec();
        shuffled.shuffle(&mut seed::rng(call_seed));
        let held = if positives.len() >= 2 {
            ((positives.len() as f64 * self.holdout).round() as usize).clamp(1, positives.len() - 1)
        } else {
            0
        };
        let (held_out, fit_pos) = shuffled.split_at(held);
        let score_pos = if held_out.is_empty() { fit_pos } else { held_out };
        let mut best: Option<(f64, f64, f64)> = None;
        for (j, &lambda) in self.lambdas.iter().enumerate() {
            let m = self.fit(f, fit_pos, negatives, lambda, seed::derive_seed(call_seed, j as u64 + 1));
            let fnr = m.fnr(f, score_pos);
            let fpr = negatives.iter().filter(|&&i| m.is_positive(f.row(i))).count() as f64 / negatives.len() as f64;
            if best.is_none_or(|(bf, bp, _)| fnr < bf || (fnr == bf && fpr < bp)) {
                best = Some((fnr, fpr, lambda));
            }
        }
        let lambda = best.map(|b| b.2).expect("grid is non-empty");
        Ok(self.fit(f, positives, negatives, lambda, seed::derive_seed(call_seed, 0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsvmStop {
    /// The next model's FNR on `P` exceeded the limit; the previous one is kept.
    FnrExceeded,
    NoNewNegatives,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsvmResult {
    pub model: LinearSvm,
    /// Number of models accepted, counting the first.
    pub iterations: usize,
    pub stop: IsvmStop,
    /// RN size used to train each model, in order.
    pub rn_sizes: Vec<usize>,
    /// FNR on `P` of every model trained, including a rejected last one.
    pub fnr_history: Vec<f64>,
    pub reliable_negatives: Vec<usize>,
}

pub fn fit_isvm(features: &FeatureStack, p: &LabeledSet, rn: &[usize], seed: u64) -> Result<IsvmResult> {
    fit_isvm_with(features, p, rn, &mut PegasosTrainer::new(seed), MAX_ITERATIONS)
}

/// Trains on `P` against `RN`, then repeatedly moves every unlabelled pixel the
/// current model calls negative into `RN` and retrains. Stops when a new
/// model's FNR on `P` exceeds 5% (keeping the previous model), when no new
/// negatives appear, or after `max_iterations` models. If the very first
/// model already exceeds the FNR limit it is returned as is.
pub fn fit_isvm_with(
    features: &FeatureStack,
    p: &LabeledSet,
    rn: &[usize],
    trainer: &mut impl SvmTrainer,
    max_iterations: usize,
) -> Result<IsvmResult> {
    let n = features.len();
    if p.universe_size != n {
        return Err(shape_err!("label universe of {} pixels, features have {n}", p.universe_size));
    }
    if p.is_empty() {
        return Err(invalid!("iterative SVM needs labelled positives"));
    }
    let labelled = p.membership();
    let mut in_rn = vec![false; n];
    for &i in rn {
        if i >= n || labelled[i] {
            return Err(invalid!("reliable negative {i} is out of range or labelled positive"));
        }
        in_rn[i] = true;
    }
    let pos = &p.positive_indices;
    let mut negatives = rn.to_vec();
    let mut model = trainer.train(features, pos, &negatives)?;
    let mut rn_sizes = vec![negatives.len()];
    let mut fnr_history = vec![model.fnr(features, pos)];
    let done = |model, iterations, stop, rn_sizes, fnr_history, negatives| {
        Ok(IsvmResult { model, iterations, stop, rn_sizes, fnr_history, reliable_negatives: negatives })
    };
    if fnr_history[0] > MAX_FNR {
        return done(model, 1, IsvmStop::FnrExceeded, rn_sizes, fnr_history, negatives);
    }
    for iteration in 2..=max_iterations {
        let fresh: Vec<usize> =
            (0..n).filter(|&i| !labelled[i] && !in_rn[i] && !model.is_positive(features.row(i))).collect();
        if fresh.is_empty() {
            return done(model, iteration - 1, IsvmStop::NoNewNegatives, rn_sizes, fnr_history, negatives);
        }
        for &i in &fresh {
            in_rn[i] = true;
        }
        negatives.extend(fresh);
        let candidate = trainer.train(features, pos, &negatives)?;
        let fnr = candidate.fnr(features, pos);
        fnr_history.push(fnr);
        rn_sizes.push(negatives.len());
        if fnr > MAX_FNR {
            return done(model, iteration - 1, IsvmStop::FnrExceeded, rn_sizes, fnr_history, negatives);
        }
        model = candidate;
    }
    done(model, max_iterations.max(1), IsvmStop::MaxIterations, rn_sizes, fnr_history, negatives)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ::FeatureVariant;

    fn stack(rows: Vec<[f64; 2]>) -> FeatureStack {
        let n = rows.len();
        FeatureStack {
            height: 1,
            width: n,
            dim: 2,
            variant: FeatureVariant::NoOriginals,
            c1: 1,
            c2: 1,
            vectors: rows.into_iter().flatten().collect(),
        }
    }

    /// 60 positives at x₀ ≥ 1, 140 negatives at x₀ ≤ −1.
    fn separable() -> FeatureStack {
        stack(
            (0..200)
                .map(|i| {
                    let t = i as f64 * 0.61;
                    let jitter = t.sin().abs();
                    if i < 60 { [1.0 + jitter, t.cos()] } else { [-1.0 - jitter, t.cos()] }
                })
                .collect(),
        )
    }

    #[test]
    fn separable_fixture_converges() {
        let f = separable();
        let p = LabeledSet::new((0..30).collect(), 200).unwrap();
        let rn: Vec<usize> = (60..100).collect();
        let r = fit_isvm(&f, &p, &rn, 4).unwrap();
        assert_eq!(r.stop, IsvmStop::NoNewNegatives);
        assert_eq!(r.iterations, 2);
        assert_eq!(r.fnr_history, vec![0.0, 0.0]);
        assert_eq!(r.rn_sizes, vec![40, 140]);
        let pred = r.model.predict(&f).unwrap();
        assert!((0..60).all(|i| pred.get(i)) && (60..200).all(|i| !pred.get(i)));
    }

    struct Scripted(Vec<LinearSvm>, usize);

    impl SvmTrainer for Scripted {
        fn train(&mut self, _: &FeatureStack, _: &[usize], _: &[usize]) -> Result<LinearSvm> {
            self.1 += 1;
            Ok(self.0[(self.1 - 1).min(self.0.len() - 1)].clone())
        }
    }

    fn svm(w0: f64, bias: f64) -> LinearSvm {
        LinearSvm { weights: vec![w0, 0.0], bias, lambda: 1.0 }
    }

    #[test]
    fn fnr_blowup_returns_previous_model() {
        let f = separable();
        let p = LabeledSet::new((0..30).collect(), 200).unwrap();
        let mut t = Scripted(vec![svm(1.0, 0.0), svm(1.0, -10.0)], 0);
        let r = fit_isvm_with(&f, &p, &[60, 61], &mut t, 20).unwrap();
        assert_eq!(r.stop, IsvmStop::FnrExceeded);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.model, svm(1.0, 0.0));
        assert_eq!(r.fnr_history, vec![0.0, 1.0]);
    }

    #[test]
    fn rn_never_shrinks() {
        let f = separable();
        let p = LabeledSet::new((0..30).collect(), 200).unwrap();
        // thresholds drift right so every model finds a few new negatives
        let script = (0..8).map(|k| svm(1.0, 1.5 - 0.3 * k as f64)).collect();
        let mut t = Scripted(script, 0);
        let r = fit_isvm_with(&f, &p, &[60], &mut t, 20).unwrap();
        assert!(r.rn_sizes.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.rn_sizes.len() > 2);
    }

    #[test]
    fn iteration_cap() {
        let f = separable();
        let p = LabeledSet::new((0..30).collect(), 200).unwrap();
        // decision boundary creeps right through the negatives
        let script = (0..40).map(|k| svm(1.0, 1.9 - 0.1 * k as f64)).collect();
        let r = fit_isvm_with(&f, &p, &[199], &mut Scripted(script, 0), 3).unwrap();
        assert_eq!(r.stop, IsvmStop::MaxIterations);
        assert_eq!(r.iterations, 3);
        assert_eq!(r.fnr_history.len(), 3);
    }

    #[test]
    fn empty_positives_rejected() {
        let f = separable();
        let p = LabeledSet::new(vec![], 200).unwrap();
        assert!(fit_isvm(&f, &p, &[100], 0).is_err());
    }
}

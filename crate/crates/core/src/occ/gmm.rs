use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use super::FeatureStack;
use crate::error::{invalid, shape_err, Error, Result};
use crate::raster::{BinaryMask, LabeledSet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Two-component Gaussian mixture; index 0 is "unchanged", 1 is "changed".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    /// Row-major `dim × dim` covariances as estimated, before the ridge.
    pub covariances: [Vec<f64>; 2],
    /// Diagonal loading added to each covariance when evaluating densities.
    pub ridge: [f64; 2],
}

/// Responsibilities from the single E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub gamma: Vec<[f64; 2]>,
    pub counts: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Step1Result {
    pub gmm: GmmModel,
    pub em: EmState,
    /// Unlabelled pixels the updated mixture assigns to the negative class.
    pub reliable_negatives: Vec<usize>,
}

/// Gaussian ready for log-density evaluation.
struct Component {
    mean: Vec<f64>,
    /// Row-major lower Cholesky factor of the regularized covariance.
    chol: Vec<f64>,
    log_norm: f64,
    ridge: f64,
}

impl Component {
    /// Adds `1e-6 · trace/dim` to the diagonal and escalates it tenfold
    /// until the matrix factorizes.
    fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let m = DMatrix::from_row_slice(d, d, cov);
        let trace = m.trace();
        let mut ridge = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-12 };
        for _ in 0..40 {
            let loaded = &m + DMatrix::<f64>::identity(d, d) * ridge;
            if let Some(c) = Cholesky::<f64, Dyn>::new(loaded) {
                let l = c.l();
                let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
                let chol = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
                return Ok(Component { mean, chol, log_norm: -0.5 * (d as f64 * LN_2PI + log_det), ridge });
            }
            ridge *= 10.0;
        }
        Err(Error::Numerical(format!("covariance not positive definite even with ridge {ridge:e}")))
    }

    fn log_pdf(&self, x: &[f64], work: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let s: f64 = row.iter().zip(&work[..i]).map(|(l, z)| l * z).sum();
            let z = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
            work[i] = z;
            q += z * z;
        }
        self.log_norm - 0.5 * q
    }
}

/// Weighted mean and covariance (divided by the weight sum, or by `n − 1`
/// when `unbiased` and weights are all one).
fn moments<'a>(rows: impl Iterator<Item = (&'a [f64], f64)> + Clone, d: usize, unbiased: bool) -> (Vec<f64>, Vec<f64>, f64) {
    let mut mean = vec![0.0; d];
    let mut total = 0.0;
    for (x, w) in rows.clone() {
        total += w;
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += w * v);
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (x, w) in rows {
        diff.iter_mut().zip(x).zip(&mean).for_each(|((o, v), m)| *o = v - m);
        for i in 0..d {
            let wi = w * diff[i];
            for j in 0..=i {
                cov[i * d + j] += wi * diff[j];
            }
        }
    }
    let denom = if unbiased { total - 1.0 } else { total };
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (mean, cov, total)
}

/// Step 1: initializes the positive component from `P` and the negative one
/// from the unlabelled pixels with sample estimates and equal priors, runs one
/// E-step (labelled positives clamped to γ₁ = 1) and one M-step, sets the
/// priors to the soft class proportions, and returns the unlabelled pixels
/// with `log π₀ + log f₀ > log π₁ + log f₁` as reliable negatives.
pub fn fit_step1(features: &FeatureStack, p: &LabeledSet) -> Result<Step1Result> {
    let n = features.len();
    let d = features.dim;
    if p.universe_size != n {
        return Err(shape_err!("label universe of {} pixels, features have {n}", p.universe_size));
    }
    if p.len() < 2 {
        return Err(invalid!("step 1 needs at least 2 labelled positives, got {}", p.len()));
    }
    if n - p.len() < 2 {
        return Err(invalid!("step 1 needs at least 2 unlabelled pixels"));
    }
    let labelled = p.membership();
    let unlabelled: Vec<usize> = (0..n).filter(|&i| !labelled[i]).collect();

    let (m1, c1, _) = moments(p.positive_indices.iter().map(|&i| (features.row(i), 1.0)), d, true);
    let (m0, c0, _) = moments(unlabelled.iter().map(|&i| (features.row(i), 1.0)), d, true);
    let init = [Component::new(m0, &c0)?, Component::new(m1, &c1)?];

    let half = 0.5f64.ln();
    let mut work = vec![0.0; d];
    let gamma: Vec<[f64; 2]> = (0..n)
        .map(|j| {
            if labelled[j] {
                return [0.0, 1.0];
            }
            let x = features.row(j);
            let l0 = half + init[0].log_pdf(x, &mut work);
            let l1 = half + init[1].log_pdf(x, &mut work);
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            [e0 / (e0 + e1), e1 / (e0 + e1)]
        })
        .collect();

    let mut means: [Vec<f64>; 2] = Default::default();
    let mut covariances: [Vec<f64>; 2] = Default::default();
    let mut counts = [0.0; 2];
    for k in 0..2 {
        let rows = (0..n).map(|j| (features.row(j), gamma[j][k]));
        let (m, c, nk) = moments(rows, d, false);
        if !(nk > 0.0) {
            return Err(Error::Numerical(format!("mixture component {k} received no responsibility")));
        }
        means[k] = m;
        covariances[k] = c;
        counts[k] = nk;
    }
    let priors = [counts[0] / n as f64, counts[1] / n as f64];
    let comps = [Component::new(means[0].clone(), &covariances[0])?, Component::new(means[1].clone(), &covariances[1])?];
    let gmm = GmmModel { dim: d, priors, means, covariances, ridge: [comps[0].ridge, comps[1].ridge] };

    let (lp0, lp1) = (priors[0].ln(), priors[1].ln());
    let reliable_negatives = unlabelled
        .into_iter()
        .filter(|&j| {
            let x = features.row(j);
            lp0 + comps[0].log_pdf(x, &mut work) > lp1 + comps[1].log_pdf(x, &mut work)
        })
        .collect();
    Ok(Step1Result { gmm, em: EmState { gamma, counts }, reliable_negatives })
}

impl GmmModel {
    /// `[log π₀ + log f₀, log π₁ + log f₁]` for every pixel.
    pub fn log_joint(&self, features: &FeatureStack) -> Result<Vec<[f64; 2]>> {
        if features.dim != self.dim {
            return Err(shape_err!("mixture fitted on {} features, got {}", self.dim, features.dim));
        }
        let comps = [self.component(0)?, self.component(1)?];
        let lp = [self.priors[0].ln(), self.priors[1].ln()];
        let mut work = vec![0.0; self.dim];
        Ok((0..features.len())
            .map(|j| {
                let x = features.row(j);
                [lp[0] + comps[0].log_pdf(x, &mut work), lp[1] + comps[1].log_pdf(x, &mut work)]
            })
            .collect())
    }

    /// Step-1-only change map: changed where the positive joint density is at
    /// least the negative one.
    pub fn predict(&self, features: &FeatureStack) -> Result<BinaryMask> {
        let lj = self.log_joint(features)?;
        BinaryMask::new(features.height, features.width, lj.iter().map(|l| l[1] >= l[0]).collect())
    }

    fn component(&self, k: usize) -> Result<Component> {
        let d = self.dim;
        if self.means[k].len() != d || self.covariances[k].len() != d * d {
            return Err(shape_err!("mixture component {k} has inconsistent sizes"));
        }
        let mut cov = self.covariances[k].clone();
        for i in 0..d {
            cov[i * d + i] += self.ridge[k];
        }
        let m = DMatrix::from_row_slice(d, d, &cov);
        let c = Cholesky::<f64, Dyn>::new(m)
            .ok_or_else(|| Error::Numerical(format!("stored covariance {k} is not positive definite")))?;
        let l = c.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Component {
            mean: self.means[k].clone(),
            chol: (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect(),
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            ridge: self.ridge[k],
        })
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::occ::FeatureVariant;
    use crate::seed;

    fn stack(rows: &[Vec<f64>]) -> FeatureStack {
        let dim = rows[0].len();
        FeatureStack {
            height: 1,
            width: rows.len(),
            dim,
            variant: FeatureVariant::NoDifferences,
            c1: dim,
            c2: 0,
            vectors: rows.concat(),
        }
    }

    /// Independent 2-D evaluation of one EM update with closed-form inverses.
    struct Oracle {
        means: [[f64; 2]; 2],
        covs: [[[f64; 2]; 2]; 2],
        gamma: Vec<[f64; 2]>,
    }

    fn oracle(data: &[[f64; 2]], positive: &[bool]) -> Oracle {
        let stats = |idx: &[usize]| {
            let n = idx.len() as f64;
            let mut m = [0.0; 2];
            for &i in idx {
                m[0] += data[i][0] / n;
                m[1] += data[i][1] / n;
            }
            let mut c = [[0.0; 2]; 2];
            for &i in idx {
                for a in 0..2 {
                    for b in 0..2 {
                        c[a][b] += (data[i][a] - m[a]) * (data[i][b] - m[b]) / (n - 1.0);
                    }
                }
            }
            let r = 1e-6 * (c[0][0] + c[1][1]) / 2.0;
            c[0][0] += r;
            c[1][1] += r;
            (m, c)
        };
        let pos: Vec<usize> = (0..data.len()).filter(|&i| positive[i]).collect();
        let unl: Vec<usize> = (0..data.len()).filter(|&i| !positive[i]).collect();
        let init = [stats(&unl), stats(&pos)];
        let density = |x: &[f64; 2], (m, c): &([f64; 2], [[f64; 2]; 2])| {
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let inv = [[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]];
            let dx = [x[0] - m[0], x[1] - m[1]];
            let q = dx[0] * (inv[0][0] * dx[0] + inv[0][1] * dx[1]) + dx[1] * (inv[1][0] * dx[0] + inv[1][1] * dx[1]);
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        let gamma: Vec<[f64; 2]> = data
            .iter()
            .zip(positive)
            .map(|(x, &p)| {
                if p {
                    [0.0, 1.0]
                } else {
                    let (f0, f1) = (0.5 * density(x, &init[0]), 0.5 * density(x, &init[1]));
                    [f0 / (f0 + f1), f1 / (f0 + f1)]
                }
            })
            .collect();
        let mut means = [[0.0; 2]; 2];
        let mut covs = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            let nk: f64 = gamma.iter().map(|g| g[k]).sum();
            for a in 0..2 {
                means[k][a] = data.iter().zip(&gamma).map(|(x, g)| g[k] * x[a]).sum::<f64>() / nk;
            }
            for a in 0..2 {
                for b in 0..2 {
                    covs[k][a][b] = data
                        .iter()
                        .zip(&gamma)
                        .map(|(x, g)| g[k] * (x[a] - means[k][a]) * (x[b] - means[k][b]))
                        .sum::<f64>()
                        / nk;
                }
            }
        }
        Oracle { means, covs, gamma }
    }

    fn fixture() -> (Vec<[f64; 2]>, Vec<bool>) {
        let mut data = Vec::new();
        let mut positive = Vec::new();
        for i in 0..50 {
            let t = i as f64;
            let (cx, cy) = if i < 18 { (2.0, 2.5) } else { (-0.5, 0.0) };
            data.push([cx + 0.6 * (t * 1.7).sin(), cy + 0.5 * (t * 2.3).cos() + 0.1 * (t * 0.7).sin()]);
            positive.push(i < 10);
        }
        (data, positive)
    }

    #[test]
    fn update_matches_brute_force() {
        let (data, positive) = fixture();
        let f = stack(&data.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
        let p = LabeledSet::new((0..10).collect(), 50).unwrap();
        let got = fit_step1(&f, &p).unwrap();
        let want = oracle(&data, &positive);
        for (g, w) in got.em.gamma.iter().zip(&want.gamma) {
            assert!((g[0] - w[0]).abs() < 1e-10 && (g[1] - w[1]).abs() < 1e-10);
        }
        for k in 0..2 {
            for a in 0..2 {
                assert!((got.gmm.means[k][a] - want.means[k][a]).abs() < 1e-10);
                for b in 0..2 {
                    assert!((got.gmm.covariances[k][a * 2 + b] - want.covs[k][a][b]).abs() < 1e-10);
                }
            }
        }
        let total: f64 = got.gmm.priors.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_normalized_and_clamped() {
        let (data, _) = fixture();
        let f = stack(&data.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
        // label points from the other cluster: clamping must still hold
        let p = LabeledSet::new(vec![0, 1, 30, 40], 50).unwrap();
        let got = fit_step1(&f, &p).unwrap();
        for (j, g) in got.em.gamma.iter().enumerate() {
            assert!((g[0] + g[1] - 1.0).abs() < 1e-12);
            if p.positive_indices.contains(&j) {
                assert_eq!(*g, [0.0, 1.0]);
            }
        }
        assert!(got.reliable_negatives.iter().all(|j| !p.positive_indices.contains(j)));
    }

    #[test]
    fn reliable_negatives_are_precise() {
        let mut rng = seed::rng(7);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let d = 5;
        let mut rows = Vec::new();
        for i in 0..4000 {
            let centre = if i < 400 { 4.0 } else { 0.0 };
            rows.push((0..d).map(|_| centre + noise.sample(&mut rng)).collect::<Vec<f64>>());
        }
        let f = stack(&rows);
        let p = LabeledSet::new((0..20).collect(), 4000).unwrap();
        let got = fit_step1(&f, &p).unwrap();
        let true_neg = got.reliable_negatives.iter().filter(|&&j| j >= 400).count();
        let precision = true_neg as f64 / got.reliable_negatives.len() as f64;
        assert!(precision >= 0.99, "precision {precision}");
        assert!(got.reliable_negatives.len() > 3000);
    }

    #[test]
    fn rank_deficient_positives_get_a_ridge() {
        // 3 positives in 5 dimensions: singular sample covariance
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| vec![1.0 + i as f64 * 0.1; 5]).collect();
        rows.extend((0..60).map(|i| (0..5).map(|c| ((i * 7 + c * 3) % 11) as f64 / 11.0 - 0.5).collect()));
        let f = stack(&rows);
        let got = fit_step1(&f, &LabeledSet::new(vec![0, 1, 2], 63).unwrap()).unwrap();
        assert!(got.gmm.ridge.iter().all(|&r| r > 0.0));
        assert!(got.gmm.log_joint(&f).unwrap().iter().all(|l| l[0].is_finite() && l[1].is_finite()));
    }

    #[test]
    fn too_few_positives() {
        let (data, _) = fixture();
        let f = stack(&data.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
        assert!(fit_step1(&f, &LabeledSet::new(vec![3], 50).unwrap()).is_err());
    }

    #[test]
    fn high_dimension_does_not_underflow() {
        let d = 64;
        let rows: Vec<Vec<f64>> = (0..400).map(|i| (0..d).map(|c| (((i * 13 + c * 7) % 29) as f64 / 29.0) * if i < 50 { 3.0 } else { 1.0 }).collect()).collect();
        let f = stack(&rows);
        let got = fit_step1(&f, &LabeledSet::new((0..30).collect(), 400).unwrap()).unwrap();
        assert!(got.em.gamma.iter().all(|g| g[0].is_finite() && (g[0] + g[1] - 1.0).abs() < 1e-12));
    }
}

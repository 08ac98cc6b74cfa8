use crate::error::{shape_err, Result};
use crate::nnkit::Tensor;

/// Per-pixel change prior for one training patch.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityPrior {
    /// Change prior α ∈ [0, 1], min–max rescaled over the patch.
    pub alpha: Vec<f64>,
    /// Translation weight Π = 1 − α.
    pub pi: Vec<f64>,
}

/// Squared Euclidean distances between all pixel pairs of a band-sequential
/// `[channels, …]` patch, and the mean pairwise (i < j) distance.
fn pairwise(patch: &Tensor) -> (Vec<f64>, f64, usize) {
    let c = patch.shape()[0];
    let n = patch.len() / c;
    let v = patch.values();
    let mut d2 = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for ch in 0..c {
                let d = v[ch * n + i] - v[ch * n + j];
                s += d * d;
            }
            d2[i * n + j] = s;
            d2[j * n + i] = s;
            sum += s.sqrt();
        }
    }
    let pairs = n * (n - 1) / 2;
    let mean = if pairs > 0 { sum / pairs as f64 } else { 0.0 };
    (d2, mean, n)
}

/// Cross-modal affinity prior for co-located patches (`[c₁, …]` and `[c₂, …]`
/// with the same pixel count `n`).
///
/// Within each modality `A_ij = exp(−d(i,j)² / h²)` with `h` the mean pairwise
/// distance (floored at 1e-9). `α_i = (1/n) Σ_j |A^x_ij − A^y_ij|`, rescaled to
/// [0, 1] over the patch; a flat α (spread below 1e-12) maps to all zeros.
pub fn affinity_prior(patch_x: &Tensor, patch_y: &Tensor) -> Result<AffinityPrior> {
    let (cx, cy) = (patch_x.shape().first().copied().unwrap_or(0), patch_y.shape().first().copied().unwrap_or(0));
    if cx == 0 || cy == 0 {
        return Err(shape_err!("patches need a leading channel axis"));
    }
    let (nx, ny) = (patch_x.len() / cx, patch_y.len() / cy);
    if nx != ny || nx == 0 {
        return Err(shape_err!("patches cover {nx} and {ny} pixels"));
    }
    let (dx, hx, n) = pairwise(patch_x);
    let (dy, hy, _) = pairwise(patch_y);
    let (hx2, hy2) = (hx.max(1e-9).powi(2), hy.max(1e-9).powi(2));
    let mut alpha: Vec<f64> = (0..n)
        .map(|i| {
            let row_x = &dx[i * n..(i + 1) * n];
            let row_y = &dy[i * n..(i + 1) * n];
            row_x.iter().zip(row_y).map(|(a, b)| ((-a / hx2).exp() - (-b / hy2).exp()).abs()).sum::<f64>() / n as f64
        })
        .collect();
    let (lo, hi) = alpha.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi - lo > 1e-12 {
        alpha.iter_mut().for_each(|a| *a = (*a - lo) / (hi - lo));
    } else {
        alpha.fill(0.0);
    }
    let pi = alpha.iter().map(|a| 1.0 - a).collect();
    Ok(AffinityPrior { alpha, pi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(c: usize, values: Vec<f64>) -> Tensor {
        let n = values.len() / c;
        Tensor::new(vec![c, n], values).unwrap()
    }

    #[test]
    fn identical_structure_gives_zero_alpha() {
        let x = patch(2, vec![0.1, 0.5, -0.3, 0.9, 0.2, 0.0, -0.7, 0.4]);
        // swapped channels preserve every pairwise distance
        let y = patch(2, vec![0.2, 0.0, -0.7, 0.4, 0.1, 0.5, -0.3, 0.9]);
        let p = affinity_prior(&x, &y).unwrap();
        assert!(p.alpha.iter().all(|&a| a == 0.0));
        assert!(p.pi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_patches_give_zero_alpha() {
        let p = affinity_prior(&patch(3, vec![0.4; 27]), &patch(1, vec![-0.2; 9])).unwrap();
        assert!(p.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn pixel_count_mismatch() {
        assert!(affinity_prior(&patch(1, vec![0.0; 9]), &patch(1, vec![0.0; 8])).is_err());
    }

    /// Brute-force α on a 3×3 patch, written directly from the definition.
    fn brute_alpha(x: &[[f64; 2]; 9], y: &[[f64; 2]; 9]) -> Vec<f64> {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let mean_dist = |pts: &dyn Fn(usize) -> Vec<f64>| {
            let mut s = 0.0;
            for i in 0..9 {
                for j in 0..9 {
                    if i < j {
                        s += dist(&pts(i), &pts(j));
                    }
                }
            }
            s / 36.0
        };
        let px = |i: usize| x[i].to_vec();
        let py = |i: usize| y[i].to_vec();
        let (hx, hy) = (mean_dist(&px), mean_dist(&py));
        let raw: Vec<f64> = (0..9)
            .map(|i| {
                (0..9)
                    .map(|j| {
                        let ax = (-(dist(&px(i), &px(j)).powi(2)) / (hx * hx)).exp();
                        let ay = (-(dist(&py(i), &py(j)).powi(2)) / (hy * hy)).exp();
                        (ax - ay).abs()
                    })
                    .sum::<f64>()
                    / 9.0
            })
            .collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }

    #[test]
    fn displaced_pixel_attains_patch_max() {
        // smooth ramps in both modalities; pixel 4 jumps far away in y only
        let x: [[f64; 2]; 9] = std::array::from_fn(|i| [(i / 3) as f64 * 0.1, (i % 3) as f64 * 0.1]);
        let mut y: [[f64; 2]; 9] = std::array::from_fn(|i| [(i % 3) as f64 * 0.2, (i / 3) as f64 * 0.2]);
        y[4] = [3.0, 3.0];
        let expected = brute_alpha(&x, &y);
        let tx = patch(2, (0..2).flat_map(|c| x.iter().map(move |p| p[c])).collect());
        let ty = patch(2, (0..2).flat_map(|c| y.iter().map(move |p| p[c])).collect());
        let got = affinity_prior(&tx, &ty).unwrap();
        for (g, e) in got.alpha.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
        let argmax = (0..9).max_by(|&a, &b| got.alpha[a].total_cmp(&got.alpha[b])).unwrap();
        assert_eq!(argmax, 4);
        assert_eq!(got.alpha[4], 1.0);
    }
}

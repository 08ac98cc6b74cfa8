use super::TranslationResult;
use crate::error::{shape_err, Result};
use crate::raster::{BinaryMask, Raster};

pub const OTSU_BINS: usize = 256;

/// Otsu split of a score vector over a fixed-width histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    /// First bin of the upper (changed) class; `OTSU_BINS` when nothing is changed.
    pub bin: usize,
    /// Score at the lower edge of `bin`.
    pub value: f64,
    /// Between-class variance at the chosen split.
    pub between_variance: f64,
}

/// Histogram bin of `s` for `OTSU_BINS` equal-width bins spanning [lo, hi].
pub(crate) fn bin_of(s: f64, lo: f64, hi: f64) -> usize {
    (((s - lo) / (hi - lo) * OTSU_BINS as f64).floor() as usize).min(OTSU_BINS - 1)
}

/// Maximizes `ω₀ω₁(μ₀ − μ₁)²` over split bins `k ∈ 1..256`, with class means
/// taken over bin centres. Ties keep the lowest `k`. A constant input returns
/// the empty upper class.
pub fn otsu_threshold(scores: &[f64]) -> Result<OtsuThreshold> {
    if scores.is_empty() {
        return Err(shape_err!("no scores to threshold"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(crate::Error::NonFinite("change scores".into()));
    }
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return Ok(OtsuThreshold { bin: OTSU_BINS, value: hi, between_variance: 0.0 });
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0usize; OTSU_BINS];
    for &s in scores {
        hist[bin_of(s, lo, hi)] += 1;
    }
    let total = scores.len() as f64;
    let centre = |b: usize| lo + (b as f64 + 0.5) * width;
    let grand: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * centre(b)).sum();

    let mut best = OtsuThreshold { bin: 1, value: lo + width, between_variance: f64::NEG_INFINITY };
    let (mut n0, mut sum0) = (0.0, 0.0);
    for k in 1..OTSU_BINS {
        n0 += hist[k - 1] as f64;
        sum0 += hist[k - 1] as f64 * centre(k - 1);
        let n1 = total - n0;
        let var = if n0 == 0.0 || n1 == 0.0 {
            0.0
        } else {
            let (w0, w1) = (n0 / total, n1 / total);
            let (m0, m1) = (sum0 / n0, (grand - sum0) / n1);
            w0 * w1 * (m0 - m1) * (m0 - m1)
        };
        if var > best.between_variance {
            best = OtsuThreshold { bin: k, value: lo + k as f64 * width, between_variance: var };
        }
    }
    Ok(best)
}

/// Unsupervised change map from the translation differences alone.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeChangeMap {
    /// Per-pixel mean squared standardized difference over all channels.
    pub score: Vec<f64>,
    pub threshold: OtsuThreshold,
    pub mask: BinaryMask,
}

/// Standardizes every channel of `d_x` and `d_y` (population statistics; a
/// constant channel becomes zero), scores each pixel by the mean of its
/// squared standardized values, and thresholds the scores with Otsu.
pub fn cae_change_map(t: &TranslationResult) -> Result<CaeChangeMap> {
    if !t.d_x.same_grid(&t.d_y) {
        return Err(shape_err!("difference images differ in size"));
    }
    let n = t.d_x.pixels();
    let channels = t.d_x.channels() + t.d_y.channels();
    let mut score = vec![0.0; n];
    for r in [&t.d_x, &t.d_y] {
        accumulate_standardized(r, &mut score);
    }
    score.iter_mut().for_each(|s| *s /= channels as f64);
    let threshold = otsu_threshold(&score)?;
    let (lo, hi) = score.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let mask = score.iter().map(|&s| hi > lo && bin_of(s, lo, hi) >= threshold.bin).collect();
    Ok(CaeChangeMap { score, threshold, mask: BinaryMask::new(t.d_x.height(), t.d_x.width(), mask)? })
}

fn accumulate_standardized(r: &Raster, score: &mut [f64]) {
    let n = r.pixels() as f64;
    for c in 0..r.channels() {
        let band = r.band(c);
        let mean = band.iter().sum::<f64>() / n;
        let var = band.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            for (s, v) in score.iter_mut().zip(band) {
                *s += (v - mean).powi(2) / var;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tries every boundary directly from the per-pixel bin assignment.
    fn brute_force(scores: &[f64]) -> (usize, f64) {
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = (hi - lo) / 256.0;
        let centres: Vec<(usize, f64)> = scores
            .iter()
            .map(|&s| {
                let b = (((s - lo) / (hi - lo)) * 256.0).floor().min(255.0) as usize;
                (b, lo + (b as f64 + 0.5) * w)
            })
            .collect();
        let mut best = (0, -1.0);
        for k in 1..256 {
            let below: Vec<f64> = centres.iter().filter(|c| c.0 < k).map(|c| c.1).collect();
            let above: Vec<f64> = centres.iter().filter(|c| c.0 >= k).map(|c| c.1).collect();
            let var = if below.is_empty() || above.is_empty() {
                0.0
            } else {
                let n = scores.len() as f64;
                let m0 = below.iter().sum::<f64>() / below.len() as f64;
                let m1 = above.iter().sum::<f64>() / above.len() as f64;
                below.len() as f64 / n * (above.len() as f64 / n) * (m0 - m1).powi(2)
            };
            if var > best.1 {
                best = (k, var);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut state = 12345u64;
        for trial in 0..20 {
            let n = 50 + trial * 37;
            let scores: Vec<f64> = (0..n)
                .map(|i| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                    if i % 5 == 0 { 3.0 + u } else { u * u }
                })
                .collect();
            let got = otsu_threshold(&scores).unwrap();
            let (k, var) = brute_force(&scores);
            assert_eq!(got.bin, k, "trial {trial}");
            assert!((got.between_variance - var).abs() <= 1e-12 * var.max(1.0));
        }
    }

    #[test]
    fn separates_two_modes() {
        let scores: Vec<f64> = (0..100).map(|i| if i < 80 { 0.1 + i as f64 * 1e-3 } else { 5.0 + i as f64 * 1e-3 }).collect();
        let t = otsu_threshold(&scores).unwrap();
        assert!(scores[..80].iter().all(|&s| s < t.value));
        assert!(scores[80..].iter().all(|&s| s >= t.value));
    }

    #[test]
    fn constant_scores_change_nothing() {
        let t = otsu_threshold(&[0.3; 10]).unwrap();
        assert_eq!(t.bin, OTSU_BINS);
        let d = Raster::zeros(2, 5, vec!["a".into()]).unwrap();
        let map = cae_change_map(&TranslationResult { x_hat: d.clone(), y_hat: d.clone(), d_x: d.clone(), d_y: d }).unwrap();
        assert_eq!(map.mask.count(), 0);
    }

    #[test]
    fn large_differences_flagged() {
        let mut dx = vec![0.01; 2 * 36];
        let mut dy = vec![-0.02; 36];
        for i in [3usize, 4, 9, 10] {
            dx[i] = 0.9;
            dx[36 + i] = -0.8;
            dy[i] = 0.7;
        }
        for (i, v) in dx.iter_mut().enumerate() {
            *v += (i % 7) as f64 * 1e-3;
        }
        let d_x = Raster::new(6, 6, Raster::numbered_names("x", 2), dx).unwrap();
        let d_y = Raster::new(6, 6, Raster::numbered_names("y", 1), dy).unwrap();
        let map = cae_change_map(&TranslationResult { x_hat: d_x.clone(), y_hat: d_y.clone(), d_x, d_y }).unwrap();
        assert_eq!(map.mask.indices(), vec![3, 4, 9, 10]);
    }
}

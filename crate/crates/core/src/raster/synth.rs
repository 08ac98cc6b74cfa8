//! Synthetic heterogeneous image pairs with a weak targeted change hidden
//! among strong confounding changes.
//!
//! A smooth latent land-cover map is rendered through two unrelated sensors:
//! sensor A is linear in the class (4 channels), sensor B applies a
//! per-class squared/log response (3 channels). Target changes are blobs on
//! the dominant class whose post-event signature shifts slightly; confounders
//! are bright clouds in the pre-event image or land-cover swaps in the
//! post-event image, both far larger in magnitude.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BinaryMask, DatasetBundle, Raster};
use crate::error::{invalid, Result};
use crate::seed;

const SENSOR_A_CHANNELS: usize = 4;
const SENSOR_B_CHANNELS: usize = 3;
const TARGET_SHIFT: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub latent_classes: usize,
    pub target_change_fraction: f64,
    pub confounder_change_fraction: f64,
    pub sensor_noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 128,
            width: 128,
            latent_classes: 5,
            target_change_fraction: 0.05,
            confounder_change_fraction: 0.10,
            sensor_noise_sd: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(invalid!("synthetic rasters must be at least 32x32, got {}x{}", self.height, self.width));
        }
        if !(2..=16).contains(&self.latent_classes) {
            return Err(invalid!("latent_classes must be in 2..=16, got {}", self.latent_classes));
        }
        let ft = self.target_change_fraction;
        let fc = self.confounder_change_fraction;
        if !(0.0..=1.0).contains(&ft) || !(0.0..=1.0).contains(&fc) || ft + fc > 1.0 {
            return Err(invalid!("change fractions {ft} + {fc} must lie in [0, 1] and sum to at most 1"));
        }
        if !(self.sensor_noise_sd.is_finite() && self.sensor_noise_sd >= 0.0) {
            return Err(invalid!("sensor_noise_sd must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Change {
    None,
    Target,
    Cloud,
    Swap(usize),
}

pub fn generate_synthetic_pair(cfg: &SynthConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    let (h, w, k) = (cfg.height, cfg.width, cfg.latent_classes);
    let n = h * w;
    let mut rng = seed::rng(cfg.seed);

    let classes = latent_map(h, w, k, &mut rng);
    let sig_a = spread_points(k, SENSOR_A_CHANNELS, 0.1, 0.9, 0.35, &mut rng);
    let sig_b = spread_points(k, SENSOR_B_CHANNELS, 0.15, 0.85, 0.3, &mut rng);

    let mut counts = vec![0usize; k];
    for &c in &classes {
        counts[c] += 1;
    }
    let source = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let shift = target_shift(&sig_b, source, &mut rng);

    let mut change = vec![Change::None; n];
    let target_count = (cfg.target_change_fraction * n as f64).round() as usize;
    let confounder_count = (cfg.confounder_change_fraction * n as f64).round() as usize;
    let big = h.min(w) as f64;

    place_blobs(
        &mut change,
        h,
        w,
        target_count,
        (3.0, (big / 10.0).max(4.0)),
        |i, ch| ch == Change::None && classes[i] == source,
        |_| Change::Target,
        &mut rng,
    )?;
    place_blobs(
        &mut change,
        h,
        w,
        confounder_count,
        (4.0, (big / 8.0).max(5.0)),
        |_, ch| ch == Change::None,
        |rng| {
            if rng.random_bool(0.5) {
                Change::Cloud
            } else {
                Change::Swap(1 + rng.random_range(0..k - 1))
            }
        },
        &mut rng,
    )?;

    let noise = Normal::new(0.0, cfg.sensor_noise_sd).map_err(|e| invalid!("noise: {e}"))?;
    let mut t1 = vec![0.0; SENSOR_A_CHANNELS * n];
    let mut t2 = vec![0.0; SENSOR_B_CHANNELS * n];
    let mut base = [0.0; SENSOR_B_CHANNELS];
    for i in 0..n {
        let c = classes[i];
        for ch in 0..SENSOR_A_CHANNELS {
            let mut v = sig_a[c][ch];
            if change[i] == Change::Cloud {
                v = 0.72 + 0.25 * v;
            }
            t1[ch * n + i] = f32_round(v + noise.sample(&mut rng));
        }
        let post_class = match change[i] {
            Change::Swap(offset) => (c + offset) % k,
            _ => c,
        };
        base.copy_from_slice(&sig_b[post_class]);
        if change[i] == Change::Target {
            for (b, s) in base.iter_mut().zip(&shift) {
                *b += s;
            }
        }
        let y = sensor_b(&base);
        for ch in 0..SENSOR_B_CHANNELS {
            t2[ch * n + i] = f32_round(y[ch] + noise.sample(&mut rng));
        }
    }

    let t1 = Raster::new(h, w, ["Blue", "Green", "Red", "NIR"].map(String::from).to_vec(), t1)?;
    let t2 = Raster::new(h, w, ["Red", "NIR", "SWIR"].map(String::from).to_vec(), t2)?;
    let target = BinaryMask::new(h, w, change.iter().map(|&c| c == Change::Target).collect())?;
    let confounder =
        BinaryMask::new(h, w, change.iter().map(|&c| matches!(c, Change::Cloud | Change::Swap(_))).collect())?;
    let unchanged = BinaryMask::new(h, w, change.iter().map(|&c| c == Change::None).collect())?;

    DatasetBundle::new(format!("synthetic-{}", cfg.seed), t1, t2)?
        .with_ground_truth(target.clone())?
        .with_region("target", target)?
        .with_region("confounder", confounder)?
        .with_region("unchanged", unchanged)
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

fn sensor_b(s: &[f64; SENSOR_B_CHANNELS]) -> [f64; SENSOR_B_CHANNELS] {
    [s[0] * s[0], (1.0 + 4.0 * s[1]).ln() / 5f64.ln(), s[2] * (1.0 - 0.5 * s[0])]
}

/// Argmax over `k` box-blurred noise fields, giving blobby class regions.
fn latent_map(h: usize, w: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let radius = (h.min(w) / 12).max(2);
    let fields: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut f: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
            for _ in 0..3 {
                f = box_blur(&f, h, w, radius);
            }
            f
        })
        .collect();
    (0..h * w)
        .map(|i| {
            (0..k)
                .max_by(|&a, &b| fields[a][i].total_cmp(&fields[b][i]).then(b.cmp(&a)))
                .unwrap_or(0)
        })
        .collect()
}

fn box_blur(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-(r as isize)..=r as isize).map(|d| src[y * w + clamp(x as isize + d, w)]).sum();
            tmp[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-(r as isize)..=r as isize).map(|d| tmp[clamp(y as isize + d, h) * w + x]).sum();
            out[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    out
}

/// `k` points in `[lo, hi]^dim`, rejection-sampled for a minimum pairwise
/// distance (relaxed gradually if the box is too crowded).
fn spread_points(k: usize, dim: usize, lo: f64, hi: f64, min_dist: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut need = min_dist;
    let mut tries = 0;
    while pts.len() < k {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
        if pts.iter().all(|q| dist(q, &p) >= need) {
            pts.push(p);
        } else {
            tries += 1;
            if tries % 500 == 0 {
                need *= 0.9;
            }
        }
    }
    pts
}

fn target_shift(sig: &[Vec<f64>], source: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..200 {
        let dir: Vec<f64> = (0..sig[source].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let shift: Vec<f64> = dir.iter().map(|v| v / norm * TARGET_SHIFT).collect();
        let moved: Vec<f64> = sig[source].iter().zip(&shift).map(|(a, b)| a + b).collect();
        if moved.iter().any(|v| !(0.05..=0.95).contains(v)) {
            continue;
        }
        let clearance = sig
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != source)
            .map(|(_, s)| dist(s, &moved))
            .fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(c, _)| clearance > *c) {
            best = Some((clearance, shift));
        }
    }
    best.map(|(_, s)| s).unwrap_or_else(|| vec![0.0; sig[source].len()])
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Grows disc-shaped blobs over eligible pixels until exactly `count` pixels
/// carry a change. The last blob is truncated to its closest pixels.
#[allow(clippy::too_many_arguments)]
fn place_blobs<R: Rng>(
    change: &mut [Change],
    h: usize,
    w: usize,
    count: usize,
    radius: (f64, f64),
    eligible: impl Fn(usize, Change) -> bool,
    mut kind: impl FnMut(&mut R) -> Change,
    rng: &mut R,
) -> Result<()> {
    let mut placed = 0;
    let mut attempts = 0;
    while placed < count {
        let candidates: Vec<usize> = (0..h * w).filter(|&i| eligible(i, change[i])).collect();
        if candidates.is_empty() || attempts > 10_000 {
            return Err(invalid!("cannot place {count} changed pixels; only {placed} eligible"));
        }
        attempts += 1;
        let centre = candidates[rng.random_range(0..candidates.len())];
        let (cy, cx) = ((centre / w) as f64, (centre % w) as f64);
        let r = rng.random_range(radius.0..radius.1);
        let label = kind(rng);
        let ri = r.ceil() as isize;
        let mut disc: Vec<(f64, usize)> = Vec::new();
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let (y, x) = (cy as isize + dy, cx as isize + dx);
                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                    continue;
                }
                let d2 = (dy * dy + dx * dx) as f64;
                let i = y as usize * w + x as usize;
                if d2 <= r * r && eligible(i, change[i]) {
                    disc.push((d2, i));
                }
            }
        }
        disc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, i) in disc.into_iter().take(count - placed) {
            change[i] = label;
            placed += 1;
        }
    }
    Ok(())
}

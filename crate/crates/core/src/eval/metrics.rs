use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::raster::{BinaryMask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub f1: f64,
    /// No positives in either map; `f1` is reported as 1 by convention.
    pub undefined: bool,
}

impl MetricsRecord {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let undefined = tp + fp + fn_ == 0;
        let f1 = if undefined { 1.0 } else { tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64) };
        MetricsRecord { tp, fp, fn_, tn, f1, undefined }
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 }
    }
}

fn check_shapes(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(shape_err!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        ));
    }
    Ok(())
}

/// Confusion counts and `F1 = TP / (TP + (FP + FN)/2)`.
pub fn f1(pred: &BinaryMask, gt: &BinaryMask) -> Result<MetricsRecord> {
    check_shapes(pred, gt)?;
    let mut c = [0usize; 4];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        c[(p as usize) << 1 | g as usize] += 1;
    }
    // index: pred<<1 | gt
    Ok(MetricsRecord::from_counts(c[3], c[2], c[1], c[0]))
}

pub const TP_COLOR: [u8; 3] = [255, 255, 255];
pub const TN_COLOR: [u8; 3] = [0, 0, 0];
pub const FP_COLOR: [u8; 3] = [0, 255, 0];
pub const FN_COLOR: [u8; 3] = [255, 0, 0];

/// TP white, TN black, FP green, FN red.
pub fn confusion_map(pred: &BinaryMask, gt: &BinaryMask) -> Result<RgbImage> {
    check_shapes(pred, gt)?;
    let w = pred.width();
    Ok(RgbImage::from_fn(w as u32, pred.height() as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb(match (pred.get(i), gt.get(i)) {
            (true, true) => TP_COLOR,
            (false, false) => TN_COLOR,
            (true, false) => FP_COLOR,
            (false, true) => FN_COLOR,
        })
    }))
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png).map_err(Error::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    ExpectPositive,
    ExpectNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub name: String,
    pub mask: BinaryMask,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRate {
    pub name: String,
    pub polarity: Polarity,
    pub pixels: usize,
    pub positive_rate: f64,
    pub negative_rate: f64,
}

impl RegionRate {
    /// The rate the polarity asks for: positives in an expected-positive
    /// region, negatives otherwise.
    pub fn expected_rate(&self) -> f64 {
        match self.polarity {
            Polarity::ExpectPositive => self.positive_rate,
            Polarity::ExpectNegative => self.negative_rate,
        }
    }
}

/// Fractions of each region's pixels predicted positive and negative.
pub fn region_rates(pred: &BinaryMask, regions: &[RegionSpec]) -> Result<Vec<RegionRate>> {
    regions
        .iter()
        .map(|r| {
            check_shapes(pred, &r.mask)?;
            let idx = r.mask.indices();
            if idx.is_empty() {
                return Err(invalid!("region {:?} has an empty mask", r.name));
            }
            let pos = idx.iter().filter(|&&i| pred.get(i)).count() as f64;
            let n = idx.len() as f64;
            Ok(RegionRate {
                name: r.name.clone(),
                polarity: r.polarity,
                pixels: idx.len(),
                positive_rate: pos / n,
                negative_rate: (n - pos) / n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdviDelta {
    /// Mean of `NDVI_post − NDVI_pre` over usable masked pixels.
    pub mean_delta: f64,
    pub pixels: usize,
    /// Masked pixels skipped because `NIR + Red = 0` at either time.
    pub excluded: usize,
}

/// Mean NDVI change over `mask`, with `NDVI = (NIR − Red)/(NIR + Red)` taken
/// from the channels named "Red" and "NIR" (case-insensitive).
pub fn ndvi_delta(pre: &Raster, post: &Raster, mask: &BinaryMask) -> Result<NdviDelta> {
    let bands = |r: &Raster, which: &str| -> Result<(usize, usize)> {
        match (r.channel_index("red"), r.channel_index("nir")) {
            (Some(red), Some(nir)) => Ok((red, nir)),
            _ => Err(invalid!("{which} raster has no channels named Red and NIR (found {:?})", r.names())),
        }
    };
    let (r0, n0) = bands(pre, "pre-event")?;
    let (r1, n1) = bands(post, "post-event")?;
    if !pre.same_grid(post) || !mask.same_shape(pre.height(), pre.width()) {
        return Err(shape_err!("rasters and mask are not on one grid"));
    }
    let ndvi = |r: &Raster, red: usize, nir: usize, i: usize| {
        let (a, b) = (r.band(red)[i], r.band(nir)[i]);
        let s = a + b;
        if s == 0.0 { None } else { Some((b - a) / s) }
    };
    let (mut sum, mut pixels, mut excluded) = (0.0, 0, 0);
    for i in mask.indices() {
        match (ndvi(pre, r0, n0, i), ndvi(post, r1, n1, i)) {
            (Some(a), Some(b)) => {
                sum += b - a;
                pixels += 1;
            }
            _ => excluded += 1,
        }
    }
    let mean_delta = if pixels > 0 { sum / pixels as f64 } else { f64::NAN };
    Ok(NdviDelta { mean_delta, pixels, excluded })
}

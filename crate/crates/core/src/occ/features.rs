use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cae::TranslationResult;
use crate::error::{invalid, shape_err, Error, Result};
use crate::raster::Raster;

/// Which blocks of `[u, d_x, v, d_y]` enter the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureVariant {
    Full,
    NoDifferences,
    NoOriginals,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 3] = [FeatureVariant::Full, FeatureVariant::NoDifferences, FeatureVariant::NoOriginals];

    pub fn dim(self, c1: usize, c2: usize) -> usize {
        match self {
            FeatureVariant::Full => 2 * c1 + 2 * c2,
            FeatureVariant::NoDifferences | FeatureVariant::NoOriginals => c1 + c2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Full => "full",
            FeatureVariant::NoDifferences => "no-diff",
            FeatureVariant::NoOriginals => "no-orig",
        }
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(FeatureVariant::Full),
            "no-diff" | "no-differences" | "no_differences" => Ok(FeatureVariant::NoDifferences),
            "no-orig" | "no-originals" | "no_originals" => Ok(FeatureVariant::NoOriginals),
            _ => Err(invalid!("unknown feature variant {s:?} (expected full, no-diff or no-orig)")),
        }
    }
}

/// Per-pixel feature vectors, pixel-major: `vectors[i * dim .. (i + 1) * dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub variant: FeatureVariant,
    /// Pre-event and post-event channel counts.
    pub c1: usize,
    pub c2: usize,
    pub vectors: Vec<f64>,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Column ranges of `u`, `d_x`, `v`, `d_y` within a row (empty when absent).
    pub fn blocks(&self) -> [std::ops::Range<usize>; 4] {
        let (c1, c2) = (self.c1, self.c2);
        match self.variant {
            FeatureVariant::Full => [0..c1, c1..2 * c1, 2 * c1..2 * c1 + c2, 2 * c1 + c2..2 * c1 + 2 * c2],
            FeatureVariant::NoDifferences => [0..c1, c1..c1, c1..c1 + c2, c1 + c2..c1 + c2],
            FeatureVariant::NoOriginals => [0..0, 0..c1, c1..c1, c1..c1 + c2],
        }
    }

    /// Feature rows for the listed pixels, concatenated.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }
}

/// Stacks `[u, d_x, v, d_y]` per pixel, where `u` and `v` are the pre- and
/// post-event pixels and `d_x`, `d_y` the translation differences, keeping
/// only the blocks the variant selects.
pub fn stack_features(x: &Raster, y: &Raster, t: &TranslationResult, variant: FeatureVariant) -> Result<FeatureStack> {
    if !x.same_grid(y) || !x.same_grid(&t.d_x) || !x.same_grid(&t.d_y) {
        return Err(shape_err!("images and translation differences are not on one grid"));
    }
    let (c1, c2) = (x.channels(), y.channels());
    if t.d_x.channels() != c1 || t.d_y.channels() != c2 {
        return Err(shape_err!(
            "difference channels {}/{} do not match image channels {c1}/{c2}",
            t.d_x.channels(),
            t.d_y.channels()
        ));
    }
    let blocks: Vec<&Raster> = match variant {
        FeatureVariant::Full => vec![x, &t.d_x, y, &t.d_y],
        FeatureVariant::NoDifferences => vec![x, y],
        FeatureVariant::NoOriginals => vec![&t.d_x, &t.d_y],
    };
    let dim = variant.dim(c1, c2);
    let n = x.pixels();
    let mut vectors = vec![0.0; n * dim];
    let mut offset = 0;
    for r in blocks {
        for c in 0..r.channels() {
            for (i, &v) in r.band(c).iter().enumerate() {
                vectors[i * dim + offset + c] = v;
            }
        }
        offset += r.channels();
    }
    Ok(FeatureStack { height: x.height(), width: x.width(), dim, variant, c1, c2, vectors })
}

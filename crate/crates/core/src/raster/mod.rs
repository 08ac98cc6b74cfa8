//! Raster data model, bundle I/O, positive-label sampling and the synthetic
//! heterogeneous-pair generator.

mod bundle;
mod sample;
mod synth;

pub use bundle::{load_bundle, raster_to_f32le, write_bundle, BandSpec, DatasetBundle, Manifest, MaskSpec};
pub(crate) use bundle::{read_json, write_file, write_json};
pub use sample::{sample_positive_set, LabeledSet};
pub use synth::{generate_synthetic_pair, SynthConfig};

use crate::error::{invalid, shape_err, Error, Result};

/// An `height × width × channels` image of finite reals, stored band-sequential
/// (`data[c * height * width + row * width + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    names: Vec<String>,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let channels = names.len();
        if height == 0 || width == 0 || channels == 0 {
            return Err(shape_err!("raster dimensions must be nonzero, got {height}x{width}x{channels}"));
        }
        if data.len() != height * width * channels {
            return Err(shape_err!(
                "raster {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("raster value at flat index {pos}")));
        }
        Ok(Raster { height, width, names, data })
    }

    pub fn zeros(height: usize, width: usize, names: Vec<String>) -> Result<Self> {
        let n = height * width * names.len();
        Self::new(height, width, names, vec![0.0; n])
    }

    /// Channel names `prefix1..prefixN`.
    pub fn numbered_names(prefix: &str, channels: usize) -> Vec<String> {
        (1..=channels).map(|i| format!("{prefix}{i}")).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(name))
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[c * self.pixels() + row * self.width + col]
    }

    /// Writes the pixel vector at flat index `i` into `out`.
    pub fn pixel_into(&self, i: usize, out: &mut [f64]) {
        let n = self.pixels();
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[c * n + i];
        }
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copies the window starting at (`row`, `col`) into a band-sequential buffer.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Vec<f64>> {
        if row + height > self.height || col + width > self.width {
            return Err(shape_err!(
                "window {height}x{width} at ({row},{col}) exceeds raster {}x{}",
                self.height,
                self.width
            ));
        }
        let mut out = Vec::with_capacity(height * width * self.channels());
        for c in 0..self.channels() {
            let band = self.band(c);
            for r in row..row + height {
                let start = r * self.width + col;
                out.extend_from_slice(&band[start..start + width]);
            }
        }
        Ok(out)
    }

    /// Writes a band-sequential window buffer back at (`row`, `col`).
    pub fn set_window(&mut self, row: usize, col: usize, height: usize, width: usize, values: &[f64]) -> Result<()> {
        if row + height > self.height || col + width > self.width || values.len() != height * width * self.channels() {
            return Err(shape_err!("window {height}x{width} at ({row},{col}) does not fit"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window values".into()));
        }
        let full_w = self.width;
        for c in 0..self.channels() {
            let band = self.band_mut(c);
            for r in 0..height {
                let dst = (row + r) * full_w + col;
                let src = (c * height + r) * width;
                band[dst..dst + width].copy_from_slice(&values[src..src + width]);
            }
        }
        Ok(())
    }

    /// Elementwise `self - other`, keeping `self`'s channel names.
    pub fn sub(&self, other: &Raster) -> Result<Raster> {
        if !self.same_grid(other) || self.channels() != other.channels() {
            return Err(shape_err!("cannot subtract rasters of different shape"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Raster::new(self.height, self.width, self.names.clone(), data)
    }
}

/// A binary `height × width` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!("mask {height}x{width} needs {} values, got {}", height * width, data.len()));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        BinaryMask { height, width, data: vec![value; height * width] }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if let Some(pos) = bytes.iter().position(|&b| b > 1) {
            return Err(invalid!("mask value {} at index {pos} is not 0/1", bytes[pos]));
        }
        Self::new(height, width, bytes.iter().map(|&b| b == 1).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| b as u8).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.data[i]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn same_shape(&self, h: usize, w: usize) -> bool {
        self.height == h && self.width == w
    }
}

/// Maps every channel affinely so that its minimum becomes −1 and its maximum
/// +1. Constant channels map to all zeros.
pub fn normalize_raster(r: &Raster) -> Result<Raster> {
    if let Some(pos) = r.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raster value at flat index {pos}")));
    }
    let mut out = r.clone();
    for c in 0..r.channels() {
        let band = out.band_mut(c);
        let (lo, hi) = band.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            let span = hi - lo;
            for v in band.iter_mut() {
                *v = (*v - lo) / span * 2.0 - 1.0;
            }
        } else {
            band.fill(0.0);
        }
    }
    Ok(out)
}

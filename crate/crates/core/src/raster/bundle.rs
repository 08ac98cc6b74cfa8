use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Raster};
use crate::error::{invalid, shape_err, Error, Result};

/// A co-registered pre/post raster pair with optional reference masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub t1: Raster,
    pub t2: Raster,
    pub ground_truth: Option<BinaryMask>,
    pub region_masks: BTreeMap<String, BinaryMask>,
    pub pixel_spacing: Option<f64>,
}

impl DatasetBundle {
    pub fn new(name: impl Into<String>, t1: Raster, t2: Raster) -> Result<Self> {
        if !t1.same_grid(&t2) {
            return Err(shape_err!(
                "t1 is {}x{} but t2 is {}x{}",
                t1.height(),
                t1.width(),
                t2.height(),
                t2.width()
            ));
        }
        Ok(DatasetBundle {
            name: name.into(),
            t1,
            t2,
            ground_truth: None,
            region_masks: BTreeMap::new(),
            pixel_spacing: None,
        })
    }

    pub fn with_ground_truth(mut self, gt: BinaryMask) -> Result<Self> {
        self.check_mask("ground_truth", &gt)?;
        self.ground_truth = Some(gt);
        Ok(self)
    }

    pub fn with_region(mut self, name: impl Into<String>, mask: BinaryMask) -> Result<Self> {
        let name = name.into();
        self.check_mask(&name, &mask)?;
        self.region_masks.insert(name, mask);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.t1.height()
    }

    pub fn width(&self) -> usize {
        self.t1.width()
    }

    fn check_mask(&self, what: &str, m: &BinaryMask) -> Result<()> {
        if !m.same_shape(self.height(), self.width()) {
            return Err(shape_err!(
                "{what} mask is {}x{}, rasters are {}x{}",
                m.height(),
                m.width(),
                self.height(),
                self.width()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub file: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub dtype: String,
    pub layout: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub file: String,
    pub dtype: String,
}

/// On-disk bundle description. Binary paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub t1: BandSpec,
    pub t2: BandSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<MaskSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub region_masks: BTreeMap<String, MaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing: Option<f64>,
}

pub(crate) const F32LE: &str = "f32le";
pub(crate) const BSQ: &str = "band-sequential";

impl BandSpec {
    pub fn for_raster(r: &Raster, file: impl Into<String>) -> Self {
        BandSpec {
            file: file.into(),
            height: r.height(),
            width: r.width(),
            channels: r.channels(),
            dtype: F32LE.into(),
            layout: BSQ.into(),
            names: r.names().to_vec(),
        }
    }

    /// Reads the raster this spec describes; relative paths resolve against `base`.
    pub fn read(&self, base: &Path) -> Result<Raster> {
        if self.dtype != F32LE {
            return Err(invalid!("unsupported raster dtype {:?}", self.dtype));
        }
        if self.layout != BSQ {
            return Err(invalid!("unsupported raster layout {:?}", self.layout));
        }
        if self.names.len() != self.channels {
            return Err(shape_err!("{} names for {} channels", self.names.len(), self.channels));
        }
        let path = base.join(&self.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = self.height * self.width * self.channels * 4;
        if bytes.len() != expected {
            return Err(shape_err!(
                "{}: expected {expected} bytes for {}x{}x{} f32, found {}",
                path.display(),
                self.height,
                self.width,
                self.channels,
                bytes.len()
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Raster::new(self.height, self.width, self.names.clone(), data)
            .map_err(|e| invalid!("{}: {e}", path.display()))
    }
}

impl MaskSpec {
    pub fn u8(file: impl Into<String>) -> Self {
        MaskSpec { file: file.into(), dtype: "u8".into() }
    }

    pub fn read(&self, base: &Path, height: usize, width: usize) -> Result<BinaryMask> {
        if self.dtype != "u8" {
            return Err(invalid!("unsupported mask dtype {:?}", self.dtype));
        }
        let path = base.join(&self.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != height * width {
            return Err(shape_err!(
                "{}: expected {} mask bytes, found {}",
                path.display(),
                height * width,
                bytes.len()
            ));
        }
        BinaryMask::from_u8(height, width, &bytes)
    }
}

/// Serializes raster values as little-endian f32. Values are rounded to f32.
pub fn raster_to_f32le(r: &Raster) -> Vec<u8> {
    r.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Loads and validates a bundle from its JSON manifest.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();

    let t1 = manifest.t1.read(&base)?;
    let t2 = manifest.t2.read(&base)?;
    let mut bundle = DatasetBundle::new(manifest.name.clone(), t1, t2)?;
    bundle.pixel_spacing = manifest.pixel_spacing;
    let (h, w) = (bundle.height(), bundle.width());
    if let Some(gt) = &manifest.ground_truth {
        let mask = gt.read(&base, h, w)?;
        bundle = bundle.with_ground_truth(mask)?;
    }
    for (name, spec) in &manifest.region_masks {
        let mask = spec.read(&base, h, w)?;
        bundle = bundle.with_region(name.clone(), mask)?;
    }
    Ok(bundle)
}

/// Writes `bundle` into `dir` (created if needed) and returns the manifest path.
///
/// Raster values are stored as f32; a bundle whose values are already
/// f32-representable round-trips bit-exactly.
pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_file(&dir.join("t1.f32"), &raster_to_f32le(&bundle.t1))?;
    write_file(&dir.join("t2.f32"), &raster_to_f32le(&bundle.t2))?;
    let ground_truth = match &bundle.ground_truth {
        Some(gt) => {
            write_file(&dir.join("ground_truth.u8"), &gt.to_u8())?;
            Some(MaskSpec::u8("ground_truth.u8"))
        }
        None => None,
    };
    let mut region_masks = BTreeMap::new();
    for (name, mask) in &bundle.region_masks {
        let file = format!("region_{name}.u8");
        write_file(&dir.join(&file), &mask.to_u8())?;
        region_masks.insert(name.clone(), MaskSpec::u8(file));
    }
    let manifest = Manifest {
        name: bundle.name.clone(),
        t1: BandSpec::for_raster(&bundle.t1, "t1.f32"),
        t2: BandSpec::for_raster(&bundle.t2, "t2.f32"),
        ground_truth,
        region_masks,
        pixel_spacing: bundle.pixel_spacing,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

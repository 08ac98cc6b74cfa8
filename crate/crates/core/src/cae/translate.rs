use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CaeModel;
use crate::error::{shape_err, Error, Result};
use crate::nnkit::Tensor;
use crate::raster::{BandSpec, Raster};

/// Cross-domain translations and the difference images built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationResult {
    /// `X̂ = D_X(E_Y(Y))`, in the pre-event domain.
    pub x_hat: Raster,
    /// `Ŷ = D_Y(E_X(X))`, in the post-event domain.
    pub y_hat: Raster,
    /// `X̂ − X`.
    pub d_x: Raster,
    /// `Y − Ŷ`.
    pub d_y: Raster,
}

/// Whole-image translation, computed over non-overlapping tiles of
/// `config.tile_size`. Tiles are independent, so they run in parallel.
pub fn translate(model: &CaeModel, x: &Raster, y: &Raster) -> Result<TranslationResult> {
    if x.channels() != model.x_channels() || y.channels() != model.y_channels() {
        return Err(shape_err!(
            "model was trained on {}/{} channels, got {}/{}",
            model.x_channels(),
            model.y_channels(),
            x.channels(),
            y.channels()
        ));
    }
    if !x.same_grid(y) {
        return Err(shape_err!("pre/post rasters differ in size"));
    }
    let (h, w, t) = (x.height(), x.width(), model.config.tile_size);
    let tiles: Vec<(usize, usize, usize, usize)> = (0..h)
        .step_by(t)
        .flat_map(|r| (0..w).step_by(t).map(move |c| (r, c, t.min(h - r), t.min(w - c))))
        .collect();
    let outputs = tiles
        .par_iter()
        .map(|&(r, c, th, tw)| -> Result<(Vec<f64>, Vec<f64>)> {
            let xt = Tensor::new(vec![x.channels(), th, tw], x.window(r, c, th, tw)?)?;
            let yt = Tensor::new(vec![y.channels(), th, tw], y.window(r, c, th, tw)?)?;
            let x_hat = model.decoder_x.infer(&model.encoder_y.infer(&yt)?)?;
            let y_hat = model.decoder_y.infer(&model.encoder_x.infer(&xt)?)?;
            Ok((x_hat.into_values(), y_hat.into_values()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut x_hat = Raster::zeros(h, w, x.names().to_vec())?;
    let mut y_hat = Raster::zeros(h, w, y.names().to_vec())?;
    for (&(r, c, th, tw), (xv, yv)) in tiles.iter().zip(outputs) {
        x_hat.set_window(r, c, th, tw, &xv)?;
        y_hat.set_window(r, c, th, tw, &yv)?;
    }
    let d_x = x_hat.sub(x)?;
    let d_y = y.sub(&y_hat)?;
    Ok(TranslationResult { x_hat, y_hat, d_x, d_y })
}

#[derive(Serialize, Deserialize)]
struct TranslationManifest {
    x_hat: BandSpec,
    y_hat: BandSpec,
    d_x: BandSpec,
    d_y: BandSpec,
}

/// Writes the four rasters as f32 binaries plus `translation.json`; returns
/// the manifest path.
pub fn write_translation(result: &TranslationResult, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parts = [("x_hat", &result.x_hat), ("y_hat", &result.y_hat), ("d_x", &result.d_x), ("d_y", &result.d_y)];
    for (name, r) in parts {
        crate::raster::write_file(&dir.join(format!("{name}.f32")), &crate::raster::raster_to_f32le(r))?;
    }
    let m = TranslationManifest {
        x_hat: BandSpec::for_raster(&result.x_hat, "x_hat.f32"),
        y_hat: BandSpec::for_raster(&result.y_hat, "y_hat.f32"),
        d_x: BandSpec::for_raster(&result.d_x, "d_x.f32"),
        d_y: BandSpec::for_raster(&result.d_y, "d_y.f32"),
    };
    let path = dir.join("translation.json");
    crate::raster::write_json(&path, &m)?;
    Ok(path)
}

/// Reads a translation written by [`write_translation`]; accepts the manifest
/// path or its directory.
pub fn read_translation(path: impl AsRef<Path>) -> Result<TranslationResult> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join("translation.json");
    }
    let m: TranslationManifest = crate::raster::read_json(&path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(TranslationResult {
        x_hat: m.x_hat.read(&base)?,
        y_hat: m.y_hat.read(&base)?,
        d_x: m.d_x.read(&base)?,
        d_y: m.d_y.read(&base)?,
    })
}

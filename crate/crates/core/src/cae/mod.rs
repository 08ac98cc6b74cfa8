//! Code-aligned autoencoders for heterogeneous image-to-image translation.
//!
//! Two convolutional autoencoders, one per sensor, are trained jointly so that
//! their code spaces line up. Decoding one domain's code with the other
//! domain's decoder then translates between sensors:
//! `X̂ = D_X(E_Y(Y))` and `Ŷ = D_Y(E_X(X))`. The four loss terms are
//! reconstruction, prior-weighted code alignment (encoders only),
//! cycle consistency and a change-suppressed translation loss.

mod affinity;
mod change_map;
mod losses;
mod train;
mod translate;

pub use affinity::{affinity_prior, AffinityPrior};
pub use change_map::{cae_change_map, otsu_threshold, CaeChangeMap, OtsuThreshold};
pub use losses::{cae_losses, LossTerms, PatchInput};
pub use train::{train_cae, train_cae_with, EpochRecord};
pub use translate::{read_translation, translate, write_translation, TranslationResult};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nnkit::{read_checkpoint, write_checkpoint, Activation, LayerSpec, Network};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub code: f64,
    pub cyc: f64,
    pub tr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rec: 1.0, code: 1.0, cyc: 1.0, tr: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaeConfig {
    pub patch_size: usize,
    pub patches_per_batch: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub code_channels: usize,
    pub hidden_channels: usize,
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    /// Tile edge for whole-image inference.
    pub tile_size: usize,
    pub seed: u64,
}

impl Default for CaeConfig {
    fn default() -> Self {
        CaeConfig {
            patch_size: 20,
            patches_per_batch: 20,
            batches_per_epoch: 600,
            epochs: 10,
            code_channels: 8,
            hidden_channels: 32,
            loss_weights: LossWeights::default(),
            learning_rate: 1e-3,
            tile_size: 128,
            seed: 0,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 4 {
            return Err(invalid!("patch_size must be at least 4, got {}", self.patch_size));
        }
        if self.patches_per_batch == 0 || self.batches_per_epoch == 0 || self.epochs == 0 {
            return Err(invalid!("patches_per_batch, batches_per_epoch and epochs must be positive"));
        }
        if self.code_channels == 0 || self.hidden_channels == 0 || self.tile_size == 0 {
            return Err(invalid!("code_channels, hidden_channels and tile_size must be positive"));
        }
        let w = self.loss_weights;
        if [w.rec, w.code, w.cyc, w.tr].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid!("loss weights must be finite and nonnegative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid!("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// The four networks plus their training record.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub encoder_x: Network,
    pub decoder_x: Network,
    pub encoder_y: Network,
    pub decoder_y: Network,
    pub config: CaeConfig,
    pub history: Vec<EpochRecord>,
    /// Number of optimizer updates performed.
    pub batch_updates: usize,
}

pub(crate) fn encoder_layers(channels: usize, cfg: &CaeConfig) -> Vec<LayerSpec> {
    let h = cfg.hidden_channels;
    vec![
        LayerSpec::conv3x3(channels, h, Activation::LeakyRelu),
        LayerSpec::conv3x3(h, h, Activation::LeakyRelu),
        LayerSpec::conv3x3(h, cfg.code_channels, Activation::Identity),
    ]
}

pub(crate) fn decoder_layers(channels: usize, cfg: &CaeConfig) -> Vec<LayerSpec> {
    let h = cfg.hidden_channels;
    vec![
        LayerSpec::conv3x3(cfg.code_channels, h, Activation::LeakyRelu),
        LayerSpec::conv3x3(h, h, Activation::LeakyRelu),
        LayerSpec::conv3x3(h, channels, Activation::Tanh),
    ]
}

impl CaeModel {
    /// Freshly initialized networks for `c1` pre-event and `c2` post-event channels.
    pub fn new(c1: usize, c2: usize, config: CaeConfig) -> Result<Self> {
        config.validate()?;
        if c1 == 0 || c2 == 0 {
            return Err(invalid!("channel counts must be positive"));
        }
        let s = config.seed;
        Ok(CaeModel {
            encoder_x: Network::new(encoder_layers(c1, &config), derive_seed(s, 101))?,
            decoder_x: Network::new(decoder_layers(c1, &config), derive_seed(s, 102))?,
            encoder_y: Network::new(encoder_layers(c2, &config), derive_seed(s, 103))?,
            decoder_y: Network::new(decoder_layers(c2, &config), derive_seed(s, 104))?,
            config,
            history: Vec::new(),
            batch_updates: 0,
        })
    }

    pub fn x_channels(&self) -> usize {
        self.encoder_x.input_width()
    }

    pub fn y_channels(&self) -> usize {
        self.encoder_y.input_width()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "cae",
            "config": self.config,
            "history": self.history,
            "batch_updates": self.batch_updates,
        });
        write_checkpoint(
            path,
            &[
                ("encoder_x", &self.encoder_x),
                ("decoder_x", &self.decoder_x),
                ("encoder_y", &self.encoder_y),
                ("decoder_y", &self.decoder_y),
            ],
            meta,
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = read_checkpoint(path)?;
        let get = |name: &str| {
            ck.network(name).cloned().ok_or_else(|| invalid!("{}: missing network {name}", path.display()))
        };
        fn parse<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str, path: &std::path::Path) -> Result<T> {
            serde_json::from_value(meta[key].clone()).map_err(|e| invalid!("{}: bad {key}: {e}", path.display()))
        }
        Ok(CaeModel {
            encoder_x: get("encoder_x")?,
            decoder_x: get("decoder_x")?,
            encoder_y: get("encoder_y")?,
            decoder_y: get("decoder_y")?,
            config: parse(&ck.meta, "config", path)?,
            history: parse(&ck.meta, "history", path)?,
            batch_updates: parse(&ck.meta, "batch_updates", path)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_training_schedule() {
        let c = CaeConfig::default();
        assert_eq!((c.patch_size, c.patches_per_batch, c.batches_per_epoch), (20, 20, 600));
        assert_eq!(c.epochs, 10);
    }

    #[test]
    fn architecture_channels() {
        let m = CaeModel::new(7, 10, CaeConfig { hidden_channels: 4, ..Default::default() }).unwrap();
        assert_eq!(m.x_channels(), 7);
        assert_eq!(m.y_channels(), 10);
        assert_eq!(m.encoder_x.output_width(), 8);
        assert_eq!(m.encoder_y.output_width(), 8);
        assert_eq!(m.decoder_x.output_width(), 7);
        assert_eq!(m.decoder_y.output_width(), 10);
        assert_eq!(m.decoder_x.layers().last().unwrap().activation, Activation::Tanh);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = CaeConfig { patch_size: 3, ..Default::default() };
        assert!(CaeModel::new(3, 3, bad).is_err());
        let neg = CaeConfig { loss_weights: LossWeights { tr: -1.0, ..Default::default() }, ..Default::default() };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = CaeModel::new(2, 3, CaeConfig { hidden_channels: 3, code_channels: 2, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cae.ckpt");
        m.save(&p).unwrap();
        assert_eq!(CaeModel::load(&p).unwrap(), m);
    }
}

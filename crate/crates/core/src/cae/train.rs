use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::affinity::{affinity_prior, AffinityPrior};
use super::losses::{evaluate, CaeGradients, LossTerms, PatchInput};
use super::translate::translate;
use super::{CaeConfig, CaeModel};
use crate::error::{invalid, shape_err, Result};
use crate::nnkit::{AdamConfig, AdamState, Tensor};
use crate::raster::Raster;
use crate::seed;

/// Mean loss terms over one epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    pub patches_per_batch: usize,
    #[serde(flatten)]
    pub losses: LossTerms,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,L_rec,L_code,L_cyc,L_tr,total";

    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!("{},{},{},{},{},{}", self.epoch, l.rec, l.code, l.cyc, l.tr, l.total)
    }
}

pub fn train_cae(x: &Raster, y: &Raster, cfg: &CaeConfig) -> Result<CaeModel> {
    train_cae_with(x, y, cfg, |_| {})
}

/// Trains on random co-located patches of the normalized rasters `x` and `y`,
/// calling `on_epoch` after every epoch.
///
/// Π⁰ is computed from the input patches the first time a patch position is
/// drawn and never changes. The translation weight Π starts at Π⁰ and is
/// replaced after every epoch by `1 − minmax(‖x − x̂‖²/c₁ + ‖y − ŷ‖²/c₂)`
/// evaluated on the full original images.
pub fn train_cae_with(
    x: &Raster,
    y: &Raster,
    cfg: &CaeConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<CaeModel> {
    cfg.validate()?;
    if !x.same_grid(y) {
        return Err(shape_err!("pre/post rasters differ in size"));
    }
    let p = cfg.patch_size;
    let (h, w) = (x.height(), x.width());
    if h < p || w < p {
        return Err(invalid!("raster {h}x{w} is smaller than the {p}x{p} training patch"));
    }
    let (c1, c2) = (x.channels(), y.channels());
    let mut model = CaeModel::new(c1, c2, cfg.clone())?;
    let adam_cfg = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut opt = [
        AdamState::new(model.encoder_x.params(), adam_cfg),
        AdamState::new(model.decoder_x.params(), adam_cfg),
        AdamState::new(model.encoder_y.params(), adam_cfg),
        AdamState::new(model.decoder_y.params(), adam_cfg),
    ];
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, 1));
    let mut priors: HashMap<(usize, usize), AffinityPrior> = HashMap::new();
    let mut pi_map: Option<Vec<f64>> = None;
    let inv_patches = 1.0 / cfg.patches_per_batch as f64;

    for epoch in 1..=cfg.epochs {
        let mut epoch_terms = LossTerms::default();
        for _ in 0..cfg.batches_per_epoch {
            let mut grads = CaeGradients::zeros(&model);
            let mut batch_terms = LossTerms::default();
            for _ in 0..cfg.patches_per_batch {
                let r = rng.random_range(0..=h - p);
                let c = rng.random_range(0..=w - p);
                let xt = Tensor::new(vec![c1, p, p], x.window(r, c, p, p)?)?;
                let yt = Tensor::new(vec![c2, p, p], y.window(r, c, p, p)?)?;
                if !priors.contains_key(&(r, c)) {
                    priors.insert((r, c), affinity_prior(&xt, &yt)?);
                }
                let prior = &priors[&(r, c)];
                let pi = match &pi_map {
                    Some(map) => (0..p).flat_map(|dr| (0..p).map(move |dc| map[(r + dr) * w + c + dc])).collect(),
                    None => prior.pi.clone(),
                };
                let input = PatchInput { x: &xt, y: &yt, pi0: &prior.pi, pi: &pi };
                let terms = evaluate(&model, &input, Some(&mut grads))?;
                batch_terms.accumulate(&terms, inv_patches);
            }
            grads.scale(inv_patches);
            opt[0].step(model.encoder_x.params_mut(), &grads.ex)?;
            opt[1].step(model.decoder_x.params_mut(), &grads.dx)?;
            opt[2].step(model.encoder_y.params_mut(), &grads.ey)?;
            opt[3].step(model.decoder_y.params_mut(), &grads.dy)?;
            model.batch_updates += 1;
            epoch_terms.accumulate(&batch_terms, 1.0 / cfg.batches_per_epoch as f64);
        }
        let record = EpochRecord {
            epoch,
            batches: cfg.batches_per_epoch,
            patches_per_batch: cfg.patches_per_batch,
            losses: epoch_terms,
        };
        model.history.push(record);
        on_epoch(&record);
        if epoch < cfg.epochs {
            pi_map = Some(translation_weights(&model, x, y)?);
        }
    }
    Ok(model)
}

/// Π per pixel from the current translations of the original images.
pub(crate) fn translation_weights(model: &CaeModel, x: &Raster, y: &Raster) -> Result<Vec<f64>> {
    let t = translate(model, x, y)?;
    let n = x.pixels();
    let (c1, c2) = (x.channels() as f64, y.channels() as f64);
    let mut err = vec![0.0; n];
    for c in 0..x.channels() {
        for (e, d) in err.iter_mut().zip(t.d_x.band(c)) {
            *e += d * d / c1;
        }
    }
    for c in 0..y.channels() {
        for (e, d) in err.iter_mut().zip(t.d_y.band(c)) {
            *e += d * d / c2;
        }
    }
    let (lo, hi) = err.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(if hi > lo { err.iter().map(|e| 1.0 - (e - lo) / (hi - lo)).collect() } else { vec![1.0; n] })
}

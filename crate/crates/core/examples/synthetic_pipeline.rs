//! End-to-end run on a generated pair: CAE translation, then the two-step
//! classifier, scored against the known target changes.
//!
//! cargo run --release -p hetcd --example synthetic_pipeline -- [npos] [epochs] [batches]

use std::time::Instant;

use hetcd::cae::{cae_change_map, train_cae_with, translate, CaeConfig};
use hetcd::eval::f1;
use hetcd::occ::{fit_step1, fit_step2, predict, stack_features, FeatureVariant};
use hetcd::raster::{generate_synthetic_pair, normalize_raster, sample_positive_set, SynthConfig};

fn main() -> hetcd::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let npos = args.first().copied().unwrap_or(500);
    let cfg = CaeConfig {
        epochs: args.get(1).copied().unwrap_or(4),
        batches_per_epoch: args.get(2).copied().unwrap_or(60),
        hidden_channels: 16,
        ..Default::default()
    };
    let bundle = generate_synthetic_pair(&SynthConfig::default())?;
    let gt = bundle.ground_truth.clone().expect("synthetic bundles carry ground truth");
    let x = normalize_raster(&bundle.t1)?;
    let y = normalize_raster(&bundle.t2)?;

    let t = Instant::now();
    let model = train_cae_with(&x, &y, &cfg, |r| {
        println!("epoch {:2}  total {:.5}  rec {:.5}  code {:.5}  cyc {:.5}  tr {:.5}", r.epoch, r.losses.total, r.losses.rec, r.losses.code, r.losses.cyc, r.losses.tr)
    })?;
    println!("CAE trained in {:.1?}", t.elapsed());
    let tr = translate(&model, &x, &y)?;
    let otsu = cae_change_map(&tr)?;
    println!("CAE Otsu map F1 vs target: {:.3}", f1(&otsu.mask, &gt)?.f1);

    for variant in FeatureVariant::ALL {
        let t = Instant::now();
        let features = stack_features(&x, &y, &tr, variant)?;
        let p = sample_positive_set(&gt, npos, 1)?;
        let s1 = fit_step1(&features, &p)?;
        let step1 = f1(&s1.gmm.predict(&features)?, &gt)?;
        let ens = fit_step2(&features, &p.positive_indices, &s1.reliable_negatives, 1)?;
        let map = predict(&ens, &features, 0.5)?;
        let m = f1(&map.binary, &gt)?;
        println!(
            "{variant:8} RN {:5}  step1 F1 {:.3}  two-step F1 {:.3}  epochs {:?}  ({:.1?})",
            s1.reliable_negatives.len(),
            step1.f1,
            m.f1,
            ens.epochs_run,
            t.elapsed()
        );
    }
    Ok(())
}

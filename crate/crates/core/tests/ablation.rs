use hetcd::cae::{train_cae, translate, CaeConfig};
use hetcd::eval::{run_ablation, AblationConfig};
use hetcd::occ::{FeatureVariant, Method};
use hetcd::raster::{generate_synthetic_pair, normalize_raster, SynthConfig};

/// Dropping either feature block should not beat the full stack by more
/// than 0.02 mean F1 at 1000 labels.
#[test]
fn full_features_hold_up_against_ablations() {
    // a larger target class so that 1000 positives can be drawn
    let bundle = generate_synthetic_pair(&SynthConfig { target_change_fraction: 0.1, ..Default::default() }).unwrap();
    assert!(bundle.ground_truth.as_ref().unwrap().count() >= 1000);
    let x = normalize_raster(&bundle.t1).unwrap();
    let y = normalize_raster(&bundle.t2).unwrap();
    let cfg = CaeConfig { epochs: 3, batches_per_epoch: 40, hidden_channels: 16, ..Default::default() };
    let cae = train_cae(&x, &y, &cfg).unwrap();
    let t = translate(&cae, &x, &y).unwrap();

    let variants = [FeatureVariant::Full, FeatureVariant::NoDifferences, FeatureVariant::NoOriginals];
    let cfg = AblationConfig {
        grid: vec![1000],
        reps: 10,
        master_seed: 3,
        methods: variants.iter().map(|&v| (Method::TwoStep, v)).collect(),
        ..Default::default()
    };
    let report = run_ablation(&bundle, &t, &cfg).unwrap();
    let mean = |v| report.cell(Method::TwoStep, v, 1000).unwrap().mean_f1;
    let full = mean(FeatureVariant::Full);
    for v in &variants[1..] {
        println!("full {full:.3}  {v} {:.3}", mean(*v));
        assert!(full >= mean(*v) - 0.02, "full {full:.3} vs {v} {:.3}", mean(*v));
    }
    assert_eq!(report.runs.len(), 30);
}

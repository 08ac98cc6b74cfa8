use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use hetcd::cae::{cae_change_map, read_translation, train_cae_with, translate, write_translation, CaeModel, EpochRecord};
use hetcd::eval::{confusion_map, f1, ndvi_delta, region_rates, run_ablation, save_png, AblationConfig, MetricsRecord, Polarity, RegionSpec};
use hetcd::occ::{
    fit_isvm, fit_step1, fit_step2_with, load_occ_model, read_change_map, save_occ_model, stack_features, write_change_map,
    ChangeMap, FeatureStack, FeatureVariant, Method, OccModel,
};
use hetcd::raster::{generate_synthetic_pair, load_bundle, normalize_raster, sample_positive_set, write_bundle, DatasetBundle};
use hetcd::seed::derive_seed;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{usage, Cli, Command, Common};

/// Provenance written next to every run's outputs.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, String>,
    seeds: BTreeMap<&'a str, u64>,
    outputs: Vec<String>,
    summary: Value,
}

struct Run<'a> {
    command: &'a str,
    out: PathBuf,
    config: RunConfig,
    inputs: BTreeMap<&'a str, String>,
    seeds: BTreeMap<&'a str, u64>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(command: &'a str, common: &Common) -> Result<Self> {
        let config = RunConfig::load(common.config.as_deref())?;
        let mut inputs = BTreeMap::new();
        if let Some(c) = &common.config {
            inputs.insert("config", c.display().to_string());
        }
        Ok(Run { command, out: common.out.clone(), config, inputs, seeds: BTreeMap::new(), outputs: Vec::new() })
    }

    fn input(&mut self, name: &'a str, path: &Path) -> Result<PathBuf> {
        if !path.exists() {
            return Err(usage(format!("--{name} {} does not exist", path.display())));
        }
        self.inputs.insert(name, path.display().to_string());
        Ok(path.to_path_buf())
    }

    fn create_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self, summary: Value) -> Result<()> {
        let record = RunRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config: &self.config,
            inputs: self.inputs,
            seeds: self.seeds,
            outputs: self.outputs,
            summary,
        };
        let path = self.out.join("run.json");
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn check_threshold(t: f64) -> Result<f64> {
    if (0.0..1.0).contains(&t) {
        Ok(t)
    } else {
        Err(usage(format!("threshold must lie in [0, 1), got {t}")))
    }
}

fn bundle_at(path: &Path) -> Result<DatasetBundle> {
    let manifest = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    Ok(load_bundle(&manifest)?)
}

fn normalized(bundle: &DatasetBundle) -> Result<(hetcd::raster::Raster, hetcd::raster::Raster)> {
    Ok((normalize_raster(&bundle.t1)?, normalize_raster(&bundle.t2)?))
}

fn features_for(bundle: &DatasetBundle, translation: &Path, variant: FeatureVariant) -> Result<FeatureStack> {
    let t = read_translation(translation)?;
    let (x, y) = normalized(bundle)?;
    Ok(stack_features(&x, &y, &t, variant)?)
}

fn metrics_row(method: &str, variant: &str, npos: usize, m: &MetricsRecord) -> String {
    format!(
        "method,variant,npos,rep,f1,tp,fp,fn,tn\n{method},{variant},{npos},0,{},{},{},{},{}\n",
        m.f1, m.tp, m.fp, m.fn_, m.tn
    )
}

/// What a change map came from, stored next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionInfo {
    method: String,
    variant: String,
    npos: usize,
    threshold: f64,
}

fn write_prediction(run: &mut Run<'_>, map: &ChangeMap, info: &PredictionInfo) -> Result<()> {
    write_change_map(map, &run.out)?;
    for f in ["change_map.json", "votes.f32", "binary.u8", "prediction.json"] {
        run.output(f);
    }
    fs::write(run.out.join("prediction.json"), serde_json::to_string_pretty(info)? + "\n")?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, seed } => {
            let mut run = Run::start("synth", &common)?;
            if let Some(s) = seed {
                run.config.synth.seed = s;
            }
            run.config.synth.validate().map_err(|e| usage(e.to_string()))?;
            run.seeds.insert("synth", run.config.synth.seed);
            let bundle = generate_synthetic_pair(&run.config.synth)?;
            run.create_out()?;
            write_bundle(&bundle, &run.out)?;
            for f in ["manifest.json", "t1.f32", "t2.f32", "ground_truth.u8"] {
                run.output(f);
            }
            for name in bundle.region_masks.keys() {
                run.output(&format!("region_{name}.u8"));
            }
            let gt = bundle.ground_truth.as_ref().map_or(0, |g| g.count());
            println!("wrote {} ({}x{}, {gt} changed pixels)", run.out.display(), bundle.height(), bundle.width());
            run.finish(json!({ "changed_pixels": gt }))
        }

        Command::TrainCae { common, bundle, seed, epochs, batches } => {
            let mut run = Run::start("train-cae", &common)?;
            let path = run.input("bundle", &bundle)?;
            if let Some(s) = seed {
                run.config.cae.seed = s;
            }
            if let Some(e) = epochs {
                run.config.cae.epochs = e;
            }
            if let Some(b) = batches {
                run.config.cae.batches_per_epoch = b;
            }
            run.config.cae.validate().map_err(|e| usage(e.to_string()))?;
            run.seeds.insert("cae", run.config.cae.seed);
            let bundle = bundle_at(&path)?;
            let (x, y) = normalized(&bundle)?;
            run.create_out()?;
            let model = train_cae_with(&x, &y, &run.config.cae, |r| {
                eprintln!("epoch {:>3}  total {:.5}  rec {:.5}  code {:.5}  cyc {:.5}  tr {:.5}", r.epoch, r.losses.total, r.losses.rec, r.losses.code, r.losses.cyc, r.losses.tr);
            })?;
            model.save(run.output("cae.ckpt"))?;
            let mut csv = format!("{}\n", EpochRecord::CSV_HEADER);
            for r in &model.history {
                csv += &r.csv_row();
                csv.push('\n');
            }
            fs::write(run.output("history.csv"), csv)?;
            let last = model.history.last().map(|r| r.losses.total);
            run.finish(json!({ "batch_updates": model.batch_updates, "final_total_loss": last }))
        }

        Command::Translate { common, bundle, model } => {
            let mut run = Run::start("translate", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let mpath = run.input("model", &model)?;
            let bundle = bundle_at(&bpath)?;
            let cae = CaeModel::load(&mpath)?;
            run.config.cae = cae.config.clone();
            let (x, y) = normalized(&bundle)?;
            let t = translate(&cae, &x, &y)?;
            run.create_out()?;
            write_translation(&t, &run.out)?;
            for f in ["translation.json", "x_hat.f32", "y_hat.f32", "d_x.f32", "d_y.f32"] {
                run.output(f);
            }
            run.finish(json!({}))
        }

        Command::CaeMap { common, bundle, translation } => {
            let mut run = Run::start("cae-map", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let tpath = run.input("translation", &translation)?;
            let bundle = bundle_at(&bpath)?;
            let t = read_translation(&tpath)?;
            let map = cae_change_map(&t)?;
            run.create_out()?;
            let cm = ChangeMap::from_mask(map.mask.clone());
            let info = PredictionInfo { method: "cae-otsu".into(), variant: "-".into(), npos: 0, threshold: map.threshold.value };
            write_prediction(&mut run, &cm, &info)?;
            let scores: Vec<u8> = map.score.iter().flat_map(|&s| (s as f32).to_le_bytes()).collect();
            fs::write(run.output("scores.f32"), scores)?;
            let otsu = json!({ "bin": map.threshold.bin, "value": map.threshold.value, "between_variance": map.threshold.between_variance });
            let mut summary = json!({ "otsu": otsu, "changed_pixels": map.mask.count() });
            if let Some(gt) = &bundle.ground_truth {
                let m = f1(&map.mask, gt)?;
                fs::write(run.output("metrics.csv"), metrics_row("cae-otsu", "-", 0, &m))?;
                save_png(&confusion_map(&map.mask, gt)?, run.output("confusion.png"))?;
                println!("CAE Otsu map F1 {:.4}", m.f1);
                summary["metrics"] = serde_json::to_value(m)?;
            }
            run.finish(summary)
        }

        Command::Features { common, bundle, translation, variant } => {
            let mut run = Run::start("features", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let tpath = run.input("translation", &translation)?;
            if let Some(v) = variant {
                run.config.occ.variant = v;
            }
            let f = features_for(&bundle_at(&bpath)?, &tpath, run.config.occ.variant)?;
            run.create_out()?;
            let bytes: Vec<u8> = f.vectors.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            fs::write(run.output("features.f32"), bytes)?;
            let header = json!({
                "height": f.height, "width": f.width, "dim": f.dim, "variant": f.variant,
                "c1": f.c1, "c2": f.c2, "file": "features.f32", "dtype": "f32le", "layout": "pixel-major",
            });
            fs::write(run.output("features.json"), serde_json::to_string_pretty(&header)? + "\n")?;
            run.finish(json!({ "dim": f.dim }))
        }

        Command::TrainOcc { common, bundle, translation, npos, seed, threshold, variant, method } => {
            let mut run = Run::start("train-occ", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let tpath = run.input("translation", &translation)?;
            let occ = &mut run.config.occ;
            occ.npos = npos.unwrap_or(occ.npos);
            occ.seed = seed.unwrap_or(occ.seed);
            occ.threshold = check_threshold(threshold.unwrap_or(occ.threshold))?;
            occ.variant = variant.unwrap_or(occ.variant);
            occ.method = method.unwrap_or(occ.method);
            if occ.npos == 0 {
                return Err(usage("--npos must be at least 1"));
            }
            let occ = occ.clone();
            let bundle = bundle_at(&bpath)?;
            let gt = bundle.ground_truth.as_ref().ok_or_else(|| anyhow!("bundle has no ground truth to sample labels from"))?;
            let features = features_for(&bundle, &tpath, occ.variant)?;
            let p = sample_positive_set(gt, occ.npos, occ.seed)?;
            let step1 = fit_step1(&features, &p)?;
            let (mut ensemble, mut svm) = (None, None);
            let mut summary = json!({ "reliable_negatives": step1.reliable_negatives.len(), "ridge": step1.gmm.ridge });
            match occ.method {
                Method::TwoStep => {
                    let s = derive_seed(occ.seed, 1);
                    run.seeds.insert("mlp", s);
                    let e = fit_step2_with(&features, &p.positive_indices, &step1.reliable_negatives, s, &run.config.mlp)?;
                    summary["epochs_run"] = json!(e.epochs_run);
                    ensemble = Some(e);
                }
                Method::Isvm => {
                    let s = derive_seed(occ.seed, 2);
                    run.seeds.insert("isvm", s);
                    let r = fit_isvm(&features, &p, &step1.reliable_negatives, s)?;
                    summary["isvm"] = json!({ "iterations": r.iterations, "stop": r.stop, "rn_sizes": r.rn_sizes, "lambda": r.model.lambda });
                    svm = Some(r.model);
                }
                Method::Step1 => {}
            }
            run.seeds.insert("labels", occ.seed);
            let model = OccModel {
                method: occ.method,
                variant: occ.variant,
                c1: features.c1,
                c2: features.c2,
                gmm: step1.gmm,
                ensemble,
                svm,
                threshold: occ.threshold,
                npos: occ.npos,
                seed: occ.seed,
            };
            run.create_out()?;
            save_occ_model(&model, &run.out)?;
            run.output("manifest.json");
            fs::write(run.output("positives.json"), serde_json::to_string(&p)? + "\n")?;
            println!("trained {} ({}) on {} labelled positives, {} reliable negatives", occ.method, occ.variant, occ.npos, summary["reliable_negatives"]);
            run.finish(summary)
        }

        Command::Predict { common, bundle, translation, model, threshold } => {
            let mut run = Run::start("predict", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let tpath = run.input("translation", &translation)?;
            let mpath = run.input("model", &model)?;
            let model = load_occ_model(&mpath)?;
            let t = check_threshold(threshold.unwrap_or(model.threshold))?;
            run.config.occ.threshold = t;
            run.config.occ.variant = model.variant;
            run.config.occ.method = model.method;
            run.config.occ.npos = model.npos;
            run.config.occ.seed = model.seed;
            let features = features_for(&bundle_at(&bpath)?, &tpath, model.variant)?;
            let map = model.predict(&features, Some(t))?;
            run.create_out()?;
            let info = PredictionInfo { method: model.method.to_string(), variant: model.variant.to_string(), npos: model.npos, threshold: t };
            write_prediction(&mut run, &map, &info)?;
            println!("{} of {} pixels predicted changed", map.binary.count(), map.binary.len());
            run.finish(json!({ "changed_pixels": map.binary.count() }))
        }

        Command::Eval { common, bundle, prediction } => {
            let mut run = Run::start("eval", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let ppath = run.input("prediction", &prediction)?;
            let bundle = bundle_at(&bpath)?;
            let gt = bundle.ground_truth.as_ref().ok_or_else(|| anyhow!("bundle has no ground truth"))?;
            let map = read_change_map(&ppath)?;
            let dir = if ppath.is_dir() { ppath.clone() } else { ppath.parent().map(Path::to_path_buf).unwrap_or_default() };
            let info: Option<PredictionInfo> = fs::read_to_string(dir.join("prediction.json")).ok().and_then(|s| serde_json::from_str(&s).ok());
            let (method, variant, npos) = info.as_ref().map_or(("unknown".into(), "-".into(), 0), |i| (i.method.clone(), i.variant.clone(), i.npos));
            let m = f1(&map.binary, gt)?;
            run.create_out()?;
            fs::write(run.output("metrics.csv"), metrics_row(&method, &variant, npos, &m))?;
            fs::write(run.output("metrics.json"), serde_json::to_string_pretty(&m)? + "\n")?;
            save_png(&confusion_map(&map.binary, gt)?, run.output("confusion.png"))?;
            let mut summary = json!({ "metrics": m });

            // a region is expected positive when most of it is ground-truth change
            let regions: Vec<RegionSpec> = bundle
                .region_masks
                .iter()
                .filter(|(_, mask)| mask.count() > 0)
                .map(|(name, mask)| {
                    let inside = mask.indices().iter().filter(|&&i| gt.get(i)).count();
                    let polarity = if 2 * inside > mask.count() { Polarity::ExpectPositive } else { Polarity::ExpectNegative };
                    RegionSpec { name: name.clone(), mask: mask.clone(), polarity }
                })
                .collect();
            if !regions.is_empty() {
                let rates = region_rates(&map.binary, &regions)?;
                let mut csv = String::from("region,polarity,pixels,positive_rate,negative_rate\n");
                for r in &rates {
                    let pol = serde_json::to_value(r.polarity)?;
                    csv += &format!("{},{},{},{},{}\n", r.name, pol.as_str().unwrap_or(""), r.pixels, r.positive_rate, r.negative_rate);
                }
                fs::write(run.output("regions.csv"), csv)?;
                summary["regions"] = serde_json::to_value(&rates)?;
            }
            if map.binary.count() > 0 {
                if let Ok(d) = ndvi_delta(&bundle.t1, &bundle.t2, &map.binary) {
                    summary["ndvi_delta_predicted"] = serde_json::to_value(d)?;
                }
            }
            println!("F1 {:.4}  (TP {}  FP {}  FN {}  TN {})", m.f1, m.tp, m.fp, m.fn_, m.tn);
            run.finish(summary)
        }

        Command::Ablate { common, bundle, translation, grid, reps, jobs, seed, threshold, method, variant } => {
            let mut run = Run::start("ablate", &common)?;
            let bpath = run.input("bundle", &bundle)?;
            let tpath = run.input("translation", &translation)?;
            let a = &mut run.config.ablation;
            if let Some(g) = grid {
                a.grid = g;
            }
            a.reps = reps.unwrap_or(a.reps);
            a.jobs = jobs.unwrap_or(a.jobs);
            a.seed = seed.unwrap_or(a.seed);
            let t = check_threshold(threshold.unwrap_or(run.config.occ.threshold))?;
            run.config.occ.threshold = t;
            let mut cfg = AblationConfig {
                grid: run.config.ablation.grid.clone(),
                reps: run.config.ablation.reps,
                master_seed: run.config.ablation.seed,
                threshold: t,
                mlp: run.config.mlp,
                jobs: run.config.ablation.jobs,
                ..AblationConfig::default()
            };
            if !run.config.ablation.methods.is_empty() {
                cfg.methods = run.config.ablation.methods.iter().map(|s| parse_pair(s)).collect::<Result<_>>()?;
            }
            cfg.methods.retain(|&(m, v)| method.is_none_or(|x| x == m) && variant.is_none_or(|x| x == v));
            if cfg.methods.is_empty() {
                return Err(usage("no configured method matches --method/--variant"));
            }
            if cfg.grid.is_empty() || cfg.grid.contains(&0) || cfg.reps == 0 {
                return Err(usage("--grid needs positive values and --reps must be at least 1"));
            }
            run.seeds.insert("master", cfg.master_seed);
            let bundle = bundle_at(&bpath)?;
            let t = read_translation(&tpath)?;
            let report = run_ablation(&bundle, &t, &cfg)?;
            run.create_out()?;
            report.write(&run.out)?;
            for f in ["metrics.csv", "report.csv", "curve.csv", "curve.png", "report.json"] {
                run.output(f);
            }
            fs::write(run.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            print!("{}", report.report_csv());
            run.finish(json!({ "rep_seeds": report.rep_seeds }))
        }
    }
}

fn parse_pair(s: &str) -> Result<(Method, FeatureVariant)> {
    let (m, v) = s.split_once(':').unwrap_or((s, "full"));
    let m: Method = m.parse().map_err(|e: hetcd::Error| usage(e.to_string()))?;
    let v: FeatureVariant = v.parse().map_err(|e: hetcd::Error| usage(e.to_string()))?;
    Ok((m, v))
}

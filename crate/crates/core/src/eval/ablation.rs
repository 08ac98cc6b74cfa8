use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1, save_png, MetricsRecord};
use super::plot::{render_curves, CurveSeries};
use crate::cae::TranslationResult;
use crate::error::{invalid, Error, Result};
use crate::occ::{fit_isvm, fit_step1, fit_step2_with, predict, stack_features, FeatureVariant, Method, MlpConfig};
use crate::raster::{normalize_raster, sample_positive_set, write_file, DatasetBundle};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub grid: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub methods: Vec<(Method, FeatureVariant)>,
    /// Vote threshold for the ensemble.
    pub threshold: f64,
    pub mlp: MlpConfig,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            grid: vec![25, 50, 100, 250, 500, 1000, 2000, 3000],
            reps: 10,
            master_seed: 0,
            methods: vec![
                (Method::TwoStep, FeatureVariant::Full),
                (Method::TwoStep, FeatureVariant::NoOriginals),
                (Method::TwoStep, FeatureVariant::NoDifferences),
                (Method::Step1, FeatureVariant::Full),
                (Method::Isvm, FeatureVariant::Full),
            ],
            threshold: 0.5,
            mlp: MlpConfig::default(),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub method: Method,
    pub variant: FeatureVariant,
    pub npos: usize,
    pub rep: usize,
    pub seed: u64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub method: Method,
    pub variant: FeatureVariant,
    pub npos: usize,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub p10_f1: f64,
    pub p90_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    /// Sampling seed of each repetition.
    pub rep_seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub cells: Vec<AblationCell>,
}

/// Percentile with linear interpolation between order statistics
/// (`q` in [0, 100]).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Runs every configured method for every `npos` in the grid and every
/// repetition. Repetition `r` draws one permutation of the positives with
/// seed `derive_seed(master_seed, r)` and takes prefixes of it, so smaller
/// label sets are always contained in larger ones. Step 1 is fitted once per
/// (repetition, npos, variant) and shared by the methods that use it. The
/// bundle rasters are normalized to [−1, 1] before stacking, as they were for
/// the translation.
pub fn run_ablation(bundle: &DatasetBundle, translation: &TranslationResult, cfg: &AblationConfig) -> Result<AblationReport> {
    let gt = bundle.ground_truth.as_ref().ok_or_else(|| invalid!("bundle {:?} has no ground truth", bundle.name))?;
    if cfg.grid.is_empty() || cfg.reps == 0 || cfg.methods.is_empty() {
        return Err(invalid!("ablation needs a non-empty grid, methods and at least one repetition"));
    }
    let max_npos = *cfg.grid.iter().max().expect("grid is non-empty");
    if max_npos > gt.count() || cfg.grid.contains(&0) {
        return Err(invalid!("npos grid {:?} does not fit the {} positive pixels", cfg.grid, gt.count()));
    }
    let mut variants: Vec<FeatureVariant> = Vec::new();
    for &(_, v) in &cfg.methods {
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let (x, y) = (normalize_raster(&bundle.t1)?, normalize_raster(&bundle.t2)?);
    let stacks = variants
        .iter()
        .map(|&v| stack_features(&x, &y, translation, v))
        .collect::<Result<Vec<_>>>()?;
    let rep_seeds: Vec<u64> = (0..cfg.reps).map(|r| derive_seed(cfg.master_seed, r as u64)).collect();
    let draws = rep_seeds.iter().map(|&s| sample_positive_set(gt, max_npos, s)).collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for rep in 0..cfg.reps {
        for &npos in &cfg.grid {
            for vi in 0..variants.len() {
                jobs.push((rep, npos, vi));
            }
        }
    }
    let run_job = |&(rep, npos, vi): &(usize, usize, usize)| -> Result<Vec<AblationRun>> {
        let variant = variants[vi];
        let features = &stacks[vi];
        let p = draws[rep].prefix(npos)?;
        let step1 = fit_step1(features, &p)?;
        let mut out = Vec::new();
        for &(method, v) in cfg.methods.iter().filter(|m| m.1 == variant) {
            let seed = derive_seed(derive_seed(rep_seeds[rep], npos as u64), method.tag() << 8 | vi as u64);
            let pred = match method {
                Method::TwoStep => {
                    let e = fit_step2_with(features, &p.positive_indices, &step1.reliable_negatives, seed, &cfg.mlp)?;
                    predict(&e, features, cfg.threshold)?.binary
                }
                Method::Step1 => step1.gmm.predict(features)?,
                Method::Isvm => fit_isvm(features, &p, &step1.reliable_negatives, seed)?.model.predict(features)?,
            };
            out.push(AblationRun { method, variant: v, npos, rep, seed, metrics: f1(&pred, gt)? });
        }
        Ok(out)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| invalid!("cannot start worker pool: {e}"))?;
    let results = pool.install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>>>())?;
    let mut runs: Vec<AblationRun> = results.into_iter().flatten().collect();
    let order = |r: &AblationRun| {
        let m = cfg.methods.iter().position(|&(m, v)| m == r.method && v == r.variant).unwrap_or(usize::MAX);
        (m, r.npos, r.rep)
    };
    runs.sort_by_key(order);

    let mut cells = Vec::new();
    for &(method, variant) in &cfg.methods {
        for &npos in &cfg.grid {
            let scores: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == method && r.variant == variant && r.npos == npos)
                .map(|r| r.metrics.f1)
                .collect();
            let mean_f1 = scores.iter().sum::<f64>() / scores.len() as f64;
            cells.push(AblationCell {
                method,
                variant,
                npos,
                mean_f1,
                p10_f1: percentile(&scores, 10.0),
                p90_f1: percentile(&scores, 90.0),
                f1: scores,
            });
        }
    }
    Ok(AblationReport { config: cfg.clone(), rep_seeds, runs, cells })
}

impl AblationReport {
    pub fn cell(&self, method: Method, variant: FeatureVariant, npos: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.method == method && c.variant == variant && c.npos == npos)
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("method,variant,npos,rep,f1,tp,fp,fn,tn\n");
        for r in &self.runs {
            let m = &r.metrics;
            s += &format!("{},{},{},{},{},{},{},{},{}\n", r.method, r.variant, r.npos, r.rep, m.f1, m.tp, m.fp, m.fn_, m.tn);
        }
        s
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from("method,variant,npos,mean_f1,p10_f1,p90_f1\n");
        for c in &self.cells {
            s += &format!("{},{},{},{},{},{}\n", c.method, c.variant, c.npos, c.mean_f1, c.p10_f1, c.p90_f1);
        }
        s
    }

    pub fn series(&self) -> Vec<CurveSeries> {
        self.config
            .methods
            .iter()
            .map(|&(m, v)| {
                let cells: Vec<&AblationCell> = self.cells.iter().filter(|c| c.method == m && c.variant == v).collect();
                CurveSeries {
                    label: format!("{m} {v}"),
                    x: cells.iter().map(|c| c.npos as f64).collect(),
                    mean: cells.iter().map(|c| c.mean_f1).collect(),
                    low: cells.iter().map(|c| c.p10_f1).collect(),
                    high: cells.iter().map(|c| c.p90_f1).collect(),
                }
            })
            .collect()
    }

    /// Writes `metrics.csv`, `report.csv`, `curve.csv` and `curve.png`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())?;
        let report = self.report_csv();
        write_file(&dir.join("report.csv"), report.as_bytes())?;
        write_file(&dir.join("curve.csv"), report.as_bytes())?;
        save_png(&render_curves(&self.series(), "NPOS", "F1"), dir.join("curve.png"))
    }
}

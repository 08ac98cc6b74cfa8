use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{predict, ChangeMap, FeatureStack, FeatureVariant, GmmModel, LinearSvm, Method, MlpConfig, MlpEnsemble, MEMBER_LAYOUTS};
use crate::error::{invalid, shape_err, Error, Result};
use crate::nnkit::{read_checkpoint, write_checkpoint};
use crate::raster::{read_json, write_file, write_json};
use crate::seed::derive_seed;

/// A trained classifier plus what is needed to apply it. The step-1 mixture
/// is always present; `ensemble` is set for the two-step method and `svm`
/// for the iterative SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct OccModel {
    pub method: Method,
    pub variant: FeatureVariant,
    pub c1: usize,
    pub c2: usize,
    pub gmm: GmmModel,
    pub ensemble: Option<MlpEnsemble>,
    pub svm: Option<LinearSvm>,
    pub threshold: f64,
    pub npos: usize,
    pub seed: u64,
}

impl OccModel {
    /// Applies the stored classifier; `threshold` overrides the stored vote
    /// threshold for the ensemble.
    pub fn predict(&self, features: &FeatureStack, threshold: Option<f64>) -> Result<ChangeMap> {
        if features.variant != self.variant || features.c1 != self.c1 || features.c2 != self.c2 {
            return Err(shape_err!(
                "model expects {} features from {}/{} channels, got {} from {}/{}",
                self.variant,
                self.c1,
                self.c2,
                features.variant,
                features.c1,
                features.c2
            ));
        }
        let t = threshold.unwrap_or(self.threshold);
        match self.method {
            Method::TwoStep => {
                let e = self.ensemble.as_ref().ok_or_else(|| invalid!("two-step model without an ensemble"))?;
                predict(e, features, t)
            }
            Method::Step1 => Ok(ChangeMap::from_mask(self.gmm.predict(features)?)),
            Method::Isvm => {
                let svm = self.svm.as_ref().ok_or_else(|| invalid!("iterative-SVM model without an SVM"))?;
                Ok(ChangeMap::from_mask(svm.predict(features)?))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GmmHeader {
    dim: usize,
    priors: [f64; 2],
    ridge: [f64; 2],
    file: String,
    layout: String,
}

#[derive(Serialize, Deserialize)]
struct OccManifest {
    kind: String,
    method: Method,
    variant: FeatureVariant,
    dim: usize,
    c1: usize,
    c2: usize,
    threshold: f64,
    npos: usize,
    seed: u64,
    gmm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ensemble: Option<EnsembleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    svm: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleEntry {
    dim: usize,
    seed: u64,
    member_seeds: Vec<u64>,
    mlp: MlpConfig,
    epochs_run: Vec<usize>,
    final_loss: Vec<f64>,
    members: Vec<String>,
}

const GMM_LAYOUT: &str = "f64le: mean0, mean1, cov0, cov1 (row-major)";

/// Writes `manifest.json`, `gmm.json` + `gmm.f64` and one checkpoint per
/// ensemble member into `dir`; returns the manifest path.
pub fn save_occ_model(model: &OccModel, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &model.gmm;
    let payload: Vec<u8> = g.means.iter().chain(&g.covariances).flatten().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&dir.join("gmm.f64"), &payload)?;
    let header = GmmHeader { dim: g.dim, priors: g.priors, ridge: g.ridge, file: "gmm.f64".into(), layout: GMM_LAYOUT.into() };
    write_json(&dir.join("gmm.json"), &header)?;

    let ensemble = match &model.ensemble {
        Some(e) => {
            let mut members = Vec::new();
            for (m, net) in e.members.iter().enumerate() {
                let file = format!("member_{m}.ckpt");
                let meta = serde_json::json!({ "kind": "mlp-member", "index": m, "hidden": MEMBER_LAYOUTS[m] });
                write_checkpoint(dir.join(&file), &[("member", net)], meta)?;
                members.push(file);
            }
            Some(EnsembleEntry {
                dim: e.dim,
                seed: e.seed,
                member_seeds: (0..e.members.len()).map(|m| derive_seed(e.seed, m as u64 + 1)).collect(),
                mlp: e.config,
                epochs_run: e.epochs_run.clone(),
                final_loss: e.final_loss.clone(),
                members,
            })
        }
        None => None,
    };
    let svm = match &model.svm {
        Some(svm) => {
            write_json(&dir.join("svm.json"), svm)?;
            Some("svm.json".to_string())
        }
        None => None,
    };
    let manifest = OccManifest {
        kind: "occ".into(),
        method: model.method,
        variant: model.variant,
        dim: g.dim,
        c1: model.c1,
        c2: model.c2,
        threshold: model.threshold,
        npos: model.npos,
        seed: model.seed,
        gmm: "gmm.json".into(),
        ensemble,
        svm,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Reads a model written by [`save_occ_model`]; accepts the manifest path or
/// its directory.
pub fn load_occ_model(path: impl AsRef<Path>) -> Result<OccModel> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join("manifest.json");
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m: OccManifest = read_json(&path)?;
    if m.kind != "occ" {
        return Err(invalid!("{}: not an OCC model manifest (kind {:?})", path.display(), m.kind));
    }
    let header: GmmHeader = read_json(&base.join(&m.gmm))?;
    let bin_path = base.join(&header.file);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let d = header.dim;
    if bytes.len() != 8 * (2 * d + 2 * d * d) {
        return Err(shape_err!("{}: {} bytes do not hold a {d}-dimensional mixture", bin_path.display(), bytes.len()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect();
    let (means, covs) = vals.split_at(2 * d);
    let gmm = GmmModel {
        dim: d,
        priors: header.priors,
        means: [means[..d].to_vec(), means[d..].to_vec()],
        covariances: [covs[..d * d].to_vec(), covs[d * d..].to_vec()],
        ridge: header.ridge,
    };
    let ensemble = match m.ensemble {
        Some(entry) => {
            let mut members = Vec::new();
            for file in &entry.members {
                let ck = read_checkpoint(base.join(file))?;
                members.push(ck.network("member").cloned().ok_or_else(|| invalid!("{file}: no member network"))?);
            }
            if members.len() != MEMBER_LAYOUTS.len() || entry.dim != d {
                return Err(shape_err!("{}: expected 5 members of dimension {d}", path.display()));
            }
            Some(MlpEnsemble {
                members,
                dim: entry.dim,
                seed: entry.seed,
                config: entry.mlp,
                epochs_run: entry.epochs_run,
                final_loss: entry.final_loss,
            })
        }
        None => None,
    };
    let svm = match &m.svm {
        Some(file) => Some(read_json::<LinearSvm>(&base.join(file))?),
        None => None,
    };
    if d != m.dim {
        return Err(shape_err!("{}: manifest dimension {} but mixture dimension {d}", path.display(), m.dim));
    }
    Ok(OccModel {
        method: m.method,
        variant: m.variant,
        c1: m.c1,
        c2: m.c2,
        gmm,
        ensemble,
        svm,
        threshold: m.threshold,
        npos: m.npos,
        seed: m.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ::{fit_step1, fit_step2_with, FeatureStack};
    use crate::raster::LabeledSet;

    #[test]
    fn roundtrip() {
        let rows: Vec<f64> = (0..2 * 80).map(|i| ((i * 37 % 23) as f64 / 11.0) - 1.0 + if i < 40 { 2.0 } else { 0.0 }).collect();
        let f = FeatureStack { height: 8, width: 10, dim: 2, variant: FeatureVariant::NoOriginals, c1: 1, c2: 1, vectors: rows };
        let p = LabeledSet::new((0..10).collect(), 80).unwrap();
        let s1 = fit_step1(&f, &p).unwrap();
        let ens = fit_step2_with(&f, &p.positive_indices, &s1.reliable_negatives, 2, &MlpConfig { max_epochs: 2, ..Default::default() }).unwrap();
        let svm = LinearSvm { weights: vec![0.5, -1.0], bias: 0.25, lambda: 4.0 };
        let model = OccModel {
            method: Method::TwoStep,
            variant: FeatureVariant::NoOriginals,
            c1: 1,
            c2: 1,
            gmm: s1.gmm,
            ensemble: Some(ens),
            svm: Some(svm),
            threshold: 0.3,
            npos: 10,
            seed: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        save_occ_model(&model, dir.path()).unwrap();
        let back = load_occ_model(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict(&f, None).unwrap(), model.predict(&f, None).unwrap());
        let step1 = OccModel { method: Method::Step1, ensemble: None, svm: None, ..model };
        save_occ_model(&step1, dir.path().join("s1")).unwrap();
        assert_eq!(load_occ_model(dir.path().join("s1")).unwrap(), step1);
    }
}

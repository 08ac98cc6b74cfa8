//! One-class change classification on stacked image and translation features.
//!
//! Step 1 fits a two-component Gaussian mixture with a single EM update,
//! starting from the labelled positives and the unlabelled remainder, and
//! keeps the unlabelled pixels it assigns to the negative class as reliable
//! negatives. Step 2 trains an ensemble of five MLPs on the positives against
//! those negatives and takes a vote. An iterative linear SVM over the same
//! reliable negatives is provided as a baseline.

mod bundle;
mod features;
mod gmm;
mod isvm;
mod mlp;

pub use bundle::{load_occ_model, save_occ_model, OccModel};
pub use features::{stack_features, FeatureStack, FeatureVariant};
pub use gmm::{fit_step1, EmState, GmmModel, Step1Result};
pub use isvm::{fit_isvm, fit_isvm_with, IsvmResult, IsvmStop, LinearSvm, PegasosTrainer, SvmTrainer};
pub use mlp::{fit_step2, fit_step2_with, predict, MlpConfig, MlpEnsemble, MEMBER_LAYOUTS};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::raster::{read_json, write_file, write_json, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// GMM reliable negatives followed by the MLP ensemble vote.
    TwoStep,
    /// The step-1 mixture used directly as the classifier.
    Step1,
    Isvm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TwoStep => "two-step",
            Method::Step1 => "step1",
            Method::Isvm => "isvm",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Method::TwoStep => 1,
            Method::Step1 => 2,
            Method::Isvm => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two-step" | "twostep" | "two_step" => Ok(Method::TwoStep),
            "step1" | "step-1" => Ok(Method::Step1),
            "isvm" => Ok(Method::Isvm),
            _ => Err(invalid!("unknown method {s:?} (expected two-step, step1 or isvm)")),
        }
    }
}

/// Ensemble votes and the thresholded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    pub height: usize,
    pub width: usize,
    /// Fraction of members voting "changed", one of 0, 0.2, …, 1 for five members.
    pub votes: Vec<f64>,
    pub threshold: f64,
    pub binary: BinaryMask,
}

impl ChangeMap {
    /// `binary_i = votes_i > t`.
    pub fn from_votes(height: usize, width: usize, votes: Vec<f64>, threshold: f64) -> Result<Self> {
        if votes.len() != height * width {
            return Err(invalid!("{} votes for a {height}x{width} grid", votes.len()));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(invalid!("threshold must lie in [0, 1], got {threshold}"));
        }
        let binary = BinaryMask::new(height, width, votes.iter().map(|&v| v > threshold).collect())?;
        Ok(ChangeMap { height, width, votes, threshold, binary })
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::from_votes(self.height, self.width, self.votes.clone(), threshold)
    }

    /// Hard map that carries no vote information (votes are 0 or 1).
    pub fn from_mask(mask: BinaryMask) -> Self {
        let votes = mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ChangeMap { height: mask.height(), width: mask.width(), votes, threshold: 0.5, binary: mask }
    }
}

#[derive(Serialize, Deserialize)]
struct ChangeMapHeader {
    height: usize,
    width: usize,
    threshold: f64,
    votes: String,
    binary: String,
}

/// Writes `votes.f32`, `binary.u8` and `change_map.json`; returns the json path.
pub fn write_change_map(map: &ChangeMap, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let votes: Vec<u8> = map.votes.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_file(&dir.join("votes.f32"), &votes)?;
    write_file(&dir.join("binary.u8"), &map.binary.to_u8())?;
    let header = ChangeMapHeader {
        height: map.height,
        width: map.width,
        threshold: map.threshold,
        votes: "votes.f32".into(),
        binary: "binary.u8".into(),
    };
    let path = dir.join("change_map.json");
    write_json(&path, &header)?;
    Ok(path)
}

/// Reads a map written by [`write_change_map`] (json path or its directory).
pub fn read_change_map(path: impl AsRef<Path>) -> Result<ChangeMap> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join("change_map.json");
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let h: ChangeMapHeader = read_json(&path)?;
    let n = h.height * h.width;
    let vp = base.join(&h.votes);
    let bytes = fs::read(&vp).map_err(|e| Error::io(&vp, e))?;
    if bytes.len() != 4 * n {
        return Err(shape_err!("{}: expected {} bytes, found {}", vp.display(), 4 * n, bytes.len()));
    }
    let votes: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let bp = base.join(&h.binary);
    let bin = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if bin.len() != n {
        return Err(shape_err!("{}: expected {n} bytes, found {}", bp.display(), bin.len()));
    }
    let binary = BinaryMask::from_u8(h.height, h.width, &bin)?;
    Ok(ChangeMap { height: h.height, width: h.width, votes, threshold: h.threshold, binary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip() {
        let m = ChangeMap::from_votes(2, 3, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], 0.3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_change_map(&m, dir.path()).unwrap();
        let back = read_change_map(dir.path()).unwrap();
        assert_eq!(back.binary, m.binary);
        for (a, b) in back.votes.iter().zip(&m.votes) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn two_of_five_votes() {
        let m = ChangeMap::from_votes(1, 1, vec![0.4], 0.5).unwrap();
        assert!(!m.binary.get(0));
        assert!(m.with_threshold(0.3).unwrap().binary.get(0));
    }

    #[test]
    fn unanimous_positive_for_every_threshold_below_one() {
        for t in [0.0, 0.3, 0.5, 0.8, 0.99] {
            assert!(ChangeMap::from_votes(1, 1, vec![1.0], t).unwrap().binary.get(0));
        }
    }

    #[test]
    fn positives_shrink_as_threshold_grows() {
        let votes = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.4, 0.6];
        let mut last = usize::MAX;
        for t in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let m = ChangeMap::from_votes(2, 4, votes.clone(), t).unwrap();
            assert!(m.binary.count() <= last);
            last = m.binary.count();
        }
        let lo = ChangeMap::from_votes(2, 4, votes.clone(), 0.3).unwrap();
        let hi = ChangeMap::from_votes(2, 4, votes, 0.5).unwrap();
        assert!(hi.binary.indices().iter().all(|i| lo.binary.get(*i)));
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterQuality;
use crate::error::{Error, Result};
use crate::evaluation::RankingReport;
use crate::training::PipelineConfig;

/// Where the pipeline reads its data from. Paths are stored as given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    /// Directory of `backbone_<m>.embf` files.
    pub features: PathBuf,
    pub meta: PathBuf,
    /// Evaluation sets written by `save_dataset`.
    pub query: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneRecord {
    pub backbone: usize,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub num_clusters: usize,
    pub num_outliers: usize,
    pub outlier_fraction: f64,
    pub epsilon_trace: Vec<f64>,
    /// Pseudo-labels overwritten by injected label noise.
    pub noisy_labels: usize,
    /// Agreement with ground truth when every sample has an identity.
    pub quality: Option<ClusterQuality>,
    /// Set when training was skipped this iteration.
    pub warning: Option<String>,
    /// Empty when training was skipped.
    pub backbones: Vec<BackboneRecord>,
    pub evaluation: Option<RankingReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub inputs: RunInputs,
    pub eval_every: Option<usize>,
    pub num_samples: usize,
    pub iterations: Vec<IterationRecord>,
}

impl RunManifest {
    pub fn completed_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_finished(&self) -> bool {
        self.iterations.len() >= self.config.iterations
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub(crate) fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("manifest.json")
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(Self::path(run_dir), text)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = Self::path(run_dir);
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        m.config.validate()?;
        for (k, rec) in m.iterations.iter().enumerate() {
            if rec.iteration != k + 1 {
                return Err(Error::Format(format!(
                    "{}: iteration records must be contiguous from 1, found {} at position {}",
                    path.display(),
                    rec.iteration,
                    k + 1
                )));
            }
        }
        Ok(m)
    }
}

/// Wall-clock seconds per pipeline step of one iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTimings {
    pub iteration: usize,
    pub encode: f64,
    pub distances: f64,
    pub clustering: f64,
    pub training: f64,
    pub evaluation: f64,
}

pub(crate) fn timings_path(run_dir: &Path) -> PathBuf {
    run_dir.join("timings.json")
}

pub(crate) fn load_timings(run_dir: &Path) -> Vec<IterationTimings> {
    fs::read_to_string(timings_path(run_dir))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

pub(crate) fn save_timings(run_dir: &Path, t: &[IterationTimings]) -> Result<()> {
    fs::write(timings_path(run_dir), serde_json::to_string_pretty(t)?)?;
    Ok(())
}

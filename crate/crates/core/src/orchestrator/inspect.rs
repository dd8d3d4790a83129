use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::clustering::{cluster_quality, load_assignment, ClusterAssignment, ClusterQuality};
use crate::error::{Error, Result};
use crate::features::load_meta;

use super::manifest::RunManifest;
use super::pipeline::clusters_path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InspectWhat {
    Clusters,
    Losses,
    Purity,
}

impl FromStr for InspectWhat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(Self::Clusters),
            "losses" => Ok(Self::Losses),
            "purity" => Ok(Self::Purity),
            other => Err(Error::Param(format!(
                "unknown report `{other}`; expected clusters, losses or purity"
            ))),
        }
    }
}

fn load_clusters(run_dir: &Path, t: usize) -> Result<ClusterAssignment> {
    let path = clusters_path(run_dir, t);
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    load_assignment(&path)
}

fn clusters_report(run_dir: &Path, manifest: &RunManifest) -> Result<String> {
    let mut out = String::new();
    for rec in &manifest.iterations {
        let a = load_clusters(run_dir, rec.iteration)?;
        let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
        for size in a.cluster_sizes() {
            *histogram.entry(size).or_default() += 1;
        }
        let _ = writeln!(
            out,
            "iteration {}: C={} outliers={}/{} ({:.4})",
            rec.iteration,
            a.num_clusters,
            a.num_outliers(),
            a.len(),
            a.outlier_fraction()
        );
        let sizes: Vec<String> = histogram.iter().map(|(s, n)| format!("{s}x{n}")).collect();
        let _ = writeln!(out, "  sizes: {}", sizes.join(" "));
    }
    Ok(out)
}

fn losses_report(manifest: &RunManifest) -> String {
    let mut out = String::from("iteration,epoch,backbone,loss\n");
    for rec in &manifest.iterations {
        for b in &rec.backbones {
            for e in &b.epochs {
                let _ = writeln!(out, "{},{},{},{}", rec.iteration, e.epoch, b.backbone, e.mean_loss);
            }
        }
    }
    out
}

#[derive(Serialize)]
struct PurityRow {
    iteration: usize,
    #[serde(flatten)]
    quality: ClusterQuality,
}

fn purity_report(run_dir: &Path, manifest: &RunManifest) -> Result<String> {
    let meta = load_meta(&manifest.inputs.meta)?;
    if meta.iter().any(|m| m.identity.is_none()) {
        return Err(Error::MissingArtifact(format!(
            "ground-truth identities in {}",
            manifest.inputs.meta.display()
        )));
    }
    let rows = manifest
        .iterations
        .iter()
        .map(|rec| {
            let a = load_clusters(run_dir, rec.iteration)?;
            Ok(PurityRow {
                iteration: rec.iteration,
                quality: cluster_quality(&a, &meta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    Ok(text)
}

/// Text report over a run directory: cluster statistics, the loss curve as
/// CSV, or purity against ground truth as JSON.
pub fn inspect(run_dir: &Path, what: InspectWhat) -> Result<String> {
    let manifest = RunManifest::load(run_dir)?;
    match what {
        InspectWhat::Clusters => clusters_report(run_dir, &manifest),
        InspectWhat::Losses => Ok(losses_report(&manifest)),
        InspectWhat::Purity => purity_report(run_dir, &manifest),
    }
}

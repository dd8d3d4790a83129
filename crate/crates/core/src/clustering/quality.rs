use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::features::SampleMeta;

/// Agreement between an assignment and ground-truth identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub num_samples: usize,
    pub num_clusters: usize,
    pub outlier_fraction: f64,
    /// Majority-identity fraction over inliers.
    pub purity: Option<f64>,
    /// Same-cluster inlier pairs that share an identity.
    pub pairwise_precision: Option<f64>,
    /// Same-identity inlier pairs that share a cluster.
    pub pairwise_recall: Option<f64>,
}

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

pub fn cluster_quality(assign: &ClusterAssignment, truth: &[SampleMeta]) -> Result<ClusterQuality> {
    if truth.len() != assign.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels vs {} metadata rows",
            assign.len(),
            truth.len()
        )));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut identity = Vec::with_capacity(truth.len());
    for (i, m) in truth.iter().enumerate() {
        let id = m.identity.as_deref().ok_or(Error::MissingTruth(i))?;
        let next = ids.len();
        identity.push(*ids.entry(id).or_insert(next));
    }

    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut per_cluster = vec![0usize; assign.num_clusters];
    let mut per_identity = vec![0usize; ids.len()];
    for (i, label) in assign.labels.iter().enumerate() {
        if let Some(c) = label {
            *joint.entry((*c, identity[i])).or_default() += 1;
            per_cluster[*c] += 1;
            per_identity[identity[i]] += 1;
        }
    }
    let inliers: usize = per_cluster.iter().sum();

    let mut majority = vec![0usize; assign.num_clusters];
    for (&(c, _), &count) in &joint {
        majority[c] = majority[c].max(count);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let true_pairs: u64 = joint.values().map(|&k| pairs(k)).sum();

    Ok(ClusterQuality {
        num_samples: assign.len(),
        num_clusters: assign.num_clusters,
        outlier_fraction: assign.outlier_fraction(),
        purity: ratio(majority.iter().sum::<usize>() as u64, inliers as u64),
        pairwise_precision: ratio(true_pairs, per_cluster.iter().map(|&k| pairs(k)).sum()),
        pairwise_recall: ratio(true_pairs, per_identity.iter().map(|&k| pairs(k)).sum()),
    })
}

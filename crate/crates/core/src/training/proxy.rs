use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMode {
    /// Feature of one uniformly drawn member.
    #[default]
    Random,
    /// Normalized mean of all member features.
    Mean,
}

/// One unit-norm representative per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxySet {
    pub dim: usize,
    /// `num_clusters × dim`, row-major.
    pub vectors: Vec<f64>,
    /// Sample drawn for each cluster; `None` in mean mode.
    pub source_indices: Vec<Option<usize>>,
}

impl ProxySet {
    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn proxy(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn from_vectors(dim: usize, vectors: Vec<f64>) -> Self {
        let n = vectors.len().checked_div(dim).unwrap_or(0);
        Self {
            dim,
            vectors,
            source_indices: vec![None; n],
        }
    }
}

pub fn select_proxies(
    assign: &ClusterAssignment,
    feats: &FeatureMatrix,
    mode: ProxyMode,
    rng: &mut Rng,
) -> Result<ProxySet> {
    if feats.rows() != assign.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} assigned samples",
            feats.rows(),
            assign.len()
        )));
    }
    let dim = feats.dim();
    let mut vectors = Vec::with_capacity(assign.num_clusters * dim);
    let mut source_indices = Vec::with_capacity(assign.num_clusters);
    for (c, members) in assign.members().iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyCluster(c));
        }
        match mode {
            ProxyMode::Random => {
                let pick = members[rng.random_range(0..members.len())];
                vectors.extend(feats.row(pick).iter().map(|&v| f64::from(v)));
                source_indices.push(Some(pick));
            }
            ProxyMode::Mean => {
                let mut mean = vec![0.0f64; dim];
                for &i in members {
                    for (m, &v) in mean.iter_mut().zip(feats.row(i)) {
                        *m += f64::from(v);
                    }
                }
                let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= 1e-12 {
                    return Err(Error::ZeroVectorRow(c));
                }
                vectors.extend(mean.iter().map(|v| v / norm));
                source_indices.push(None);
            }
        }
    }
    Ok(ProxySet {
        dim,
        vectors,
        source_indices,
    })
}

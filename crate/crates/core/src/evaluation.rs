//! Cross-camera retrieval evaluation: ensemble query-to-gallery distances,
//! same-identity-same-camera filtering, CMC Rank-k and mAP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureMatrix, SampleMeta};
use crate::metricspace::{ensemble_distances, query_gallery_distances_with, DistanceMatrix};
use crate::par::{self, Execution};
use crate::training::encoder::encode;
use crate::training::{EncoderState, EvalWeights};

/// Query and gallery sets with identity and camera for every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSplit {
    pub query: Dataset,
    pub gallery: Dataset,
}

impl EvalSplit {
    pub fn validate(&self) -> Result<()> {
        self.query.validate()?;
        self.gallery.validate()?;
        if self.query.features.len() != self.gallery.features.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} query backbones vs {} gallery backbones",
                self.query.features.len(),
                self.gallery.features.len()
            )));
        }
        for (qm, gm) in self.query.features.iter().zip(&self.gallery.features) {
            if qm.dim() != gm.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "backbone {}: query dim {} vs gallery dim {}",
                    qm.backbone_id(),
                    qm.dim(),
                    gm.dim()
                )));
            }
        }
        check_truth(&self.query.meta)?;
        check_truth(&self.gallery.meta)
    }
}

fn check_truth(meta: &[SampleMeta]) -> Result<()> {
    match meta.iter().find(|m| m.identity.is_none() || m.camera.is_none()) {
        Some(m) => Err(Error::MissingTruth(m.sample_index)),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    /// All queries, including skipped ones.
    pub num_queries: usize,
    /// Queries with no relevant gallery entry after filtering.
    pub skipped_queries: usize,
    /// `None` for skipped queries.
    pub per_query_ap: Vec<Option<f64>>,
}

/// Per query: gallery indices ascending by distance (ties by index), with
/// entries sharing both identity and camera with the query removed.
pub fn rank_gallery(dq2g: &DistanceMatrix, query: &[SampleMeta], gallery: &[SampleMeta]) -> Result<Vec<Vec<usize>>> {
    rank_gallery_with(dq2g, query, gallery, Execution::default())
}

pub fn rank_gallery_with(
    dq2g: &DistanceMatrix,
    query: &[SampleMeta],
    gallery: &[SampleMeta],
    exec: Execution,
) -> Result<Vec<Vec<usize>>> {
    if dq2g.rows() != query.len() || dq2g.cols() != gallery.len() {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix {}×{} for {} queries and {} gallery samples",
            dq2g.rows(),
            dq2g.cols(),
            query.len(),
            gallery.len()
        )));
    }
    check_truth(query)?;
    check_truth(gallery)?;
    Ok(par::map_range(query.len(), exec, |q| {
        let qm = &query[q];
        let row = dq2g.row(q);
        let mut order: Vec<usize> = (0..gallery.len())
            .filter(|&g| !(gallery[g].identity == qm.identity && gallery[g].camera == qm.camera))
            .collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        order
    }))
}

/// `(1/R) · Σ_{k relevant} hits(≤k)/k` over a ranked relevance list.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// Whether a relevant item appears in the top `k`.
pub fn cmc_at(relevance: &[bool], k: usize) -> bool {
    relevance.iter().take(k).any(|&r| r)
}

/// Metrics from a query-to-gallery distance matrix.
pub fn evaluate_distances(
    dq2g: &DistanceMatrix,
    query: &[SampleMeta],
    gallery: &[SampleMeta],
    exec: Execution,
) -> Result<RankingReport> {
    let rankings = rank_gallery_with(dq2g, query, gallery, exec)?;
    let relevance: Vec<Vec<bool>> = rankings
        .iter()
        .zip(query)
        .map(|(order, qm)| order.iter().map(|&g| gallery[g].identity == qm.identity).collect())
        .collect();
    let per_query_ap: Vec<Option<f64>> = relevance.iter().map(|r| average_precision(r).ok()).collect();
    let scored: Vec<&Vec<bool>> = relevance
        .iter()
        .zip(&per_query_ap)
        .filter_map(|(r, ap)| ap.map(|_| r))
        .collect();
    if scored.is_empty() {
        return Err(Error::NoRelevant);
    }
    let n = scored.len() as f64;
    let rank = |k: usize| scored.iter().filter(|r| cmc_at(r, k)).count() as f64 / n;
    Ok(RankingReport {
        map: per_query_ap.iter().flatten().sum::<f64>() / n,
        rank1: rank(1),
        rank5: rank(5),
        rank10: rank(10),
        num_queries: query.len(),
        skipped_queries: query.len() - scored.len(),
        per_query_ap,
    })
}

fn ensemble_query_gallery(query: &[FeatureMatrix], gallery: &[FeatureMatrix], exec: Execution) -> Result<DistanceMatrix> {
    let per_backbone = query
        .iter()
        .zip(gallery)
        .map(|(q, g)| query_gallery_distances_with(q, g, exec))
        .collect::<Result<Vec<_>>>()?;
    ensemble_distances(&per_backbone)
}

/// Evaluates the split's features as they are, without any encoder.
pub fn evaluate_raw(split: &EvalSplit, exec: Execution) -> Result<RankingReport> {
    split.validate()?;
    let d = ensemble_query_gallery(&split.query.features, &split.gallery.features, exec)?;
    evaluate_distances(&d, &split.query.meta, &split.gallery.meta, exec)
}

/// Encodes both sides with each backbone's momentum (or raw) weights,
/// averages the per-backbone Euclidean distances and scores the ranking.
pub fn evaluate(split: &EvalSplit, encoders: &[EncoderState], weights: EvalWeights, exec: Execution) -> Result<RankingReport> {
    split.validate()?;
    if encoders.len() != split.query.features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} encoders for {} backbones",
            encoders.len(),
            split.query.features.len()
        )));
    }
    let mut q = Vec::with_capacity(encoders.len());
    let mut g = Vec::with_capacity(encoders.len());
    for (m, enc) in encoders.iter().enumerate() {
        let params = match weights {
            EvalWeights::Momentum => &enc.momentum,
            EvalWeights::Raw => &enc.weights,
        };
        q.push(encode(params, &split.query.features[m])?);
        g.push(encode(params, &split.gallery.features[m])?);
    }
    let d = ensemble_query_gallery(&q, &g, exec)?;
    evaluate_distances(&d, &split.query.meta, &split.gallery.meta, exec)
}

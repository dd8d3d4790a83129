//! k-reciprocal neighbourhood re-ranking.
//!
//! For each sample `p` the k-reciprocal set `R(p, k1)` keeps the members of
//! p's `k1`-nearest list that also have `p` in their own `k1`-nearest list.
//! `R(p, k1)` is expanded with the `⌊k1/2⌉`-reciprocal set of any member that
//! overlaps it by more than two thirds. The expanded set is encoded as a
//! sparse vector (Gaussian weights `exp(-d)` normalized to sum one, or plain
//! indicators), optionally averaged over the `k2` nearest neighbours, and two
//! samples are compared with the weighted Jaccard distance
//! `1 - Σ min(v_i, v_j) / Σ max(v_i, v_j)`.
//!
//! Nearest-neighbour lists order by distance, then by sample index.

use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::{DistanceKind, DistanceMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NeighborEncoding {
    /// `exp(-d(i,j))` on max-rescaled distances, normalized per sample.
    #[default]
    Gaussian,
    /// 0/1 membership; with `k2 = 1` this is the plain set Jaccard distance.
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    /// Weight of the max-rescaled original distance in the final blend.
    pub mix_weight: f64,
    pub encoding: NeighborEncoding,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 30,
            k2: 6,
            mix_weight: 0.0,
            encoding: NeighborEncoding::Gaussian,
        }
    }
}

impl RerankParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k2 == 0 || self.k2 > self.k1 {
            return Err(Error::Param(format!(
                "need 1 <= k2 <= k1, got k1 = {}, k2 = {}",
                self.k1, self.k2
            )));
        }
        if self.k1 >= n {
            return Err(Error::Param(format!(
                "k1 = {} must be smaller than the sample count {n}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return Err(Error::Param(format!(
                "mix_weight = {} outside [0, 1]",
                self.mix_weight
            )));
        }
        Ok(())
    }
}

pub fn rerank_kreciprocal(d: &DistanceMatrix, params: &RerankParams) -> Result<DistanceMatrix> {
    rerank_kreciprocal_with(d, params, Execution::default())
}

pub fn rerank_kreciprocal_with(
    d: &DistanceMatrix,
    params: &RerankParams,
    exec: Execution,
) -> Result<DistanceMatrix> {
    if !d.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "re-ranking needs a square matrix, got {}x{}",
            d.rows(),
            d.cols()
        )));
    }
    let n = d.rows();
    params.validate(n)?;

    let max = f64::from(d.max());
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let rescaled = |i: usize, j: usize| f64::from(d.get(i, j)) * scale;

    let ranking = par::map_range(n, exec, |i| ranked_neighbors(d.row(i)));
    let half = ((params.k1 as f64) / 2.0).round_ties_even() as usize;

    let encoded: Vec<Vec<(usize, f64)>> = par::map_range(n, exec, |i| {
        let expanded = expanded_set(&ranking, i, params.k1, half);
        match params.encoding {
            NeighborEncoding::Binary => expanded.into_iter().map(|j| (j, 1.0)).collect(),
            NeighborEncoding::Gaussian => {
                let w: Vec<f64> = expanded.iter().map(|&j| (-rescaled(i, j)).exp()).collect();
                let total: f64 = w.iter().sum();
                expanded.into_iter().zip(w).map(|(j, w)| (j, w / total)).collect()
            }
        }
    });

    let encoded = if params.k2 > 1 {
        par::map_range(n, exec, |i| {
            let mut dense = vec![0.0f64; n];
            for &nb in &ranking[i][..params.k2] {
                for &(j, w) in &encoded[nb] {
                    dense[j] += w;
                }
            }
            let k2 = params.k2 as f64;
            dense
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w != 0.0)
                .map(|(j, w)| (j, w / k2))
                .collect()
        })
    } else {
        encoded
    };

    // inverted index: column -> (row, weight), rows ascending
    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in encoded.iter().enumerate() {
        for &(j, w) in row {
            inverted[j].push((i, w));
        }
    }
    let mass: Vec<f64> = encoded.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();

    let mix = params.mix_weight;
    let mut data = vec![0.0f32; n * n];
    par::fill_rows(&mut data, n, exec, |i, out| {
        let mut shared = vec![0.0f64; n];
        for &(k, w) in &encoded[i] {
            for &(j, wj) in &inverted[k] {
                shared[j] += w.min(wj);
            }
        }
        for (j, slot) in out.iter_mut().enumerate() {
            let union = mass[i] + mass[j] - shared[j];
            let jaccard = if union > 0.0 { 1.0 - shared[j] / union } else { 1.0 };
            let jaccard = jaccard.clamp(0.0, 1.0);
            *slot = if mix == 0.0 {
                jaccard as f32
            } else {
                (mix * rescaled(i, j) + (1.0 - mix) * jaccard) as f32
            };
        }
    });
    DistanceMatrix::new(n, n, data, DistanceKind::JaccardReranked)
}

/// Sample indices sorted by (distance, index).
fn ranked_neighbors(row: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Members of p's `k+1` nearest list (p included) that hold p in theirs.
fn k_reciprocal(ranking: &[Vec<usize>], p: usize, k: usize) -> Vec<usize> {
    ranking[p][..=k]
        .iter()
        .copied()
        .filter(|&q| ranking[q][..=k].contains(&p))
        .collect()
}

fn expanded_set(ranking: &[Vec<usize>], p: usize, k1: usize, half: usize) -> Vec<usize> {
    let base = k_reciprocal(ranking, p, k1);
    let mut expanded = base.clone();
    for &candidate in &base {
        let sub = k_reciprocal(ranking, candidate, half);
        let overlap = sub.iter().filter(|q| base.contains(q)).count();
        if 3 * overlap > 2 * sub.len() {
            expanded.extend(sub);
        }
    }
    expanded.sort_unstable();
    expanded.dedup();
    expanded
}

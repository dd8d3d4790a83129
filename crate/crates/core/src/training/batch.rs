use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `P × K` samples: P clusters, K samples each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sample_indices: Vec<usize>,
    pub cluster_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// One epoch of PK batches.
///
/// Cluster ids are shuffled and consumed `clusters_per_batch` at a time, so
/// no cluster appears twice and `⌊C/P⌋` batches come out. Clusters with at
/// least K members are sampled without replacement; smaller clusters
/// contribute every member once and fill the remaining slots with
/// replacement.
pub fn make_batches(
    assign: &ClusterAssignment,
    rng: &mut Rng,
    clusters_per_batch: usize,
    samples_per_cluster: usize,
) -> Result<Vec<Batch>> {
    if clusters_per_batch == 0 || samples_per_cluster == 0 {
        return Err(Error::Param("P and K must be >= 1".into()));
    }
    if assign.num_clusters < clusters_per_batch {
        return Err(Error::TooFewClusters {
            clusters: assign.num_clusters,
            per_batch: clusters_per_batch,
        });
    }
    let members = assign.members();
    let mut order: Vec<usize> = (0..assign.num_clusters).collect();
    order.shuffle(rng);

    let k = samples_per_cluster;
    let batches = order
        .chunks_exact(clusters_per_batch)
        .map(|chunk| {
            let mut sample_indices = Vec::with_capacity(chunk.len() * k);
            let mut cluster_ids = Vec::with_capacity(chunk.len() * k);
            for &c in chunk {
                let pool = &members[c];
                if pool.len() >= k {
                    sample_indices.extend(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]));
                } else {
                    sample_indices.extend_from_slice(pool);
                    for _ in pool.len()..k {
                        sample_indices.push(pool[rng.random_range(0..pool.len())]);
                    }
                }
                cluster_ids.extend(std::iter::repeat_n(c, k));
            }
            Batch {
                sample_indices,
                cluster_ids,
            }
        })
        .collect();
    Ok(batches)
}

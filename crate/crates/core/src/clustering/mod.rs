//! Density clustering over precomputed distances.
//!
//! [`dbscan`] is classic DBSCAN: a sample is core when at least `min_pts`
//! samples (itself included) lie strictly closer than `epsilon`; clusters are
//! the connected components of cores, and non-core samples next to a core
//! join the cluster of the lowest-indexed such core. Masked samples take no
//! part at all.
//!
//! [`ensemble_cluster`] runs DBSCAN over an ascending list of radii and masks
//! every outlier for the remaining runs. [`ensemble_cluster_shortcut`] runs
//! only the two endpoint radii.

mod quality;
mod union_find;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metricspace::DistanceMatrix;

pub use quality::{cluster_quality, ClusterQuality};
use union_find::UnionFind;

/// Radii used by the ensemble when nothing else is configured.
pub const DEFAULT_EPS_LIST: [f64; 5] = [0.5, 0.55, 0.6, 0.65, 0.7];
pub const DEFAULT_MIN_PTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per sample, `None` for outliers.
    pub labels: Vec<Option<usize>>,
    pub num_clusters: usize,
    pub epsilon_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.labels[i].is_none()
    }

    pub fn outlier_mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_none).collect()
    }

    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn outlier_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.num_outliers() as f64 / self.labels.len() as f64
        }
    }

    /// Sample indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Checks contiguous ids and that every id is used.
    pub fn validate(&self) -> Result<()> {
        let sizes = {
            let mut s = vec![0usize; self.num_clusters];
            for l in self.labels.iter().flatten() {
                if *l >= self.num_clusters {
                    return Err(Error::Param(format!(
                        "label {l} outside 0..{}",
                        self.num_clusters
                    )));
                }
                s[*l] += 1;
            }
            s
        };
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(c));
        }
        Ok(())
    }

    /// Same inlier set and same grouping, ignoring the numbering of clusters.
    pub fn same_partition(&self, other: &ClusterAssignment) -> bool {
        if self.labels.len() != other.labels.len() || self.num_clusters != other.num_clusters {
            return false;
        }
        let mut forward = vec![None; self.num_clusters];
        let mut backward = vec![None; other.num_clusters];
        for (a, b) in self.labels.iter().zip(&other.labels) {
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    if *forward[*a].get_or_insert(*b) != *b || *backward[*b].get_or_insert(*a) != *a {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbscanParams {
    pub epsilon: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(epsilon: f64, min_pts: usize) -> Result<Self> {
        let p = Self { epsilon, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Param(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if self.min_pts == 0 {
            return Err(Error::Param("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

fn require_square(d: &DistanceMatrix) -> Result<()> {
    if !d.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "clustering needs a square matrix, got {}x{}",
            d.rows(),
            d.cols()
        )));
    }
    Ok(())
}

/// DBSCAN over `d`. `mask[i] == true` removes sample `i` entirely; it is
/// reported as an outlier.
pub fn dbscan(d: &DistanceMatrix, params: DbscanParams, mask: Option<&[bool]>) -> Result<ClusterAssignment> {
    require_square(d)?;
    params.validate()?;
    let n = d.rows();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::ShapeMismatch(format!("mask of length {} for {n} samples", m.len())));
        }
    }
    let active = |i: usize| mask.is_none_or(|m| !m[i]);
    let eps = params.epsilon;
    let close = |i: usize, j: usize| f64::from(d.get(i, j)) < eps;

    let is_core: Vec<bool> = (0..n)
        .map(|i| active(i) && (0..n).filter(|&j| active(j) && close(i, j)).count() >= params.min_pts)
        .collect();

    let mut uf = UnionFind::new(n);
    for i in (0..n).filter(|&i| is_core[i]) {
        for j in (i + 1..n).filter(|&j| is_core[j]) {
            if close(i, j) {
                uf.union(i, j);
            }
        }
    }

    let mut root_label: Vec<Option<usize>> = vec![None; n];
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut num_clusters = 0;
    for i in (0..n).filter(|&i| is_core[i]) {
        let root = uf.find(i);
        let label = *root_label[root].get_or_insert_with(|| {
            num_clusters += 1;
            num_clusters - 1
        });
        labels[i] = Some(label);
    }
    for i in (0..n).filter(|&i| active(i) && !is_core[i]) {
        if let Some(core) = (0..n).find(|&j| is_core[j] && close(i, j)) {
            labels[i] = labels[core];
        }
    }

    Ok(ClusterAssignment {
        labels,
        num_clusters,
        epsilon_trace: vec![eps],
    })
}

fn merge_masks(base: Option<&[bool]>, assign: &ClusterAssignment) -> Vec<bool> {
    assign
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.is_none() || base.is_some_and(|b| b[i]))
        .collect()
}

/// DBSCAN at each radius of `eps_list` in turn, with every outlier masked
/// from the later runs. Returns the last run's assignment.
pub fn ensemble_cluster(d: &DistanceMatrix, eps_list: &[f64], min_pts: usize) -> Result<ClusterAssignment> {
    validate_eps_list(eps_list)?;
    let mut mask: Option<Vec<bool>> = None;
    let mut last = None;
    for &eps in eps_list {
        let assign = dbscan(d, DbscanParams::new(eps, min_pts)?, mask.as_deref())?;
        mask = Some(merge_masks(mask.as_deref(), &assign));
        last = Some(assign);
    }
    let mut out = last.expect("non-empty eps list");
    out.epsilon_trace = eps_list.to_vec();
    Ok(out)
}

/// Two-run form of [`ensemble_cluster`]: mask the outliers found at
/// `eps_min`, then cluster once at `eps_max`.
pub fn ensemble_cluster_shortcut(
    d: &DistanceMatrix,
    eps_min: f64,
    eps_max: f64,
    min_pts: usize,
) -> Result<ClusterAssignment> {
    if eps_min > eps_max {
        return Err(Error::Param(format!("eps_min = {eps_min} exceeds eps_max = {eps_max}")));
    }
    let first = dbscan(d, DbscanParams::new(eps_min, min_pts)?, None)?;
    if eps_min == eps_max {
        return Ok(first);
    }
    let mask = first.outlier_mask();
    let mut out = dbscan(d, DbscanParams::new(eps_max, min_pts)?, Some(&mask))?;
    out.epsilon_trace = vec![eps_min, eps_max];
    Ok(out)
}

pub fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::Param("epsilon list is empty".into()));
    }
    if eps_list.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Param(format!("epsilon list {eps_list:?} is not ascending")));
    }
    Ok(())
}

pub fn encode_assignment(a: &ClusterAssignment) -> String {
    let trace: Vec<String> = a.epsilon_trace.iter().map(|e| e.to_string()).collect();
    let mut out = format!("# C={} eps={}\n", a.num_clusters, trace.join(","));
    for (i, l) in a.labels.iter().enumerate() {
        match l {
            Some(c) => writeln!(out, "{i}\t{c}"),
            None => writeln!(out, "{i}\t-1"),
        }
        .unwrap();
    }
    out
}

pub fn decode_assignment(text: &str) -> Result<ClusterAssignment> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("assignment: empty file".into()))?;
    let bad_header = || Error::Format(format!("assignment: bad header `{header}`"));
    let rest = header.strip_prefix("# C=").ok_or_else(bad_header)?;
    let (c, eps) = rest.split_once(" eps=").ok_or_else(bad_header)?;
    let num_clusters: usize = c.parse().map_err(|_| bad_header())?;
    let epsilon_trace = eps
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| bad_header()))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    for (ordinal, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let bad = || Error::Format(format!("assignment: bad line `{line}`"));
        let (idx, label) = line.split_once('\t').ok_or_else(bad)?;
        if idx.parse::<usize>().map_err(|_| bad())? != ordinal {
            return Err(bad());
        }
        let label: i64 = label.parse().map_err(|_| bad())?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            _ => return Err(bad()),
        });
    }
    let out = ClusterAssignment {
        labels,
        num_clusters,
        epsilon_trace,
    };
    out.validate().map_err(|e| Error::Format(format!("assignment: {e}")))?;
    Ok(out)
}

pub fn save_assignment(a: &ClusterAssignment, path: &Path) -> Result<()> {
    fs::write(path, encode_assignment(a))?;
    Ok(())
}

pub fn load_assignment(path: &Path) -> Result<ClusterAssignment> {
    decode_assignment(&fs::read_to_string(path)?)
}

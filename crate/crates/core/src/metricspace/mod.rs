//! Pairwise distances between embeddings, k-reciprocal refinement and
//! averaging across backbones.

mod rerank;

use std::fs;
use std::path::Path;

use crate::binio::{self, Cursor};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::par::{self, Execution};

pub use rerank::{rerank_kreciprocal, rerank_kreciprocal_with, NeighborEncoding, RerankParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    Euclidean,
    JaccardReranked,
    Ensemble,
}

impl DistanceKind {
    pub fn code(self) -> u8 {
        match self {
            DistanceKind::Euclidean => 0,
            DistanceKind::JaccardReranked => 1,
            DistanceKind::Ensemble => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DistanceKind::Euclidean),
            1 => Ok(DistanceKind::JaccardReranked),
            2 => Ok(DistanceKind::Ensemble),
            other => Err(Error::Format(format!("DMAT: unknown kind code {other}"))),
        }
    }
}

/// Dense row-major dissimilarities, square (`N×N`) or query-by-gallery.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    kind: DistanceKind,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, kind: DistanceKind) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} distance matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Param(format!(
                "distance entry {bad} = {} is negative or not finite",
                data[bad]
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            kind,
        })
    }

    /// Square matrix from a closure over index pairs.
    pub fn from_fn(n: usize, kind: DistanceKind, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..n * n).map(|k| f(k / n, k % n) as f32).collect();
        Self::new(n, n, data, kind)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Largest `|d(i,j) - d(j,i)|` and largest `|d(i,i)|` of a square matrix.
    pub fn asymmetry(&self) -> (f32, f32) {
        let mut sym = 0.0f32;
        let mut diag = 0.0f32;
        for i in 0..self.rows {
            diag = diag.max(self.get(i, i).abs());
            for j in i + 1..self.cols {
                sym = sym.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        (sym, diag)
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt() as f32
}

/// All-pairs Euclidean distances between the rows of `f`.
pub fn pairwise_euclidean(f: &FeatureMatrix) -> DistanceMatrix {
    pairwise_euclidean_with(f, Execution::default())
}

pub fn pairwise_euclidean_with(f: &FeatureMatrix, exec: Execution) -> DistanceMatrix {
    let n = f.rows();
    let mut data = vec![0.0f32; n * n];
    par::fill_rows(&mut data, n, exec, |i, row| {
        let a = f.row(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = euclidean(a, f.row(j));
        }
    });
    DistanceMatrix {
        rows: n,
        cols: n,
        data,
        kind: DistanceKind::Euclidean,
    }
}

/// `|Q|×|G|` Euclidean distances between two sets embedded by one backbone.
pub fn query_gallery_distances(fq: &FeatureMatrix, fg: &FeatureMatrix) -> Result<DistanceMatrix> {
    query_gallery_distances_with(fq, fg, Execution::default())
}

pub fn query_gallery_distances_with(
    fq: &FeatureMatrix,
    fg: &FeatureMatrix,
    exec: Execution,
) -> Result<DistanceMatrix> {
    if fq.dim() != fg.dim() {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs gallery dim {}",
            fq.dim(),
            fg.dim()
        )));
    }
    let (q, g) = (fq.rows(), fg.rows());
    let mut data = vec![0.0f32; q * g];
    par::fill_rows(&mut data, g, exec, |i, row| {
        let a = fq.row(i);
        for (j, out) in row.iter_mut().enumerate() {
            *out = euclidean(a, fg.row(j));
        }
    });
    Ok(DistanceMatrix {
        rows: q,
        cols: g,
        data,
        kind: DistanceKind::Euclidean,
    })
}

/// Element-wise arithmetic mean.
///
/// Each entry is summed in sorted order, so the result is bit-identical for
/// any ordering of `ds`.
pub fn ensemble_distances(ds: &[DistanceMatrix]) -> Result<DistanceMatrix> {
    let first = ds
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no distance matrices to ensemble".into()))?;
    for (m, d) in ds.iter().enumerate() {
        if d.rows != first.rows || d.cols != first.cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {m} is {}x{}, expected {}x{}",
                d.rows, d.cols, first.rows, first.cols
            )));
        }
        if d.kind != first.kind {
            return Err(Error::ShapeMismatch(format!(
                "matrix {m} has kind {:?}, expected {:?}",
                d.kind, first.kind
            )));
        }
    }
    let count = ds.len() as f64;
    let mut scratch = vec![0.0f32; ds.len()];
    let data = (0..first.data.len())
        .map(|k| {
            for (slot, d) in scratch.iter_mut().zip(ds) {
                *slot = d.data[k];
            }
            scratch.sort_by(f32::total_cmp);
            (scratch.iter().map(|&v| f64::from(v)).sum::<f64>() / count) as f32
        })
        .collect();
    Ok(DistanceMatrix {
        rows: first.rows,
        cols: first.cols,
        data,
        kind: DistanceKind::Ensemble,
    })
}

const DMAT_MAGIC: &[u8; 4] = b"DMAT";
const DMAT_VERSION: u32 = 1;

pub fn encode_distances(d: &DistanceMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + d.data.len() * 4);
    out.extend_from_slice(DMAT_MAGIC);
    binio::put_u32(&mut out, DMAT_VERSION);
    binio::put_u32(&mut out, binio::checked_u32(d.rows, "rows")?);
    binio::put_u32(&mut out, binio::checked_u32(d.cols, "cols")?);
    out.push(d.kind.code());
    binio::put_f32s(&mut out, &d.data);
    Ok(out)
}

pub fn decode_distances(bytes: &[u8]) -> Result<DistanceMatrix> {
    let mut cur = Cursor::new(bytes, "DMAT");
    cur.magic(DMAT_MAGIC)?;
    let version = cur.u32()?;
    if version != DMAT_VERSION {
        return Err(Error::Format(format!("DMAT: unsupported version {version}")));
    }
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let kind = DistanceKind::from_code(cur.u8()?)?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("DMAT: size overflow".into()))?;
    let data = cur.f32s(n)?;
    cur.finish()?;
    DistanceMatrix::new(rows, cols, data, kind).map_err(|e| Error::Format(format!("DMAT: {e}")))
}

pub fn save_distances(d: &DistanceMatrix, path: &Path) -> Result<()> {
    fs::write(path, encode_distances(d)?)?;
    Ok(())
}

pub fn load_distances(path: &Path) -> Result<DistanceMatrix> {
    decode_distances(&fs::read(path)?)
}

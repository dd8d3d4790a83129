//! Embedding matrices, sample metadata, pooled-feature fusion and the
//! synthetic multi-backbone dataset generator.
//!
//! Embeddings are stored in single precision, matching the on-disk `EMBF`
//! format; arithmetic that needs more headroom widens to `f64` internally.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{self, Cursor};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Tolerance on unit row norms after normalization.
pub const NORM_TOLERANCE: f64 = 1e-5;

const ZERO_NORM: f64 = 1e-12;

/// Per-sample metadata. Identity and camera are only consulted by
/// evaluation and diagnostics; clustering and training never read them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub sample_index: usize,
    pub identity: Option<String>,
    pub camera: Option<String>,
}

impl SampleMeta {
    pub fn unlabeled(sample_index: usize) -> Self {
        Self {
            sample_index,
            identity: None,
            camera: None,
        }
    }
}

/// `rows × dim` row-major embeddings from one backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    backbone_id: usize,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, backbone_id: usize) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            dim,
            data,
            backbone_id,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], backbone_id: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat(), backbone_id)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backbone_id(&self) -> usize {
        self.backbone_id
    }

    pub fn with_backbone_id(mut self, backbone_id: usize) -> Self {
        self.backbone_id = backbone_id;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Rows `indices` in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            dim: self.dim,
            data,
            backbone_id: self.backbone_id,
        }
    }

    /// True when every row has unit norm within [`NORM_TOLERANCE`].
    pub fn is_row_normalized(&self) -> bool {
        (0..self.rows).all(|i| (row_norm(self.row(i)) - 1.0).abs() <= NORM_TOLERANCE)
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(f.data.len());
    for i in 0..f.rows {
        let row = f.row(i);
        let norm = row_norm(row);
        if norm <= ZERO_NORM {
            return Err(Error::ZeroVectorRow(i));
        }
        data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    Ok(FeatureMatrix {
        rows: f.rows,
        dim: f.dim,
        data,
        backbone_id: f.backbone_id,
    })
}

/// `channels × height × width` activation maps of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMapStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Param(format!(
                "feature map dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if channels * height * width != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} stack",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Global max pooling plus global average pooling, added per channel.
/// The result is not normalized.
pub fn fuse_pooling(maps: &FeatureMapStack) -> Vec<f32> {
    (0..maps.channels)
        .map(|c| {
            let plane = maps.channel(c);
            let max = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mean = plane.iter().map(|&v| f64::from(v)).sum::<f64>() / plane.len() as f64;
            (f64::from(max) + mean) as f32
        })
        .collect()
}

/// Parameters of the synthetic multi-backbone dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub latent_dim: usize,
    /// Output dimension of every backbone map.
    pub feature_dim: usize,
    pub num_backbones: usize,
    /// Expected norm of the within-identity latent offset, and the
    /// per-coordinate standard deviation of each backbone's output noise.
    pub noise_sigma: f64,
    /// Expected distance between two identity centers in latent space.
    pub separation: f64,
    pub num_cameras: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_identities: 20,
            samples_per_identity: 30,
            latent_dim: 8,
            feature_dim: 32,
            num_backbones: 3,
            noise_sigma: 0.1,
            separation: 1.0,
            num_cameras: 4,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_identities", self.num_identities),
            ("samples_per_identity", self.samples_per_identity),
            ("latent_dim", self.latent_dim),
            ("feature_dim", self.feature_dim),
            ("num_backbones", self.num_backbones),
            ("num_cameras", self.num_cameras),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Param(format!("{name} must be >= 1")));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Param(format!("noise_sigma = {} must be >= 0", self.noise_sigma)));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::Param(format!("separation = {} must be > 0", self.separation)));
        }
        Ok(())
    }

    /// Parses flat `key = value` lines. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for (key, value) in crate::training::config::key_values(text)? {
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}: {e}"));
            match key.as_str() {
                "num_identities" => spec.num_identities = value.parse().map_err(|e| bad(&e))?,
                "samples_per_identity" => spec.samples_per_identity = value.parse().map_err(|e| bad(&e))?,
                "latent_dim" => spec.latent_dim = value.parse().map_err(|e| bad(&e))?,
                "feature_dim" => spec.feature_dim = value.parse().map_err(|e| bad(&e))?,
                "num_backbones" => spec.num_backbones = value.parse().map_err(|e| bad(&e))?,
                "noise_sigma" => spec.noise_sigma = value.parse().map_err(|e| bad(&e))?,
                "separation" => spec.separation = value.parse().map_err(|e| bad(&e))?,
                "num_cameras" => spec.num_cameras = value.parse().map_err(|e| bad(&e))?,
                "seed" => spec.seed = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Embeddings from every backbone plus aligned metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<FeatureMatrix>,
    pub meta: Vec<SampleMeta>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.meta.len();
        if self.features.is_empty() {
            return Err(Error::ShapeMismatch("dataset has no backbones".into()));
        }
        for (m, f) in self.features.iter().enumerate() {
            if f.rows() != n {
                return Err(Error::ShapeMismatch(format!(
                    "backbone {m} has {} rows, metadata has {n}",
                    f.rows()
                )));
            }
        }
        for (i, meta) in self.meta.iter().enumerate() {
            if meta.sample_index != i {
                return Err(Error::Format(format!(
                    "sample index {} at position {i}; indices must be contiguous from 0",
                    meta.sample_index
                )));
            }
        }
        Ok(())
    }

    /// Samples `indices`, renumbered from 0 in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.iter().map(|f| f.select_rows(indices)).collect(),
            meta: indices
                .iter()
                .enumerate()
                .map(|(new, &old)| SampleMeta {
                    sample_index: new,
                    ..self.meta[old].clone()
                })
                .collect(),
        }
    }

    /// Splits by identity into disjoint train / query / gallery sets.
    ///
    /// Identities are taken in order of first appearance: the first
    /// `train_identities` go to training. For each remaining identity the
    /// first sample seen on each camera becomes a query and everything else
    /// goes to the gallery.
    pub fn split_by_identity(&self, train_identities: usize) -> Result<(Dataset, Dataset, Dataset)> {
        let mut order: Vec<&str> = Vec::new();
        for (i, m) in self.meta.iter().enumerate() {
            let id = m.identity.as_deref().ok_or(Error::MissingTruth(i))?;
            if !order.contains(&id) {
                order.push(id);
            }
        }
        if train_identities >= order.len() {
            return Err(Error::Param(format!(
                "{train_identities} training identities leaves none of {} for testing",
                order.len()
            )));
        }
        let train_ids = &order[..train_identities];
        let (mut train, mut query, mut gallery) = (Vec::new(), Vec::new(), Vec::new());
        let mut seen: Vec<(&str, Option<&str>)> = Vec::new();
        for (i, m) in self.meta.iter().enumerate() {
            let id = m.identity.as_deref().unwrap();
            if train_ids.contains(&id) {
                train.push(i);
                continue;
            }
            let key = (id, m.camera.as_deref());
            if seen.contains(&key) {
                gallery.push(i);
            } else {
                seen.push(key);
                query.push(i);
            }
        }
        Ok((self.subset(&train), self.subset(&query), self.subset(&gallery)))
    }
}

/// Draws a synthetic dataset.
///
/// Identity centers are Gaussian in latent space, scaled so two centers are
/// `separation` apart on average. Each sample is its center plus isotropic
/// noise of expected norm `noise_sigma`. Backbone `m` applies its own fixed
/// random, roughly norm-preserving linear map into `feature_dim` dimensions,
/// adds `N(0, noise_sigma²)` to every output coordinate, and normalizes rows.
/// Most of the output noise lies outside the map's image, so a linear
/// encoder can learn to suppress it. Cameras are assigned round-robin within each
/// identity. Samples are ordered identity-major.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let latent = spec.latent_dim;
    let n = spec.num_identities * spec.samples_per_identity;
    let center_scale = spec.separation / (2.0 * latent as f64).sqrt();

    let mut center_rng = rng::stream(spec.seed, Purpose::Synthetic, 0, 0);
    let centers: Vec<Vec<f64>> = (0..spec.num_identities)
        .map(|_| gaussian_vec(&mut center_rng, latent, center_scale))
        .collect();

    let mut sample_rng = rng::stream(spec.seed, Purpose::Synthetic, 1, 0);
    let mut latents = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for (id, center) in centers.iter().enumerate() {
        for s in 0..spec.samples_per_identity {
            let noise = gaussian_vec(&mut sample_rng, latent, spec.noise_sigma / (latent as f64).sqrt());
            latents.push(center.iter().zip(&noise).map(|(c, e)| c + e).collect::<Vec<f64>>());
            meta.push(SampleMeta {
                sample_index: meta.len(),
                identity: Some(id.to_string()),
                camera: Some(format!("c{}", s % spec.num_cameras)),
            });
        }
    }

    let map_scale = 1.0 / (spec.feature_dim as f64).sqrt();
    let mut features = Vec::with_capacity(spec.num_backbones);
    for m in 0..spec.num_backbones {
        let mut map_rng = rng::stream(spec.seed, Purpose::Synthetic, 2, m);
        let map = gaussian_vec(&mut map_rng, spec.feature_dim * latent, map_scale);
        let mut noise_rng = rng::stream(spec.seed, Purpose::Synthetic, 3, m);
        let mut data = Vec::with_capacity(n * spec.feature_dim);
        for z in &latents {
            for k in 0..spec.feature_dim {
                let proj: f64 = map[k * latent..(k + 1) * latent]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a * b)
                    .sum();
                let eps: f64 = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                data.push((proj + eps) as f32);
            }
        }
        let raw = FeatureMatrix::new(n, spec.feature_dim, data, m)?;
        features.push(l2_normalize_rows(&raw)?);
    }
    Ok(Dataset { features, meta })
}

fn gaussian_vec(rng: &mut rng::Rng, len: usize, scale: f64) -> Vec<f64> {
    StandardNormal
        .sample_iter(rng)
        .take(len)
        .map(|x: f64| x * scale)
        .collect()
}

const EMBF_MAGIC: &[u8; 4] = b"EMBF";
const EMBF_VERSION: u32 = 1;

pub fn encode_features(f: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + f.data.len() * 4);
    out.extend_from_slice(EMBF_MAGIC);
    binio::put_u32(&mut out, EMBF_VERSION);
    binio::put_u32(&mut out, binio::checked_u32(f.rows, "rows")?);
    binio::put_u32(&mut out, binio::checked_u32(f.dim, "dim")?);
    binio::put_f32s(&mut out, &f.data);
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut cur = Cursor::new(bytes, "EMBF");
    cur.magic(EMBF_MAGIC)?;
    let version = cur.u32()?;
    if version != EMBF_VERSION {
        return Err(Error::Format(format!("EMBF: unsupported version {version}")));
    }
    let rows = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let expected = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("EMBF: size overflow".into()))?;
    let body = bytes.len() - 16;
    if body != expected * 4 {
        return Err(Error::Format(format!(
            "EMBF: header says {rows}x{dim} ({} bytes) but body has {body} bytes",
            expected * 4
        )));
    }
    let data = cur.f32s(expected)?;
    cur.finish()?;
    FeatureMatrix::new(rows, dim, data, 0)
}

pub fn save_features(f: &FeatureMatrix, path: &Path) -> Result<()> {
    fs::write(path, encode_features(f)?)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&fs::read(path)?)
}

pub fn backbone_file(dir: &Path, m: usize) -> PathBuf {
    dir.join(format!("backbone_{m}.embf"))
}

/// Writes `backbone_<m>.embf` for each backbone.
pub fn save_backbones(dir: &Path, features: &[FeatureMatrix]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (m, f) in features.iter().enumerate() {
        save_features(f, &backbone_file(dir, m))?;
    }
    Ok(())
}

/// Reads `backbone_0.embf`, `backbone_1.embf`, ... until the first gap.
pub fn load_backbones(dir: &Path) -> Result<Vec<FeatureMatrix>> {
    let mut out = Vec::new();
    loop {
        let path = backbone_file(dir, out.len());
        if !path.exists() {
            break;
        }
        let m = out.len();
        out.push(load_features(&path)?.with_backbone_id(m));
    }
    if out.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no backbone_0.embf in {}",
            dir.display()
        )));
    }
    if out.iter().any(|f| f.rows() != out[0].rows()) {
        return Err(Error::ShapeMismatch(format!(
            "backbones in {} disagree on sample count",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn encode_meta(meta: &[SampleMeta]) -> String {
    let mut out = String::new();
    for m in meta {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            m.sample_index,
            m.identity.as_deref().unwrap_or("-"),
            m.camera.as_deref().unwrap_or("-")
        );
    }
    out
}

pub fn decode_meta(text: &str) -> Result<Vec<SampleMeta>> {
    let field = |s: &str| (s != "-").then(|| s.to_string());
    text.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(ordinal, line)| {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!(
                    "metadata line {}: expected 3 tab-separated fields, got {}",
                    ordinal + 1,
                    parts.len()
                )));
            }
            let index: usize = parts[0].parse().map_err(|_| {
                Error::Format(format!("metadata line {}: bad index `{}`", ordinal + 1, parts[0]))
            })?;
            if index != ordinal {
                return Err(Error::Format(format!(
                    "metadata line {}: index {index} breaks the contiguous 0-based ordering",
                    ordinal + 1
                )));
            }
            Ok(SampleMeta {
                sample_index: index,
                identity: field(parts[1]),
                camera: field(parts[2]),
            })
        })
        .collect()
}

pub fn save_meta(meta: &[SampleMeta], path: &Path) -> Result<()> {
    fs::write(path, encode_meta(meta))?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<Vec<SampleMeta>> {
    decode_meta(&fs::read_to_string(path)?)
}

/// Writes the backbones plus `meta.tsv` into `dir`.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    save_backbones(dir, &data.features)?;
    save_meta(&data.meta, &dir.join("meta.tsv"))
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let data = Dataset {
        features: load_backbones(dir)?,
        meta: load_meta(&dir.join("meta.tsv"))?,
    };
    data.validate()?;
    Ok(data)
}

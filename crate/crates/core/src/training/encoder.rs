//! Shallow affine encoder `f = normalize(xW + b)` with an EMA teacher copy.

use std::fs;
use std::path::Path;

use crate::binio::{self, Cursor};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// `W` is `d_in × d_out` row-major, `b` has `d_out` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            d_in: dim,
            d_out: dim,
            w,
            b: vec![0.0; dim],
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            w: vec![0.0; d_in * d_out],
            b: vec![0.0; d_out],
        }
    }

    fn same_shape(&self, other: &Affine) -> bool {
        self.d_in == other.d_in && self.d_out == other.d_out
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

/// Gradient of a loss with respect to an [`Affine`].
pub type AffineGrad = Affine;

/// Outputs of a forward pass plus what the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub dim: usize,
    /// Unit-norm outputs, `rows × d_out`.
    pub out: Vec<f64>,
    /// Pre-normalization norms.
    pub norms: Vec<f64>,
}

/// Trainable weights θ and momentum weights Θ of one backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub backbone_id: usize,
    pub weights: Affine,
    pub momentum: Affine,
}

impl EncoderState {
    /// θ = Θ = identity map.
    pub fn identity(backbone_id: usize, dim: usize) -> Self {
        let weights = Affine::identity(dim);
        Self {
            backbone_id,
            momentum: weights.clone(),
            weights,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.d_in
    }

    pub fn d_out(&self) -> usize {
        self.weights.d_out
    }

    /// θ ← θ − lr · (grad + weight_decay · θ)
    pub fn sgd_step(&mut self, grads: &AffineGrad, lr: f64, weight_decay: f64) -> Result<()> {
        if !self.weights.same_shape(grads) {
            return Err(Error::ShapeMismatch("gradient shape differs from weights".into()));
        }
        for (theta, g) in self.weights.values_mut().zip(grads.values()) {
            *theta -= lr * (g + weight_decay * *theta);
        }
        Ok(())
    }

    /// Θ ← β · Θ + (1 − β) · θ
    pub fn ema_update(&mut self, beta: f64) -> Result<()> {
        if !self.weights.same_shape(&self.momentum) {
            return Err(Error::ShapeMismatch("momentum shape differs from weights".into()));
        }
        for (m, theta) in self.momentum.values_mut().zip(self.weights.values()) {
            *m = beta * *m + (1.0 - beta) * theta;
        }
        Ok(())
    }
}

/// Runs `rows × d_in` inputs through `params`.
pub fn forward(params: &Affine, x: &[f64]) -> Result<Forward> {
    let (d_in, d_out) = (params.d_in, params.d_out);
    if d_in == 0 || !x.len().is_multiple_of(d_in) {
        return Err(Error::ShapeMismatch(format!(
            "{} input values for input dim {d_in}",
            x.len()
        )));
    }
    let rows = x.len() / d_in;
    let mut out = Vec::with_capacity(rows * d_out);
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let mut z = params.b.clone();
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (zk, wk) in z.iter_mut().zip(&params.w[i * d_out..(i + 1) * d_out]) {
                *zk += xi * wk;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::ZeroVectorRow(r));
        }
        out.extend(z.iter().map(|v| v / norm));
        norms.push(norm);
    }
    Ok(Forward {
        dim: d_out,
        out,
        norms,
    })
}

/// Chains `grad_out` (∂L/∂f, same layout as `fwd.out`) back through the
/// normalization and the affine map.
pub fn backward(params: &Affine, x: &[f64], fwd: &Forward, grad_out: &[f64]) -> Result<AffineGrad> {
    let (d_in, d_out) = (params.d_in, params.d_out);
    if grad_out.len() != fwd.out.len() || x.len() != fwd.norms.len() * d_in {
        return Err(Error::ShapeMismatch("backward inputs disagree with forward pass".into()));
    }
    let mut g = Affine::zeros(d_in, d_out);
    let mut gz = vec![0.0; d_out];
    for (r, &norm) in fwd.norms.iter().enumerate() {
        let f = &fwd.out[r * d_out..(r + 1) * d_out];
        let gf = &grad_out[r * d_out..(r + 1) * d_out];
        let radial: f64 = f.iter().zip(gf).map(|(a, b)| a * b).sum();
        for k in 0..d_out {
            gz[k] = (gf[k] - f[k] * radial) / norm;
            g.b[k] += gz[k];
        }
        for (i, &xi) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gw, gzk) in g.w[i * d_out..(i + 1) * d_out].iter_mut().zip(&gz) {
                *gw += xi * gzk;
            }
        }
    }
    Ok(g)
}

fn widen(f: &FeatureMatrix) -> Vec<f64> {
    f.data().iter().map(|&v| f64::from(v)).collect()
}

/// Encodes `raw` with `params` into a normalized feature matrix.
pub fn encode(params: &Affine, raw: &FeatureMatrix) -> Result<FeatureMatrix> {
    if raw.dim() != params.d_in {
        return Err(Error::ShapeMismatch(format!(
            "input dim {} vs encoder dim {}",
            raw.dim(),
            params.d_in
        )));
    }
    let fwd = forward(params, &widen(raw))?;
    FeatureMatrix::new(
        raw.rows(),
        params.d_out,
        fwd.out.iter().map(|&v| v as f32).collect(),
        raw.backbone_id(),
    )
}

/// Features from the trainable weights θ.
pub fn encoder_forward(state: &EncoderState, raw: &FeatureMatrix) -> Result<FeatureMatrix> {
    encode(&state.weights, raw)
}

/// Weight gradients of θ given ∂L/∂f for every row of `raw`.
pub fn encoder_backward(state: &EncoderState, raw: &FeatureMatrix, grad_out: &[f64]) -> Result<AffineGrad> {
    let x = widen(raw);
    let fwd = forward(&state.weights, &x)?;
    backward(&state.weights, &x, &fwd, grad_out)
}

const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const CKPT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, backbone id, `d_in`, `d_out`,
/// iteration, then θ (W, b) and Θ (W, b) as little-endian `f64`.
pub fn encode_checkpoint(state: &EncoderState, iteration: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    binio::put_u32(&mut out, CKPT_VERSION);
    binio::put_u32(&mut out, binio::checked_u32(state.backbone_id, "backbone_id")?);
    binio::put_u32(&mut out, binio::checked_u32(state.d_in(), "d_in")?);
    binio::put_u32(&mut out, binio::checked_u32(state.d_out(), "d_out")?);
    binio::put_u32(&mut out, binio::checked_u32(iteration, "iteration")?);
    for a in [&state.weights, &state.momentum] {
        binio::put_f64s(&mut out, &a.w);
        binio::put_f64s(&mut out, &a.b);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderState, usize)> {
    let mut cur = Cursor::new(bytes, "CKPT");
    cur.magic(CKPT_MAGIC)?;
    let version = cur.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("CKPT: unsupported version {version}")));
    }
    let backbone_id = cur.u32()? as usize;
    let d_in = cur.u32()? as usize;
    let d_out = cur.u32()? as usize;
    let iteration = cur.u32()? as usize;
    let mut read = || -> Result<Affine> {
        Ok(Affine {
            d_in,
            d_out,
            w: cur.f64s(d_in * d_out)?,
            b: cur.f64s(d_out)?,
        })
    };
    let weights = read()?;
    let momentum = read()?;
    cur.finish()?;
    Ok((
        EncoderState {
            backbone_id,
            weights,
            momentum,
        },
        iteration,
    ))
}

pub fn save_checkpoint(state: &EncoderState, iteration: usize, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(state, iteration)?)?;
    Ok(())
}

/// Any failure, including a missing file, is reported as a corrupt checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(EncoderState, usize)> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| corrupt(e.to_string()))?;
    decode_checkpoint(&bytes).map_err(|e| corrupt(e.to_string()))
}

//! Cluster-proxy softmax loss and batch-hard softmax-triplet loss.
//!
//! Batch features are `|B| × dim` row-major `f64`. Each loss returns its
//! value (mean over the batch) and the gradient with respect to every batch
//! feature. Proxies are constants.

use crate::error::{Error, Result};

use super::proxy::ProxySet;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Same layout as the batch features.
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub proxy: f64,
    /// `None` when the hard term is switched off.
    pub hard: Option<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_shape(feats: &[f64], dim: usize, labels: &[usize]) -> Result<usize> {
    if dim == 0 || feats.len() != labels.len() * dim {
        return Err(Error::ShapeMismatch(format!(
            "{} feature values for {} labels of dim {dim}",
            feats.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    Ok(labels.len())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax cross-entropy of each sample against all cluster proxies at
/// temperature `tau`, averaged over the batch.
pub fn loss_proxy(feats: &[f64], dim: usize, labels: &[usize], proxies: &ProxySet, tau: f64) -> Result<LossOutput> {
    let n = check_shape(feats, dim, labels)?;
    if proxies.dim != dim {
        return Err(Error::ShapeMismatch(format!(
            "proxy dim {} vs feature dim {dim}",
            proxies.dim
        )));
    }
    let c = proxies.len();
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            num_proxies: c,
        });
    }
    let scale = 1.0 / (tau * n as f64);
    let mut value = 0.0;
    let mut grad = vec![0.0; feats.len()];
    let mut logits = vec![0.0; c];
    for (i, &label) in labels.iter().enumerate() {
        let f = &feats[i * dim..(i + 1) * dim];
        for (j, z) in logits.iter_mut().enumerate() {
            *z = dot(f, proxies.proxy(j)) / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        value += sum.ln() + (max - logits[label]);

        let g = &mut grad[i * dim..(i + 1) * dim];
        for (j, z) in logits.iter().enumerate() {
            let weight = (z - max).exp() / sum - if j == label { 1.0 } else { 0.0 };
            for (gk, pk) in g.iter_mut().zip(proxies.proxy(j)) {
                *gk += scale * weight * pk;
            }
        }
    }
    Ok(LossOutput {
        value: value / n as f64,
        grad,
    })
}

/// Hardest positive (lowest similarity, same label, not itself) and hardest
/// negative (highest similarity, other label) of sample `i`. Ties go to the
/// lowest batch position.
pub fn hard_pair(feats: &[f64], dim: usize, labels: &[usize], i: usize) -> Result<(usize, usize)> {
    let f = &feats[i * dim..(i + 1) * dim];
    let mut pos: Option<(usize, f64)> = None;
    let mut neg: Option<(usize, f64)> = None;
    for (j, &l) in labels.iter().enumerate() {
        if j == i {
            continue;
        }
        let s = dot(f, &feats[j * dim..(j + 1) * dim]);
        if l == labels[i] {
            if pos.is_none_or(|(_, best)| s < best) {
                pos = Some((j, s));
            }
        } else if neg.is_none_or(|(_, best)| s > best) {
            neg = Some((j, s));
        }
    }
    match (pos, neg) {
        (Some((p, _)), Some((q, _))) => Ok((p, q)),
        (None, _) => Err(Error::DegenerateBatch(format!(
            "label {} has a single member in the batch",
            labels[i]
        ))),
        (_, None) => Err(Error::DegenerateBatch("only one cluster in the batch".into())),
    }
}

/// Two-way softmax between each sample's hardest positive and hardest
/// negative, averaged over the batch. The selections are held fixed when
/// differentiating.
pub fn loss_hard(feats: &[f64], dim: usize, labels: &[usize], tau: f64) -> Result<LossOutput> {
    let n = check_shape(feats, dim, labels)?;
    let scale = 1.0 / (tau * n as f64);
    let mut value = 0.0;
    let mut grad = vec![0.0; feats.len()];
    for i in 0..n {
        let (p, q) = hard_pair(feats, dim, labels, i)?;
        let row = |k: usize| &feats[k * dim..(k + 1) * dim];
        let (fi, fp, fq) = (row(i), row(p), row(q));
        let margin = (dot(fi, fq) - dot(fi, fp)) / tau;
        value += softplus(margin);
        let s = sigmoid(margin);
        for k in 0..dim {
            grad[i * dim + k] += scale * s * (fq[k] - fp[k]);
            grad[p * dim + k] -= scale * s * fi[k];
            grad[q * dim + k] += scale * s * fi[k];
        }
    }
    Ok(LossOutput {
        value: value / n as f64,
        grad,
    })
}

/// `loss_proxy + lambda · loss_hard`. With `lambda == 0` the hard term is
/// skipped and the result equals [`loss_proxy`] exactly.
pub fn loss_total(
    feats: &[f64],
    dim: usize,
    labels: &[usize],
    proxies: &ProxySet,
    tau: f64,
    lambda: f64,
) -> Result<TotalLoss> {
    let proxy = loss_proxy(feats, dim, labels, proxies, tau)?;
    if lambda == 0.0 {
        return Ok(TotalLoss {
            value: proxy.value,
            grad: proxy.grad,
            proxy: proxy.value,
            hard: None,
        });
    }
    let hard = loss_hard(feats, dim, labels, tau)?;
    let grad = proxy
        .grad
        .iter()
        .zip(&hard.grad)
        .map(|(a, b)| a + lambda * b)
        .collect();
    Ok(TotalLoss {
        value: proxy.value + lambda * hard.value,
        grad,
        proxy: proxy.value,
        hard: Some(hard.value),
    })
}

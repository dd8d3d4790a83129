//! One iteration of training for a single backbone: `epochs_per_iteration`
//! proxy refreshes, each followed by a pass over freshly drawn PK batches.

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::Rng;

use super::batch::{make_batches, Batch};
use super::config::PipelineConfig;
use super::encoder::{backward, encoder_forward, forward, EncoderState};
use super::loss::loss_total;
use super::proxy::{select_proxies, ProxySet};

/// Loss-related hyper-parameters of a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub tau: f64,
    pub lambda_hard: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta: f64,
}

impl StepParams {
    pub fn from_config(cfg: &PipelineConfig, lr: f64) -> Self {
        Self {
            tau: cfg.tau,
            lambda_hard: cfg.lambda_hard,
            lr,
            weight_decay: cfg.weight_decay,
            beta: cfg.beta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean total loss over the epoch's batches, measured before each step.
    pub mean_loss: f64,
    pub steps: usize,
}

fn batch_inputs(raw: &FeatureMatrix, batch: &Batch) -> Vec<f64> {
    batch
        .sample_indices
        .iter()
        .flat_map(|&i| raw.row(i).iter().map(|&v| f64::from(v)))
        .collect()
}

/// Loss of `state` on `batch` without updating anything.
pub fn batch_loss(state: &EncoderState, raw: &FeatureMatrix, batch: &Batch, proxies: &ProxySet, params: &StepParams) -> Result<f64> {
    let x = batch_inputs(raw, batch);
    let fwd = forward(&state.weights, &x)?;
    Ok(loss_total(&fwd.out, fwd.dim, &batch.cluster_ids, proxies, params.tau, params.lambda_hard)?.value)
}

/// Forward, loss, backward, SGD and EMA on one batch. Returns the loss
/// before the update.
pub fn train_step(
    state: &mut EncoderState,
    raw: &FeatureMatrix,
    batch: &Batch,
    proxies: &ProxySet,
    params: &StepParams,
) -> Result<f64> {
    let x = batch_inputs(raw, batch);
    let fwd = forward(&state.weights, &x)?;
    let loss = loss_total(&fwd.out, fwd.dim, &batch.cluster_ids, proxies, params.tau, params.lambda_hard)?;
    if !loss.value.is_finite() {
        return Err(Error::DegenerateBatch(format!("non-finite loss {}", loss.value)));
    }
    let grads = backward(&state.weights, &x, &fwd, &loss.grad)?;
    state.sgd_step(&grads, params.lr, params.weight_decay)?;
    state.ema_update(params.beta)?;
    Ok(loss.value)
}

/// Runs [`train_step`] over `batches` in order; returns the mean loss.
pub fn train_on_batches(
    state: &mut EncoderState,
    raw: &FeatureMatrix,
    batches: &[Batch],
    proxies: &ProxySet,
    params: &StepParams,
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::DegenerateBatch("no batches".into()));
    }
    let mut total = 0.0;
    for b in batches {
        total += train_step(state, raw, b, proxies, params)?;
    }
    Ok(total / batches.len() as f64)
}

/// Trains one backbone for `cfg.epochs_per_iteration` epochs against the
/// pseudo-labels in `assign`. Proxies are re-drawn from the current θ
/// features at the start of every epoch. Errors carry `iteration` and the
/// failing epoch.
pub fn train_iteration(
    state: &mut EncoderState,
    raw: &FeatureMatrix,
    assign: &ClusterAssignment,
    cfg: &PipelineConfig,
    iteration: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Vec<EpochStats>> {
    let params = StepParams::from_config(cfg, lr);
    let mut stats = Vec::with_capacity(cfg.epochs_per_iteration);
    for epoch in 1..=cfg.epochs_per_iteration {
        let mut run = || -> Result<EpochStats> {
            let snapshot = encoder_forward(state, raw)?;
            let proxies = select_proxies(assign, &snapshot, cfg.proxy_mode, rng)?;
            let batches = make_batches(assign, rng, cfg.clusters_per_batch, cfg.samples_per_cluster)?;
            let mean_loss = train_on_batches(state, raw, &batches, &proxies, &params)?;
            Ok(EpochStats {
                epoch,
                mean_loss,
                steps: batches.len(),
            })
        };
        stats.push(run().map_err(|e| e.at(iteration, Some(epoch)))?);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic, SyntheticSpec};
    use crate::rng;

    fn blobs() -> (FeatureMatrix, ClusterAssignment) {
        let spec = SyntheticSpec {
            num_identities: 6,
            samples_per_identity: 8,
            num_backbones: 1,
            noise_sigma: 0.3,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let labels = (0..data.len()).map(|i| Some(i / 8)).collect();
        let assign = ClusterAssignment {
            labels,
            num_clusters: 6,
            epsilon_trace: vec![],
        };
        (data.features[0].clone(), assign)
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            clusters_per_batch: 3,
            samples_per_cluster: 4,
            epochs_per_iteration: 3,
            lr_base: 0.5,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn one_epoch_lowers_loss_on_fixed_batches() {
        let (raw, assign) = blobs();
        let cfg = small_config();
        let mut r = rng::seeded(3);
        let mut state = EncoderState::identity(0, raw.dim());
        let proxies = select_proxies(&assign, &encoder_forward(&state, &raw).unwrap(), cfg.proxy_mode, &mut r).unwrap();
        let batches = make_batches(&assign, &mut r, 3, 4).unwrap();
        let params = StepParams::from_config(&cfg, 0.05);
        let before: f64 = batches.iter().map(|b| batch_loss(&state, &raw, b, &proxies, &params).unwrap()).sum();
        train_on_batches(&mut state, &raw, &batches, &proxies, &params).unwrap();
        let after: f64 = batches.iter().map(|b| batch_loss(&state, &raw, b, &proxies, &params).unwrap()).sum();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn iteration_is_deterministic_per_seed() {
        let (raw, assign) = blobs();
        let cfg = small_config();
        let run = |seed| {
            let mut s = EncoderState::identity(0, raw.dim());
            let stats = train_iteration(&mut s, &raw, &assign, &cfg, 1, 0.1, &mut rng::seeded(seed)).unwrap();
            (s, stats)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).0, run(6).0);
        assert_eq!(run(5).1.len(), 3);
        assert!(run(5).1.iter().all(|s| s.steps == 2));
    }

    #[test]
    fn errors_carry_the_epoch() {
        let (raw, assign) = blobs();
        let cfg = PipelineConfig {
            clusters_per_batch: 7,
            ..small_config()
        };
        let mut s = EncoderState::identity(0, raw.dim());
        let err = train_iteration(&mut s, &raw, &assign, &cfg, 4, 0.1, &mut rng::seeded(0)).unwrap_err();
        assert!(matches!(err, Error::Pipeline { iteration: 4, epoch: Some(1), .. }));
        assert!(matches!(err.root(), Error::TooFewClusters { clusters: 6, per_batch: 7 }));
    }
}

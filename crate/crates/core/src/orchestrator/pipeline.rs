use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::Rng as _;

use crate::clustering::{
    cluster_quality, ensemble_cluster, ensemble_cluster_shortcut, save_assignment, ClusterAssignment,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalSplit, RankingReport};
use crate::features::{load_backbones, load_dataset, load_meta, Dataset, FeatureMatrix, SampleMeta};
use crate::metricspace::{ensemble_distances, pairwise_euclidean_with, rerank_kreciprocal_with, DistanceMatrix};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};
use crate::training::encoder::{load_checkpoint, save_checkpoint};
use crate::training::{
    encoder_forward, learning_rate, train_iteration, ClusterPath, EncoderState, LrSchedule, PipelineConfig,
};

use super::manifest::{
    load_timings, save_timings, BackboneRecord, EpochRecord, IterationRecord, IterationTimings, RunInputs,
    RunManifest,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Evaluate on the query/gallery inputs every `n` iterations and after
    /// the last one.
    pub eval_every: Option<usize>,
    /// Stop (resumably) once this many iterations are complete.
    pub stop_after: Option<usize>,
    pub exec: Execution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResumeOutcome {
    /// Every iteration was already done; nothing ran.
    AlreadyComplete,
    /// Continued after this many completed iterations.
    Continued { from: usize },
}

pub fn checkpoint_path(run_dir: &Path, iteration: usize, backbone: usize) -> PathBuf {
    run_dir
        .join("ckpt")
        .join(format!("iter_{iteration:03}_backbone_{backbone}.ckpt"))
}

pub fn clusters_path(run_dir: &Path, iteration: usize) -> PathBuf {
    run_dir.join("clusters").join(format!("iter_{iteration:03}.tsv"))
}

struct Inputs {
    raw: Vec<FeatureMatrix>,
    meta: Vec<SampleMeta>,
    split: Option<EvalSplit>,
}

fn take_backbones(mut data: Dataset, m: usize, what: &Path) -> Result<Dataset> {
    if data.features.len() < m {
        return Err(Error::Config(format!(
            "num_backbones = {m} but {} holds {}",
            what.display(),
            data.features.len()
        )));
    }
    data.features.truncate(m);
    data.validate()?;
    Ok(data)
}

impl Inputs {
    fn load(cfg: &PipelineConfig, inputs: &RunInputs, eval: bool) -> Result<Self> {
        let train = Dataset {
            features: load_backbones(&inputs.features)?,
            meta: load_meta(&inputs.meta)?,
        };
        let train = take_backbones(train, cfg.num_backbones, &inputs.features)?;
        let split = if eval {
            let (Some(q), Some(g)) = (&inputs.query, &inputs.gallery) else {
                return Err(Error::Config("evaluation needs both query and gallery sets".into()));
            };
            let split = EvalSplit {
                query: take_backbones(load_dataset(q)?, cfg.num_backbones, q)?,
                gallery: take_backbones(load_dataset(g)?, cfg.num_backbones, g)?,
            };
            split.validate()?;
            Some(split)
        } else {
            None
        };
        Ok(Self {
            raw: train.features,
            meta: train.meta,
            split,
        })
    }
}

/// Replaces the pseudo-label of `round(fraction · inliers)` randomly chosen
/// clustered samples with a different random cluster. A sample is left alone
/// when moving it would empty its cluster. Returns the new assignment and
/// the number of labels changed.
pub fn inject_label_noise(
    assign: &ClusterAssignment,
    fraction: f64,
    rng: &mut rng::Rng,
) -> Result<(ClusterAssignment, usize)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Param(format!("label noise fraction {fraction} outside [0, 1)")));
    }
    let c = assign.num_clusters;
    let inliers: Vec<usize> = (0..assign.len()).filter(|&i| !assign.is_outlier(i)).collect();
    let count = (fraction * inliers.len() as f64).round() as usize;
    let mut out = assign.clone();
    if count == 0 || c < 2 {
        return Ok((out, 0));
    }
    let mut sizes = assign.cluster_sizes();
    let mut changed = 0;
    for k in index::sample(rng, inliers.len(), count).into_vec() {
        let i = inliers[k];
        let old = out.labels[i].unwrap();
        let mut new = rng.random_range(0..c - 1);
        if new >= old {
            new += 1;
        }
        if sizes[old] > 1 {
            sizes[old] -= 1;
            sizes[new] += 1;
            out.labels[i] = Some(new);
            changed += 1;
        }
    }
    Ok((out, changed))
}

fn cluster_step(
    encoded: &[FeatureMatrix],
    cfg: &PipelineConfig,
    exec: Execution,
) -> Result<(ClusterAssignment, f64, f64)> {
    let start = Instant::now();
    let params = cfg.rerank_params();
    let reranked = encoded
        .iter()
        .map(|f| rerank_kreciprocal_with(&pairwise_euclidean_with(f, exec), &params, exec))
        .collect::<Result<Vec<DistanceMatrix>>>()?;
    let d = ensemble_distances(&reranked)?;
    let distances = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let assign = match cfg.cluster_path {
        ClusterPath::Shortcut => ensemble_cluster_shortcut(&d, cfg.eps_min(), cfg.eps_max(), cfg.min_pts)?,
        ClusterPath::Grid => ensemble_cluster(&d, &cfg.eps_list, cfg.min_pts)?,
    };
    Ok((assign, distances, start.elapsed().as_secs_f64()))
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    data: &'a Inputs,
    eval_every: Option<usize>,
    exec: Execution,
}

impl Run<'_> {
    fn iteration(
        &self,
        t: usize,
        states: &mut [EncoderState],
    ) -> Result<(IterationRecord, ClusterAssignment, IterationTimings)> {
        let cfg = self.cfg;
        let mut timings = IterationTimings {
            iteration: t,
            ..IterationTimings::default()
        };
        let at = |e: Error| e.at(t, None);

        let start = Instant::now();
        let encoded = par::map_range(states.len(), self.exec, |m| encoder_forward(&states[m], &self.data.raw[m]))
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(at)?;
        timings.encode = start.elapsed().as_secs_f64();

        let (mut assign, distances, clustering) = cluster_step(&encoded, cfg, self.exec).map_err(at)?;
        timings.distances = distances;
        timings.clustering = clustering;
        let mut noisy_labels = 0;
        if cfg.label_noise > 0.0 {
            let mut noise_rng = rng::stream(cfg.seed, Purpose::LabelNoise, t, 0);
            (assign, noisy_labels) = inject_label_noise(&assign, cfg.label_noise, &mut noise_rng).map_err(at)?;
        }
        let quality = if self.data.meta.iter().all(|m| m.identity.is_some()) {
            Some(cluster_quality(&assign, &self.data.meta).map_err(at)?)
        } else {
            None
        };

        let lr = learning_rate(t, &LrSchedule::new(cfg.lr_base, cfg.iterations)).map_err(at)?;
        let mut warning = None;
        let mut backbones = Vec::new();
        let start = Instant::now();
        if assign.num_clusters < cfg.clusters_per_batch {
            warning = Some(format!(
                "{} clusters < P = {}; training skipped",
                assign.num_clusters, cfg.clusters_per_batch
            ));
        } else {
            let data = self.data;
            let results = par::map_mut(states, self.exec, |m, state| {
                let mut r = rng::stream(cfg.seed, Purpose::Training, t, m);
                train_iteration(state, &data.raw[m], &assign, cfg, t, lr, &mut r)
            });
            for (m, stats) in results.into_iter().enumerate() {
                let epochs: Vec<EpochRecord> = stats?
                    .into_iter()
                    .map(|s| EpochRecord {
                        epoch: s.epoch,
                        mean_loss: s.mean_loss,
                        steps: s.steps,
                    })
                    .collect();
                backbones.push(BackboneRecord {
                    backbone: m,
                    steps: epochs.iter().map(|e| e.steps).sum(),
                    epochs,
                });
            }
        }
        timings.training = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let due = self
            .eval_every
            .is_some_and(|n| t.is_multiple_of(n) || t == cfg.iterations);
        let evaluation = match (&self.data.split, due) {
            (Some(split), true) => Some(evaluate(split, states, cfg.eval_weights, self.exec).map_err(at)?),
            _ => None,
        };
        timings.evaluation = start.elapsed().as_secs_f64();

        let record = IterationRecord {
            iteration: t,
            lr,
            num_clusters: assign.num_clusters,
            num_outliers: assign.num_outliers(),
            outlier_fraction: assign.outlier_fraction(),
            epsilon_trace: assign.epsilon_trace.clone(),
            noisy_labels,
            quality,
            warning,
            backbones,
            evaluation,
        };
        Ok((record, assign, timings))
    }

    fn drive(
        &self,
        run_dir: &Path,
        manifest: &mut RunManifest,
        states: &mut [EncoderState],
        stop_after: Option<usize>,
    ) -> Result<()> {
        let end = stop_after.map_or(self.cfg.iterations, |s| s.min(self.cfg.iterations));
        let mut timings = load_timings(run_dir);
        timings.retain(|x| x.iteration <= manifest.completed_iterations());
        for t in manifest.completed_iterations() + 1..=end {
            let (record, assign, timing) = self.iteration(t, states)?;
            for s in states.iter() {
                save_checkpoint(s, t, &checkpoint_path(run_dir, t, s.backbone_id))?;
            }
            save_assignment(&assign, &clusters_path(run_dir, t))?;
            manifest.iterations.push(record);
            // The manifest is written last: it marks the iteration complete.
            manifest.save(run_dir)?;
            timings.push(timing);
            save_timings(run_dir, &timings)?;
        }
        Ok(())
    }
}

/// Runs the pipeline from scratch into `run_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, inputs: &RunInputs, run_dir: &Path, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    if opts.eval_every == Some(0) {
        return Err(Error::Config("eval_every must be >= 1".into()));
    }
    let data = Inputs::load(cfg, inputs, opts.eval_every.is_some())?;
    fs::create_dir_all(run_dir.join("ckpt"))?;
    fs::create_dir_all(run_dir.join("clusters"))?;
    fs::write(run_dir.join("config.txt"), cfg.to_text())?;
    let _ = fs::remove_file(super::manifest::timings_path(run_dir));

    let mut manifest = RunManifest {
        config: cfg.clone(),
        inputs: inputs.clone(),
        eval_every: opts.eval_every,
        num_samples: data.meta.len(),
        iterations: Vec::new(),
    };
    let mut states: Vec<EncoderState> = data
        .raw
        .iter()
        .enumerate()
        .map(|(m, f)| EncoderState::identity(m, f.dim()))
        .collect();
    let run = Run {
        cfg,
        data: &data,
        eval_every: opts.eval_every,
        exec: opts.exec,
    };
    manifest.save(run_dir)?;
    run.drive(run_dir, &mut manifest, &mut states, opts.stop_after)?;
    Ok(manifest)
}

fn load_states(run_dir: &Path, manifest: &RunManifest, dims: &[usize]) -> Result<Vec<EncoderState>> {
    let t = manifest.completed_iterations();
    dims.iter()
        .enumerate()
        .map(|(m, &dim)| {
            if t == 0 {
                return Ok(EncoderState::identity(m, dim));
            }
            let path = checkpoint_path(run_dir, t, m);
            let (state, iteration) = load_checkpoint(&path)?;
            let problem = if state.backbone_id != m {
                Some(format!("backbone id {} where {m} was expected", state.backbone_id))
            } else if iteration != t {
                Some(format!("iteration {iteration} where {t} was expected"))
            } else if state.d_in() != dim {
                Some(format!("input dim {} but the features have {dim}", state.d_in()))
            } else {
                None
            };
            match problem {
                Some(reason) => Err(Error::CorruptCheckpoint { path, reason }),
                None => Ok(state),
            }
        })
        .collect()
}

/// Continues an interrupted run. Only `opts.exec` and `opts.stop_after` are
/// taken from `opts`; everything else comes from the manifest.
pub fn resume(run_dir: &Path, opts: &RunOptions) -> Result<(RunManifest, ResumeOutcome)> {
    let mut manifest = RunManifest::load(run_dir)?;
    if manifest.is_finished() {
        return Ok((manifest, ResumeOutcome::AlreadyComplete));
    }
    let cfg = manifest.config.clone();
    let data = Inputs::load(&cfg, &manifest.inputs, manifest.eval_every.is_some())?;
    let dims: Vec<usize> = data.raw.iter().map(|f| f.dim()).collect();
    let mut states = load_states(run_dir, &manifest, &dims)?;
    let from = manifest.completed_iterations();
    let run = Run {
        cfg: &cfg,
        data: &data,
        eval_every: manifest.eval_every,
        exec: opts.exec,
    };
    run.drive(run_dir, &mut manifest, &mut states, opts.stop_after)?;
    Ok((manifest, ResumeOutcome::Continued { from }))
}

/// Manifest plus the encoder states after the last completed iteration.
pub fn load_run_encoders(run_dir: &Path) -> Result<(RunManifest, Vec<EncoderState>)> {
    let manifest = RunManifest::load(run_dir)?;
    let t = manifest.completed_iterations();
    if t == 0 {
        return Err(Error::MissingArtifact(format!(
            "{} has no completed iteration",
            run_dir.display()
        )));
    }
    let states = (0..manifest.config.num_backbones)
        .map(|m| {
            let path = checkpoint_path(run_dir, t, m);
            let (state, _) = load_checkpoint(&path)?;
            Ok(state)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, states))
}

/// Scores a finished (or interrupted) run on query and gallery sets written
/// by `save_dataset`.
pub fn evaluate_run(run_dir: &Path, query: &Path, gallery: &Path, exec: Execution) -> Result<RankingReport> {
    let (manifest, states) = load_run_encoders(run_dir)?;
    let m = manifest.config.num_backbones;
    let split = EvalSplit {
        query: take_backbones(load_dataset(query)?, m, query)?,
        gallery: take_backbones(load_dataset(gallery)?, m, gallery)?,
    };
    evaluate(&split, &states, manifest.config.eval_weights, exec)
}

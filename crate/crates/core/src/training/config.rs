//! Pipeline hyper-parameters and their flat `key = value` file format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{validate_eps_list, DEFAULT_EPS_LIST, DEFAULT_MIN_PTS};
use crate::error::{Error, Result};
use crate::metricspace::{NeighborEncoding, RerankParams};

use super::proxy::ProxyMode;

/// Which weights produce evaluation features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalWeights {
    #[default]
    Momentum,
    Raw,
}

/// How Step 2 walks the radius list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterPath {
    /// Endpoints only.
    #[default]
    Shortcut,
    /// Every radius in the list.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub num_backbones: usize,
    pub eps_list: Vec<f64>,
    pub min_pts: usize,
    pub k1: usize,
    pub k2: usize,
    pub mix_weight: f64,
    pub tau: f64,
    pub lambda_hard: f64,
    pub beta: f64,
    pub lr_base: f64,
    pub weight_decay: f64,
    /// K1: outer pipeline iterations.
    pub iterations: usize,
    /// K2: proxy refreshes per iteration.
    pub epochs_per_iteration: usize,
    /// P
    pub clusters_per_batch: usize,
    /// K
    pub samples_per_cluster: usize,
    pub seed: u64,
    pub proxy_mode: ProxyMode,
    /// Fraction of clustered samples whose pseudo-label is replaced by a
    /// random other cluster before training. Ablation only.
    pub label_noise: f64,
    pub eval_weights: EvalWeights,
    pub cluster_path: ClusterPath,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_backbones: 3,
            eps_list: DEFAULT_EPS_LIST.to_vec(),
            min_pts: DEFAULT_MIN_PTS,
            k1: 30,
            k2: 6,
            mix_weight: 0.0,
            tau: 0.04,
            lambda_hard: 0.5,
            beta: 0.999,
            lr_base: 0.00035,
            weight_decay: 0.00035,
            iterations: 30,
            epochs_per_iteration: 7,
            clusters_per_batch: 16,
            samples_per_cluster: 12,
            seed: 0,
            proxy_mode: ProxyMode::Random,
            label_noise: 0.0,
            eval_weights: EvalWeights::Momentum,
            cluster_path: ClusterPath::Shortcut,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_backbones == 0 {
            return fail("num_backbones must be >= 1".into());
        }
        validate_eps_list(&self.eps_list).map_err(|e| Error::Config(e.to_string()))?;
        if self.min_pts == 0 {
            return fail("min_pts must be >= 1".into());
        }
        if self.k2 == 0 || self.k2 > self.k1 {
            return fail(format!("need 1 <= k2 <= k1, got k1 = {}, k2 = {}", self.k1, self.k2));
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return fail(format!("mix_weight = {} outside [0, 1]", self.mix_weight));
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau = {} must be > 0", self.tau));
        }
        if !(self.lambda_hard >= 0.0) {
            return fail(format!("lambda_hard = {} must be >= 0", self.lambda_hard));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail(format!("beta = {} outside [0, 1)", self.beta));
        }
        if !(self.lr_base > 0.0) {
            return fail(format!("lr_base = {} must be > 0", self.lr_base));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        if self.iterations == 0 || self.epochs_per_iteration == 0 {
            return fail("iterations and epochs_per_iteration must be >= 1".into());
        }
        if self.clusters_per_batch < 2 || self.samples_per_cluster < 2 {
            return fail(format!(
                "need P >= 2 and K >= 2, got P = {}, K = {}",
                self.clusters_per_batch, self.samples_per_cluster
            ));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail(format!("label_noise = {} outside [0, 1)", self.label_noise));
        }
        Ok(())
    }

    pub fn rerank_params(&self) -> RerankParams {
        RerankParams {
            k1: self.k1,
            k2: self.k2,
            mix_weight: self.mix_weight,
            encoding: NeighborEncoding::Gaussian,
        }
    }

    pub fn eps_min(&self) -> f64 {
        self.eps_list[0]
    }

    pub fn eps_max(&self) -> f64 {
        *self.eps_list.last().unwrap()
    }

    /// Parses flat `key = value` lines over the defaults. Unknown or
    /// repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        for (key, value) in key_values(text)? {
            match key.as_str() {
                "num_backbones" => c.num_backbones = parse_value(&key, &value)?,
                "eps_list" => {
                    c.eps_list = value
                        .split(',')
                        .map(|v| parse_value(&key, v.trim()))
                        .collect::<Result<_>>()?
                }
                "min_pts" => c.min_pts = parse_value(&key, &value)?,
                "k1" => c.k1 = parse_value(&key, &value)?,
                "k2" => c.k2 = parse_value(&key, &value)?,
                "mix_weight" => c.mix_weight = parse_value(&key, &value)?,
                "tau" => c.tau = parse_value(&key, &value)?,
                "lambda_hard" => c.lambda_hard = parse_value(&key, &value)?,
                "beta" => c.beta = parse_value(&key, &value)?,
                "lr_base" => c.lr_base = parse_value(&key, &value)?,
                "weight_decay" => c.weight_decay = parse_value(&key, &value)?,
                "iterations" => c.iterations = parse_value(&key, &value)?,
                "epochs_per_iteration" => c.epochs_per_iteration = parse_value(&key, &value)?,
                "clusters_per_batch" => c.clusters_per_batch = parse_value(&key, &value)?,
                "samples_per_cluster" => c.samples_per_cluster = parse_value(&key, &value)?,
                "seed" => c.seed = parse_value(&key, &value)?,
                "proxy_mode" => {
                    c.proxy_mode = match value.as_str() {
                        "random" => ProxyMode::Random,
                        "mean" => ProxyMode::Mean,
                        other => return Err(Error::Config(format!("proxy_mode: unknown mode `{other}`"))),
                    }
                }
                "label_noise" => c.label_noise = parse_value(&key, &value)?,
                "eval_weights" => {
                    c.eval_weights = match value.as_str() {
                        "momentum" => EvalWeights::Momentum,
                        "raw" => EvalWeights::Raw,
                        other => return Err(Error::Config(format!("eval_weights: unknown value `{other}`"))),
                    }
                }
                "cluster_path" => {
                    c.cluster_path = match value.as_str() {
                        "shortcut" => ClusterPath::Shortcut,
                        "grid" => ClusterPath::Grid,
                        other => return Err(Error::Config(format!("cluster_path: unknown value `{other}`"))),
                    }
                }
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Inverse of [`PipelineConfig::parse`].
    pub fn to_text(&self) -> String {
        let eps: Vec<String> = self.eps_list.iter().map(f64::to_string).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("num_backbones", self.num_backbones.to_string());
        kv("eps_list", eps.join(","));
        kv("min_pts", self.min_pts.to_string());
        kv("k1", self.k1.to_string());
        kv("k2", self.k2.to_string());
        kv("mix_weight", self.mix_weight.to_string());
        kv("tau", self.tau.to_string());
        kv("lambda_hard", self.lambda_hard.to_string());
        kv("beta", self.beta.to_string());
        kv("lr_base", self.lr_base.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("iterations", self.iterations.to_string());
        kv("epochs_per_iteration", self.epochs_per_iteration.to_string());
        kv("clusters_per_batch", self.clusters_per_batch.to_string());
        kv("samples_per_cluster", self.samples_per_cluster.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "proxy_mode",
            match self.proxy_mode {
                ProxyMode::Random => "random",
                ProxyMode::Mean => "mean",
            }
            .into(),
        );
        kv("label_noise", self.label_noise.to_string());
        kv(
            "eval_weights",
            match self.eval_weights {
                EvalWeights::Momentum => "momentum",
                EvalWeights::Raw => "raw",
            }
            .into(),
        );
        kv(
            "cluster_path",
            match self.cluster_path {
                ClusterPath::Shortcut => "shortcut",
                ClusterPath::Grid => "grid",
            }
            .into(),
        );
        s
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !seen.insert(k.clone()) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

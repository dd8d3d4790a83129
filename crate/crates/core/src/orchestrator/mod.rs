//! The iterative pipeline: encode, re-rank, ensemble, cluster, train, with
//! per-iteration checkpoints, resume and inspection of a run directory.
//!
//! A run directory holds
//!
//! * `config.txt` — the configuration snapshot in `key = value` form,
//! * `manifest.json` — [`RunManifest`], rewritten after every iteration,
//! * `timings.json` — wall-clock seconds per step, kept apart so manifests
//!   of identical runs are byte-identical,
//! * `clusters/iter_<t>.tsv` — the pseudo-labels of iteration `t`,
//! * `ckpt/iter_<t>_backbone_<m>.ckpt` — encoder state after iteration `t`.

mod inspect;
mod manifest;
mod pipeline;

pub use inspect::{inspect, InspectWhat};
pub use manifest::{
    BackboneRecord, EpochRecord, IterationRecord, IterationTimings, RunInputs, RunManifest,
};
pub use pipeline::{
    checkpoint_path, clusters_path, evaluate_run, inject_label_noise, load_run_encoders, resume,
    run_pipeline, ResumeOutcome, RunOptions,
};

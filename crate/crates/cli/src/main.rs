//! `plf` — command-line front end for the pseudo-labeling engine.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags or parameter
//! values), 2 on data and format errors. `PLF_THREADS` caps the worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use plf_core::clustering::{ensemble_cluster_shortcut, save_assignment};
use plf_core::features::{generate_synthetic, load_features, save_dataset, SyntheticSpec};
use plf_core::metricspace::{
    load_distances, pairwise_euclidean_with, rerank_kreciprocal_with, save_distances, RerankParams,
};
use plf_core::orchestrator::{
    evaluate_run, inspect, resume, run_pipeline, InspectWhat, ResumeOutcome, RunInputs, RunManifest, RunOptions,
};
use plf_core::training::PipelineConfig;
use plf_core::{Error, Execution};

#[derive(Parser, Debug)]
#[command(name = "plf", version, about = "Multi-backbone pseudo-labeling engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-backbone dataset.
    Synth {
        /// `key = value` synthetic spec file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write `train/`, `query/` and `gallery/` with this many training
        /// identities instead of one flat dataset.
        #[arg(long)]
        train_identities: Option<usize>,
    },
    /// Run the iterative pseudo-labeling pipeline.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Directory of `backbone_<m>.embf` files.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate on --query/--gallery every n iterations.
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long, requires = "gallery")]
        query: Option<PathBuf>,
        #[arg(long, requires = "query")]
        gallery: Option<PathBuf>,
        /// Stop after this many iterations; continue later with `resume`.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted pipeline run.
    Resume {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Ensemble DBSCAN over a distance matrix.
    Cluster {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        eps_min: f64,
        #[arg(long)]
        eps_max: f64,
        #[arg(long)]
        min_pts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-reciprocal re-ranked distances of one embedding file.
    Rerank {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k1: usize,
        #[arg(long)]
        k2: usize,
        #[arg(long, default_value_t = 0.0)]
        mix: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run's momentum encoders on query and gallery sets.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report on a run directory.
    Inspect {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_parser = ["clusters", "losses", "purity"])]
        what: String,
    },
}

/// Worker threads from `PLF_THREADS`; one thread means serial execution.
fn configure_threads() -> anyhow::Result<Execution> {
    let Ok(raw) = std::env::var("PLF_THREADS") else {
        return Ok(Execution::default());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Param(format!("PLF_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("cannot size thread pool: {e}"))?;
    Ok(if n == 1 { Execution::Serial } else { Execution::Parallel })
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn summarize(manifest: &RunManifest) {
    for rec in &manifest.iterations {
        let loss: Vec<String> = rec
            .backbones
            .iter()
            .map(|b| format!("{:.4}", b.epochs.last().map_or(f64::NAN, |e| e.mean_loss)))
            .collect();
        print!(
            "iteration {}: lr={} C={} outliers={:.3} loss=[{}]",
            rec.iteration,
            rec.lr,
            rec.num_clusters,
            rec.outlier_fraction,
            loss.join(", ")
        );
        if let Some(e) = &rec.evaluation {
            print!(" mAP={:.4} R1={:.4}", e.map, e.rank1);
        }
        println!();
        if let Some(w) = &rec.warning {
            eprintln!("warning: iteration {}: {w}", rec.iteration);
        }
    }
}

fn run(cli: Cli, exec: Execution) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            out,
            train_identities,
        } => {
            let spec = SyntheticSpec::parse(&read_text(&spec)?)?;
            let data = generate_synthetic(&spec)?;
            match train_identities {
                Some(n) => {
                    let (train, query, gallery) = data.split_by_identity(n)?;
                    save_dataset(&out.join("train"), &train)?;
                    save_dataset(&out.join("query"), &query)?;
                    save_dataset(&out.join("gallery"), &gallery)?;
                    println!(
                        "wrote {} train, {} query, {} gallery samples to {}",
                        train.len(),
                        query.len(),
                        gallery.len(),
                        out.display()
                    );
                }
                None => {
                    save_dataset(&out, &data)?;
                    println!("wrote {} samples x {} backbones to {}", data.len(), data.features.len(), out.display());
                }
            }
        }
        Command::Pipeline {
            config,
            features,
            meta,
            out,
            eval_every,
            query,
            gallery,
            stop_after,
        } => {
            let cfg = PipelineConfig::parse(&read_text(&config)?).with_context(|| format!("in {}", config.display()))?;
            let inputs = RunInputs {
                features,
                meta,
                query,
                gallery,
            };
            let opts = RunOptions {
                eval_every,
                stop_after,
                exec,
            };
            let manifest = run_pipeline(&cfg, &inputs, &out, &opts)?;
            summarize(&manifest);
        }
        Command::Resume { run, stop_after } => {
            let opts = RunOptions {
                stop_after,
                exec,
                ..RunOptions::default()
            };
            let (manifest, outcome) = resume(&run, &opts)?;
            match outcome {
                ResumeOutcome::AlreadyComplete => {
                    eprintln!(
                        "notice: {} already completed all {} iterations; nothing to do",
                        run.display(),
                        manifest.config.iterations
                    );
                }
                ResumeOutcome::Continued { from } => {
                    println!("resumed after iteration {from}");
                    summarize(&manifest);
                }
            }
        }
        Command::Cluster {
            dist,
            eps_min,
            eps_max,
            min_pts,
            out,
        } => {
            let d = load_distances(&dist).with_context(|| format!("reading {}", dist.display()))?;
            let a = ensemble_cluster_shortcut(&d, eps_min, eps_max, min_pts)?;
            save_assignment(&a, &out)?;
            println!(
                "{} clusters, {} outliers of {} samples",
                a.num_clusters,
                a.num_outliers(),
                a.len()
            );
        }
        Command::Rerank {
            features,
            k1,
            k2,
            mix,
            out,
        } => {
            let f = load_features(&features).with_context(|| format!("reading {}", features.display()))?;
            let params = RerankParams {
                k1,
                k2,
                mix_weight: mix,
                ..RerankParams::default()
            };
            let d = rerank_kreciprocal_with(&pairwise_euclidean_with(&f, exec), &params, exec)?;
            save_distances(&d, &out)?;
        }
        Command::Eval {
            run,
            query,
            gallery,
            out,
        } => {
            let report = evaluate_run(&run, &query, &gallery, exec)?;
            fs::write(&out, serde_json::to_string_pretty(&report)? + "\n").map_err(Error::from)?;
            println!(
                "mAP={:.4} R1={:.4} R5={:.4} R10={:.4} ({} queries, {} skipped)",
                report.map, report.rank1, report.rank5, report.rank10, report.num_queries, report.skipped_queries
            );
        }
        Command::Inspect { run, what } => {
            let what: InspectWhat = what.parse()?;
            print!("{}", inspect(&run, what)?);
        }
    }
    Ok(())
}

/// 1 for bad parameters, 2 for everything that went wrong with the data.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::root) {
        Some(Error::Param(_) | Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|exec| run(cli, exec));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

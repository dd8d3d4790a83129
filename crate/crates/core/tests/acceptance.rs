//! Acceptance suite. Prints one verdict line per criterion and exits
//! non-zero if any criterion fails. Ablation reversals are reported as
//! findings rather than failures.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;

use plf_core::clustering::{
    cluster_quality, dbscan, ensemble_cluster, ensemble_cluster_shortcut, ClusterAssignment, DbscanParams,
    DEFAULT_EPS_LIST, DEFAULT_MIN_PTS,
};
use plf_core::evaluation::{evaluate_distances, evaluate_raw, rank_gallery, EvalSplit};
use plf_core::features::{generate_synthetic, save_dataset, Dataset, SampleMeta, SyntheticSpec};
use plf_core::metricspace::{
    ensemble_distances, pairwise_euclidean, rerank_kreciprocal, save_distances, DistanceKind, DistanceMatrix,
    RerankParams,
};
use plf_core::orchestrator::{checkpoint_path, clusters_path, resume, run_pipeline, RunInputs, RunManifest, RunOptions};
use plf_core::rng::{seeded, Rng};
use plf_core::training::encoder::{backward, forward};
use plf_core::training::{
    learning_rate, loss_hard, loss_proxy, loss_total, Affine, EncoderState, LrSchedule, PipelineConfig, ProxyMode,
    ProxySet,
};
use plf_core::Execution;

enum Verdict {
    Pass(String),
    Fail(String),
    Finding(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn points_matrix(points: &[(f64, f64)]) -> DistanceMatrix {
    DistanceMatrix::from_fn(points.len(), DistanceKind::Euclidean, |i, j| {
        let (a, b) = (points[i], points[j]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    })
    .unwrap()
}

/// Same partition and same outliers, up to renumbering.
fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut bwd = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *bwd.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

// ---------------------------------------------------------------- 1

/// Core points by direct counting, components by Warshall closure, borders
/// to the lowest-indexed adjacent core. Labels are component representatives.
fn dbscan_oracle(d: &DistanceMatrix, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = d.rows();
    let near = |i: usize, j: usize| f64::from(d.get(i, j)) < eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = core[i] && core[j] && (i == j || near(i, j));
        }
    }
    for k in 0..n {
        if !core[k] {
            continue;
        }
        let via = reach[k].clone();
        for row in reach.iter_mut().filter(|row| row[k]) {
            for (r, &v) in row.iter_mut().zip(&via) {
                *r |= v;
            }
        }
    }
    let component = |c: usize| (0..n).find(|&j| reach[c][j]).unwrap();
    (0..n)
        .map(|i| {
            if core[i] {
                Some(component(i))
            } else {
                (0..n).find(|&c| core[c] && near(i, c)).map(component)
            }
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    for seed in 0..50u64 {
        let mut rng = seeded(1000 + seed);
        let n = rng.random_range(1..=200);
        // Every other instance sits on an integer lattice so distances land
        // exactly on the radius and the strict inequality is exercised.
        let lattice = seed % 2 == 1;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if lattice {
                    (f64::from(rng.random_range(0..12u8)), f64::from(rng.random_range(0..12u8)))
                } else {
                    (rng.random::<f64>(), rng.random::<f64>())
                }
            })
            .collect();
        let eps = if lattice {
            [1.0, 2.0f64.sqrt(), 2.0, 2.5][rng.random_range(0..4)]
        } else {
            rng.random_range(0.02..0.25)
        };
        let min_pts = rng.random_range(2..=6);
        let d = points_matrix(&points);
        let got = dbscan(&d, DbscanParams::new(eps, min_pts).unwrap(), None).unwrap();
        if !same_partition(&got.labels, &dbscan_oracle(&d, eps, min_pts)) {
            mismatches.push(seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches.is_empty() && secs < 10.0,
        format!("50 instances, {} mismatches {mismatches:?}, {secs:.2} s (limit 10 s)", mismatches.len()),
    )
}

// ---------------------------------------------------------------- 2, 3

struct Instance {
    seed: u64,
    d: DistanceMatrix,
    min_pts: usize,
}

/// Gaussian blobs in the plane for most seeds, re-ranked synthetic
/// embeddings for every fifth.
fn clustering_instances() -> Vec<Instance> {
    (0..50u64)
        .map(|seed| {
            let mut rng = seeded(2000 + seed);
            let min_pts = rng.random_range(2..=6);
            let d = if seed % 5 == 4 {
                let spec = SyntheticSpec {
                    num_identities: rng.random_range(6..=15),
                    samples_per_identity: rng.random_range(6..=12),
                    num_backbones: 1,
                    noise_sigma: rng.random_range(0.1..0.3),
                    seed,
                    ..SyntheticSpec::default()
                };
                let data = generate_synthetic(&spec).unwrap();
                let params = RerankParams {
                    k1: 8,
                    k2: 3,
                    ..RerankParams::default()
                };
                rerank_kreciprocal(&pairwise_euclidean(&data.features[0]), &params).unwrap()
            } else {
                let n = rng.random_range(30..=200);
                let centers: Vec<(f64, f64)> = (0..rng.random_range(2..=8))
                    .map(|_| (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)))
                    .collect();
                let sigma = rng.random_range(0.1..0.35);
                let points: Vec<(f64, f64)> = (0..n)
                    .map(|_| {
                        let c = centers[rng.random_range(0..centers.len())];
                        (c.0 + sigma * gauss(&mut rng), c.1 + sigma * gauss(&mut rng))
                    })
                    .collect();
                points_matrix(&points)
            };
            Instance { seed, d, min_pts }
        })
        .collect()
}

fn archive_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-counterexamples")
}

fn criterion_2(instances: &[Instance]) -> Verdict {
    let mut failures = Vec::new();
    for inst in instances {
        let grid = ensemble_cluster(&inst.d, &DEFAULT_EPS_LIST, inst.min_pts).unwrap();
        let short = ensemble_cluster_shortcut(&inst.d, 0.5, 0.7, inst.min_pts).unwrap();
        if grid.labels != short.labels || grid.num_clusters != short.num_clusters {
            let dir = archive_dir();
            fs::create_dir_all(&dir).unwrap();
            let stem = dir.join(format!("criterion2_seed{}", inst.seed));
            save_distances(&inst.d, &stem.with_extension("dmat")).unwrap();
            fs::write(stem.with_extension("txt"), format!("min_pts = {}\n", inst.min_pts)).unwrap();
            failures.push(format!("seed {} archived at {}", inst.seed, stem.display()));
        }
    }
    let total_clusters: usize = instances
        .iter()
        .map(|i| ensemble_cluster_shortcut(&i.d, 0.5, 0.7, i.min_pts).unwrap().num_clusters)
        .sum();
    check(
        failures.is_empty(),
        format!(
            "50 instances ({total_clusters} final clusters in total), {} counterexamples {failures:?}",
            failures.len()
        ),
    )
}

fn criterion_3(instances: &[Instance]) -> Verdict {
    let mut violations = Vec::new();
    let mut checked = 0;
    for inst in instances {
        let first = dbscan(&inst.d, DbscanParams::new(0.5, inst.min_pts).unwrap(), None).unwrap();
        let last = ensemble_cluster(&inst.d, &DEFAULT_EPS_LIST, inst.min_pts).unwrap();
        for c in 0..first.num_clusters {
            checked += 1;
            let images: BTreeSet<Option<usize>> = first
                .labels
                .iter()
                .zip(&last.labels)
                .filter(|(a, _)| **a == Some(c))
                .map(|(_, b)| *b)
                .collect();
            if images.len() != 1 || images.contains(&None) {
                violations.push((inst.seed, c));
            }
        }
    }
    check(
        violations.is_empty(),
        format!("{checked} clusters at eps 0.5 checked, {} split or dropped {violations:?}", violations.len()),
    )
}

// ---------------------------------------------------------------- 4

const FD_STEP: f64 = 1e-5;

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + FD_STEP;
            let up = f(&probe);
            probe[k] = x[k] - FD_STEP;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest coordinate error relative to the largest gradient coordinate.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn unit_rows(rng: &mut Rng, rows: usize, dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let row: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.extend(row.iter().map(|x| x / norm));
    }
    v
}

fn affine_params(a: &Affine) -> Vec<f64> {
    a.w.iter().chain(&a.b).copied().collect()
}

fn affine_from(d_in: usize, d_out: usize, params: &[f64]) -> Affine {
    Affine {
        d_in,
        d_out,
        w: params[..d_in * d_out].to_vec(),
        b: params[d_in * d_out..].to_vec(),
    }
}

fn criterion_4() -> Verdict {
    let (mut worst_proxy, mut worst_hard, mut worst_total) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100u64 {
        let mut rng = seeded(4000 + seed);
        let p = rng.random_range(2..=4);
        let k = rng.random_range(2..=3);
        let n = p * k;
        let c = p + rng.random_range(0..=3);
        let dim = rng.random_range(3..=6);
        let d_in = rng.random_range(3..=8);
        let tau = [0.04, 0.1, 0.5][rng.random_range(0..3)];
        let lambda = rng.random_range(0.1..1.0);
        // Each batch cluster maps to a distinct pseudo-label among the C proxies.
        let mut ids: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let labels: Vec<usize> = (0..n).map(|i| ids[i / k]).collect();
        let proxies = ProxySet::from_vectors(dim, unit_rows(&mut rng, c, dim));

        let feats = unit_rows(&mut rng, n, dim);
        let ana = loss_proxy(&feats, dim, &labels, &proxies, tau).unwrap().grad;
        let num = central_difference(&|f| loss_proxy(f, dim, &labels, &proxies, tau).unwrap().value, &feats);
        worst_proxy = worst_proxy.max(relative_error(&ana, &num));

        let ana = loss_hard(&feats, dim, &labels, tau).unwrap().grad;
        let num = central_difference(&|f| loss_hard(f, dim, &labels, tau).unwrap().value, &feats);
        worst_hard = worst_hard.max(relative_error(&ana, &num));

        let x: Vec<f64> = (0..n * d_in).map(|_| gauss(&mut rng)).collect();
        let mut enc = Affine::zeros(d_in, dim);
        enc.w.iter_mut().for_each(|w| *w = 0.5 * gauss(&mut rng));
        enc.b.iter_mut().for_each(|b| *b = 0.1 * gauss(&mut rng));
        let fwd = forward(&enc, &x).unwrap();
        let total = loss_total(&fwd.out, dim, &labels, &proxies, tau, lambda).unwrap();
        let ana = affine_params(&backward(&enc, &x, &fwd, &total.grad).unwrap());
        let loss_of = |theta: &[f64]| {
            let out = forward(&affine_from(d_in, dim, theta), &x).unwrap().out;
            loss_total(&out, dim, &labels, &proxies, tau, lambda).unwrap().value
        };
        let num = central_difference(&loss_of, &affine_params(&enc));
        worst_total = worst_total.max(relative_error(&ana, &num));
    }
    let worst = worst_proxy.max(worst_hard).max(worst_total);
    check(
        worst < 1e-4,
        format!(
            "100 points, max relative error proxy {worst_proxy:.1e}, hard {worst_hard:.1e}, total via W,b {worst_total:.1e} (limit 1e-4)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let mut problems = Vec::new();

    let lr_base = 3.5e-4;
    let sched = LrSchedule::new(lr_base, 30);
    for (t, expected) in [
        (1, 3.5e-4 * 1.0 / 10.0),
        (5, 3.5e-4 * 5.0 / 10.0),
        (10, 3.5e-4),
        (11, 3.5e-4),
        (30, 3.5e-4),
    ] {
        let got = learning_rate(t, &sched).unwrap();
        if got != expected {
            problems.push(format!("lr({t}) = {got:e}, expected {expected:e}"));
        }
    }

    let mut rng = seeded(5);
    let mut worst_ema = 0.0f64;
    for beta in [0.9, 0.99, 0.999] {
        let mut state = EncoderState::identity(0, 3);
        state.weights.w.iter_mut().for_each(|w| *w = gauss(&mut rng));
        state.weights.b.iter_mut().for_each(|b| *b = gauss(&mut rng));
        state.momentum.w.iter_mut().for_each(|w| *w = gauss(&mut rng));
        state.momentum.b.iter_mut().for_each(|b| *b = gauss(&mut rng));
        let theta = affine_params(&state.weights);
        let start = affine_params(&state.momentum);
        for t in 1..=1000 {
            state.ema_update(beta).unwrap();
            let decay = f64::powi(beta, t);
            for ((m, th), m0) in affine_params(&state.momentum).iter().zip(&theta).zip(&start) {
                worst_ema = worst_ema.max((m - (th + decay * (m0 - th))).abs());
            }
        }
    }
    if worst_ema > 1e-10 {
        problems.push(format!("EMA deviates by {worst_ema:e}"));
    }

    // Two proxies symmetric about the feature, and a batch whose positive
    // and negative are equally similar.
    let ln2 = std::f64::consts::LN_2;
    let f = [1.0, 0.0];
    let proxies = ProxySet::from_vectors(2, vec![0.6, 0.8, 0.6, -0.8]);
    let proxy = loss_proxy(&f, 2, &[0], &proxies, 0.04).unwrap().value;
    let same = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let hard = loss_hard(&same, 2, &[0, 0, 1, 1], 0.04).unwrap().value;
    for (name, v) in [("proxy", proxy), ("hard", hard)] {
        if (v - ln2).abs() > 1e-9 {
            problems.push(format!("{name} loss {v} != ln 2"));
        }
    }
    check(
        problems.is_empty(),
        format!(
            "lr exact at t in {{1,5,10,11,30}}, EMA max deviation {worst_ema:.1e} over t <= 1000, proxy {proxy:.12}, hard {hard:.12}; {problems:?}"
        ),
    )
}

// ---------------------------------------------------------------- 6

struct NaiveReport {
    map: f64,
    cmc: [f64; 3],
}

/// Per query: selection-sort the allowed gallery entries by (distance,
/// index), then AP as the mean over relevant positions of precision there.
fn naive_metrics(d: &DistanceMatrix, q: &[SampleMeta], g: &[SampleMeta]) -> Option<NaiveReport> {
    let mut aps = Vec::new();
    let mut hits = [0usize; 3];
    for (qi, qm) in q.iter().enumerate() {
        let mut pool: Vec<usize> = (0..g.len())
            .filter(|&gi| !(g[gi].identity == qm.identity && g[gi].camera == qm.camera))
            .collect();
        let mut order = Vec::new();
        while !pool.is_empty() {
            let mut best = 0;
            for p in 1..pool.len() {
                let (a, b) = (pool[p], pool[best]);
                if d.get(qi, a) < d.get(qi, b) || (d.get(qi, a) == d.get(qi, b) && a < b) {
                    best = p;
                }
            }
            order.push(pool.remove(best));
        }
        let relevant: Vec<usize> = (0..order.len())
            .filter(|&r| g[order[r]].identity == qm.identity)
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let precisions: Vec<f64> = relevant
            .iter()
            .map(|&r| (0..=r).filter(|&s| g[order[s]].identity == qm.identity).count() as f64 / (r + 1) as f64)
            .collect();
        aps.push(precisions.iter().sum::<f64>() / precisions.len() as f64);
        for (slot, k) in [1, 5, 10].iter().enumerate() {
            if relevant[0] < *k {
                hits[slot] += 1;
            }
        }
    }
    if aps.is_empty() {
        return None;
    }
    let n = aps.len() as f64;
    Some(NaiveReport {
        map: aps.iter().sum::<f64>() / n,
        cmc: hits.map(|h| h as f64 / n),
    })
}

fn random_meta(rng: &mut Rng, n: usize, ids: usize, cams: usize) -> Vec<SampleMeta> {
    (0..n)
        .map(|i| SampleMeta {
            sample_index: i,
            identity: Some(format!("id{}", rng.random_range(0..ids))),
            camera: Some(format!("c{}", rng.random_range(0..cams))),
        })
        .collect()
}

fn criterion_6() -> Verdict {
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    let mut evaluated = 0;
    for seed in 0..50u64 {
        let mut rng = seeded(6000 + seed);
        let nq = rng.random_range(1..=20);
        let ng = rng.random_range(1..=100);
        let ids = rng.random_range(1..=8);
        let cams = rng.random_range(1..=4);
        let q = random_meta(&mut rng, nq, ids, cams);
        let g = random_meta(&mut rng, ng, ids, cams);
        // Coarse quantization produces ties for the index tie-break.
        let data: Vec<f32> = (0..nq * ng).map(|_| f32::from(rng.random_range(0..20u8)) / 10.0).collect();
        let d = DistanceMatrix::new(nq, ng, data, DistanceKind::Euclidean).unwrap();

        let rankings = rank_gallery(&d, &q, &g).unwrap();
        for (qi, order) in rankings.iter().enumerate() {
            let kept: BTreeSet<usize> = order.iter().copied().collect();
            let expected: BTreeSet<usize> = (0..ng)
                .filter(|&gi| !(g[gi].identity == q[qi].identity && g[gi].camera == q[qi].camera))
                .collect();
            if kept != expected || kept.len() != order.len() {
                problems.push(format!("seed {seed} query {qi}: filtered set differs"));
            }
        }

        match (evaluate_distances(&d, &q, &g, Execution::Serial), naive_metrics(&d, &q, &g)) {
            (Ok(r), Some(o)) => {
                evaluated += 1;
                for (a, b) in [(r.map, o.map), (r.rank1, o.cmc[0]), (r.rank5, o.cmc[1]), (r.rank10, o.cmc[2])] {
                    worst = worst.max((a - b).abs());
                }
            }
            (Err(_), None) => {}
            _ => problems.push(format!("seed {seed}: scored/skipped disagreement")),
        }
    }
    check(
        problems.is_empty() && worst <= 1e-12,
        format!("50 splits ({evaluated} scorable), max |diff| {worst:.1e} (limit 1e-12), filtering exact; {problems:?}"),
    )
}

// ---------------------------------------------------------------- 7, 8, 9

/// 20 training identities plus 10 disjoint test identities, 30 samples
/// each, three backbones, separation / noise = 10.
fn desk_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_identities: 30,
        samples_per_identity: 30,
        num_backbones: 3,
        noise_sigma: 0.1,
        separation: 1.0,
        seed,
        ..SyntheticSpec::default()
    }
}

fn desk_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        num_backbones: 3,
        iterations: 5,
        epochs_per_iteration: 3,
        clusters_per_batch: 4,
        samples_per_cluster: 4,
        k1: 15,
        k2: 6,
        lr_base: 2.0,
        beta: 0.9,
        eps_list: vec![0.5, 0.55, 0.6],
        seed,
        ..PipelineConfig::default()
    }
}

struct DeskData {
    inputs: RunInputs,
    split: EvalSplit,
    train: Dataset,
}

fn write_desk_data(dir: &Path, seed: u64) -> DeskData {
    let (train, query, gallery) = generate_synthetic(&desk_spec(seed)).unwrap().split_by_identity(20).unwrap();
    save_dataset(&dir.join("train"), &train).unwrap();
    save_dataset(&dir.join("query"), &query).unwrap();
    save_dataset(&dir.join("gallery"), &gallery).unwrap();
    DeskData {
        inputs: RunInputs {
            features: dir.join("train"),
            meta: dir.join("train/meta.tsv"),
            query: Some(dir.join("query")),
            gallery: Some(dir.join("gallery")),
        },
        split: EvalSplit { query, gallery },
        train,
    }
}

fn serial_opts(cfg: &PipelineConfig) -> RunOptions {
    RunOptions {
        eval_every: Some(cfg.iterations),
        stop_after: None,
        exec: Execution::Serial,
    }
}

fn final_scores(m: &RunManifest) -> (f64, f64, f64) {
    let last = m.last().unwrap();
    let eval = last.evaluation.as_ref().unwrap();
    let purity = last.quality.as_ref().and_then(|q| q.purity).unwrap_or(0.0);
    (eval.map, eval.rank1, purity)
}

fn criterion_7(scratch: &Path) -> Verdict {
    let seed = 0;
    let start = Instant::now();
    let data = write_desk_data(&scratch.join("c7"), seed);
    let cfg = desk_config(seed);
    let m = run_pipeline(&cfg, &data.inputs, &scratch.join("c7/run"), &serial_opts(&cfg)).unwrap();
    let baseline = evaluate_raw(&data.split, Execution::Serial).unwrap().map;
    let secs = start.elapsed().as_secs_f64();
    let (map, r1, purity) = final_scores(&m);
    check(
        map >= 0.9 && r1 >= 0.9 && purity >= 0.95 && baseline < map && secs < 120.0,
        format!(
            "mAP {map:.4} (>= 0.9), Rank-1 {r1:.4} (>= 0.9), purity {purity:.4} (>= 0.95), untrained baseline mAP {baseline:.4} (< mAP), {secs:.1} s on one thread (< 120 s)"
        ),
    )
}

fn ensembled_reranked(data: &Dataset, params: &RerankParams) -> DistanceMatrix {
    let per_backbone: Vec<DistanceMatrix> = data
        .features
        .iter()
        .map(|f| rerank_kreciprocal(&pairwise_euclidean(f), params).unwrap())
        .collect();
    ensemble_distances(&per_backbone).unwrap()
}

fn purity(a: &ClusterAssignment, meta: &[SampleMeta]) -> f64 {
    cluster_quality(a, meta).unwrap().purity.unwrap_or(0.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_8(scratch: &Path) -> Verdict {
    const TOL: f64 = 0.01;
    let params = RerankParams {
        k1: 15,
        k2: 6,
        ..RerankParams::default()
    };
    let (mut ensemble, mut best_single) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let data = generate_synthetic(&SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let d = ensembled_reranked(&data, &params);
        ensemble.push(purity(&ensemble_cluster(&d, &DEFAULT_EPS_LIST, DEFAULT_MIN_PTS).unwrap(), &data.meta));
        best_single.push(
            DEFAULT_EPS_LIST
                .iter()
                .map(|&eps| purity(&dbscan(&d, DbscanParams::new(eps, DEFAULT_MIN_PTS).unwrap(), None).unwrap(), &data.meta))
                .fold(0.0, f64::max),
        );
    }
    let clustering_ok = mean(&ensemble) >= mean(&best_single) - TOL;

    let (mut random, mut mean_proxy) = (Vec::new(), Vec::new());
    for seed in 0..4 {
        let dir = scratch.join(format!("c8_{seed}"));
        let data = write_desk_data(&dir, seed);
        for (mode, out) in [(ProxyMode::Random, &mut random), (ProxyMode::Mean, &mut mean_proxy)] {
            let cfg = PipelineConfig {
                proxy_mode: mode,
                label_noise: 0.1,
                ..desk_config(seed)
            };
            let run = dir.join(format!("run_{mode:?}"));
            out.push(final_scores(&run_pipeline(&cfg, &data.inputs, &run, &serial_opts(&cfg)).unwrap()).0);
        }
    }
    let proxy_ok = mean(&random) >= mean(&mean_proxy) - TOL;

    let detail = format!(
        "ensemble purity [{}] mean {:.4} vs best single-eps [{}] mean {:.4}: {}; random-proxy mAP [{}] mean {:.4} vs mean-proxy [{}] mean {:.4} at 10% label noise: {}",
        fmt_list(&ensemble),
        mean(&ensemble),
        fmt_list(&best_single),
        mean(&best_single),
        if clustering_ok { "direction holds" } else { "REVERSED beyond 0.01" },
        fmt_list(&random),
        mean(&random),
        fmt_list(&mean_proxy),
        mean(&mean_proxy),
        if proxy_ok { "direction holds" } else { "REVERSED beyond 0.01" },
    );
    if clustering_ok && proxy_ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Finding(detail)
    }
}

fn run_files(dir: &Path, cfg: &PipelineConfig) -> Vec<(String, Vec<u8>)> {
    let mut paths = vec![dir.join("manifest.json")];
    for t in 1..=cfg.iterations {
        paths.push(clusters_path(dir, t));
        paths.extend((0..cfg.num_backbones).map(|m| checkpoint_path(dir, t, m)));
    }
    paths
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect()
}

fn criterion_9(scratch: &Path) -> Verdict {
    let seed = 0;
    let dir = scratch.join("c9");
    let data = write_desk_data(&dir, seed);
    let cfg = desk_config(seed);
    let opts = serial_opts(&cfg);
    let first = dir.join("run_a");
    let second = dir.join("run_b");
    let resumed = dir.join("run_c");
    run_pipeline(&cfg, &data.inputs, &first, &opts).unwrap();
    run_pipeline(&cfg, &data.inputs, &second, &opts).unwrap();
    run_pipeline(
        &cfg,
        &data.inputs,
        &resumed,
        &RunOptions {
            stop_after: Some(2),
            ..serial_opts(&cfg)
        },
    )
    .unwrap();
    let interrupted = RunManifest::load(&resumed).unwrap().completed_iterations();
    resume(&resumed, &RunOptions::default()).unwrap();

    let a = run_files(&first, &cfg);
    let diff = |other: &[(String, Vec<u8>)]| -> Vec<String> {
        a.iter()
            .zip(other)
            .filter(|(x, y)| x.1 != y.1)
            .map(|(x, _)| x.0.clone())
            .collect()
    };
    let repeat = diff(&run_files(&second, &cfg));
    let resume_diff = diff(&run_files(&resumed, &cfg));
    check(
        repeat.is_empty() && resume_diff.is_empty() && interrupted == 2,
        format!(
            "{} files compared; repeat differs in {repeat:?}; run stopped after {interrupted} and resumed (parallel) differs in {resume_diff:?}; train set {} samples",
            a.len(),
            data.train.len()
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test -- --list` and friends expect a listing, not a run.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let scratch = tempfile::tempdir().unwrap();
    let instances = clustering_instances();
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("DBSCAN oracle equivalence", Box::new(criterion_1)),
        ("ensemble shortcut equals full grid", Box::new(|| criterion_2(&instances))),
        ("merge-only containment", Box::new(|| criterion_3(&instances))),
        ("gradient audit", Box::new(criterion_4)),
        ("closed forms", Box::new(criterion_5)),
        ("metric oracle", Box::new(criterion_6)),
        ("desk-scale end-to-end", Box::new(|| criterion_7(scratch.path()))),
        ("ablation directions", Box::new(|| criterion_8(scratch.path()))),
        ("determinism and resume", Box::new(|| criterion_9(scratch.path()))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Finding(d) => ("FINDING", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} [{name}]: {tag} - {detail}", k + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria met");
        ExitCode::SUCCESS
    }
}

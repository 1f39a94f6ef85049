//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::{blob_config, oracle_gaps, random_task, rng, workspace_root};
use lps_core::admm::{augmented_finite_difference_check, AdmmState, ParamCoord};
use lps_core::cli::{run_experiment, run_single, ExperimentConfig, RunOptions, RunSummary};
use lps_core::metrics::NullSink;
use lps_core::netcore::{finite_difference_check, Coord, Matrix, ParamSet};
use lps_core::partition::Support;
use lps_core::trainer::{train_task, Engine};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!(
            "{what} took {:.2}s, limit {}s",
            elapsed.as_secs_f64(),
            limit.as_secs()
        )
    })
}

fn quiet() -> RunOptions {
    RunOptions {
        quiet: true,
        ..RunOptions::default()
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let instances = 2000;
    let gaps = oracle_gaps(0xACCE_0001, instances);
    within(
        start.elapsed(),
        Duration::from_secs(30),
        "oracle comparison",
    )?;
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    ensure(worst <= 1e-12, || {
        format!("gaps irregular/column/filter/mask = {gaps:?}")
    })?;
    Ok(format!(
        "{instances} instances x 4 projections, max distance gap {worst:.1e}"
    ))
}

fn mask_ordering() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0xACCE_0002);
    let pairs = 10_000;
    for _ in 0..pairs {
        // Multiples of 2^-15 in [-2, 2]: every square and sum below is exact.
        let i: i64 = r.random_range(-65536..=65536);
        let j: i64 = r.random_range(-65536..=65536);
        let (a, b) = (i.min(j) as f64 / 32768.0, i.max(j) as f64 / 32768.0);
        let lhs = a * a + (1.0 - b) * (1.0 - b);
        let rhs = (a - 1.0) * (a - 1.0) + b * b;
        ensure(lhs <= rhs, || format!("a={a} b={b}: {lhs} > {rhs}"))?;
    }
    within(start.elapsed(), Duration::from_secs(1), "ordering check")?;
    Ok(format!("{pairs} pairs"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let dims = [6, 8, 7, 4];
    let mut plain_coords = 0;
    let mut plain_worst = 0.0f64;
    let mut aug_coords = 0;
    let mut aug_worst = 0.0f64;
    for seed in 0..3u64 {
        let (p, _, x, y) = random_task(100 + seed, &dims, false);
        let mut coords = Vec::new();
        for (layer, w) in p.weights.iter().enumerate() {
            for ((row, col), _) in w.indexed_iter() {
                coords.push(Coord::Weight { layer, row, col });
            }
            for index in 0..w.ncols() {
                coords.push(Coord::Bias { layer, index });
            }
        }
        for ((row, col), _) in p.head.weights.indexed_iter() {
            coords.push(Coord::HeadWeight { row, col });
        }
        for index in 0..p.head.bias.len() {
            coords.push(Coord::HeadBias { index });
        }
        let err = finite_difference_check(&p.weights, &p.head, &p.biases, x.view(), &y, &coords)
            .map_err(|e| e.to_string())?;
        plain_coords += coords.len();
        plain_worst = plain_worst.max(err);

        let (p, prior, x, y) = random_task(200 + seed, &dims, true);
        let state = random_state(&p, 0.05 * (seed + 1) as f64, 300 + seed);
        let mut coords = Vec::new();
        for (layer, w) in p.weights.iter().enumerate() {
            for ((row, col), _) in w.indexed_iter() {
                coords.push(ParamCoord::Weight { layer, row, col });
                coords.push(ParamCoord::Mask { layer, row, col });
            }
            for index in 0..w.ncols() {
                coords.push(ParamCoord::Bias { layer, index });
            }
        }
        for ((row, col), _) in p.head.weights.indexed_iter() {
            coords.push(ParamCoord::HeadWeight { row, col });
        }
        let err = augmented_finite_difference_check(&p, &prior, &state, x.view(), &y, &coords)
            .map_err(|e| e.to_string())?;
        aug_coords += coords.len();
        aug_worst = aug_worst.max(err);
    }
    within(start.elapsed(), Duration::from_secs(60), "gradient checks")?;
    ensure(plain_coords >= 200 && aug_coords >= 200, || {
        "too few coordinates".into()
    })?;
    ensure(plain_worst < 1e-4 && aug_worst < 1e-4, || {
        format!("relative error plain {plain_worst:.2e}, augmented {aug_worst:.2e}")
    })?;
    Ok(format!(
        "plain {plain_coords} coords max rel err {plain_worst:.1e}; augmented (incl. masks) {aug_coords} coords max {aug_worst:.1e}"
    ))
}

fn random_state(p: &ParamSet, penalty: f64, seed: u64) -> AdmmState {
    let mut r = rng(seed);
    let mut rnd = |m: &Matrix| Matrix::from_shape_simple_fn(m.dim(), || r.random_range(-0.5..0.5));
    AdmmState {
        z: p.weights.iter().map(&mut rnd).collect(),
        u: p.weights.iter().map(&mut rnd).collect(),
        y: p.masks.iter().map(&mut rnd).collect(),
        k: p.masks.iter().map(&mut rnd).collect(),
        rho: vec![penalty; p.weights.len()],
        tau: vec![penalty; p.weights.len()],
        outer_iteration: 0,
    }
}

fn blob_engine(
    cfg: &ExperimentConfig,
) -> Result<(Engine, Vec<lps_core::tasks::TaskDataset>), String> {
    let tasks = cfg.build_tasks().map_err(|e| e.to_string())?;
    let spec = cfg.network(&tasks).map_err(|e| e.to_string())?;
    Ok((Engine::new(spec, cfg.seed), tasks))
}

fn no_forgetting() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = blob_config(0.5, dir.path());
    let (mut engine, tasks) = blob_engine(&cfg)?;
    let mut compared = 0;
    for (i, t) in tasks.iter().enumerate() {
        let before: Vec<String> = (1..=i)
            .map(|j| {
                engine
                    .evaluate(j, &tasks[j - 1].test)
                    .map(|r| r.logits_digest)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        train_task(
            &mut engine,
            t,
            &cfg.plan(),
            i + 1 == tasks.len(),
            &mut NullSink,
        )
        .map_err(|e| e.to_string())?;
        let report = engine.ledger.verify_invariants();
        ensure(report.all_passed(), || {
            format!("after task {}:\n{report}", i + 1)
        })?;
        for (j, d) in before.iter().enumerate() {
            let after = engine
                .evaluate(j + 1, &tasks[j].test)
                .map_err(|e| e.to_string())?
                .logits_digest;
            ensure(&after == d, || {
                format!(
                    "task {} digest changed while training task {}",
                    j + 1,
                    i + 1
                )
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} before/after digest pairs identical; invariants pass after all 3 commits"
    ))
}

fn feasibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for beta in [90.0, 37.0] {
        let mut cfg = blob_config(0.5, dir.path());
        cfg.beta_percent = beta;
        let (mut engine, tasks) = blob_engine(&cfg)?;
        for (i, t) in tasks.iter().enumerate() {
            let task_id = i + 1;
            let past: Vec<Support> = engine.ledger.used_support().to_vec();
            let r = train_task(
                &mut engine,
                t,
                &cfg.plan(),
                i + 1 == tasks.len(),
                &mut NullSink,
            )
            .map_err(|e| e.to_string())?;
            let slice = engine.ledger.slice(task_id).map_err(|e| e.to_string())?;
            for l in 0..slice.weights.len() {
                let w = Support::nonzeros(&slice.weights[l]);
                ensure(w.len() <= r.budget.alpha[l], || {
                    format!(
                        "task {task_id} layer {l}: {} nonzeros > alpha {}",
                        w.len(),
                        r.budget.alpha[l]
                    )
                })?;
                ensure(w.first_overlap(&past[l]).is_none(), || {
                    format!("task {task_id} layer {l}: weights overlap past support")
                })?;
                ensure(
                    slice.weight_support[l].first_overlap(&past[l]).is_none(),
                    || format!("task {task_id} layer {l}: recorded support overlaps past"),
                )?;
                if let Some(masks) = &slice.masks {
                    let m = &masks[l];
                    let ones = m.iter().filter(|&&v| v == 1.0).count();
                    ensure(m.iter().all(|&v| v == 0.0 || v == 1.0), || {
                        "non-binary mask".into()
                    })?;
                    ensure(ones == r.budget.beta[l], || {
                        format!(
                            "task {task_id} layer {l}: {ones} ones, beta {}",
                            r.budget.beta[l]
                        )
                    })?;
                    ensure(
                        Support::nonzeros(m).first_outside(&past[l]).is_none(),
                        || format!("task {task_id} layer {l}: mask outside past support"),
                    )?;
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (task, layer) pairs at beta 90% and 37%"))
}

fn scaled_mnist() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = workspace_root().join("configs/mnist_permuted.json");
    let mut cfg = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().to_path_buf();
    ensure(
        cfg.hidden_layers == [256, 256]
            && cfg.task_count == 3
            && cfg.train_samples == 6000
            && cfg.test_samples == 1000
            && cfg.alpha_percent == 10.0
            && cfg.beta_percent == 90.0
            && (cfg.warmup_epochs, cfg.admm_epochs, cfg.final_epochs) == (5, 15, 5),
        || "configs/mnist_permuted.json does not describe the scaled run".into(),
    )?;
    let s = run_single(&cfg, None, &quiet()).map_err(|e| e.to_string())?;
    let avg = s.average();
    ensure(s.matrix.digests_constant(), || {
        "earlier-task digests changed".into()
    })?;
    ensure(avg >= 0.90, || format!("average {avg:.4} < 0.90"))?;
    let finals: Vec<String> = s
        .matrix
        .final_accuracies()
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect();
    Ok(format!(
        "average {avg:.4} (tasks {}), earlier tasks constant, {:.0}s",
        finals.join(" "),
        start.elapsed().as_secs_f64()
    ))
}

fn sweep(similarity: f64, betas: &[f64], dir: &Path) -> Result<Vec<RunSummary>, String> {
    let mut cfg = blob_config(similarity, dir);
    cfg.sweep_beta = Some(betas.to_vec());
    run_experiment(&cfg, &quiet()).map_err(|e| e.to_string())
}

fn share_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let same = sweep(1.0, &[0.0, 90.0], &dir.path().join("sim1"))?;
    let (none, selective) = (same[0].average(), same[1].average());
    ensure(selective >= none - 0.01, || {
        format!("similarity 1.0: beta 90% {selective:.4} < beta 0% {none:.4} - 0.01")
    })?;
    let betas = [0.0, 20.0, 40.0, 60.0, 80.0, 90.0, 100.0];
    let diff = sweep(0.0, &betas, &dir.path().join("sim0"))?;
    let best = diff.iter().map(RunSummary::average).fold(0.0, f64::max);
    let zero = diff[0].average();
    ensure(zero >= best - 0.02, || {
        format!("similarity 0.0: beta 0% {zero:.4} vs best {best:.4}")
    })?;
    Ok(format!(
        "sim 1.0: beta0 {none:.4}, beta90 {selective:.4}; sim 0.0: beta0 {zero:.4}, best {best:.4}"
    ))
}

fn capacity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = blob_config(0.5, dir.path());
    cfg.sweep_capacity = Some(vec![50.0, 100.0]);
    let runs = run_experiment(&cfg, &quiet()).map_err(|e| e.to_string())?;
    let (half, full) = (runs[0].average(), runs[1].average());
    ensure(full - half < 0.05, || {
        format!("50%: {half:.4}, 100%: {full:.4}")
    })?;
    Ok(format!("capacity 50% {half:.4}, 100% {full:.4}"))
}

fn read_all(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    [
        "accuracy.csv",
        "metrics.jsonl",
        "residuals.csv",
        "checkpoint.lps",
    ]
    .iter()
    .map(|a| std::fs::read(dir.join(a)).map_err(|e| format!("{a}: {e}")))
    .collect()
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = root.path().join("a");
    let b = root.path().join("b");
    run_single(&blob_config(0.5, &a), None, &quiet()).map_err(|e| e.to_string())?;
    run_single(&blob_config(0.5, &b), None, &quiet()).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_all(&a)?, read_all(&b)?);
    ensure(fa[0] == fb[0], || {
        "accuracy.csv differs between identical runs".into()
    })?;
    ensure(fa == fb, || {
        "artifacts differ between identical runs".into()
    })?;

    for stop in [1, 2] {
        let part = root.path().join(format!("part{stop}"));
        let resumed = root.path().join(format!("resumed{stop}"));
        run_single(
            &blob_config(0.5, &part),
            None,
            &RunOptions {
                stop_after: Some(stop),
                ..quiet()
            },
        )
        .map_err(|e| e.to_string())?;
        run_single(
            &blob_config(0.5, &resumed),
            None,
            &RunOptions {
                resume: Some(part.join("checkpoint.lps")),
                ..quiet()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(read_all(&resumed)? == fa, || {
            format!("run resumed after task {stop} differs from the uninterrupted run")
        })?;
    }
    Ok("identical runs byte-identical; resume after task 1 and 2 reproduces all artifacts".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("projection oracle equivalence", oracle_equivalence),
        ("mask ordering inequality", mask_ordering),
        ("gradient correctness", gradients),
        ("structural no-forgetting", no_forgetting),
        ("feasibility exactness", feasibility),
        ("scaled permuted MNIST", scaled_mnist),
        ("share-ratio ordering", share_ordering),
        ("capacity-fraction robustness", capacity),
        ("determinism and persistence", determinism),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

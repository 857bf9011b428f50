//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `--slow` adds the digit-transfer run, which reads raw IDX files
//! from the directory named by `SSNLL_DIGITS_DIR`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssnll_cli::config::DatasetConfig;
use ssnll_cli::experiment::{load_domains, median, pretrain};
use ssnll_cli::ExperimentConfig;
use ssnll_core::adapt::{adabn_update_batches, dtc_refine, kmeans, ClusterModel, KMeansOptions, PseudoLabelSet};
use ssnll_core::nn::{argmax, softmax_rows, Affine, BatchNormState, Classifier, Layer, LossTarget, Matrix, Mode};
use ssnll_core::split::labelwise_split;
use ssnll_core::trainer::{run_ssnll, TrainConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, range: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-range..range)).collect(),
    )
    .unwrap()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn gradient_oracle() -> Check {
    fn model(rng: &mut ChaCha8Rng) -> Classifier {
        let input = rng.random_range(1..=6);
        let affines = rng.random_range(1..=3);
        let classes = rng.random_range(2..=5);
        let (mut layers, mut width, mut tap) = (Vec::new(), input, 0);
        for i in 0..affines {
            let last = i + 1 == affines;
            let out = if last { classes } else { rng.random_range(1..=16) };
            let mut a = Affine::init(width, out, rng);
            a.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            layers.push(Layer::Affine(a));
            if !last {
                if rng.random_bool(0.6) {
                    let mut bn = BatchNormState::new(out);
                    bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
                    layers.push(Layer::BatchNorm(bn));
                }
                layers.push(Layer::Relu);
                tap = layers.len();
            }
            width = out;
        }
        layers.push(Layer::Softmax);
        Classifier::new(input, layers, classes, tap).unwrap()
    }
    fn loss(m: &Classifier, x: &Matrix, y: &[usize], w: &[f64], blur: bool) -> f64 {
        let probs = m.clone().forward(x, Mode::Train).unwrap().probs;
        (0..y.len())
            .map(|i| {
                let q = if blur {
                    softmax(probs.row(i))
                } else {
                    probs.row(i).to_vec()
                };
                -w[i] * q[y[i]].max(1e-12).ln()
            })
            .sum()
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut entries, mut worst) = (0usize, 0.0f64);
    for case in 0..20 {
        let mut m = model(&mut rng);
        let batch = rng.random_range(2..=8);
        let x = random_matrix(&mut rng, batch, m.input_width(), 2.0);
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..m.num_classes())).collect();
        let w: Vec<f64> = (0..batch).map(|_| rng.random_range(0.1..1.0)).collect();
        let blur = case % 2 == 0;
        let out = m.forward(&x, Mode::Train).unwrap();
        let grads = m
            .backward_with(
                &out.cache,
                LossTarget {
                    labels: &y,
                    weights: &w,
                    blur,
                },
            )
            .unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        for (g, group) in analytic.iter().enumerate() {
            for (j, &a) in group.iter().enumerate() {
                let (mut plus, mut minus) = (m.clone(), m.clone());
                plus.params_mut()[g][j] += 1e-5;
                minus.params_mut()[g][j] -= 1e-5;
                let n = (loss(&plus, &x, &y, &w, blur) - loss(&minus, &x, &y, &w, blur)) / 2e-5;
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                worst = worst.max(rel);
                ensure(rel < 1e-4, || {
                    format!("model {case}, group {g}, entry {j}: analytic {a:e}, numeric {n:e}")
                })?;
                entries += 1;
            }
        }
    }
    Ok(format!(
        "{entries} entries on 20 models, worst relative error {worst:.1e}"
    ))
}

fn kmeans_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut global = 0;
    for case in 0..50u64 {
        let n = rng.random_range(2..=8);
        let points = random_matrix(&mut rng, n, 2, 3.0);
        let model = kmeans(&points, KMeansOptions::new(2, case)).unwrap();
        let cost = |assign: &[usize]| -> Option<f64> {
            let mut total = 0.0;
            for c in 0..2 {
                let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
                if members.is_empty() {
                    return None;
                }
                let mean: Vec<f64> = (0..2)
                    .map(|j| members.iter().map(|&i| points[(i, j)]).sum::<f64>() / members.len() as f64)
                    .collect();
                total += members
                    .iter()
                    .map(|&i| (0..2).map(|j| (points[(i, j)] - mean[j]).powi(2)).sum::<f64>())
                    .sum::<f64>();
            }
            Some(total)
        };
        let best = (0..1u32 << n)
            .filter_map(|mask| cost(&(0..n).map(|i| ((mask >> i) & 1) as usize).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        let own = cost(&model.assignments).ok_or(format!("instance {case}: empty cluster"))?;
        let tol = 1e-9 * best.max(1e-12);
        ensure((model.inertia - own).abs() <= 1e-9 * own.max(1e-12), || {
            format!(
                "instance {case}: inertia {} but own assignment costs {own}",
                model.inertia
            )
        })?;
        ensure(model.inertia >= best - tol, || {
            format!(
                "instance {case}: inertia {} below exhaustive minimum {best}",
                model.inertia
            )
        })?;
        ensure(
            model
                .inertia_trace
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15),
            || format!("instance {case}: inertia trace increases: {:?}", model.inertia_trace),
        )?;
        if model.inertia - best <= tol {
            global += 1;
        }
    }
    Ok(format!(
        "50 instances, no assignment beats its own cost, {global}/50 at the exhaustive optimum, traces non-increasing"
    ))
}

fn split_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(1..=80);
        let losses: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    1.0
                } else {
                    rng.random_range(0.0..4.0)
                }
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (a, b) = (rng.random_range(1..=100u32), rng.random_range(1..=100u32));
        let (lo, hi) = (a.min(b), a.max(b));
        let small = labelwise_split(&losses, &labels, k, lo as f64 / 100.0).map_err(|e| e.to_string())?;
        let large = labelwise_split(&losses, &labels, k, hi as f64 / 100.0).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = small.cleaner.iter().chain(&small.noisier).copied().collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || {
            format!("instance {case}: not a partition")
        })?;
        let member = small.membership();
        let wider = large.membership();
        ensure((0..n).all(|i| !member[i] || wider[i]), || {
            format!("instance {case}: not monotone in r")
        })?;
        for c in 0..k {
            let class: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let count = class.iter().filter(|&&i| member[i]).count();
            // ⌈lo·n_c / 100⌉ in integer arithmetic
            let expected = (lo as usize * class.len()).div_ceil(100);
            ensure(count == expected, || {
                format!("instance {case}, class {c}: {count} cleaner, expected {expected}")
            })?;
            ensure(class.is_empty() || count > 0, || {
                format!("instance {case}: class {c} missing from cleaner")
            })?;
            for &x in class.iter().filter(|&&i| member[i]) {
                for &z in class.iter().filter(|&&i| !member[i]) {
                    ensure(losses[x] < losses[z] || (losses[x] == losses[z] && x < z), || {
                        format!("instance {case}: cleaner {x} does not dominate noisier {z}")
                    })?;
                }
            }
        }
    }
    Ok("1000 instances: partition, dominance, monotonicity, per-class counts".into())
}

fn dtc_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..500 {
        let n = rng.random_range(1..=40);
        let c = rng.random_range(2..=6);
        let probs = softmax_rows(&random_matrix(&mut rng, n, c, 4.0));
        let pseudo = PseudoLabelSet::from_probs(probs.clone());
        ensure((0..n).all(|i| pseudo.labels[i] == argmax(probs.row(i))), || {
            format!("case {case}: labels are not the row argmax")
        })?;
        let k = rng.random_range(1..=n);
        let assignments: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let clusters = ClusterModel {
            centroids: Matrix::zeros(k, 1),
            assignments: assignments.clone(),
            k,
            inertia: 0.0,
            inertia_trace: vec![],
        };
        let refined = dtc_refine(&pseudo, &clusters).map_err(|e| e.to_string())?;
        for i in 0..n {
            ensure(refined.labels[i] == argmax(refined.probs.row(i)), || {
                format!("case {case}: refined label {i} is not the row argmax")
            })?;
            let members: Vec<usize> = (0..n).filter(|&j| assignments[j] == assignments[i]).collect();
            for &j in &members {
                ensure(refined.probs.row(i) == refined.probs.row(j), || {
                    format!("case {case}: rows {i} and {j} differ within a cluster")
                })?;
            }
            for col in 0..c {
                let mean = members.iter().map(|&j| probs[(j, col)]).sum::<f64>() / members.len() as f64;
                ensure((refined.probs[(i, col)] - mean).abs() < 1e-12, || {
                    format!("case {case}: row {i} is not its cluster mean")
                })?;
            }
        }
        let singletons = ClusterModel {
            centroids: Matrix::zeros(n, 1),
            assignments: (0..n).collect(),
            k: n,
            inertia: 0.0,
            inertia_trace: vec![],
        };
        ensure(
            dtc_refine(&pseudo, &singletons).map_err(|e| e.to_string())? == pseudo,
            || format!("case {case}: k = N is not the identity"),
        )?;
    }
    Ok("500 fuzzed cases: constant rows per cluster, cluster means, identity at k = N, argmax consistency".into())
}

fn adabn_recurrence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_matrix(&mut rng, 3, 4, 1.0);
    let bias = vec![0.1, -0.2, 0.3, 0.0];
    let mut bn = BatchNormState::new(4);
    bn.mean = vec![0.5, -0.5, 1.0, 2.0];
    bn.var = vec![1.5, 0.5, 2.0, 1.0];
    let mut model = Classifier::new(
        3,
        vec![
            Layer::Affine(Affine {
                weight: w.clone(),
                bias: bias.clone(),
            }),
            Layer::BatchNorm(bn.clone()),
            Layer::Relu,
            Layer::Affine(Affine::init(4, 2, &mut rng)),
            Layer::Softmax,
        ],
        2,
        3,
    )
    .unwrap();
    let before: Vec<Vec<u64>> = model
        .params()
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    let b1 = random_matrix(&mut rng, 6, 3, 2.0);
    let b2 = random_matrix(&mut rng, 9, 3, 2.0);
    let lambda = 0.9;
    adabn_update_batches(&mut model, [&b1, &b2], lambda).map_err(|e| e.to_string())?;

    let moments = |b: &Matrix| -> (Vec<f64>, Vec<f64>) {
        let pre = b.matmul(&w).unwrap();
        let rows = pre.rows() as f64;
        let mean: Vec<f64> = (0..4)
            .map(|j| (0..pre.rows()).map(|i| pre[(i, j)] + bias[j]).sum::<f64>() / rows)
            .collect();
        let var = (0..4)
            .map(|j| {
                (0..pre.rows())
                    .map(|i| (pre[(i, j)] + bias[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / rows
            })
            .collect();
        (mean, var)
    };
    let (m1, v1) = moments(&b1);
    let (m2, v2) = moments(&b2);
    let got = model.batch_norms().next().unwrap();
    let mut worst = 0.0f64;
    for j in 0..4 {
        let mean = lambda * (lambda * bn.mean[j] + (1.0 - lambda) * m1[j]) + (1.0 - lambda) * m2[j];
        let var = lambda * (lambda * bn.var[j] + (1.0 - lambda) * v1[j]) + (1.0 - lambda) * v2[j];
        worst = worst.max((got.mean[j] - mean).abs()).max((got.var[j] - var).abs());
    }
    ensure(worst <= 1e-12, || format!("running statistics off by {worst:e}"))?;
    let after: Vec<Vec<u64>> = model
        .params()
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    ensure(before == after, || "trainable parameters changed".into())?;
    Ok(format!(
        "two-batch recurrence within {worst:.1e}, parameters bit-identical"
    ))
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic_config() -> ExperimentConfig {
    let path = repo_root().join("configs/synthetic.toml");
    ExperimentConfig::load(&path).expect("shipped synthetic config")
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn synthetic_end_to_end() -> Check {
    let config = synthetic_config();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let domains = load_domains(&config, seed).map_err(|e| e.to_string())?;
        let (model, _) = pretrain(&config, &domains.source, seed).map_err(|e| e.to_string())?;
        let out = run_ssnll(
            &model,
            &domains.target,
            &TrainConfig {
                seed,
                ..config.adapt_train.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        rows.push([
            out.stages.source_only,
            out.stages.adabn,
            out.stages.adabn_dtc,
            out.final_accuracy(),
        ]);
    }
    let med = |j: usize| median(rows.iter().map(|r| r[j])).unwrap();
    let (src, adabn, dtc, fin) = (med(0), med(1), med(2), med(3));
    let summary = format!(
        "medians over {} seeds: source-only {}, +AdaBN {}, +AdaBN+DTC {}, SSNLL {}",
        rows.len(),
        pct(src),
        pct(adabn),
        pct(dtc),
        pct(fin)
    );
    ensure(src < adabn && adabn <= dtc && dtc < fin, || {
        format!("ordering violated; {summary}")
    })?;
    ensure(fin >= 0.90, || format!("SSNLL below 90%; {summary}"))?;
    ensure(fin - dtc >= 0.03, || {
        format!("SSNLL gains less than 3 points over +AdaBN+DTC; {summary}")
    })?;
    Ok(summary)
}

fn split_ratio_sweep() -> Check {
    let config = synthetic_config();
    let ratios = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut finals = vec![Vec::new(); ratios.len()];
    for &seed in &config.seeds {
        let domains = load_domains(&config, seed).map_err(|e| e.to_string())?;
        let (model, _) = pretrain(&config, &domains.source, seed).map_err(|e| e.to_string())?;
        for (i, &r) in ratios.iter().enumerate() {
            let cfg = TrainConfig {
                seed,
                split_ratio: r,
                ..config.adapt_train.clone()
            };
            finals[i].push(
                run_ssnll(&model, &domains.target, &cfg)
                    .map_err(|e| e.to_string())?
                    .final_accuracy(),
            );
        }
    }
    let medians: Vec<f64> = finals.iter().map(|f| median(f.iter().copied()).unwrap()).collect();
    let listing: Vec<String> = ratios
        .iter()
        .zip(&medians)
        .map(|(r, m)| format!("r={r}: {}", pct(*m)))
        .collect();
    let listing = listing.join(", ");
    ensure(medians[1] >= medians[5], || format!("r=0.2 below r=1.0; {listing}"))?;
    let better = medians[..5].iter().filter(|&&m| m < medians[5]).count();
    ensure(better <= 1, || format!("r=1.0 is not among the two worst; {listing}"))?;
    Ok(listing)
}

fn determinism() -> Check {
    let dir = std::env::temp_dir().join(format!("ssnll-acceptance-{}", std::process::id()));
    let config = repo_root().join("configs/synthetic.toml");
    let run = |name: &str| -> Result<PathBuf, String> {
        let out_dir = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ssnll"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(&out_dir)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        Ok(out_dir)
    };
    let (a, b) = (run("a")?, run("b")?);
    let seeds = synthetic_config().seeds;
    let manifest = |dir: &Path| -> Result<serde_json::Value, String> {
        let text = std::fs::read(dir.join("manifest.json")).map_err(|e| e.to_string())?;
        let mut m: serde_json::Value = serde_json::from_slice(&text).map_err(|e| e.to_string())?;
        // the only field allowed to differ
        m["config"]["output_dir"] = serde_json::Value::Null;
        Ok(m)
    };
    ensure(manifest(&a)? == manifest(&b)?, || {
        "manifests differ beyond output_dir".into()
    })?;
    let mut files = vec![PathBuf::from("summary.csv")];
    for s in &seeds {
        for f in ["metrics.jsonl", "final.ckpt"] {
            files.push(Path::new(&format!("seed-{s}")).join(f));
        }
    }
    for f in &files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{}: {e}", f.display()))?;
        ensure(x == y, || format!("{} differs between identical runs", f.display()))?;
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("two `run` invocations, {} files byte-identical", files.len()))
}

fn digits_transfer(slow: bool) -> Option<Check> {
    if !slow {
        return None;
    }
    let dir = PathBuf::from(std::env::var_os("SSNLL_DIGITS_DIR")?);
    Some((|| {
        let path = repo_root().join("configs/digits.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let mut config = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
        if let DatasetConfig::Idx(idx) = &mut config.dataset {
            idx.source_images = dir.join("source-images-idx3-ubyte");
            idx.source_labels = dir.join("source-labels-idx1-ubyte");
            idx.target_images = dir.join("target-images-idx3-ubyte");
            idx.target_labels = dir.join("target-labels-idx1-ubyte");
        }
        config.validate().map_err(|e| e.to_string())?;
        let seed = config.seeds[0];
        let domains = load_domains(&config, seed).map_err(|e| e.to_string())?;
        let (model, _) = pretrain(&config, &domains.source, seed).map_err(|e| e.to_string())?;
        let out = run_ssnll(
            &model,
            &domains.target,
            &TrainConfig {
                seed,
                ..config.adapt_train.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        let (src, fin) = (
            out.stages.source_only.unwrap_or(0.0),
            out.final_accuracy().unwrap_or(0.0),
        );
        let summary = format!("source-only {}, SSNLL {}", pct(src), pct(fin));
        ensure(fin - src >= 0.05, || format!("gain below 5 points; {summary}"))?;
        Ok(summary)
    })())
}

fn main() -> ExitCode {
    let slow = std::env::args().any(|a| a == "--slow");
    type Criterion = (&'static str, Duration, Box<dyn Fn() -> Check>);
    let criteria: Vec<Criterion> = vec![
        ("gradient oracle", Duration::from_secs(30), Box::new(gradient_oracle)),
        ("k-means oracle", Duration::from_secs(10), Box::new(kmeans_oracle)),
        (
            "splitting properties",
            Duration::from_secs(5),
            Box::new(split_properties),
        ),
        (
            "cluster refinement algebra",
            Duration::from_secs(5),
            Box::new(dtc_algebra),
        ),
        ("AdaBN recurrence", Duration::from_secs(5), Box::new(adabn_recurrence)),
        (
            "synthetic end-to-end",
            Duration::from_secs(180),
            Box::new(synthetic_end_to_end),
        ),
        (
            "split-ratio sweep",
            Duration::from_secs(600),
            Box::new(split_ratio_sweep),
        ),
        ("determinism", Duration::from_secs(120), Box::new(determinism)),
    ];
    let mut failed = 0;
    let mut report = |name: &str, limit: Duration, started: Instant, result: Check| {
        let elapsed = started.elapsed();
        let result = result.and_then(|msg| {
            ensure(elapsed <= limit, || {
                format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())
            })?;
            Ok(msg)
        });
        match result {
            Ok(msg) => println!("PASS  {name} [{:.1}s]: {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} [{:.1}s]: {msg}", elapsed.as_secs_f64());
            }
        }
    };
    for (name, limit, check) in &criteria {
        let started = Instant::now();
        report(name, *limit, started, check());
    }
    let started = Instant::now();
    match digits_transfer(slow) {
        Some(result) => report("digit transfer (slow)", Duration::from_secs(900), started, result),
        None if slow => println!("SKIP  digit transfer (slow): SSNLL_DIGITS_DIR is not set"),
        None => println!("SKIP  digit transfer (slow): pass --slow to run"),
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion does.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use flipset_core::data::{seeded_rng, Dataset};
use flipset_core::experiments::synth::{generate, SynthConfig, SyntheticData};
use flipset_core::experiments::{
    run_bias_study, run_k_histogram, run_k_vs_probability, run_method_comparison,
    run_noise_sweep, run_relabel_vs_remove, BiasStudyConfig, ExperimentReport,
    MethodComparisonConfig, NoiseSweepConfig, RelabelVsRemoveConfig,
};
use flipset_core::flipset::{batch_flipsets, flip_order, found_rate, Mode};
use flipset_core::influence::{Attribution, Method};
use flipset_core::model::{gradient, objective, train, TrainConfig, TrainedModel};
use flipset_core::oracle::{approximation_quality, brute_force_min_flipset, verify_flip};
use rand::Rng;
use rand_distr::StandardNormal;

const TAU: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn synth(n_train: usize, n_test: usize, dim: usize, separation: f64, seed: u64) -> SyntheticData {
    generate(&SynthConfig {
        n_train,
        n_test,
        dim,
        separation,
        tag_x_share: None,
        seed,
    })
    .unwrap()
}

fn summary(r: &ExperimentReport, key: &str) -> f64 {
    r.summary_f64(key).unwrap_or(f64::NAN)
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-12)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn derivatives() -> Outcome {
    let mut rng = seeded_rng(101);
    let h = 1e-5;
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let d = rng.random_range(1..6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let labels = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let ds = Dataset::from_dense_rows(&rows, labels).unwrap();
        let lambda = rng.random_range(0.01..1.0);
        let w: Vec<f64> = (0..=d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        let g = gradient(&ds, &w, lambda, true);
        let mut fd_g = vec![0.0; w.len()];
        for j in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            fd_g[j] = (objective(&ds, &up, lambda, true) - objective(&ds, &down, lambda, true)) / (2.0 * h);
        }
        let diff: Vec<f64> = g.iter().zip(&fd_g).map(|(a, b)| a - b).collect();
        worst_g = worst_g.max(norm(&diff) / norm(&fd_g).max(1e-12));

        let cfg = TrainConfig::with_lambda(lambda);
        let model = TrainedModel::from_weights(w.clone(), cfg).unwrap();
        let hess = model.build_hessian(&ds).unwrap().to_dense();
        let scale = hess.norm();
        for j in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let gu = gradient(&ds, &up, lambda, true);
            let gd = gradient(&ds, &down, lambda, true);
            for i in 0..w.len() {
                let fd = (gu[i] - gd[i]) / (2.0 * h);
                worst_h = worst_h.max(rel_err(hess[(i, j)], fd, scale));
            }
        }
    }
    Outcome {
        pass: worst_g <= 1e-6 && worst_h <= 1e-5,
        detail: format!("max rel err gradient {worst_g:.2e} (<= 1e-6), hessian {worst_h:.2e} (<= 1e-5)"),
    }
}

fn fit(ds: &Dataset, lambda: f64) -> TrainedModel {
    let m = train(ds, &TrainConfig::with_lambda(lambda)).unwrap();
    assert!(m.converged(), "training did not converge");
    m
}

fn influence_fidelity() -> Outcome {
    let data = synth(300, 1, 10, 2.0, 7);
    let model = fit(&data.train, 0.1);
    let hessian = model.build_hessian(&data.train).unwrap();
    let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
    let report = approximation_quality(&attr, &[data.test.dense_row(0)], 300, 0, jobs()).unwrap();
    let r = report.pearson.value;
    let mae = report.mean_abs_error;
    Outcome {
        pass: !report.pearson.degenerate && r >= 0.95 && mae <= 0.01,
        detail: format!(
            "{} retrainings, pearson {r:.5} (>= 0.95), MAE {mae:.2e} (<= 0.01)",
            report.rows.len() + 1
        ),
    }
}

fn greedy_contract() -> Outcome {
    let data = synth(300, 200, 10, 2.0, 11);
    let model = fit(&data.train, 0.1);
    let hessian = model.build_hessian(&data.train).unwrap();
    let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
    let sets = batch_flipsets(&attr, &data.test, TAU, Mode::Relabel, jobs());

    let mut contract_ok = true;
    for s in sets.iter().filter(|s| s.found) {
        let x_t = data.test.dense_row(s.test_id);
        let scores = attr.ip_relabel(&x_t).unwrap().values;
        let order = flip_order(&scores, s.original_prediction);
        let mut acc = s.original_prob;
        for &i in &order[..s.k - 1] {
            acc += scores[i];
        }
        let before = u8::from(acc > TAU) != s.original_prediction;
        acc += scores[order[s.k - 1]];
        let after = u8::from(acc > TAU) != s.original_prediction;
        contract_ok &= !before && after && order[..s.k] == s.indices[..];
    }

    let found: Vec<_> = sets.iter().filter(|s| s.found).collect();
    let flipped = found
        .iter()
        .filter(|s| {
            let x_t = data.test.dense_row(s.test_id);
            verify_flip(&data.train, s, &model, &x_t, TAU).unwrap().flipped
        })
        .count();
    let rate = flipped as f64 / found.len().max(1) as f64;
    Outcome {
        pass: contract_ok && !found.is_empty() && rate >= 0.6,
        detail: format!(
            "prefix contract {} on {} found of 200, found rate {:.3}, verified flip rate {rate:.3} (>= 0.6)",
            if contract_ok { "holds" } else { "BROKEN" },
            found.len(),
            found_rate(&sets)
        ),
    }
}

fn oracle_dominance() -> Outcome {
    let lambda = 1.0;
    let mut dominated = 0;
    let mut matched = 0;
    let mut worst = String::new();
    for seed in 0..30u64 {
        let data = synth(12, 20, 2, 2.0, seed);
        let model = fit(&data.train, lambda);
        let hessian = model.build_hessian(&data.train).unwrap();
        let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
        let sets = batch_flipsets(&attr, &data.test, TAU, Mode::Relabel, 1);
        let Some(s) = sets.iter().find(|s| s.found) else {
            worst = format!("instance {seed}: no greedy set");
            continue;
        };
        let x_t = data.test.dense_row(s.test_id);
        let exact = brute_force_min_flipset(
            &data.train,
            &x_t,
            TAU,
            model.config(),
            data.train.n_samples(),
            jobs(),
        )
        .unwrap();
        match exact {
            Some(e) if e.k <= s.k => {
                dominated += 1;
                matched += usize::from(e.k == s.k);
            }
            other => {
                worst = format!(
                    "instance {seed}: greedy {} exact {:?}",
                    s.k,
                    other.map(|e| e.k)
                )
            }
        }
    }
    Outcome {
        pass: dominated == 30 && matched * 10 >= 30 * 6,
        detail: format!(
            "N=12 lambda={lambda}: k* <= greedy k on {dominated}/30, equal on {matched}/30 (>= 18){}",
            if worst.is_empty() { String::new() } else { format!("; {worst}") }
        ),
    }
}

fn small_subsets() -> Outcome {
    let data = synth(1000, 200, 100, 1.0, 0);
    let model = fit(&data.train, 0.001);
    let hessian = model.build_hessian(&data.train).unwrap();
    let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
    let report = run_k_histogram(&attr, &data.test, TAU, jobs()).unwrap();
    let med = summary(&report, "median_k");
    let hist = report.table("histogram").unwrap();
    let shown: Vec<String> = hist
        .rows
        .iter()
        .take(8)
        .map(|r| format!("{}:{}", r[0], r[1]))
        .collect();
    Outcome {
        pass: med <= 0.01 * 1000.0,
        detail: format!(
            "N=1000 d=100: median k {med} (<= 10), found rate {:.3}, k histogram {} ...",
            summary(&report, "found_rate"),
            shown.join(" ")
        ),
    }
}

fn noise_trend() -> Outcome {
    let data = generate(&SynthConfig::default()).unwrap();
    let cfg = NoiseSweepConfig::default();
    let report = run_noise_sweep(&data.train, &data.test, &cfg, jobs()).unwrap();
    let table = report.table("ratios").unwrap();
    let ratios = table.column_f64("ratio").unwrap();
    let mean_k = table.column_f64("mean_k").unwrap();
    let acc = table.column_f64("accuracy").unwrap();
    let at = |col: &[f64], r: f64| -> f64 {
        let i = ratios.iter().position(|x| (x - r).abs() < 1e-9).unwrap();
        col[i]
    };
    let drop = at(&mean_k, 0.4) < at(&mean_k, 0.0);
    let rise = at(&mean_k, 0.9) > at(&mean_k, 0.5);
    let acc_ok = [0.1, 0.2]
        .iter()
        .all(|&r| (at(&acc, r) - at(&acc, 0.0)).abs() <= 0.03);
    Outcome {
        pass: drop && rise && acc_ok,
        detail: format!(
            "mean k @0.0 {:.2} @0.4 {:.2} @0.5 {:.2} @0.9 {:.2}; accuracy @0.0 {:.3} @0.1 {:.3} @0.2 {:.3}",
            at(&mean_k, 0.0),
            at(&mean_k, 0.4),
            at(&mean_k, 0.5),
            at(&mean_k, 0.9),
            at(&acc, 0.0),
            at(&acc, 0.1),
            at(&acc, 0.2)
        ),
    }
}

fn method_comparison() -> Outcome {
    let data = generate(&SynthConfig::default()).unwrap();
    let model = fit(&data.train, TrainConfig::default().lambda);
    let hessian = model.build_hessian(&data.train).unwrap();
    let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
    let cfg = MethodComparisonConfig::default();
    let report = run_method_comparison(&attr, &data.test, &cfg, jobs()).unwrap();
    let means = report.table("means").unwrap();
    let lookup = |method: Method, k: usize| -> f64 {
        means
            .filter("method", method.name())
            .filter("k", &k.to_string())
            .column_f64("mean_abs_delta")
            .unwrap()[0]
    };
    let mut ok = summary(&report, "n_test_points") == 100.0;
    let mut parts = Vec::new();
    for k in [1, 5, 10, 20] {
        let ip = lookup(Method::IpRelabel, k);
        let rnd = lookup(Method::Random, k);
        ok &= ip >= rnd;
        parts.push(format!("k={k} {ip:.4} vs {rnd:.4}"));
    }
    Outcome {
        pass: ok,
        detail: format!("mean |dp| IP_RELABEL vs RANDOM: {}", parts.join(", ")),
    }
}

fn bias_composition() -> Outcome {
    let data = generate(&SynthConfig {
        tag_x_share: Some(0.4),
        ..Default::default()
    })
    .unwrap();
    let report = run_bias_study(&data.train, &data.test, &BiasStudyConfig::default(), jobs()).unwrap();
    let target = summary(&report, "mean_overlap_target");
    let other = summary(&report, "mean_overlap_other");
    Outcome {
        pass: target > other,
        detail: format!(
            "mean overlap X {target:.3} ({} points) vs Y {other:.3} ({} points)",
            summary(&report, "n_misclassified_target"),
            summary(&report, "n_misclassified_other")
        ),
    }
}

fn relabel_vs_remove() -> Outcome {
    let data = generate(&SynthConfig::default()).unwrap();
    let cfg = RelabelVsRemoveConfig::default();
    let report = run_relabel_vs_remove(&data.train, &data.test, &cfg, jobs()).unwrap();
    let get = |k: &str| summary(&report, k);
    let pass = get("n_paired") > 0.0
        && get("mean_k_relabel") <= get("mean_k_remove")
        && get("mean_noisy_relabel") < get("mean_noisy_remove")
        && get("mean_clean_relabel") < get("mean_clean_remove");
    Outcome {
        pass,
        detail: format!(
            "{} paired points; mean k {:.2} vs {:.2}, noisy {:.2} vs {:.2}, clean {:.2} vs {:.2} (relabel vs remove)",
            get("n_paired"),
            get("mean_k_relabel"),
            get("mean_k_remove"),
            get("mean_noisy_relabel"),
            get("mean_noisy_remove"),
            get("mean_clean_relabel"),
            get("mean_clean_remove")
        ),
    }
}

fn run_all_experiments(jobs: usize) -> Vec<ExperimentReport> {
    let data = synth(200, 60, 5, 1.5, 3);
    let tagged = generate(&SynthConfig {
        n_train: 200,
        n_test: 60,
        dim: 5,
        separation: 1.5,
        tag_x_share: Some(0.4),
        seed: 3,
    })
    .unwrap();
    let train_cfg = TrainConfig::with_lambda(0.05);
    let model = fit(&data.train, train_cfg.lambda);
    let hessian = model.build_hessian(&data.train).unwrap();
    let attr = Attribution::new(&model, &hessian, &data.train).unwrap();
    vec![
        run_noise_sweep(
            &data.train,
            &data.test,
            &NoiseSweepConfig {
                ratios: vec![0.0, 0.3, 0.6],
                train: train_cfg.clone(),
                tau: TAU,
                seed: 5,
            },
            jobs,
        )
        .unwrap(),
        run_k_vs_probability(&attr, &data.test, TAU, jobs).unwrap(),
        run_method_comparison(
            &attr,
            &data.test,
            &MethodComparisonConfig {
                sample_size: 8,
                k_grid: vec![0, 3],
                seed: 5,
                ..Default::default()
            },
            jobs,
        )
        .unwrap(),
        run_bias_study(
            &tagged.train,
            &tagged.test,
            &BiasStudyConfig {
                train: train_cfg.clone(),
                seed: 5,
                ..Default::default()
            },
            jobs,
        )
        .unwrap(),
        run_relabel_vs_remove(
            &data.train,
            &data.test,
            &RelabelVsRemoveConfig {
                train: train_cfg,
                seed: 5,
                ..Default::default()
            },
            jobs,
        )
        .unwrap(),
        run_k_histogram(&attr, &data.test, TAU, jobs).unwrap(),
    ]
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, fs::read(&path).unwrap());
        }
    }
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let runs = [("a", 1), ("b", 1), ("c", jobs().max(2))];
    let mut ids = Vec::new();
    for (tag, j) in runs {
        for r in run_all_experiments(j) {
            r.write_dir(root.path().join(tag).join(&r.experiment_id)).unwrap();
            if tag == "a" {
                ids.push(r.experiment_id.clone());
            }
        }
    }
    for id in &ids {
        let a = csv_bytes(&root.path().join("a").join(id));
        for tag in ["b", "c"] {
            if a.is_empty() || csv_bytes(&root.path().join(tag).join(id)) != a {
                mismatched.push(format!("{id}({tag})"));
            }
        }
    }
    Outcome {
        pass: mismatched.is_empty() && ids.len() == 6,
        detail: if mismatched.is_empty() {
            format!("{} experiments, reruns and threaded runs byte-identical", ids.len())
        } else {
            format!("differing CSV output: {}", mismatched.join(", "))
        },
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("derivative correctness", Duration::from_secs(10), derivatives),
        ("influence fidelity", Duration::from_secs(120), influence_fidelity),
        ("greedy prefix contract", Duration::from_secs(180), greedy_contract),
        ("oracle dominance", Duration::from_secs(300), oracle_dominance),
        ("small-subset claim", Duration::from_secs(60), small_subsets),
        ("noise trend", Duration::from_secs(300), noise_trend),
        ("method comparison", Duration::from_secs(600), method_comparison),
        ("bias composition", Duration::from_secs(300), bias_composition),
        ("relabel vs remove", Duration::from_secs(600), relabel_vs_remove),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failures = 0;
    for (n, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed < limit;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s < {}s]",
            n + 1,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

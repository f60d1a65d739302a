use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use flipset_core::data::{load_dense_csv, load_sparse, write_dense_csv, Dataset, FeatureMatrix};
use flipset_core::experiments::synth::{generate, SynthConfig, SyntheticData};
use flipset_core::experiments::{
    run_bias_study, run_k_histogram, run_k_vs_probability, run_method_comparison,
    run_noise_sweep, run_relabel_vs_remove, BiasStudyConfig, ExperimentKind, ExperimentReport,
    MethodComparisonConfig, NoiseSweepConfig, RelabelVsRemoveConfig,
};
use flipset_core::flipset::{batch_flipsets_for, check_tau, found_rate, k_histogram, FlipSet};
use flipset_core::influence::{Attribution, Method};
use flipset_core::model::{gradient, train, TrainConfig, TrainedModel};
use flipset_core::oracle::{verify_flip, write_verification_csv, VerificationReport};
use flipset_core::stats::median;
use flipset_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    DataArgs, ExperimentArgs, FlipsetArgs, FormatArgs, SolverArgs, SynthArgs, TrainArgs,
    VerifyArgs,
};

/// Machine-readable result line for stdout.
pub type Summary = Value;

fn load(path: &Path, format: &FormatArgs) -> Result<Dataset> {
    let ds = if format.sparse {
        load_sparse(path)?
    } else {
        load_dense_csv(path, &format.label, format.tag_column.as_deref())?
    };
    log::info!(
        "loaded {}: {} rows, {} features",
        path.display(),
        ds.n_samples(),
        ds.n_features()
    );
    Ok(ds)
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    load(&args.data, &args.format)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train_config(s: &SolverArgs) -> TrainConfig {
    TrainConfig {
        lambda: s.lambda,
        tolerance: s.tol,
        max_iters: s.max_iters,
        fit_intercept: !s.no_intercept,
        ..TrainConfig::default()
    }
}

pub fn synth(args: &SynthArgs) -> Result<Summary> {
    let cfg = SynthConfig {
        n_train: args.n_train,
        n_test: args.n_test,
        dim: args.dim,
        separation: args.separation,
        tag_x_share: args.tag_share,
        seed: args.seed,
    };
    let data = generate(&cfg)?;
    create_dir(&args.out)?;
    for (name, ds) in [("train.csv", &data.train), ("test.csv", &data.test)] {
        let path = args.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_dense_csv(ds, BufWriter::new(file), "label")?;
    }
    write_json(&args.out.join("config.json"), &json!({ "command": "synth", "synth": cfg }))?;
    Ok(json!({
        "train": args.out.join("train.csv"),
        "test": args.out.join("test.csv"),
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
    }))
}

fn sibling_config(model_path: &Path) -> std::path::PathBuf {
    let stem = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model_path.with_file_name(format!("{stem}.config.json"))
}

pub fn train_model(args: &TrainArgs) -> Result<Summary> {
    check_tau(args.threshold)?;
    let cfg = train_config(&args.solver);
    cfg.validate()?;
    let ds = load_data(&args.data)?;
    let model = train(&ds, &cfg)?.with_threshold(args.threshold)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&args.out)?;
    write_json(
        &sibling_config(&args.out),
        &json!({ "command": "train", "args": args, "train_config": cfg }),
    )?;
    log::info!(
        "{} Newton steps, gradient norm {:.3e}",
        model.newton_iterations(),
        model.final_gradient_norm()
    );
    model.ensure_converged()?;
    Ok(json!({
        "model": args.out,
        "converged": model.converged(),
        "newton_iterations": model.newton_iterations(),
        "final_gradient_norm": model.final_gradient_norm(),
        "train_accuracy": model.accuracy(&ds),
    }))
}

/// Widens sparse test rows whose highest index falls short of the model's
/// feature count.
fn align_features(test: Dataset, d: usize) -> Result<Dataset> {
    let have = test.n_features();
    if have == d {
        return Ok(test);
    }
    if have > d || !test.features().is_sparse() {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: have,
        }
        .into());
    }
    let rows = (0..test.n_samples())
        .map(|i| test.row(i).entries().collect())
        .collect();
    let tags = test.tags().map(<[String]>::to_vec);
    Ok(Dataset::new(
        FeatureMatrix::sparse(d, rows)?,
        test.labels().to_vec(),
        tags,
        None,
    )?)
}

fn load_model(path: &Path, ds: &Dataset) -> Result<TrainedModel> {
    let model = TrainedModel::load(path)?;
    model.ensure_converged()?;
    if ds.n_features() != model.n_features() {
        bail!(Error::DimensionMismatch {
            expected: model.n_features(),
            got: ds.n_features(),
        });
    }
    let g = gradient(ds, model.weights(), model.lambda(), model.config().fit_intercept);
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gnorm > 1e-6_f64.max(100.0 * model.config().tolerance) {
        log::warn!("model is not stationary on this training data (gradient norm {gnorm:.3e})");
    }
    Ok(model)
}

fn test_row(test: &Dataset, i: usize) -> Vec<f64> {
    test.dense_row(i)
}

pub fn flipset(args: &FlipsetArgs) -> Result<Summary> {
    let ds = load_data(&args.data)?;
    let model = load_model(&args.model, &ds)?;
    let tau = args.tau.unwrap_or(model.threshold());
    check_tau(tau)?;
    let test = align_features(load(&args.test, &args.data.format)?, model.n_features())?;
    let rows: Vec<usize> = match args.test_index {
        Some(i) if i >= test.n_samples() => {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: test.n_samples(),
            })
            .context("--test-index")
        }
        Some(i) => vec![i],
        None => (0..test.n_samples()).collect(),
    };

    let hessian = model.build_hessian(&ds)?;
    let attr = Attribution::new(&model, &hessian, &ds)?;
    let sets = batch_flipsets_for(&attr, &test, &rows, tau, args.mode.into(), args.jobs);
    for s in sets.iter().filter(|s| s.error.is_some()) {
        log::warn!("test row {}: {}", s.test_id, s.error.as_deref().unwrap_or(""));
    }

    create_dir(&args.out)?;
    write_json(&args.out.join("flipsets.json"), &sets)?;
    let mut hist = String::from("k,count\n");
    for (k, count) in k_histogram(&sets) {
        hist.push_str(&format!("{k},{count}\n"));
    }
    fs::write(args.out.join("histogram.csv"), hist)?;

    let mut summary = json!({
        "test_points": sets.len(),
        "found": sets.iter().filter(|s| s.found).count(),
        "found_rate": found_rate(&sets),
        "median_k": median(&found_ks(&sets)),
        "out": args.out,
    });
    if args.verify {
        let reports = verify_all(&ds, &model, &test, &sets)?;
        write_reports(&args.out, &reports)?;
        summary["verified_flip_rate"] = json!(flip_rate(&reports));
    }
    write_json(
        &args.out.join("config.json"),
        &json!({
            "command": "flipset",
            "args": args,
            "tau": tau,
            "train_config": model.config(),
        }),
    )?;
    Ok(summary)
}

fn found_ks(sets: &[FlipSet]) -> Vec<f64> {
    sets.iter().filter(|s| s.found).map(|s| s.k as f64).collect()
}

fn verify_all(
    ds: &Dataset,
    model: &TrainedModel,
    test: &Dataset,
    sets: &[FlipSet],
) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for s in sets.iter().filter(|s| s.found) {
        if s.test_id >= test.n_samples() {
            bail!(Error::IndexOutOfRange {
                index: s.test_id,
                len: test.n_samples(),
            });
        }
        let report = verify_flip(ds, s, model, &test_row(test, s.test_id), s.tau)?;
        log::debug!("test row {}: flipped={}", s.test_id, report.flipped);
        out.push(report);
    }
    Ok(out)
}

fn write_reports(dir: &Path, reports: &[VerificationReport]) -> Result<()> {
    let path = dir.join("verification.csv");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_verification_csv(reports, BufWriter::new(file))?;
    Ok(())
}

fn flip_rate(reports: &[VerificationReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.flipped).count() as f64 / reports.len() as f64
}

pub fn verify(args: &VerifyArgs) -> Result<Summary> {
    let ds = load_data(&args.data)?;
    let model = load_model(&args.model, &ds)?;
    let test = align_features(load(&args.test, &args.data.format)?, model.n_features())?;
    let text = fs::read_to_string(&args.flipsets)
        .with_context(|| format!("reading {}", args.flipsets.display()))?;
    let sets: Vec<FlipSet> = serde_json::from_str(&text).context("parsing flip sets")?;
    let reports = verify_all(&ds, &model, &test, &sets)?;
    create_dir(&args.out)?;
    write_reports(&args.out, &reports)?;
    write_json(
        &args.out.join("config.json"),
        &json!({ "command": "verify", "args": args, "train_config": model.config() }),
    )?;
    Ok(json!({
        "verified": reports.len(),
        "flipped": reports.iter().filter(|r| r.flipped).count(),
        "verified_flip_rate": flip_rate(&reports),
        "out": args.out,
    }))
}

fn experiment_data(args: &ExperimentArgs, kind: ExperimentKind) -> Result<(SyntheticData, Value)> {
    if let (Some(train_path), Some(test_path)) = (&args.data, &args.test) {
        let data = SyntheticData {
            train: load(train_path, &args.format)?,
            test: load(test_path, &args.format)?,
        };
        let source = json!({ "train": train_path, "test": test_path, "format": args.format });
        return Ok((data, source));
    }
    let cfg = SynthConfig {
        n_train: args.n_train,
        n_test: args.n_test,
        dim: args.dim,
        separation: args.separation,
        tag_x_share: (kind == ExperimentKind::BiasStudy).then_some(args.tag_share),
        seed: args.seed,
    };
    Ok((generate(&cfg)?, json!({ "synthetic": cfg })))
}

pub fn experiment(args: &ExperimentArgs) -> Result<Summary> {
    let kind: ExperimentKind = args.name.parse()?;
    check_tau(args.tau)?;
    let cfg = train_config(&args.solver);
    cfg.validate()?;
    let methods = match &args.methods {
        Some(names) => names
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()?,
        None => Method::ALL.to_vec(),
    };
    let (data, source) = experiment_data(args, kind)?;
    let (train_set, test) = (&data.train, &data.test);
    let jobs = args.jobs;

    let with_attr = |f: &dyn Fn(&Attribution<'_>) -> flipset_core::Result<ExperimentReport>| -> Result<ExperimentReport> {
        let model = train(train_set, &cfg)?.with_threshold(args.tau)?;
        model.ensure_converged()?;
        let hessian = model.build_hessian(train_set)?;
        let attr = Attribution::new(&model, &hessian, train_set)?;
        Ok(f(&attr)?)
    };

    let mut report = match kind {
        ExperimentKind::NoiseSweep => run_noise_sweep(
            train_set,
            test,
            &NoiseSweepConfig {
                ratios: args
                    .ratios
                    .clone()
                    .unwrap_or_else(|| NoiseSweepConfig::default().ratios),
                train: cfg.clone(),
                tau: args.tau,
                seed: args.seed,
            },
            jobs,
        )?,
        ExperimentKind::RelabelVsRemove => run_relabel_vs_remove(
            train_set,
            test,
            &RelabelVsRemoveConfig {
                noise_ratio: args.noise_ratio,
                sample_size: args.sample_size,
                train: cfg.clone(),
                tau: args.tau,
                seed: args.seed,
            },
            jobs,
        )?,
        ExperimentKind::BiasStudy => run_bias_study(
            train_set,
            test,
            &BiasStudyConfig {
                target_tag: args.target_tag.clone(),
                eligible_label: args.eligible_label,
                flip_fraction: args.flip_fraction,
                train: cfg.clone(),
                tau: args.tau,
                seed: args.seed,
            },
            jobs,
        )?,
        ExperimentKind::KHistogram => with_attr(&|a| run_k_histogram(a, test, args.tau, jobs))?,
        ExperimentKind::KVsProb => with_attr(&|a| run_k_vs_probability(a, test, args.tau, jobs))?,
        ExperimentKind::MethodComparison => with_attr(&|a| {
            run_method_comparison(
                a,
                test,
                &MethodComparisonConfig {
                    k_grid: args
                        .k_grid
                        .clone()
                        .unwrap_or_else(|| MethodComparisonConfig::default().k_grid),
                    methods: methods.clone(),
                    sample_size: args.sample_size,
                    seed: args.seed,
                },
                jobs,
            )
        })?,
    };

    report.config = json!({
        "experiment": report.config,
        "data": source,
        "train_config": cfg,
        "seed": args.seed,
        "jobs": jobs,
    });
    report.write_dir(&args.out)?;
    Ok(json!({
        "experiment": report.experiment_id,
        "out": args.out,
        "summary": report.summary,
    }))
}

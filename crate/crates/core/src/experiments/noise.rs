use serde::{Deserialize, Serialize};

use super::report::{Cell, ExperimentReport, Table};
use super::{fit, misclassified, sample_from, sub_seed};
use crate::data::{inject_label_noise, Dataset};
use crate::error::Result;
use crate::flipset::{batch_flipsets, batch_flipsets_for, check_tau, found_rate, Mode};
use crate::influence::Attribution;
use crate::model::{train, TrainConfig};
use crate::stats::{mean, median};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepConfig {
    pub ratios: Vec<f64>,
    pub train: TrainConfig,
    pub tau: f64,
    pub seed: u64,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        NoiseSweepConfig {
            ratios: (0..10).map(|i| i as f64 / 10.0).collect(),
            train: TrainConfig::default(),
            tau: 0.5,
            seed: 0,
        }
    }
}

/// For each ratio: flip that share of training labels (nested noise sets),
/// retrain, and record flip-set sizes over the test set plus test accuracy
/// against the clean test labels.
pub fn run_noise_sweep(
    train_set: &Dataset,
    test: &Dataset,
    cfg: &NoiseSweepConfig,
    jobs: usize,
) -> Result<ExperimentReport> {
    check_tau(cfg.tau)?;
    let mut report = ExperimentReport::new("noise-sweep", cfg)?;
    let mut points = Table::new(&["ratio", "test_id", "prob", "found", "k"]);
    let mut per_ratio = Table::new(&[
        "ratio",
        "n_noisy",
        "converged",
        "accuracy",
        "found_rate",
        "mean_k",
        "mean_k_imputed",
        "median_k",
    ]);
    let n = train_set.n_samples();
    let noise_seed = sub_seed(cfg.seed, 1);

    for &ratio in &cfg.ratios {
        let (noisy, noise) = inject_label_noise(train_set, ratio, noise_seed)?;
        let model = train(&noisy, &cfg.train)?.with_threshold(cfg.tau)?;
        if !model.converged() {
            log::warn!("noise ratio {ratio}: training did not converge");
            per_ratio.push(vec![
                ratio.into(),
                noise.len().into(),
                false.into(),
                Cell::Float(f64::NAN),
                Cell::Float(f64::NAN),
                Cell::Float(f64::NAN),
                Cell::Float(f64::NAN),
                Cell::Float(f64::NAN),
            ]);
            continue;
        }
        let hessian = model.build_hessian(&noisy)?;
        let attr = Attribution::new(&model, &hessian, &noisy)?;
        let sets = batch_flipsets(&attr, test, cfg.tau, Mode::Relabel, jobs);
        for s in &sets {
            points.push(vec![
                ratio.into(),
                s.test_id.into(),
                s.original_prob.into(),
                s.found.into(),
                s.k.into(),
            ]);
        }
        let ks: Vec<f64> = sets.iter().filter(|s| s.found).map(|s| s.k as f64).collect();
        let imputed: Vec<f64> = sets
            .iter()
            .map(|s| if s.found { s.k as f64 } else { n as f64 })
            .collect();
        per_ratio.push(vec![
            ratio.into(),
            noise.len().into(),
            true.into(),
            model.accuracy(test).into(),
            found_rate(&sets).into(),
            mean(&ks).into(),
            mean(&imputed).into(),
            median(&ks).into(),
        ]);
    }

    report.set("n_train", n);
    report.set("n_test", test.n_samples());
    report.tables.insert("rows".into(), points);
    report.tables.insert("ratios".into(), per_ratio);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelVsRemoveConfig {
    pub noise_ratio: f64,
    /// Cap on the number of misclassified test points examined.
    pub sample_size: usize,
    pub train: TrainConfig,
    pub tau: f64,
    pub seed: u64,
}

impl Default for RelabelVsRemoveConfig {
    fn default() -> Self {
        RelabelVsRemoveConfig {
            noise_ratio: 0.3,
            sample_size: 100,
            train: TrainConfig::default(),
            tau: 0.5,
            seed: 0,
        }
    }
}

/// Compares relabel and removal flip sets on misclassified test points of a
/// model trained with injected label noise, splitting each set into its
/// noisy part (inside the noise set) and its clean part.
///
/// Summary means are over test points where both modes found a set.
pub fn run_relabel_vs_remove(
    train_set: &Dataset,
    test: &Dataset,
    cfg: &RelabelVsRemoveConfig,
    jobs: usize,
) -> Result<ExperimentReport> {
    check_tau(cfg.tau)?;
    let mut report = ExperimentReport::new("relabel-vs-remove", cfg)?;
    let (noisy, noise) = inject_label_noise(train_set, cfg.noise_ratio, sub_seed(cfg.seed, 1))?;
    let model = fit(&noisy, &cfg.train)?.with_threshold(cfg.tau)?;
    let hessian = model.build_hessian(&noisy)?;
    let attr = Attribution::new(&model, &hessian, &noisy)?;

    let wrong = misclassified(&model, test)?;
    let chosen = sample_from(&wrong, cfg.sample_size, sub_seed(cfg.seed, 2));
    let relabel = batch_flipsets_for(&attr, test, &chosen, cfg.tau, Mode::Relabel, jobs);
    let remove = batch_flipsets_for(&attr, test, &chosen, cfg.tau, Mode::Remove, jobs);

    let split = |indices: &[usize]| -> (usize, usize) {
        let noisy_part = indices.iter().filter(|i| noise.contains(i)).count();
        (noisy_part, indices.len() - noisy_part)
    };
    let mut rows = Table::new(&["test_id", "mode", "found", "k", "noisy", "clean"]);
    let mut paired: Vec<[f64; 6]> = Vec::new();
    for (a, b) in relabel.iter().zip(&remove) {
        for s in [a, b] {
            let (s1, s2) = split(&s.indices);
            let mode = match s.mode {
                Mode::Relabel => "relabel",
                Mode::Remove => "remove",
            };
            rows.push(vec![
                s.test_id.into(),
                mode.into(),
                s.found.into(),
                s.k.into(),
                s1.into(),
                s2.into(),
            ]);
        }
        if a.found && b.found {
            let (a1, a2) = split(&a.indices);
            let (b1, b2) = split(&b.indices);
            paired.push([
                a.k as f64, b.k as f64, a1 as f64, b1 as f64, a2 as f64, b2 as f64,
            ]);
        }
    }
    let col = |j: usize| -> f64 { mean(&paired.iter().map(|r| r[j]).collect::<Vec<_>>()) };

    report.set("n_noise", noise.len());
    report.set("n_misclassified", wrong.len());
    report.set("n_examined", chosen.len());
    report.set("found_rate_relabel", found_rate(&relabel));
    report.set("found_rate_remove", found_rate(&remove));
    report.set("n_paired", paired.len());
    report.set("mean_k_relabel", col(0));
    report.set("mean_k_remove", col(1));
    report.set("mean_noisy_relabel", col(2));
    report.set("mean_noisy_remove", col(3));
    report.set("mean_clean_relabel", col(4));
    report.set("mean_clean_remove", col(5));
    report.tables.insert("rows".into(), rows);
    Ok(report)
}

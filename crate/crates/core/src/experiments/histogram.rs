use serde_json::json;

use super::report::{ExperimentReport, Table};
use crate::data::Dataset;
use crate::error::Result;
use crate::flipset::{batch_flipsets, check_tau, found_rate, k_histogram, FlipSet, Mode};
use crate::influence::Attribution;
use crate::stats::{mean, median, percentile, spearman};

fn point_table(sets: &[FlipSet]) -> Table {
    let mut t = Table::new(&["test_id", "prob", "margin", "found", "k"]);
    for s in sets {
        t.push(vec![
            s.test_id.into(),
            s.original_prob.into(),
            (s.original_prob - 0.5).abs().into(),
            s.found.into(),
            s.k.into(),
        ]);
    }
    t
}

fn found_ks(sets: &[FlipSet]) -> Vec<f64> {
    sets.iter().filter(|s| s.found).map(|s| s.k as f64).collect()
}

/// Distribution of `k` over a test set.
pub fn run_k_histogram(
    attr: &Attribution<'_>,
    test: &Dataset,
    tau: f64,
    jobs: usize,
) -> Result<ExperimentReport> {
    check_tau(tau)?;
    let n_train = attr.train().n_samples();
    let sets = batch_flipsets(attr, test, tau, Mode::Relabel, jobs);
    let mut report = ExperimentReport::new(
        "k-histogram",
        json!({ "tau": tau, "n_train": n_train, "n_test": test.n_samples() }),
    )?;
    let mut hist = Table::new(&["k", "count"]);
    for (k, count) in k_histogram(&sets) {
        hist.push(vec![k.into(), count.into()]);
    }
    let ks = found_ks(&sets);
    report.set("n_train", n_train);
    report.set("n_test", test.n_samples());
    report.set("found_rate", found_rate(&sets));
    report.set("mean_k", mean(&ks));
    report.set("median_k", median(&ks));
    report.set("median_k_fraction_of_train", median(&ks) / n_train as f64);
    report.set(
        "share_below_one_percent",
        ks.iter().filter(|&&k| k <= 0.01 * n_train as f64).count() as f64 / sets.len().max(1) as f64,
    );
    report.tables.insert("rows".into(), point_table(&sets));
    report.tables.insert("histogram".into(), hist);
    Ok(report)
}

pub const NEAR_BOUNDARY_MARGIN: f64 = 0.05;
pub const CONFIDENT_MARGIN: f64 = 0.4;
pub const FRAGILE_MARGIN: f64 = 0.3;
pub const FRAGILE_PERCENTILE: f64 = 5.0;

/// `k` against the distance of the predicted probability from 1/2.
pub fn run_k_vs_probability(
    attr: &Attribution<'_>,
    test: &Dataset,
    tau: f64,
    jobs: usize,
) -> Result<ExperimentReport> {
    check_tau(tau)?;
    let sets = batch_flipsets(attr, test, tau, Mode::Relabel, jobs);
    let mut report = ExperimentReport::new(
        "k-vs-prob",
        json!({
            "tau": tau,
            "n_train": attr.train().n_samples(),
            "n_test": test.n_samples(),
            "near_boundary_margin": NEAR_BOUNDARY_MARGIN,
            "confident_margin": CONFIDENT_MARGIN,
            "fragile_margin": FRAGILE_MARGIN,
            "fragile_percentile": FRAGILE_PERCENTILE,
        }),
    )?;
    let found: Vec<&FlipSet> = sets.iter().filter(|s| s.found).collect();
    let margins: Vec<f64> = found.iter().map(|s| (s.original_prob - 0.5).abs()).collect();
    let ks: Vec<f64> = found.iter().map(|s| s.k as f64).collect();
    let corr = spearman(&margins, &ks);
    let pick = |keep: &dyn Fn(f64) -> bool| -> Vec<f64> {
        margins
            .iter()
            .zip(&ks)
            .filter(|(m, _)| keep(**m))
            .map(|(_, k)| *k)
            .collect()
    };
    let near = pick(&|m| m < NEAR_BOUNDARY_MARGIN);
    let confident = pick(&|m| m > CONFIDENT_MARGIN);
    let k_low = percentile(&ks, FRAGILE_PERCENTILE);
    let fragile = margins
        .iter()
        .zip(&ks)
        .filter(|(m, k)| **m > FRAGILE_MARGIN && **k <= k_low)
        .count();

    report.set("n_found", found.len());
    report.set("spearman_margin_k", corr.value);
    report.set("spearman_degenerate", corr.degenerate);
    report.set("n_near_boundary", near.len());
    report.set("n_confident", confident.len());
    report.set("median_k_near_boundary", median(&near));
    report.set("median_k_confident", median(&confident));
    report.set("k_percentile_5", k_low);
    report.set("confident_fragile_count", fragile);
    report.tables.insert("rows".into(), point_table(&sets));
    Ok(report)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{ExperimentReport, Table};
use super::synth::TAG_TARGET;
use super::{fit, sub_seed};
use crate::data::{inject_group_bias, Dataset};
use crate::error::{Error, Result};
use crate::flipset::{batch_flipsets_for, check_tau, Mode};
use crate::influence::Attribution;
use crate::model::TrainConfig;
use crate::stats::mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyConfig {
    pub target_tag: String,
    /// Label of the qualified rows; a share of the target-tag ones is flipped
    /// away from it.
    pub eligible_label: u8,
    pub flip_fraction: f64,
    pub train: TrainConfig,
    pub tau: f64,
    pub seed: u64,
}

impl Default for BiasStudyConfig {
    fn default() -> Self {
        BiasStudyConfig {
            target_tag: TAG_TARGET.to_string(),
            eligible_label: 1,
            flip_fraction: 0.9,
            train: TrainConfig::default(),
            tau: 0.5,
            seed: 0,
        }
    }
}

/// Trains on a copy of `train_set` with injected group bias, then looks at
/// test points whose clean label is the eligible one but which the model
/// predicts otherwise. For each, the share of its flip set lying inside the
/// biased rows is reported, grouped by tag.
pub fn run_bias_study(
    train_set: &Dataset,
    test: &Dataset,
    cfg: &BiasStudyConfig,
    jobs: usize,
) -> Result<ExperimentReport> {
    check_tau(cfg.tau)?;
    let test_tags = test.tags().ok_or(Error::MissingTags)?;
    let mut report = ExperimentReport::new("bias-study", cfg)?;
    let (biased, bias_set) = inject_group_bias(
        train_set,
        &cfg.target_tag,
        cfg.eligible_label,
        cfg.flip_fraction,
        sub_seed(cfg.seed, 4),
    )?;
    let model = fit(&biased, &cfg.train)?.with_threshold(cfg.tau)?;
    let hessian = model.build_hessian(&biased)?;
    let attr = Attribution::new(&model, &hessian, &biased)?;

    let mut wrong = Vec::new();
    for i in 0..test.n_samples() {
        if test.label(i) == cfg.eligible_label
            && model.predict_label(&test.dense_row(i))? != cfg.eligible_label
        {
            wrong.push(i);
        }
    }
    let sets = batch_flipsets_for(&attr, test, &wrong, cfg.tau, Mode::Relabel, jobs);

    let mut rows = Table::new(&["test_id", "tag", "found", "k", "in_bias", "overlap"]);
    let mut overlaps: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &sets {
        let tag = test_tags[s.test_id].as_str();
        *counts.entry(tag).or_default() += 1;
        let in_bias = s.indices.iter().filter(|i| bias_set.contains(i)).count();
        let overlap = if s.found {
            in_bias as f64 / s.k as f64
        } else {
            f64::NAN
        };
        if s.found {
            overlaps.entry(tag).or_default().push(overlap);
        }
        rows.push(vec![
            s.test_id.into(),
            tag.into(),
            s.found.into(),
            s.k.into(),
            in_bias.into(),
            overlap.into(),
        ]);
    }

    let mut per_tag = Table::new(&["tag", "n_misclassified", "n_found", "mean_overlap"]);
    for (tag, n) in &counts {
        let found = overlaps.get(tag).map(Vec::as_slice).unwrap_or(&[]);
        per_tag.push(vec![
            (*tag).into(),
            (*n).into(),
            found.len().into(),
            mean(found).into(),
        ]);
    }

    let target = cfg.target_tag.as_str();
    let other: Vec<f64> = overlaps
        .iter()
        .filter(|(t, _)| **t != target)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    report.set("n_bias", bias_set.len());
    report.set("n_misclassified", wrong.len());
    report.set("n_misclassified_target", counts.get(target).copied().unwrap_or(0));
    report.set(
        "n_misclassified_other",
        wrong.len() - counts.get(target).copied().unwrap_or(0),
    );
    report.set(
        "mean_overlap_target",
        mean(overlaps.get(target).map(Vec::as_slice).unwrap_or(&[])),
    );
    report.set("mean_overlap_other", mean(&other));
    report.tables.insert("rows".into(), rows);
    report.tables.insert("per_tag".into(), per_tag);
    Ok(report)
}

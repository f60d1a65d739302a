//! Ground truth by exact retraining.
//!
//! Nothing here uses influence estimates to decide an outcome: every answer
//! comes from training a fresh model from the zero vector with the original
//! configuration.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::Serialize;

use crate::data::{apply_relabels, seeded_rng, Dataset, RelabelPlan};
use crate::error::{Error, Result};
use crate::flipset::{FlipSet, Mode};
use crate::influence::Attribution;
use crate::model::{sigmoid, train, TrainConfig, TrainedModel};
use crate::stats::{pearson, Correlation};
use crate::{par_find_first, par_map};

/// Retrains after flipping the labels at `indices`.
pub fn retrain_relabeled(ds: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    let plan = RelabelPlan::flipping(ds, indices.iter().copied())?;
    train(&apply_relabels(ds, &plan)?, config)
}

/// Retrains without the rows at `indices`.
pub fn retrain_removed(ds: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    let drop: BTreeSet<usize> = indices.iter().copied().collect();
    train(&ds.without(&drop)?, config)
}

/// Probability under a model regardless of its convergence flag.
fn raw_prob(model: &TrainedModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.margin(x)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub test_id: usize,
    pub mode: Mode,
    pub k: usize,
    pub original_prob: f64,
    pub flipped: bool,
    pub actual_final_prob: f64,
    pub predicted_final_prob: f64,
    pub abs_error: f64,
    pub retrain_converged: bool,
}

pub fn verify_flip(
    ds: &Dataset,
    flipset: &FlipSet,
    original: &TrainedModel,
    x_t: &[f64],
    tau: f64,
) -> Result<VerificationReport> {
    if !flipset.found || flipset.indices.is_empty() {
        return Err(Error::NothingToVerify);
    }
    let original_prob = original.predict_prob(x_t)?;
    let predicted = original_prob > tau;
    let retrained = match flipset.mode {
        Mode::Relabel => retrain_relabeled(ds, &flipset.indices, original.config())?,
        Mode::Remove => retrain_removed(ds, &flipset.indices, original.config())?,
    };
    let actual = raw_prob(&retrained, x_t)?;
    Ok(VerificationReport {
        test_id: flipset.test_id,
        mode: flipset.mode,
        k: flipset.k,
        original_prob,
        flipped: (actual > tau) != predicted,
        actual_final_prob: actual,
        predicted_final_prob: flipset.predicted_final_prob,
        abs_error: (actual - flipset.predicted_final_prob).abs(),
        retrain_converged: retrained.converged(),
    })
}

pub fn write_verification_csv<W: std::io::Write>(reports: &[VerificationReport], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in reports {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<verification csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactFlipSet {
    pub k: usize,
    pub subset: Vec<usize>,
}

/// Lexicographic `k`-subsets of `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(pos) = (0..k).rev().find(|&p| current[p] < n - k + p) else {
            break;
        };
        current[pos] += 1;
        for q in pos + 1..k {
            current[q] = current[q - 1] + 1;
        }
    }
    out
}

pub const BRUTE_FORCE_MAX_ROWS: usize = 16;
pub const BRUTE_FORCE_MAX_K: usize = 4;

/// Smallest relabel set that flips the retrained prediction at `x_t`,
/// searched by increasing size and lexicographically within a size.
///
/// Allowed when `N <= 16` or `max_k <= 4`.
pub fn brute_force_min_flipset(
    ds: &Dataset,
    x_t: &[f64],
    tau: f64,
    config: &TrainConfig,
    max_k: usize,
    jobs: usize,
) -> Result<Option<ExactFlipSet>> {
    let n = ds.n_samples();
    if n > BRUTE_FORCE_MAX_ROWS && max_k > BRUTE_FORCE_MAX_K {
        return Err(Error::BudgetExceeded { rows: n, max_k });
    }
    let base = train(ds, config)?;
    base.ensure_converged()?;
    let predicted = base.predict_prob(x_t)? > tau;
    for k in 1..=max_k.min(n) {
        let candidates = combinations(n, k);
        let hit = par_find_first(jobs, &candidates, |subset| {
            retrain_relabeled(ds, subset, config)
                .and_then(|m| raw_prob(&m, x_t))
                .map(|p| (p > tau) != predicted)
                .unwrap_or(false)
        });
        if let Some(subset) = hit {
            return Ok(Some(ExactFlipSet {
                k,
                subset: subset.clone(),
            }));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproximationRow {
    pub train_index: usize,
    pub test_id: usize,
    pub predicted_delta: f64,
    pub actual_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproximationReport {
    pub pearson: Correlation,
    pub mean_abs_error: f64,
    pub rows: Vec<ApproximationRow>,
}

/// Compares relabel score estimates with the probability change after
/// relabeling each sampled training point alone and retraining.
///
/// With `sample_size >= N` every training point is used.
pub fn approximation_quality(
    attr: &Attribution<'_>,
    test_points: &[Vec<f64>],
    sample_size: usize,
    seed: u64,
    jobs: usize,
) -> Result<ApproximationReport> {
    let model = attr.model();
    let ds = attr.train();
    let n = ds.n_samples();
    let sampled: Vec<usize> = if sample_size >= n {
        (0..n).collect()
    } else {
        let mut v = index::sample(&mut seeded_rng(seed), n, sample_size).into_vec();
        v.sort_unstable();
        v
    };

    let mut predictions = Vec::with_capacity(test_points.len());
    let mut base_probs = Vec::with_capacity(test_points.len());
    for x_t in test_points {
        predictions.push(attr.ip_relabel(x_t)?.values);
        base_probs.push(model.predict_prob(x_t)?);
    }

    let retrained = par_map(jobs, &sampled, |&i| retrain_relabeled(ds, &[i], model.config()));
    let mut rows = Vec::with_capacity(sampled.len() * test_points.len());
    for (&i, m) in sampled.iter().zip(retrained) {
        let m = m?;
        for (t, x_t) in test_points.iter().enumerate() {
            rows.push(ApproximationRow {
                train_index: i,
                test_id: t,
                predicted_delta: predictions[t][i],
                actual_delta: raw_prob(&m, x_t)? - base_probs[t],
            });
        }
    }

    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted_delta).collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.actual_delta).collect();
    let mean_abs_error = if rows.is_empty() {
        0.0
    } else {
        predicted
            .iter()
            .zip(&actual)
            .map(|(p, a)| (p - a).abs())
            .sum::<f64>()
            / rows.len() as f64
    };
    Ok(ApproximationReport {
        pearson: pearson(&predicted, &actual),
        mean_abs_error,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flipset::greedy_flipset;

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(
            combinations(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
        assert_eq!(combinations(10, 4).len(), 210);
    }

    fn symmetric() -> Dataset {
        let rows = vec![
            vec![1.0, 0.3],
            vec![-1.0, -0.3],
            vec![0.4, -1.0],
            vec![-0.4, 1.0],
            vec![2.0, 1.0],
            vec![-2.0, -1.0],
        ];
        Dataset::from_dense_rows(&rows, vec![1, 0, 0, 1, 1, 0]).unwrap()
    }

    #[test]
    fn nothing_to_verify() {
        let ds = symmetric();
        let m = train(&ds, &TrainConfig::with_lambda(0.1)).unwrap();
        let empty = greedy_flipset(0.9, &[0.1], 0.5, Mode::Relabel);
        assert!(matches!(
            verify_flip(&ds, &empty, &m, &[1.0, 0.0], 0.5).unwrap_err(),
            Error::NothingToVerify
        ));
    }

    #[test]
    fn flipping_every_label_mirrors_the_prediction() {
        let ds = symmetric();
        let cfg = TrainConfig::with_lambda(0.1);
        let m = train(&ds, &cfg).unwrap();
        let x_t = [0.8, 0.2];
        let f_old = m.predict_prob(&x_t).unwrap();
        let all: Vec<usize> = (0..ds.n_samples()).collect();
        let mut fs = greedy_flipset(f_old, &vec![-1.0; ds.n_samples()], 0.5, Mode::Relabel);
        fs.indices = all.clone();
        fs.k = all.len();
        let report = verify_flip(&ds, &fs, &m, &x_t, 0.5).unwrap();
        assert!((report.actual_final_prob - (1.0 - f_old)).abs() < 1e-8);
        assert!(report.flipped);
        assert!(report.retrain_converged);
        assert_eq!(report.abs_error, (report.actual_final_prob - fs.predicted_final_prob).abs());
        assert_eq!(report, verify_flip(&ds, &fs, &m, &x_t, 0.5).unwrap());
    }

    #[test]
    fn brute_force_budget_and_empty_search() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0]).collect();
        let labels = (0..20).map(|i| u8::from(i >= 10)).collect();
        let ds = Dataset::from_dense_rows(&rows, labels).unwrap();
        let cfg = TrainConfig::with_lambda(0.1);
        assert!(matches!(
            brute_force_min_flipset(&ds, &[0.5], 0.5, &cfg, 5, 1).unwrap_err(),
            Error::BudgetExceeded { .. }
        ));
        assert_eq!(brute_force_min_flipset(&ds, &[5.0], 0.5, &cfg, 0, 1).unwrap(), None);
    }

    #[test]
    fn degenerate_correlation_for_rigid_model() {
        let ds = symmetric();
        let m = train(&ds, &TrainConfig::with_lambda(1e6)).unwrap();
        let h = m.build_hessian(&ds).unwrap();
        let attr = Attribution::new(&m, &h, &ds).unwrap();
        let rep = approximation_quality(&attr, &[vec![0.5, 0.5]], 100, 0, 1).unwrap();
        assert_eq!(rep.rows.len(), 6);
        assert!(rep.mean_abs_error <= 1e-4);
        assert!(rep.rows.iter().all(|r| r.actual_delta.abs() < 1e-4));
    }
}

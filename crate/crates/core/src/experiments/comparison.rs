use serde::{Deserialize, Serialize};

use super::report::{Cell, ExperimentReport, Table};
use super::{sample_rows, sub_seed};
use crate::data::Dataset;
use crate::error::Result;
use crate::flipset::flip_order;
use crate::influence::{Attribution, Method};
use crate::model::sigmoid;
use crate::oracle::retrain_relabeled;
use crate::par_map;
use crate::stats::mean;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodComparisonConfig {
    pub k_grid: Vec<usize>,
    pub methods: Vec<Method>,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for MethodComparisonConfig {
    fn default() -> Self {
        MethodComparisonConfig {
            k_grid: vec![1, 5, 10, 20],
            methods: Method::ALL.to_vec(),
            sample_size: 100,
            seed: 0,
        }
    }
}

/// Training indices in relabel priority for one method.
///
/// The probability-change estimates (`IP_RELABEL`, `IP_REMOVE`) use the
/// greedy visiting order for the current prediction. Every other score is
/// larger for points that support the predicted label, so those sort
/// descending. Ties go to the lower index.
pub fn flip_ranking(method: Method, scores: &[f64], predicted: u8) -> Vec<usize> {
    match method {
        Method::IpRelabel | Method::IpRemove => flip_order(scores, predicted),
        _ => flip_order(scores, 0),
    }
}

struct PointResult {
    test_id: usize,
    prob: f64,
    cells: Vec<(Method, usize, bool, f64)>,
}

/// For each sampled test point, method and `k`: relabel that method's top-`k`
/// training points, retrain, and record `|p_after - p_before|` at the test
/// point. Loss-based methods attribute the predicted label.
pub fn run_method_comparison(
    attr: &Attribution<'_>,
    test: &Dataset,
    cfg: &MethodComparisonConfig,
    jobs: usize,
) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("method-comparison", cfg)?;
    let model = attr.model();
    let ds = attr.train();
    let sample = sample_rows(test.n_samples(), cfg.sample_size, sub_seed(cfg.seed, 3));

    let results = par_map(jobs, &sample, |&t| -> Result<PointResult> {
        let x_t = test.dense_row(t);
        let prob = model.predict_prob(&x_t)?;
        let y_hat = model.predict_label(&x_t)?;
        let mut cells = Vec::new();
        for &method in &cfg.methods {
            let scores = attr.scores(method, &x_t, y_hat, sub_seed(cfg.seed, 1000 + t as u64))?;
            let order = flip_ranking(method, &scores.values, y_hat);
            for &k in &cfg.k_grid {
                if k == 0 {
                    cells.push((method, 0, true, 0.0));
                    continue;
                }
                let top = &order[..k.min(order.len())];
                let m = retrain_relabeled(ds, top, model.config())?;
                let after = sigmoid(m.margin(&x_t)?);
                cells.push((method, k, m.converged(), (after - prob).abs()));
            }
        }
        Ok(PointResult {
            test_id: t,
            prob,
            cells,
        })
    });

    let mut rows = Table::new(&["test_id", "method", "k", "prob", "converged", "abs_delta"]);
    for r in results {
        let r = r?;
        for (method, k, converged, delta) in r.cells {
            rows.push(vec![
                r.test_id.into(),
                method.name().into(),
                k.into(),
                r.prob.into(),
                converged.into(),
                delta.into(),
            ]);
        }
    }

    let mut means = Table::new(&["method", "k", "n", "n_failed", "mean_abs_delta"]);
    for &method in &cfg.methods {
        for &k in &cfg.k_grid {
            let cell = rows.filter("method", method.name()).filter("k", &k.to_string());
            let ok = cell.filter("converged", "true");
            let deltas = ok.column_f64("abs_delta").unwrap_or_default();
            means.push(vec![
                method.name().into(),
                k.into(),
                cell.rows.len().into(),
                (cell.rows.len() - ok.rows.len()).into(),
                Cell::Float(mean(&deltas)),
            ]);
        }
    }

    report.set("n_test_points", sample.len());
    report.tables.insert("rows".into(), rows);
    report.tables.insert("means".into(), means);
    Ok(report)
}

//! Greedy search for the smallest training subset whose relabeling (or
//! removal) flips a test prediction.
//!
//! Per-point score estimates are sorted so the points pushing hardest toward
//! the opposite class come first: ascending when the current prediction is
//! 1, descending when it is 0. The returned set is the shortest prefix whose
//! accumulated estimate `f(x_t) + sum(scores)` lands on the other side of
//! `tau`. The accumulation is not clamped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::Attribution;
use crate::par_map;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Relabel,
    Remove,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relabel" => Ok(Mode::Relabel),
            "remove" => Ok(Mode::Remove),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipSet {
    pub test_id: usize,
    pub found: bool,
    pub k: usize,
    /// Training indices, most influential first. Empty when not found.
    pub indices: Vec<usize>,
    pub predicted_final_prob: f64,
    pub mode: Mode,
    pub original_prob: f64,
    pub original_prediction: u8,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FlipSet {
    fn failed(test_id: usize, mode: Mode, tau: f64, err: &Error) -> Self {
        FlipSet {
            test_id,
            found: false,
            k: 0,
            indices: Vec::new(),
            predicted_final_prob: f64::NAN,
            mode,
            original_prob: f64::NAN,
            original_prediction: 0,
            tau,
            error: Some(err.to_string()),
        }
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(tau))
    }
}

/// Training indices in the order the greedy loop visits them. Ties go to
/// the lower index.
pub fn flip_order(scores: &[f64], predicted: u8) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if predicted == 1 {
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    } else {
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    }
    order
}

/// The accumulation loop on precomputed per-point score estimates.
pub fn greedy_flipset(original_prob: f64, scores: &[f64], tau: f64, mode: Mode) -> FlipSet {
    let predicted = u8::from(original_prob > tau);
    let order = flip_order(scores, predicted);
    let mut acc = original_prob;
    let mut result = FlipSet {
        test_id: 0,
        found: false,
        k: 0,
        indices: Vec::new(),
        predicted_final_prob: original_prob,
        mode,
        original_prob,
        original_prediction: predicted,
        tau,
        error: None,
    };
    for (pos, &i) in order.iter().enumerate() {
        acc += scores[i];
        if u8::from(acc > tau) != predicted {
            result.found = true;
            result.k = pos + 1;
            result.indices = order[..=pos].to_vec();
            result.predicted_final_prob = acc;
            break;
        }
    }
    result
}

pub fn find_flipset(attr: &Attribution<'_>, x_t: &[f64], tau: f64, mode: Mode) -> Result<FlipSet> {
    check_tau(tau)?;
    let f = attr.model().predict_prob(x_t)?;
    let s_t = attr.test_direction(x_t)?;
    let scores = match mode {
        Mode::Relabel => attr.relabel_scores_from(&s_t),
        Mode::Remove => attr.removal_scores_from(&s_t),
    };
    Ok(greedy_flipset(f, &scores, tau, mode))
}

pub fn find_relabel_flipset(attr: &Attribution<'_>, x_t: &[f64], tau: f64) -> Result<FlipSet> {
    find_flipset(attr, x_t, tau, Mode::Relabel)
}

pub fn find_removal_flipset(attr: &Attribution<'_>, x_t: &[f64], tau: f64) -> Result<FlipSet> {
    find_flipset(attr, x_t, tau, Mode::Remove)
}

/// Flip sets for every row of `test`, sharing one Hessian factor. Per-point
/// failures come back as not-found entries carrying the error message.
pub fn batch_flipsets(
    attr: &Attribution<'_>,
    test: &Dataset,
    tau: f64,
    mode: Mode,
    jobs: usize,
) -> Vec<FlipSet> {
    let rows: Vec<usize> = (0..test.n_samples()).collect();
    batch_flipsets_for(attr, test, &rows, tau, mode, jobs)
}

/// [`batch_flipsets`] restricted to the listed test rows; `test_id` keeps the
/// row index.
pub fn batch_flipsets_for(
    attr: &Attribution<'_>,
    test: &Dataset,
    rows: &[usize],
    tau: f64,
    mode: Mode,
    jobs: usize,
) -> Vec<FlipSet> {
    par_map(jobs, rows, |&row| {
        let x_t = test.dense_row(row);
        match find_flipset(attr, &x_t, tau, mode) {
            Ok(mut fs) => {
                fs.test_id = row;
                fs
            }
            Err(e) => FlipSet::failed(row, mode, tau, &e),
        }
    })
}

pub fn found_rate(sets: &[FlipSet]) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    sets.iter().filter(|s| s.found).count() as f64 / sets.len() as f64
}

/// `(k, count)` pairs over found sets, ascending in `k`.
pub fn k_histogram(sets: &[FlipSet]) -> Vec<(usize, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for s in sets.iter().filter(|s| s.found) {
        *counts.entry(s.k).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

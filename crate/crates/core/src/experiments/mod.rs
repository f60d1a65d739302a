//! Desk-scale studies built on the flip-set search.
//!
//! Every study returns an [`ExperimentReport`] holding its configuration, the
//! row-level tables, and summary statistics computed only from those rows.
//! Reports are a pure function of the inputs and seed.

mod bias;
mod comparison;
mod histogram;
mod noise;
pub mod report;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, Dataset};
use crate::error::{Error, Result};
use crate::model::{train, TrainConfig, TrainedModel};

pub use bias::{run_bias_study, BiasStudyConfig};
pub use comparison::{flip_ranking, run_method_comparison, MethodComparisonConfig};
pub use histogram::{run_k_histogram, run_k_vs_probability};
pub use noise::{run_noise_sweep, run_relabel_vs_remove, NoiseSweepConfig, RelabelVsRemoveConfig};
pub use report::{Cell, ExperimentReport, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NoiseSweep,
    KVsProb,
    MethodComparison,
    BiasStudy,
    RelabelVsRemove,
    KHistogram,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::NoiseSweep,
        ExperimentKind::KVsProb,
        ExperimentKind::MethodComparison,
        ExperimentKind::BiasStudy,
        ExperimentKind::RelabelVsRemove,
        ExperimentKind::KHistogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NoiseSweep => "noise-sweep",
            ExperimentKind::KVsProb => "k-vs-prob",
            ExperimentKind::MethodComparison => "method-comparison",
            ExperimentKind::BiasStudy => "bias-study",
            ExperimentKind::RelabelVsRemove => "relabel-vs-remove",
            ExperimentKind::KHistogram => "k-histogram",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown experiment `{s}` (valid: {})",
                Self::valid_names()
            ))
        })
    }
}

/// Independent seed for a named sub-stream (splitmix64 finalizer).
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains and insists on convergence.
pub(crate) fn fit(ds: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    let m = train(ds, config)?;
    m.ensure_converged()?;
    Ok(m)
}

/// Up to `size` row indices of `0..n`, sorted; all of them when `size >= n`.
pub(crate) fn sample_rows(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut v = index::sample(&mut seeded_rng(seed), n, size).into_vec();
    v.sort_unstable();
    v
}

/// Same as [`sample_rows`] but drawing from an explicit candidate list.
pub(crate) fn sample_from(candidates: &[usize], size: usize, seed: u64) -> Vec<usize> {
    sample_rows(candidates.len(), size, seed)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

/// Model predictions against the rows' stored labels.
pub(crate) fn misclassified(model: &TrainedModel, ds: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..ds.n_samples() {
        if model.predict_label(&ds.dense_row(i))? != ds.label(i) {
            out.push(i);
        }
    }
    Ok(out)
}

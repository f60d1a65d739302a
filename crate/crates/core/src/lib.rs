//! Minimal training-label flip sets for L2-regularized logistic regression.
//!
//! Given a trained model and a test point, [`flipset::find_relabel_flipset`]
//! ranks training points by the estimated change in the test point's
//! predicted probability if that point were relabeled, then returns the
//! shortest prefix of the ranking whose summed estimate crosses the
//! classification threshold. [`oracle`] checks such sets by retraining, and
//! [`experiments`] runs the robustness and bias studies built on top.
//!
//! ```
//! use flipset_core::prelude::*;
//!
//! let rows = vec![vec![1.0, 0.2], vec![-1.0, 0.1], vec![0.8, -0.3], vec![-0.7, -0.2]];
//! let train_set = Dataset::from_dense_rows(&rows, vec![1, 0, 1, 0]).unwrap();
//! let model = train(&train_set, &TrainConfig::with_lambda(0.1)).unwrap();
//! let hessian = model.build_hessian(&train_set).unwrap();
//! let attr = Attribution::new(&model, &hessian, &train_set).unwrap();
//! let fs = find_relabel_flipset(&attr, &[0.1, 0.0], 0.5).unwrap();
//! assert!(fs.found);
//! ```

pub mod data;
pub mod error;
pub mod experiments;
pub mod flipset;
pub mod influence;
pub mod model;
pub mod oracle;
pub mod stats;

use rayon::prelude::*;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::data::{
        apply_relabels, inject_group_bias, inject_label_noise, load_dense_csv, load_sparse,
        Dataset, FeatureMatrix, RelabelPlan,
    };
    pub use crate::error::{Error, Result};
    pub use crate::flipset::{
        batch_flipsets, find_relabel_flipset, find_removal_flipset, FlipSet, Mode,
    };
    pub use crate::influence::{Attribution, InfluenceScores, Method};
    pub use crate::model::{train, HessianFactor, TrainConfig, TrainedModel};
    pub use crate::oracle::{brute_force_min_flipset, verify_flip, VerificationReport};
}

fn pool(jobs: usize) -> Option<rayon::ThreadPool> {
    if jobs <= 1 {
        return None;
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().ok()
}

/// Order-preserving map over `items` on up to `jobs` threads.
pub(crate) fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match pool(jobs) {
        Some(p) => p.install(|| items.par_iter().map(&f).collect()),
        None => items.iter().map(f).collect(),
    }
}

/// First item, in slice order, satisfying `pred`.
pub(crate) fn par_find_first<T, F>(jobs: usize, items: &[T], pred: F) -> Option<&T>
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    match pool(jobs) {
        Some(p) => p.install(|| items.par_iter().find_first(|t| pred(t))),
        None => items.iter().find(|t| pred(t)),
    }
}

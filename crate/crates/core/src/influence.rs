//! Per-training-point influence on a test prediction.
//!
//! The relabel and removal scores estimate the change of the test point's
//! predicted probability from a first-order expansion of the trained weights:
//!
//! ```text
//! relabel i:  dw = -(1/N) H^{-1} (grad L(x_i, 1 - y_i) - grad L(x_i, y_i))
//! remove i:   dw = +(1/N) H^{-1} grad L(x_i, y_i)
//! df        = grad_w f(x_t)^T dw
//! ```
//!
//! One Hessian solve per test point gives `s_t = H^{-1} grad_w f(x_t)`, after
//! which every training score is a single inner product. Scores of a group are
//! the sum of the member scores.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, Dataset};
use crate::error::{Error, Result};
use crate::model::{dot, norm, sigmoid, HessianFactor, TrainedModel};

/// Sign applied to `(1/N) s_t^T grad l_i` for relabeling. A relabel adds
/// `+(1/N) l_i` to the risk, which moves the optimum against its gradient.
pub const RELABEL_SIGN: f64 = -1.0;
/// Removal subtracts `(1/N) L_i` from the risk, so the optimum moves along
/// the gradient.
pub const REMOVE_SIGN: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    IpRelabel,
    IpRemove,
    IfLoss,
    Rif,
    Gd,
    Gc,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::IpRelabel,
        Method::IpRemove,
        Method::IfLoss,
        Method::Rif,
        Method::Gd,
        Method::Gc,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::IpRelabel => "IP_RELABEL",
            Method::IpRemove => "IP_REMOVE",
            Method::IfLoss => "IF_LOSS",
            Method::Rif => "RIF",
            Method::Gd => "GD",
            Method::Gc => "GC",
            Method::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown score method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceScores {
    pub method: Method,
    pub values: Vec<f64>,
    pub test_id: String,
}

impl InfluenceScores {
    fn new(method: Method, values: Vec<f64>) -> Self {
        InfluenceScores {
            method,
            values,
            test_id: String::new(),
        }
    }

    pub fn labeled(mut self, test_id: impl Into<String>) -> Self {
        self.test_id = test_id.into();
        self
    }

    /// Additive estimate for a group of training points.
    pub fn group_score(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&i| self.values[i]).sum()
    }

    /// `# method=... test=...` followed by `train_index,score` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# method={} test={}", self.method, self.test_id)?;
        writeln!(out, "train_index,score")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    }
}

/// `grad_w sigma(w^T x_t) = f (1 - f) [x_t, 1]`.
pub fn grad_output(model: &TrainedModel, x_t: &[f64]) -> Result<Vec<f64>> {
    let f = model.predict_prob(x_t)?;
    let mut g = model.augment(x_t)?;
    let scale = f * (1.0 - f);
    g.iter_mut().for_each(|v| *v *= scale);
    Ok(g)
}

/// Gradient of `L(x_i, 1 - y_i) - L(x_i, y_i)`, which is `(2 y_i - 1) [x_i, 1]`
/// for the logistic loss regardless of the weights.
pub fn relabel_grad_delta(model: &TrainedModel, x_i: &[f64], y_i: u8) -> Result<Vec<f64>> {
    let sign = 2.0 * f64::from(y_i) - 1.0;
    let mut g = model.augment(x_i)?;
    g.iter_mut().for_each(|v| *v *= sign);
    Ok(g)
}

/// Cosine similarity, with 0 for a zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

fn train_loss_grads(model: &TrainedModel, ds: &Dataset) -> Vec<Vec<f64>> {
    (0..ds.n_samples())
        .map(|i| model.loss_grad_row(ds.row(i), ds.label(i)))
        .collect()
}

fn check_train(model: &TrainedModel, ds: &Dataset) -> Result<()> {
    model.ensure_converged()?;
    if ds.n_features() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: ds.n_features(),
        });
    }
    Ok(())
}

/// Inner products of test and train loss gradients.
pub fn gd_scores(model: &TrainedModel, ds: &Dataset, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
    check_train(model, ds)?;
    let g_t = model.loss_grad_point(x_t, y_t)?;
    let values = train_loss_grads(model, ds)
        .iter()
        .map(|g_i| dot(&g_t, g_i))
        .collect();
    Ok(InfluenceScores::new(Method::Gd, values))
}

/// Cosine of test and train loss gradients.
pub fn gc_scores(model: &TrainedModel, ds: &Dataset, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
    check_train(model, ds)?;
    let g_t = model.loss_grad_point(x_t, y_t)?;
    let values = train_loss_grads(model, ds)
        .iter()
        .map(|g_i| cosine(&g_t, g_i))
        .collect();
    Ok(InfluenceScores::new(Method::Gc, values))
}

/// Seeded uniform scores in `[0, 1)`.
pub fn random_scores(ds: &Dataset, seed: u64) -> InfluenceScores {
    let mut rng = seeded_rng(seed);
    let values = (0..ds.n_samples()).map(|_| rng.random::<f64>()).collect();
    InfluenceScores::new(Method::Random, values)
}

/// Influence computations against one trained model and its Hessian.
pub struct Attribution<'a> {
    model: &'a TrainedModel,
    hessian: &'a HessianFactor<'a>,
    train: &'a Dataset,
}

impl<'a> Attribution<'a> {
    pub fn new(
        model: &'a TrainedModel,
        hessian: &'a HessianFactor<'a>,
        train: &'a Dataset,
    ) -> Result<Self> {
        check_train(model, train)?;
        if hessian.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: hessian.dim(),
            });
        }
        Ok(Attribution {
            model,
            hessian,
            train,
        })
    }

    pub fn model(&self) -> &TrainedModel {
        self.model
    }

    pub fn train(&self) -> &Dataset {
        self.train
    }

    pub fn hessian(&self) -> &HessianFactor<'a> {
        self.hessian
    }

    /// `s_t = H^{-1} grad_w f(x_t)`, the only solve a test point needs.
    pub fn test_direction(&self, x_t: &[f64]) -> Result<Vec<f64>> {
        self.hessian.solve(&grad_output(self.model, x_t)?)
    }

    fn project(&self, direction: &[f64], i: usize) -> f64 {
        self.model.layout().margin(self.train.row(i), direction)
    }

    /// Relabel scores from a precomputed solve `direction = H^{-1} v`.
    pub fn relabel_scores_from(&self, direction: &[f64]) -> Vec<f64> {
        let n = self.train.n_samples() as f64;
        (0..self.train.n_samples())
            .map(|i| {
                let sign = 2.0 * f64::from(self.train.label(i)) - 1.0;
                RELABEL_SIGN * sign * self.project(direction, i) / n
            })
            .collect()
    }

    /// Removal scores from a precomputed solve `direction = H^{-1} v`.
    pub fn removal_scores_from(&self, direction: &[f64]) -> Vec<f64> {
        let n = self.train.n_samples() as f64;
        (0..self.train.n_samples())
            .map(|i| {
                let row = self.train.row(i);
                let residual = sigmoid(self.model.margin_row(row)) - f64::from(self.train.label(i));
                REMOVE_SIGN * residual * self.project(direction, i) / n
            })
            .collect()
    }

    /// Estimated change of `f(x_t)` from relabeling each training point alone.
    pub fn ip_relabel(&self, x_t: &[f64]) -> Result<InfluenceScores> {
        let s_t = self.test_direction(x_t)?;
        Ok(InfluenceScores::new(
            Method::IpRelabel,
            self.relabel_scores_from(&s_t),
        ))
    }

    /// Estimated change of `f(x_t)` from removing each training point alone.
    pub fn ip_remove(&self, x_t: &[f64]) -> Result<InfluenceScores> {
        let s_t = self.test_direction(x_t)?;
        Ok(InfluenceScores::new(
            Method::IpRemove,
            self.removal_scores_from(&s_t),
        ))
    }

    /// Estimated change of the test loss `L(x_t, y_t)` from relabeling each
    /// training point alone.
    pub fn if_loss(&self, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
        let u = self.hessian.solve(&self.model.loss_grad_point(x_t, y_t)?)?;
        Ok(InfluenceScores::new(Method::IfLoss, self.relabel_scores_from(&u)))
    }

    /// Cosine of `H^{-1/2}`-whitened test and train loss gradients.
    pub fn rif(&self, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
        let whiten = self.hessian.inverse_sqrt()?;
        let apply = |g: &[f64], w: &DMatrix<f64>| -> Vec<f64> {
            (w * DVector::from_column_slice(g)).as_slice().to_vec()
        };
        let a_t = apply(&self.model.loss_grad_point(x_t, y_t)?, &whiten);
        let values = train_loss_grads(self.model, self.train)
            .iter()
            .map(|g_i| cosine(&a_t, &apply(g_i, &whiten)))
            .collect();
        Ok(InfluenceScores::new(Method::Rif, values))
    }

    pub fn gd(&self, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
        gd_scores(self.model, self.train, x_t, y_t)
    }

    pub fn gc(&self, x_t: &[f64], y_t: u8) -> Result<InfluenceScores> {
        gc_scores(self.model, self.train, x_t, y_t)
    }

    /// Dispatches on `method`. `y_t` is the label the loss-based methods
    /// attribute; `seed` only feeds [`Method::Random`].
    pub fn scores(&self, method: Method, x_t: &[f64], y_t: u8, seed: u64) -> Result<InfluenceScores> {
        match method {
            Method::IpRelabel => self.ip_relabel(x_t),
            Method::IpRemove => self.ip_remove(x_t),
            Method::IfLoss => self.if_loss(x_t, y_t),
            Method::Rif => self.rif(x_t, y_t),
            Method::Gd => self.gd(x_t, y_t),
            Method::Gc => self.gc(x_t, y_t),
            Method::Random => {
                self.model.margin(x_t)?;
                Ok(random_scores(self.train, seed))
            }
        }
    }
}

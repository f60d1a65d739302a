//! L2-regularized logistic regression trained by exact Newton iteration.
//!
//! The empirical risk is
//!
//! ```text
//! R(w) = (1/N) sum_i logloss(x_i, y_i; w) + (lambda/2) |w|^2
//! ```
//!
//! When an intercept is fitted it is the last weight, paired with a constant
//! `1` feature, and it is regularized like every other weight. The Hessian
//! exposed by [`TrainedModel::build_hessian`] is therefore exactly the
//! second derivative of `R` at the trained weights.

mod hessian;

use std::fs;
use std::path::Path;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Row};
use crate::error::{Error, Result};

pub use hessian::HessianFactor;

pub const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const ROUNDING_SLACK: f64 = 1e4;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy of label `y` under logit `z`.
pub fn log_loss(z: f64, y: u8) -> f64 {
    softplus(z) - f64::from(y) * z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub fit_intercept: bool,
    /// Above this many parameters the Hessian is used through
    /// preconditioned conjugate gradients instead of a dense Cholesky factor.
    pub dense_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            tolerance: 1e-8,
            max_iters: 100,
            fit_intercept: true,
            dense_limit: 4096,
        }
    }
}

impl TrainConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        TrainConfig {
            lambda,
            ..Default::default()
        }
    }

    /// `lambda = scale / N`, so the penalty weighs like `scale` extra points.
    pub fn per_sample_lambda(n_samples: usize, scale: f64) -> Self {
        Self::with_lambda(scale / n_samples.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidLambda(self.lambda));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Parameter-space geometry shared by training and the Hessian: raw feature
/// count plus the optional constant column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub features: usize,
    pub intercept: bool,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.features + usize::from(self.intercept)
    }

    pub fn margin(&self, row: Row<'_>, w: &[f64]) -> f64 {
        let bias = if self.intercept { w[self.features] } else { 0.0 };
        row.dot(w) + bias
    }

    /// `out += alpha * [x, 1]`.
    pub fn axpy(&self, row: Row<'_>, alpha: f64, out: &mut [f64]) {
        row.axpy(alpha, out);
        if self.intercept {
            out[self.features] += alpha;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Regularized empirical risk at `w`.
pub fn objective(ds: &Dataset, w: &[f64], lambda: f64, fit_intercept: bool) -> f64 {
    let layout = Layout {
        features: ds.n_features(),
        intercept: fit_intercept,
    };
    let n = ds.n_samples() as f64;
    let data_term: f64 = (0..ds.n_samples())
        .map(|i| log_loss(layout.margin(ds.row(i), w), ds.label(i)))
        .sum::<f64>()
        / n;
    data_term + 0.5 * lambda * dot(w, w)
}

/// Gradient of [`objective`] at `w`.
pub fn gradient(ds: &Dataset, w: &[f64], lambda: f64, fit_intercept: bool) -> Vec<f64> {
    let layout = Layout {
        features: ds.n_features(),
        intercept: fit_intercept,
    };
    let n = ds.n_samples() as f64;
    let mut g = vec![0.0; layout.dim()];
    for i in 0..ds.n_samples() {
        let row = ds.row(i);
        let residual = sigmoid(layout.margin(row, w)) - f64::from(ds.label(i));
        layout.axpy(row, residual / n, &mut g);
    }
    for (gj, wj) in g.iter_mut().zip(w) {
        *gj += lambda * wj;
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    weights: Vec<f64>,
    n_features: usize,
    threshold: f64,
    converged: bool,
    final_gradient_norm: f64,
    newton_iterations: usize,
    config: TrainConfig,
}

pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let layout = Layout {
        features: ds.n_features(),
        intercept: config.fit_intercept,
    };
    let lambda = config.lambda;
    let mut w = vec![0.0; layout.dim()];
    let mut g = gradient(ds, &w, lambda, config.fit_intercept);
    let mut gnorm = norm(&g);
    let mut value = objective(ds, &w, lambda, config.fit_intercept);
    let mut iterations = 0;

    while gnorm > config.tolerance && iterations < config.max_iters {
        let hessian = HessianFactor::at(ds, &w, layout, lambda, config.dense_limit)?;
        let mut step = hessian.solve(&g)?;
        step.iter_mut().for_each(|s| *s = -*s);
        let slope = dot(&g, &step);

        let mut t = 1.0;
        let mut candidate: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a + s).collect();
        let mut cand_value = objective(ds, &candidate, lambda, config.fit_intercept);
        let mut halvings = 0;
        // Once the predicted decrease is lost in the rounding of R, the
        // sufficient-decrease test is noise; take the Newton step as is.
        let below_rounding = -slope <= ROUNDING_SLACK * f64::EPSILON * value.abs().max(1.0);
        while !below_rounding
            && cand_value > value + ARMIJO_C * t * slope
            && halvings < MAX_HALVINGS
        {
            t *= 0.5;
            halvings += 1;
            candidate = w.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            cand_value = objective(ds, &candidate, lambda, config.fit_intercept);
        }
        if halvings == MAX_HALVINGS {
            // The decrease is below rounding; the full Newton step is safe this
            // close to the optimum.
            candidate = w.iter().zip(&step).map(|(a, s)| a + s).collect();
            cand_value = objective(ds, &candidate, lambda, config.fit_intercept);
        }

        w = candidate;
        value = cand_value;
        g = gradient(ds, &w, lambda, config.fit_intercept);
        gnorm = norm(&g);
        iterations += 1;
        debug!("newton iter {iterations}: R={value:.12e} |g|={gnorm:.3e} t={t}");
    }

    Ok(TrainedModel {
        weights: w,
        n_features: ds.n_features(),
        threshold: 0.5,
        converged: gnorm <= config.tolerance,
        final_gradient_norm: gnorm,
        newton_iterations: iterations,
        config: config.clone(),
    })
}

impl TrainedModel {
    /// A model with given weights, treated as converged. The weight vector
    /// includes the intercept as its last entry when `fit_intercept` is set.
    pub fn from_weights(weights: Vec<f64>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let extra = usize::from(config.fit_intercept);
        if weights.len() <= extra {
            return Err(Error::DimensionMismatch {
                expected: extra + 1,
                got: weights.len(),
            });
        }
        Ok(TrainedModel {
            n_features: weights.len() - extra,
            weights,
            threshold: 0.5,
            converged: true,
            final_gradient_norm: 0.0,
            newton_iterations: 0,
            config,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn final_gradient_norm(&self) -> f64 {
        self.final_gradient_norm
    }

    pub fn newton_iterations(&self) -> usize {
        self.newton_iterations
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of raw input features.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of parameters, including the intercept.
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            features: self.n_features,
            intercept: self.config.fit_intercept,
        }
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.newton_iterations,
                gradient_norm: self.final_gradient_norm,
            })
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `[x, 1]` with an intercept, `x` otherwise.
    pub fn augment(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = x.to_vec();
        if self.config.fit_intercept {
            out.push(1.0);
        }
        Ok(out)
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.layout().margin(Row::Dense(x), &self.weights))
    }

    pub(crate) fn margin_row(&self, row: Row<'_>) -> f64 {
        self.layout().margin(row, &self.weights)
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        self.ensure_converged()?;
        Ok(sigmoid(self.margin(x)?))
    }

    /// Predicted class: `f(x) > threshold`, so a tie predicts 0.
    pub fn predict_label(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.predict_prob(x)? > self.threshold))
    }

    /// Gradient of the unregularized log-loss of `(x, y)`: `(sigma - y) [x, 1]`.
    pub fn loss_grad_point(&self, x: &[f64], y: u8) -> Result<Vec<f64>> {
        let residual = sigmoid(self.margin(x)?) - f64::from(y);
        let mut g = self.augment(x)?;
        g.iter_mut().for_each(|v| *v *= residual);
        Ok(g)
    }

    pub(crate) fn loss_grad_row(&self, row: Row<'_>, y: u8) -> Vec<f64> {
        let layout = self.layout();
        let residual = sigmoid(layout.margin(row, &self.weights)) - f64::from(y);
        let mut g = vec![0.0; self.dim()];
        layout.axpy(row, residual, &mut g);
        g
    }

    /// Regularized Hessian of the training risk at the trained weights.
    pub fn build_hessian<'a>(&self, ds: &'a Dataset) -> Result<HessianFactor<'a>> {
        self.ensure_converged()?;
        if ds.n_features() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: ds.n_features(),
            });
        }
        HessianFactor::at(
            ds,
            &self.weights,
            self.layout(),
            self.config.lambda,
            self.config.dense_limit,
        )
    }

    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        let correct = (0..ds.n_samples())
            .filter(|&i| {
                let p = sigmoid(self.margin_row(ds.row(i)));
                u8::from(p > self.threshold) == ds.label(i)
            })
            .count();
        correct as f64 / ds.n_samples() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    weights: Vec<f64>,
    lambda: f64,
    threshold: f64,
    converged: bool,
    meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    n_features: usize,
    fit_intercept: bool,
    tolerance: f64,
    max_iters: usize,
    dense_limit: usize,
    final_gradient_norm: f64,
    newton_iterations: usize,
}

impl From<&TrainedModel> for ModelFile {
    fn from(m: &TrainedModel) -> Self {
        ModelFile {
            weights: m.weights.clone(),
            lambda: m.config.lambda,
            threshold: m.threshold,
            converged: m.converged,
            meta: ModelMeta {
                n_features: m.n_features,
                fit_intercept: m.config.fit_intercept,
                tolerance: m.config.tolerance,
                max_iters: m.config.max_iters,
                dense_limit: m.config.dense_limit,
                final_gradient_norm: m.final_gradient_norm,
                newton_iterations: m.newton_iterations,
            },
        }
    }
}

impl TryFrom<ModelFile> for TrainedModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let config = TrainConfig {
            lambda: f.lambda,
            tolerance: f.meta.tolerance,
            max_iters: f.meta.max_iters,
            fit_intercept: f.meta.fit_intercept,
            dense_limit: f.meta.dense_limit,
        };
        config.validate()?;
        let expected = f.meta.n_features + usize::from(config.fit_intercept);
        if f.weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: f.weights.len(),
            });
        }
        let model = TrainedModel {
            weights: f.weights,
            n_features: f.meta.n_features,
            threshold: 0.5,
            converged: f.converged,
            final_gradient_norm: f.meta.final_gradient_norm,
            newton_iterations: f.meta.newton_iterations,
            config,
        };
        model.with_threshold(f.threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_intercept(lambda: f64) -> TrainConfig {
        TrainConfig {
            fit_intercept: false,
            ..TrainConfig::with_lambda(lambda)
        }
    }

    #[test]
    fn predict_prob_closed_forms() {
        let m = TrainedModel::from_weights(vec![1.0, -1.0], no_intercept(1.0)).unwrap();
        assert_relative_eq!(m.predict_prob(&[2.0, 1.0]).unwrap(), 0.7310585786300049);
        assert_eq!(m.predict_prob(&[1.0, 1.0]).unwrap(), 0.5);

        let zero = TrainedModel::from_weights(vec![0.0; 3], TrainConfig::default()).unwrap();
        assert_eq!(zero.predict_prob(&[3.0, -7.0]).unwrap(), 0.5);
        assert!(matches!(
            zero.predict_prob(&[1.0]).unwrap_err(),
            Error::DimensionMismatch { expected: 2, got: 1 }
        ));
    }

    #[test]
    fn loss_grad_at_zero_weights() {
        let m = TrainedModel::from_weights(vec![0.0, 0.0], no_intercept(1.0)).unwrap();
        assert_eq!(m.loss_grad_point(&[2.0, -4.0], 1).unwrap(), vec![-1.0, 2.0]);
        assert_eq!(m.loss_grad_point(&[2.0, -4.0], 0).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn symmetric_data_predicts_half_at_origin() {
        let rows = vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![0.5, -1.0], vec![-0.5, 1.0]];
        let ds = Dataset::from_dense_rows(&rows, vec![1, 0, 0, 1]).unwrap();
        let m = train(&ds, &TrainConfig::with_lambda(0.1)).unwrap();
        assert!(m.converged());
        assert_relative_eq!(m.predict_prob(&[0.0, 0.0]).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn huge_lambda_pins_weights_near_zero() {
        let rows = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![2.0, 2.0]];
        let ds = Dataset::from_dense_rows(&rows, vec![1, 0, 1]).unwrap();
        let m = train(&ds, &TrainConfig::with_lambda(1e6)).unwrap();
        assert!(norm(m.weights()) < 1e-5);
        assert_relative_eq!(m.predict_prob(&[5.0, 5.0]).unwrap(), 0.5, epsilon = 1e-5);
    }

    #[test]
    fn rejects_non_positive_lambda() {
        let ds = Dataset::from_dense_rows(&[vec![1.0]], vec![1]).unwrap();
        assert!(matches!(
            train(&ds, &TrainConfig::with_lambda(0.0)).unwrap_err(),
            Error::InvalidLambda(_)
        ));
    }

    #[test]
    fn unconverged_model_is_refused_downstream() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 10.0]).collect();
        let labels = (0..20).map(|i| u8::from(i >= 10)).collect();
        let ds = Dataset::from_dense_rows(&rows, labels).unwrap();
        let cfg = TrainConfig {
            max_iters: 1,
            ..TrainConfig::with_lambda(1e-4)
        };
        let m = train(&ds, &cfg).unwrap();
        assert!(!m.converged());
        assert!(matches!(m.predict_prob(&[1.0]), Err(Error::NotConverged { .. })));
        assert!(m.build_hessian(&ds).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = Dataset::from_dense_rows(&[vec![1.0], vec![-1.0]], vec![1, 0]).unwrap();
        let m = train(&ds, &TrainConfig::with_lambda(0.5))
            .unwrap()
            .with_threshold(0.25)
            .unwrap();
        let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["weights", "lambda", "threshold", "converged", "meta"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}

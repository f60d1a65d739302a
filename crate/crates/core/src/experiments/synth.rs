//! Two-blob Gaussian data for self-contained runs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, Dataset, FeatureMatrix, SeededRng};
use crate::error::{Error, Result};

pub const TAG_TARGET: &str = "X";
pub const TAG_OTHER: &str = "Y";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Share of rows tagged `X` (the rest are `Y`); `None` for untagged data.
    /// Tagged data carries the tag as an extra 0/1 feature column `tag_x`.
    pub tag_x_share: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 1000,
            n_test: 200,
            dim: 10,
            separation: 2.0,
            tag_x_share: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.dim == 0 || cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::InvalidConfig(
            "synthetic data needs positive dim, n_train and n_test".into(),
        ));
    }
    if let Some(share) = cfg.tag_x_share {
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::InvalidFraction(share));
        }
    }
    let mut rng = seeded_rng(cfg.seed);
    let train = sample(cfg, cfg.n_train, &mut rng)?;
    let test = sample(cfg, cfg.n_test, &mut rng)?;
    Ok(SyntheticData { train, test })
}

fn sample(cfg: &SynthConfig, n: usize, rng: &mut SeededRng) -> Result<Dataset> {
    let d = cfg.dim;
    let shift = 0.5 * cfg.separation / (d as f64).sqrt();
    let cols = d + usize::from(cfg.tag_x_share.is_some());
    let mut data = Vec::with_capacity(n * cols);
    let mut labels = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    for _ in 0..n {
        let y: u8 = u8::from(rng.random_bool(0.5));
        let sign = 2.0 * f64::from(y) - 1.0;
        for _ in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(sign * shift + noise);
        }
        if let Some(share) = cfg.tag_x_share {
            let is_x = rng.random_bool(share);
            data.push(if is_x { 1.0 } else { 0.0 });
            tags.push(if is_x { TAG_TARGET } else { TAG_OTHER }.to_string());
        }
        labels.push(y);
    }
    let mut names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if cfg.tag_x_share.is_some() {
        names.push("tag_x".into());
    }
    Dataset::new(
        FeatureMatrix::dense(n, cols, data)?,
        labels,
        cfg.tag_x_share.map(|_| tags),
        Some(names),
    )
}

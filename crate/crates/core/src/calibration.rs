//! Score calibration against anomaly-free statistics and max fusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composition::Verdict;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

/// Largest `f64` strictly below one.
const SIGMOID_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub mu_in: f64,
    pub sigma_in: f64,
    pub n_samples: usize,
    pub sigma_floor: f64,
    /// How the statistics were obtained (`validation`, `leave_one_out`, ...).
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub source_image_ids: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Mean and n-1 standard deviation (Welford); `None` deviation for n < 2.
fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let std = (xs.len() > 1).then(|| (m2 / (xs.len() - 1) as f64).sqrt());
    (mean, std)
}

/// Unbiased mean and standard deviation of anomaly-free patch and interest
/// scores. Deviations below `sigma_floor` (or undefined, for a single
/// sample) are clamped to it and flagged.
pub fn fit_stats(
    patch_scores: &[f64],
    interest_scores: &[f64],
    sigma_floor: f64,
) -> Result<CalibrationStats> {
    if patch_scores.is_empty() || interest_scores.is_empty() {
        return Err(Error::EmptyInput("calibration scores"));
    }
    if patch_scores.len() != interest_scores.len() {
        return Err(Error::DimensionMismatch {
            context: "calibration score sequences".into(),
            expected: patch_scores.len(),
            actual: interest_scores.len(),
        });
    }
    if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma_floor must be positive, got {sigma_floor}"
        )));
    }
    let mut flags = Vec::new();
    let mut fit = |xs: &[f64], name: &str| {
        let (mu, sigma) = mean_std(xs);
        let sigma = match sigma {
            Some(s) if s >= sigma_floor => s,
            Some(s) => {
                flags.push(format!(
                    "sigma_{name} {s:e} clamped to floor {sigma_floor:e}"
                ));
                sigma_floor
            }
            None => {
                flags.push(format!(
                    "sigma_{name} undefined for a single sample, using floor {sigma_floor:e}"
                ));
                sigma_floor
            }
        };
        (mu, sigma)
    };
    let (mu_p, sigma_p) = fit(patch_scores, "p");
    let (mu_in, sigma_in) = fit(interest_scores, "in");
    Ok(CalibrationStats {
        mu_p,
        sigma_p,
        mu_in,
        sigma_in,
        n_samples: patch_scores.len(),
        sigma_floor,
        source: String::new(),
        source_image_ids: Vec::new(),
        flags,
    })
}

/// Logistic function, kept inside the open interval (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, SIGMOID_CEIL)
}

pub fn standardize(score: f64, mu: f64, sigma: f64) -> f64 {
    (score - mu) / sigma
}

/// Maximum of the two standardized, squashed scores and the raw composition
/// score.
pub fn fuse(s_p: f64, s_in: f64, s_c: u8, stats: &CalibrationStats) -> f64 {
    let gp = sigmoid(standardize(s_p, stats.mu_p, stats.sigma_p));
    let gin = sigmoid(standardize(s_in, stats.mu_in, stats.sigma_in));
    gp.max(gin).max(f64::from(s_c))
}

/// Scores of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub label: String,
    pub s_p: f64,
    pub s_in: f64,
    pub s_c: u8,
    pub s: f64,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl ScoreRecord {
    /// Whether `s` is exactly recomputable from its parts.
    pub fn is_consistent(&self, stats: &CalibrationStats) -> bool {
        self.s == fuse(self.s_p, self.s_in, self.s_c, stats)
    }
}

pub fn save_stats(stats: &CalibrationStats, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(stats).expect("stats serialize");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}

pub fn load_stats(source: impl AsRef<Path>) -> Result<CalibrationStats> {
    let source = source.as_ref();
    let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let stats: CalibrationStats = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: source.to_path_buf(),
        source: e,
    })?;
    let mut errors = Vec::new();
    if stats.sigma_floor.is_nan() || stats.sigma_floor <= 0.0 {
        errors.push(format!(
            "sigma_floor {} must be positive",
            stats.sigma_floor
        ));
    }
    if stats.sigma_p < stats.sigma_floor || stats.sigma_in < stats.sigma_floor {
        errors.push("standard deviations must not be below sigma_floor".to_string());
    }
    if stats.n_samples == 0 {
        errors.push("n_samples must be at least 1".to_string());
    }
    if errors.is_empty() {
        Ok(stats)
    } else {
        Err(Error::Validation(errors))
    }
}

//! Accuracy and efficiency metrics for both samplers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkmError};

/// ACF truncation threshold for the MCMC effective sample size.
pub const ACF_TRUNCATION: f64 = 0.1;

/// Mean squared error of component `k` over a sample set.
pub fn mse_chain(samples: &[Vec<f64>], truth: f64, k: usize) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().map(|s| (s[k] - truth).powi(2)).sum::<f64>() / samples.len() as f64
}

/// Squared bias plus variance.
pub fn mse_moments(mean: f64, variance: f64, truth: f64) -> f64 {
    (mean - truth).powi(2) + variance
}

/// MSE of a `U(lo, hi)` prior around `truth`.
pub fn prior_mse_uniform(lo: f64, hi: f64, truth: f64) -> f64 {
    (hi - lo).powi(2) / 12.0 + ((lo + hi) / 2.0 - truth).powi(2)
}

/// Biased sample autocorrelation of one series at lags `0..=max_lag`.
pub fn acf_series(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let m = series.len();
    if m <= max_lag {
        return Err(SkmError::Precondition(format!(
            "chain of length {m} too short for lag {max_lag}"
        )));
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centred.iter().map(|x| x * x).sum::<f64>();
    if c0 <= 0.0 || !c0.is_finite() {
        return Err(SkmError::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|lag| {
            centred[..m - lag]
                .iter()
                .zip(&centred[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / c0
        })
        .collect())
}

/// Per-component ACFs of a multivariate chain (`chain[i][k]`).
pub fn acf_components(chain: &[Vec<f64>], max_lag: usize) -> Result<Vec<Vec<f64>>> {
    let k = chain.first().map_or(0, Vec::len);
    (0..k)
        .map(|c| {
            let series: Vec<f64> = chain.iter().map(|s| s[c]).collect();
            acf_series(&series, max_lag)
        })
        .collect()
}

/// ACF averaged over components.
pub fn acf(chain: &[Vec<f64>], max_lag: usize) -> Result<Vec<f64>> {
    let per = acf_components(chain, max_lag)?;
    if per.is_empty() {
        return Err(SkmError::Precondition("chain has no components".into()));
    }
    Ok((0..=max_lag)
        .map(|lag| per.iter().map(|c| c[lag]).sum::<f64>() / per.len() as f64)
        .collect())
}

/// `1 / (1 + 2 Σ_j ρ(j))`, summing from lag 1 and stopping before the first
/// lag with `ρ(j) < 0.1`; clamped to `[1/M, 1]`.
pub fn ness_from_acf(rho: &[f64], chain_len: usize) -> f64 {
    let tail: f64 = rho
        .iter()
        .skip(1)
        .take_while(|&&r| r >= ACF_TRUNCATION)
        .sum();
    let raw = 1.0 / (1.0 + 2.0 * tail);
    let floor = 1.0 / chain_len.max(1) as f64;
    raw.clamp(floor, 1.0)
}

/// Normalised effective sample size of an MCMC chain.
pub fn ness_mcmc(chain: &[Vec<f64>]) -> Result<f64> {
    let m = chain.len();
    if m < 2 {
        return Err(SkmError::Precondition("chain needs at least two samples".into()));
    }
    let rho = acf(chain, m - 1)?;
    Ok(ness_from_acf(&rho, m))
}

/// `1 / (M Σ w̄²)` for normalised weights.
pub fn ness_is(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / (weights.len() as f64 * sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scenario {
    Co,
    Po,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Co => "CO",
            Self::Po => "PO",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Scenario {
    type Err = SkmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CO" => Ok(Self::Co),
            "PO" => Ok(Self::Po),
            other => Err(SkmError::Parse(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Accuracy/efficiency summary of one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run: usize,
    pub scenario: Scenario,
    pub sampler: String,
    /// MSE per inferred component, in the order of the free parameters.
    pub mse: Vec<f64>,
    pub mean_mse: f64,
    pub ness: f64,
    pub acceptance_rate: Option<f64>,
}

impl MetricRecord {
    pub fn new(
        run: usize,
        scenario: Scenario,
        sampler: impl Into<String>,
        mse: Vec<f64>,
        ness: f64,
        acceptance_rate: Option<f64>,
    ) -> Self {
        let mean_mse = mse.iter().sum::<f64>() / mse.len().max(1) as f64;
        Self {
            run,
            scenario,
            sampler: sampler.into(),
            mse,
            mean_mse,
            ness,
            acceptance_rate,
        }
    }
}

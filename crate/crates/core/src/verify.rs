//! Empirical checks of the convergence behaviour of clipped importance
//! sampling.
//!
//! The checks cover four things:
//! * the deterministic bound on the change that clipping makes to a
//!   self-normalised estimate;
//! * the `M^{-1/2}` error rate of plain and clipped importance sampling
//!   against an analytic target;
//! * the same rate when the weights are particle-filter estimates (the
//!   pipeline the samplers actually use);
//! * the `J^{-1/2}` rate of the filter's likelihood error, uniformly over a
//!   parameter grid.
//!
//! Rates are fitted by least squares on log-log means and compared with a
//! tolerance band around `-1/2`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkmError};
use crate::filter::{run_filter, FilterOptions};
use crate::npmc::clip_weights;
use crate::resample::normalize_log_weights;
use crate::rng::substream;
use crate::toy::TwoStateToy;

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_SLOPE_BAND: [f64; 2] = [-0.65, -0.35];

// ---------------------------------------------------------------------------
// Deterministic clipping bound

/// Both sides of `|(f, π̄ᴹ) − (f, πᴹ)| ≤ 2a²‖f‖∞ M_T/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClippingBound {
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

/// Compares the clipped and unclipped self-normalised estimates of `f`.
/// Weights are linear and must lie in `[1/a, a]`.
pub fn check_clipping_bound(f: &[f64], weights: &[f64], clip: usize, a: f64) -> Result<ClippingBound> {
    crate::error::check_dim("function values", weights.len(), f.len())?;
    if weights.is_empty() {
        return Err(SkmError::Precondition("no samples".into()));
    }
    if !(a > 1.0) {
        return Err(SkmError::Precondition("weight bound must exceed 1".into()));
    }
    let (lo, hi) = (1.0 / a, a);
    if let Some(w) = weights.iter().find(|&&w| !(w >= lo && w <= hi)) {
        return Err(SkmError::Precondition(format!(
            "weight {w} outside the box [{lo}, {hi}]"
        )));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let (plain, _) = normalize_log_weights(&log_w);
    let clipped = clip_weights(&log_w, clip)?;
    let dot = |w: &[f64]| w.iter().zip(f).map(|(w, f)| w * f).sum::<f64>();
    let lhs = (dot(&clipped) - dot(&plain)).abs();
    let sup_f = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rhs = 2.0 * a * a * sup_f * clip as f64 / weights.len() as f64;
    Ok(ClippingBound {
        lhs,
        rhs,
        passed: lhs <= rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingSweepConfig {
    pub trials: usize,
    pub samples: usize,
    pub clip: usize,
    pub weight_bound: f64,
    pub seed: u64,
}

impl Default for ClippingSweepConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            samples: 100,
            clip: 10,
            weight_bound: 10.0,
            seed: 0x5eed_c11b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingSweep {
    pub trials: usize,
    pub failures: usize,
    /// Largest observed `lhs / rhs`.
    pub worst_ratio: f64,
}

/// Random inputs inside the weight box: log-uniform weights with a quarter
/// pushed to the box edges, and `f` uniform on `[-1, 1]`.
pub fn clipping_bound_sweep(cfg: &ClippingSweepConfig) -> Result<ClippingSweep> {
    if cfg.trials == 0 || cfg.samples < 2 || cfg.clip == 0 || cfg.clip > cfg.samples {
        return Err(SkmError::InvalidConfig("malformed clipping sweep".into()));
    }
    let ln_a = cfg.weight_bound.ln();
    let mut failures = 0;
    let mut worst_ratio = 0.0f64;
    for t in 0..cfg.trials {
        let mut rng = substream(cfg.seed, &[t as u64]);
        let weights: Vec<f64> = (0..cfg.samples)
            .map(|_| match rng.random_range(0..8) {
                0 => cfg.weight_bound,
                1 => 1.0 / cfg.weight_bound,
                _ => rng.random_range(-ln_a..=ln_a).exp().clamp(1.0 / cfg.weight_bound, cfg.weight_bound),
            })
            .collect();
        let f: Vec<f64> = (0..cfg.samples).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let check = check_clipping_bound(&f, &weights, cfg.clip, cfg.weight_bound)?;
        if !check.passed {
            failures += 1;
        }
        if check.rhs > 0.0 {
            worst_ratio = worst_ratio.max(check.lhs / check.rhs);
        }
    }
    Ok(ClippingSweep {
        trials: cfg.trials,
        failures,
        worst_ratio,
    })
}

// ---------------------------------------------------------------------------
// Rate fitting

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean absolute error per grid point and the fitted slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub grid: Vec<f64>,
    pub mean_abs_error: Vec<f64>,
    /// `None` when every error is exactly zero.
    pub slope: Option<f64>,
    pub passed: bool,
}

impl RateFit {
    fn new(grid: Vec<f64>, mean_abs_error: Vec<f64>, band: [f64; 2]) -> Self {
        if mean_abs_error.iter().all(|&e| e == 0.0) {
            return Self {
                grid,
                mean_abs_error,
                slope: None,
                passed: true,
            };
        }
        let slope = log_log_slope(&grid, &mean_abs_error);
        Self {
            passed: slope >= band[0] && slope <= band[1],
            grid,
            mean_abs_error,
            slope: Some(slope),
        }
    }
}

fn validate_grid<T: Copy + PartialOrd>(grid: &[T], replicates: usize, band: [f64; 2]) -> Result<()> {
    if grid.len() < 3 {
        return Err(SkmError::InvalidConfig("rate grid needs at least three points".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SkmError::InvalidConfig("rate grid must be strictly increasing".into()));
    }
    if replicates < 50 {
        return Err(SkmError::InvalidConfig("at least 50 replicates are required".into()));
    }
    if !(band[0] < band[1]) {
        return Err(SkmError::InvalidConfig("slope band is empty".into()));
    }
    Ok(())
}

/// `⌈√M⌉`.
pub fn sqrt_clip(m: usize) -> usize {
    let mut c = (m as f64).sqrt().ceil() as usize;
    while c > 1 && (c - 1) * (c - 1) >= m {
        c -= 1;
    }
    while c * c < m {
        c += 1;
    }
    c
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Self-normalised estimates of `f` without and with clipping at `⌈√M⌉`.
fn is_estimates(f: &[f64], log_w: &[f64]) -> Result<(f64, f64)> {
    let (plain, _) = normalize_log_weights(log_w);
    let clipped = clip_weights(log_w, sqrt_clip(log_w.len()))?;
    let dot = |w: &[f64]| w.iter().zip(f).map(|(w, f)| w * f).sum::<f64>();
    Ok((dot(&plain), dot(&clipped)))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Composite Simpson rule on `[lo, hi]` with `2n` panels.
fn simpson<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64, n: usize) -> f64 {
    let m = 2 * n;
    let h = (hi - lo) / m as f64;
    let mut acc = g(lo) + g(hi);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(lo + i as f64 * h);
    }
    acc * h / 3.0
}

// ---------------------------------------------------------------------------
// Importance sampling against an analytic target

/// Proposal used by the analytic rate check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticProposal {
    /// Student-t with `dof` degrees of freedom and the given scale, centred at 0.
    Student { dof: f64, scale: f64 },
    /// The target itself (constant weights).
    Target,
}

/// Analytic importance-sampling rate check. Target and proposal are both
/// truncated to `[-half_width, half_width]`, which keeps their density
/// ratio inside `[1/a, a]`. The test function is `sigmoid(2x - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheckConfig {
    pub grid: Vec<usize>,
    pub replicates: usize,
    pub weight_bound: f64,
    pub half_width: f64,
    pub target_mean: f64,
    pub target_sd: f64,
    pub proposal: AnalyticProposal,
    pub slope_band: [f64; 2],
    pub seed: u64,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        Self {
            grid: vec![100, 1000, 10_000],
            replicates: 200,
            weight_bound: 20.0,
            half_width: 3.0,
            target_mean: 0.0,
            target_sd: 1.0,
            proposal: AnalyticProposal::Student { dof: 3.0, scale: 1.5 },
            slope_band: DEFAULT_SLOPE_BAND,
            seed: 0x15_7a7e,
        }
    }
}

impl RateCheckConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid, self.replicates, self.slope_band)?;
        if self.grid[0] < 2 {
            return Err(SkmError::InvalidConfig("sample sizes must be at least 2".into()));
        }
        if !(self.weight_bound > 1.0) {
            return Err(SkmError::InvalidConfig("weight bound must exceed 1".into()));
        }
        if !(self.half_width > 0.0 && self.target_sd > 0.0) {
            return Err(SkmError::InvalidConfig("support and target spread must be positive".into()));
        }
        if let AnalyticProposal::Student { dof, scale } = self.proposal {
            if !(dof > 0.0 && scale > 0.0) {
                return Err(SkmError::InvalidConfig("Student proposal needs positive dof and scale".into()));
            }
        }
        Ok(())
    }

    fn log_target(&self, x: f64) -> f64 {
        -0.5 * ((x - self.target_mean) / self.target_sd).powi(2)
    }

    fn log_proposal(&self, x: f64) -> f64 {
        match self.proposal {
            AnalyticProposal::Student { dof, scale } => {
                -0.5 * (dof + 1.0) * (1.0 + (x / scale).powi(2) / dof).ln()
            }
            AnalyticProposal::Target => self.log_target(x),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = self.half_width;
        loop {
            let x = match self.proposal {
                AnalyticProposal::Student { dof, scale } => {
                    scale * StudentT::new(dof).expect("validated dof").sample(rng)
                }
                AnalyticProposal::Target => {
                    let z: f64 = StandardNormal.sample(rng);
                    self.target_mean + self.target_sd * z
                }
            };
            if x.abs() <= b {
                return x;
            }
        }
    }

    fn test_function(x: f64) -> f64 {
        sigmoid(2.0 * x - 1.0)
    }

    /// Largest `max(w, 1/w)` over the support for the normalised density
    /// ratio, evaluated on a fine grid.
    pub fn weight_extent(&self) -> f64 {
        let b = self.half_width;
        let zt = simpson(|x| self.log_target(x).exp(), -b, b, 5000);
        let zq = simpson(|x| self.log_proposal(x).exp(), -b, b, 5000);
        let shift = zq.ln() - zt.ln();
        (0..=10_000)
            .map(|i| {
                let x = -b + 2.0 * b * i as f64 / 10_000.0;
                let lw = self.log_target(x) - self.log_proposal(x) + shift;
                lw.abs().exp()
            })
            .fold(1.0, f64::max)
    }

    /// `(f, π)` by quadrature.
    pub fn exact_expectation(&self) -> f64 {
        let b = self.half_width;
        let num = simpson(|x| Self::test_function(x) * self.log_target(x).exp(), -b, b, 5000);
        let den = simpson(|x| self.log_target(x).exp(), -b, b, 5000);
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsRateReport {
    pub exact: f64,
    pub plain: RateFit,
    pub clipped: RateFit,
    /// `|mean clipped − mean plain|` at the largest sample size.
    pub limit_gap: f64,
    /// Standard error of the plain estimator at the largest sample size.
    pub limit_std_error: f64,
    pub shared_limit: bool,
    pub passed: bool,
}

/// Estimates per replicate, for each grid point: `(plain, clipped)`.
fn replicate_estimates<F>(grid: &[usize], replicates: usize, one: F) -> Result<Vec<Vec<(f64, f64)>>>
where
    F: Fn(usize, usize, usize) -> Result<(f64, f64)> + Sync,
{
    grid.iter()
        .enumerate()
        .map(|(gi, &m)| (0..replicates).into_par_iter().map(|r| one(gi, r, m)).collect())
        .collect()
}

fn summarise(
    grid: &[usize],
    estimates: &[Vec<(f64, f64)>],
    exact: f64,
    band: [f64; 2],
) -> IsRateReport {
    let x: Vec<f64> = grid.iter().map(|&m| m as f64).collect();
    let err = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        estimates
            .iter()
            .map(|reps| reps.iter().map(|e| (pick(e) - exact).abs()).sum::<f64>() / reps.len() as f64)
            .collect()
    };
    let plain = RateFit::new(x.clone(), err(|e| e.0), band);
    let clipped = RateFit::new(x, err(|e| e.1), band);
    let last = estimates.last().expect("grid is non-empty");
    let (plain_mean, plain_sd) = mean_sd(&last.iter().map(|e| e.0).collect::<Vec<_>>());
    let (clipped_mean, _) = mean_sd(&last.iter().map(|e| e.1).collect::<Vec<_>>());
    let limit_gap = (clipped_mean - plain_mean).abs();
    let limit_std_error = plain_sd / (last.len() as f64).sqrt();
    let shared_limit = limit_gap <= 3.0 * limit_std_error;
    IsRateReport {
        exact,
        passed: plain.passed && clipped.passed && shared_limit,
        plain,
        clipped,
        limit_gap,
        limit_std_error,
        shared_limit,
    }
}

/// Plain and clipped (`M_T = ⌈√M⌉`) importance sampling against the
/// analytic target.
pub fn check_is_rate(cfg: &RateCheckConfig) -> Result<IsRateReport> {
    cfg.validate()?;
    let extent = cfg.weight_extent();
    if extent > cfg.weight_bound {
        return Err(SkmError::Precondition(format!(
            "density ratio reaches {extent:.3}, outside the weight box a = {}",
            cfg.weight_bound
        )));
    }
    let exact = cfg.exact_expectation();
    let estimates = replicate_estimates(&cfg.grid, cfg.replicates, |gi, r, m| {
        let mut rng = substream(cfg.seed, &[gi as u64, r as u64]);
        let xs: Vec<f64> = (0..m).map(|_| cfg.draw(&mut rng)).collect();
        let log_w: Vec<f64> = xs.iter().map(|&x| cfg.log_target(x) - cfg.log_proposal(x)).collect();
        let f: Vec<f64> = xs.iter().map(|&x| RateCheckConfig::test_function(x)).collect();
        is_estimates(&f, &log_w)
    })?;
    Ok(summarise(&cfg.grid, &estimates, exact, cfg.slope_band))
}

// ---------------------------------------------------------------------------
// Importance sampling with particle-filter weights

/// Posterior of the toy's first log-rate under a uniform prior, sampled
/// from the prior and weighted by `J`-particle likelihood estimates. The
/// test function is `sigmoid(θ₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NisRateConfig {
    pub toy: TwoStateToy,
    pub theta_bounds: [f64; 2],
    pub particles: usize,
    pub grid: Vec<usize>,
    pub replicates: usize,
    pub slope_band: [f64; 2],
    pub seed: u64,
}

impl Default for NisRateConfig {
    fn default() -> Self {
        Self {
            toy: TwoStateToy::default(),
            theta_bounds: [-2.0, 1.0],
            particles: 10,
            grid: vec![100, 1000, 10_000],
            replicates: 50,
            slope_band: DEFAULT_SLOPE_BAND,
            seed: 0x00a1_1ce5,
        }
    }
}

impl NisRateConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid, self.replicates, self.slope_band)?;
        self.toy.validate()?;
        if self.grid[0] < 2 || self.particles == 0 {
            return Err(SkmError::InvalidConfig("sample and particle counts must be positive".into()));
        }
        if !(self.theta_bounds[0] < self.theta_bounds[1]) {
            return Err(SkmError::InvalidConfig("empty prior interval".into()));
        }
        Ok(())
    }

    /// Posterior expectation of `sigmoid(θ₁)` by quadrature of the exact
    /// likelihood.
    pub fn exact_expectation(&self) -> f64 {
        let [lo, hi] = self.theta_bounds;
        let lik = |t: f64| self.toy.exact_likelihood_theta(&self.toy.theta_with_first(t));
        simpson(|t| sigmoid(t) * lik(t), lo, hi, 1000) / simpson(lik, lo, hi, 1000)
    }
}

pub fn check_nis_rate(cfg: &NisRateConfig) -> Result<IsRateReport> {
    cfg.validate()?;
    let exact = cfg.exact_expectation();
    let network = cfg.toy.network();
    let initial = cfg.toy.initial_prior();
    let obs = cfg.toy.observations()?;
    let options = FilterOptions::new(cfg.particles);
    let [lo, hi] = cfg.theta_bounds;
    let estimates = replicate_estimates(&cfg.grid, cfg.replicates, |gi, r, m| {
        let mut rng = substream(cfg.seed, &[gi as u64, r as u64]);
        let mut f = Vec::with_capacity(m);
        let mut log_w = Vec::with_capacity(m);
        for _ in 0..m {
            let theta1 = rng.random_range(lo..hi);
            let rates: Vec<f64> = cfg.toy.theta_with_first(theta1).iter().map(|t| t.exp()).collect();
            let out = run_filter(&network, &rates, &initial, &obs, &options, &mut rng)?;
            f.push(sigmoid(theta1));
            log_w.push(out.log_marginal_likelihood);
        }
        is_estimates(&f, &log_w)
    })?;
    Ok(summarise(&cfg.grid, &estimates, exact, cfg.slope_band))
}

// ---------------------------------------------------------------------------
// Particle-filter likelihood rate

/// Uniform-in-θ error of the filter likelihood on the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfRateConfig {
    pub toy: TwoStateToy,
    /// Values of the first log-rate; the second stays at the toy's value.
    pub theta_grid: Vec<f64>,
    pub particle_grid: Vec<usize>,
    pub replicates: usize,
    pub slope_band: [f64; 2],
    pub seed: u64,
}

impl Default for PfRateConfig {
    fn default() -> Self {
        Self {
            toy: TwoStateToy::default(),
            theta_grid: (0..20).map(|i| -2.0 + 3.0 * i as f64 / 19.0).collect(),
            particle_grid: vec![100, 1000, 10_000],
            replicates: 200,
            slope_band: DEFAULT_SLOPE_BAND,
            seed: 0x9f_1a7e,
        }
    }
}

impl PfRateConfig {
    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.particle_grid, self.replicates, self.slope_band)?;
        if self.particle_grid[0] == 0 {
            return Err(SkmError::InvalidConfig("particle counts must be positive".into()));
        }
        if self.theta_grid.is_empty() {
            return Err(SkmError::InvalidConfig("θ grid is empty".into()));
        }
        self.toy.validate()
    }
}

/// Mean over replicates of `sup_θ |p̂ᴶ(y|θ) − p(y|θ)|` for each `J`.
pub fn check_pf_likelihood_rate(cfg: &PfRateConfig) -> Result<RateFit> {
    cfg.validate()?;
    let x: Vec<f64> = cfg.particle_grid.iter().map(|&j| j as f64).collect();
    if cfg.toy.y.is_empty() {
        // Empty product: both sides are exactly 1.
        return Ok(RateFit::new(x, vec![0.0; cfg.particle_grid.len()], cfg.slope_band));
    }
    let network = cfg.toy.network();
    let initial = cfg.toy.initial_prior();
    let obs = cfg.toy.observations()?;
    let thetas: Vec<Vec<f64>> = cfg.theta_grid.iter().map(|&t| cfg.toy.theta_with_first(t)).collect();
    let exact: Vec<f64> = thetas.iter().map(|t| cfg.toy.exact_likelihood_theta(t)).collect();

    let mut mean_sup = Vec::with_capacity(cfg.particle_grid.len());
    for (gi, &j) in cfg.particle_grid.iter().enumerate() {
        let options = FilterOptions::new(j);
        let sups: Vec<f64> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut sup = 0.0f64;
                for (ti, theta) in thetas.iter().enumerate() {
                    let mut rng = substream(cfg.seed, &[gi as u64, r as u64, ti as u64]);
                    let rates: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
                    let out = run_filter(&network, &rates, &initial, &obs, &options, &mut rng)?;
                    sup = sup.max((out.log_marginal_likelihood.exp() - exact[ti]).abs());
                }
                Ok(sup)
            })
            .collect::<Result<_>>()?;
        mean_sup.push(sups.iter().sum::<f64>() / sups.len() as f64);
    }
    Ok(RateFit::new(x, mean_sup, cfg.slope_band))
}

// ---------------------------------------------------------------------------
// Suite and report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub schema_version: u32,
    pub clipping: ClippingSweepConfig,
    pub is_rate: RateCheckConfig,
    pub nis_rate: NisRateConfig,
    pub pf_rate: PfRateConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            schema_version: REPORT_VERSION,
            clipping: ClippingSweepConfig::default(),
            is_rate: RateCheckConfig::default(),
            nis_rate: NisRateConfig::default(),
            pf_rate: PfRateConfig::default(),
        }
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_band: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_error: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckRecord {
    fn bare(name: &str, passed: bool, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed,
            seed,
            slope: None,
            slope_band: None,
            lhs: None,
            rhs: None,
            grid: None,
            mean_abs_error: None,
            detail: None,
        }
    }

    fn from_fit(name: &str, fit: &RateFit, band: [f64; 2], seed: u64) -> Self {
        Self {
            slope: fit.slope,
            slope_band: Some(band),
            grid: Some(fit.grid.clone()),
            mean_abs_error: Some(fit.mean_abs_error.clone()),
            ..Self::bare(name, fit.passed, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub version: u32,
    pub passed: bool,
    pub checks: Vec<CheckRecord>,
}

fn push_is_report(checks: &mut Vec<CheckRecord>, prefix: &str, rep: &IsRateReport, band: [f64; 2], seed: u64) {
    checks.push(CheckRecord::from_fit(&format!("{prefix}_plain"), &rep.plain, band, seed));
    checks.push(CheckRecord::from_fit(&format!("{prefix}_clipped"), &rep.clipped, band, seed));
    checks.push(CheckRecord {
        lhs: Some(rep.limit_gap),
        rhs: Some(3.0 * rep.limit_std_error),
        detail: Some(format!("exact expectation {:.6}", rep.exact)),
        ..CheckRecord::bare(&format!("{prefix}_shared_limit"), rep.shared_limit, seed)
    });
}

/// Runs every check. Precondition and configuration errors abort the suite.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerificationReport> {
    if cfg.schema_version != REPORT_VERSION {
        return Err(SkmError::SchemaMismatch(format!(
            "verification config version {} (expected {REPORT_VERSION})",
            cfg.schema_version
        )));
    }
    let mut checks = Vec::new();

    let sweep = clipping_bound_sweep(&cfg.clipping)?;
    checks.push(CheckRecord {
        lhs: Some(sweep.worst_ratio),
        rhs: Some(1.0),
        detail: Some(format!("{} failures in {} trials", sweep.failures, sweep.trials)),
        ..CheckRecord::bare("clipping_bound", sweep.failures == 0, cfg.clipping.seed)
    });

    let is = check_is_rate(&cfg.is_rate)?;
    push_is_report(&mut checks, "is_rate", &is, cfg.is_rate.slope_band, cfg.is_rate.seed);

    let nis = check_nis_rate(&cfg.nis_rate)?;
    push_is_report(&mut checks, "nis_rate", &nis, cfg.nis_rate.slope_band, cfg.nis_rate.seed);

    let pf = check_pf_likelihood_rate(&cfg.pf_rate)?;
    checks.push(CheckRecord::from_fit("pf_likelihood_rate", &pf, cfg.pf_rate.slope_band, cfg.pf_rate.seed));

    Ok(VerificationReport {
        version: REPORT_VERSION,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_make_clipping_a_no_op() {
        let f = [0.3, -1.0, 2.0, 0.5];
        let check = check_clipping_bound(&f, &[1.0; 4], 2, 10.0).unwrap();
        assert!(check.lhs < 1e-15);
        assert!(check.passed);
        assert!((check.rhs - 2.0 * 100.0 * 2.0 * 2.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn stress_case_at_box_edges() {
        let a = 10.0;
        let m = 50;
        let mut w = vec![1.0 / a; m];
        w[0] = a;
        w[1] = a;
        let f: Vec<f64> = (0..m).map(|i| if i < 2 { 1.0 } else { -1.0 }).collect();
        let check = check_clipping_bound(&f, &w, m - 1, a).unwrap();
        assert!(check.passed, "{check:?}");
        assert!(check.lhs > 0.1);
    }

    #[test]
    fn box_violation_is_a_precondition_error() {
        let err = check_clipping_bound(&[1.0, 1.0], &[1.0, 50.0], 1, 10.0).unwrap_err();
        assert!(matches!(err, SkmError::Precondition(_)));
    }

    #[test]
    fn randomised_sweep_never_fails() {
        let sweep = clipping_bound_sweep(&ClippingSweepConfig::default()).unwrap();
        assert_eq!(sweep.trials, 1000);
        assert_eq!(sweep.failures, 0);
        assert!(sweep.worst_ratio < 1.0);
    }

    #[test]
    fn slope_fit_examples() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
        let fit = RateFit::new(x.to_vec(), vec![0.0; 3], DEFAULT_SLOPE_BAND);
        assert!(fit.passed && fit.slope.is_none());
    }

    #[test]
    fn sqrt_clip_is_ceiling_root() {
        assert_eq!(sqrt_clip(100), 10);
        assert_eq!(sqrt_clip(101), 11);
        assert_eq!(sqrt_clip(1000), 32);
        assert_eq!(sqrt_clip(10_000), 100);
        assert_eq!(sqrt_clip(2), 2);
    }

    #[test]
    fn grid_validation() {
        let mut cfg = RateCheckConfig::default();
        cfg.grid = vec![100, 1000];
        assert!(cfg.validate().is_err());
        cfg.grid = vec![100, 100, 1000];
        assert!(cfg.validate().is_err());
        cfg.grid = vec![100, 1000, 10_000];
        cfg.replicates = 49;
        assert!(cfg.validate().is_err());
        cfg.replicates = 50;
        cfg.weight_bound = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_analytic_pair_fits_the_box() {
        let cfg = RateCheckConfig::default();
        let extent = cfg.weight_extent();
        assert!(extent > 1.0 && extent < cfg.weight_bound, "{extent}");
        let mut tight = cfg.clone();
        tight.weight_bound = 1.5;
        assert!(matches!(check_is_rate(&tight), Err(SkmError::Precondition(_))));
    }

    #[test]
    fn quadrature_matches_symmetry() {
        // sigmoid(2x-1) has no symmetry, but sigmoid(x) + sigmoid(-x) = 1,
        // so a centred symmetric target gives exactly 1/2 for sigmoid(x).
        let half = simpson(|x| sigmoid(x) * (-0.5 * x * x).exp(), -3.0, 3.0, 500)
            / simpson(|x| (-0.5 * x * x).exp(), -3.0, 3.0, 500);
        assert!((half - 0.5).abs() < 1e-14);
    }

    #[test]
    fn small_is_rate_run_has_half_slope() {
        let cfg = RateCheckConfig {
            grid: vec![50, 200, 800, 3200],
            replicates: 100,
            ..RateCheckConfig::default()
        };
        let rep = check_is_rate(&cfg).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn proposal_equal_to_target_gives_pure_monte_carlo_rate() {
        let cfg = RateCheckConfig {
            grid: vec![50, 200, 800, 3200],
            replicates: 100,
            proposal: AnalyticProposal::Target,
            ..RateCheckConfig::default()
        };
        assert!((cfg.weight_extent() - 1.0).abs() < 1e-6);
        let rep = check_is_rate(&cfg).unwrap();
        assert!(rep.plain.passed, "{rep:?}");
        // Constant weights: clipping changes nothing.
        assert_eq!(rep.plain.mean_abs_error, rep.clipped.mean_abs_error);
    }

    #[test]
    fn empty_record_has_zero_likelihood_error() {
        let mut cfg = PfRateConfig {
            replicates: 50,
            ..PfRateConfig::default()
        };
        cfg.toy.y.clear();
        let fit = check_pf_likelihood_rate(&cfg).unwrap();
        assert!(fit.passed);
        assert!(fit.mean_abs_error.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn verify_config_round_trips_through_json() {
        let cfg = VerifyConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: VerifyConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}

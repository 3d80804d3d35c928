//! Nonlinear population Monte Carlo with clipped importance weights.
//!
//! Every iteration draws `M` log-rate vectors from the current proposal,
//! estimates each likelihood with an independent particle filter, clips the
//! `M_T` largest importance weights down to the `M_T`-th largest, resamples,
//! and moment-matches a Gaussian that becomes the next proposal. The first
//! proposal is the prior.
//!
//! Sample `i` of iteration `ℓ` always uses the random stream keyed by
//! `(seed, ℓ, i)`, so the output does not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::ness_is;
use crate::error::{Result, SkmError};
use crate::gillespie::Trajectory;
use crate::likelihood::LikelihoodEstimator;
use crate::model::{ParameterSpace, PriorSpec};
use crate::resample::multinomial_indices;
use crate::rng::{substream, SkmRng};

pub const DEFAULT_JITTER: f64 = 1e-8;

/// Which iterations keep one latent path per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathRecording {
    None,
    #[default]
    Final,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmcConfig {
    pub iterations: usize,
    pub samples: usize,
    pub clip: usize,
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub record_paths: PathRecording,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl NpmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SkmError::InvalidConfig("at least one iteration is required".into()));
        }
        if !(self.clip > 1 && self.clip < self.samples) {
            return Err(SkmError::InvalidConfig(format!(
                "clipping parameter must satisfy 1 < M_T < M (got M_T = {}, M = {})",
                self.clip, self.samples
            )));
        }
        if self.particles == 0 {
            return Err(SkmError::InvalidConfig("particle count must be at least 1".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(SkmError::InvalidConfig("covariance jitter must be positive".into()));
        }
        Ok(())
    }
}

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianProposal {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(SkmError::DimensionMismatch {
                context: "proposal covariance",
                expected: k,
                got: cov.nrows(),
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| SkmError::Precondition("proposal covariance is not positive definite".into()))?
            .l();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol,
            log_norm: -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        (&self.mean + &self.chol * z).as_slice().to_vec()
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(theta) - &self.mean;
        let solved = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * solved.norm_squared()
    }
}

/// Proposal used at one iteration.
#[derive(Debug, Clone)]
pub enum ProposalPdf {
    Prior,
    Gaussian(GaussianProposal),
}

impl ProposalPdf {
    fn sample<R: Rng + ?Sized>(&self, priors: &PriorSpec, space: &ParameterSpace, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Prior => space.sample_prior(priors, rng),
            Self::Gaussian(g) => g.sample(rng),
        }
    }

    fn log_pdf(&self, priors: &PriorSpec, space: &ParameterSpace, free: &[f64]) -> f64 {
        match self {
            Self::Prior => space.log_prior(priors, free),
            Self::Gaussian(g) => g.log_pdf(free),
        }
    }
}

/// `ln p̂(y|θ) + ln p(θ) − ln q(θ)`.
pub fn compute_log_iw(log_likelihood: f64, log_prior: f64, log_proposal: f64) -> Result<f64> {
    if log_proposal == f64::NEG_INFINITY || log_proposal.is_nan() {
        return Err(SkmError::ProposalSupport);
    }
    if log_likelihood == f64::NEG_INFINITY || log_prior == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_likelihood + log_prior - log_proposal)
}

/// Indices ordered by decreasing weight; ties keep sample order.
fn descending_order(log_w: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..log_w.len()).collect();
    order.sort_by(|&a, &b| log_w[b].total_cmp(&log_w[a]));
    order
}

/// Clipped, unnormalised log-weights: the `clip` largest are replaced by
/// the `clip`-th largest.
///
/// When fewer than `clip` weights are non-zero, the smallest non-zero weight
/// serves as the threshold, so every surviving sample ends up flat.
pub fn clip_log_weights(log_w: &[f64], clip: usize) -> Result<Vec<f64>> {
    if clip == 0 || clip > log_w.len() {
        return Err(SkmError::InvalidConfig(format!(
            "clipping parameter {clip} outside 1..={}",
            log_w.len()
        )));
    }
    let finite = log_w.iter().filter(|w| **w > f64::NEG_INFINITY).count();
    if finite == 0 {
        return Err(SkmError::DegeneratePopulation);
    }
    let order = descending_order(log_w);
    let rank = clip.min(finite);
    let threshold = log_w[order[rank - 1]];
    let mut clipped = log_w.to_vec();
    for &i in &order[..rank] {
        clipped[i] = threshold;
    }
    Ok(clipped)
}

/// Normalised transformed importance weights.
pub fn clip_weights(log_w: &[f64], clip: usize) -> Result<Vec<f64>> {
    let clipped = clip_log_weights(log_w, clip)?;
    let (weights, _) = crate::resample::normalize_log_weights(&clipped);
    Ok(weights)
}

/// `samples.len()` i.i.d. draws from the weighted sample set.
pub fn multinomial_resample<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    weights: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    multinomial_indices(weights, samples.len(), rng)
        .into_iter()
        .map(|i| samples[i].clone())
        .collect()
}

/// Sample mean and `1/M`-normalised covariance, with `jitter · I` added when
/// the smallest eigenvalue falls below `jitter`.
pub fn fit_gaussian(samples: &[Vec<f64>], jitter: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = samples.len();
    if m < 2 {
        return Err(SkmError::Precondition("moment matching needs at least two samples".into()));
    }
    let k = samples[0].len();
    let mut mean = vec![0.0; k];
    for s in samples {
        for (acc, v) in mean.iter_mut().zip(s) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut cov = DMatrix::zeros(k, k);
    for s in samples {
        for a in 0..k {
            let da = s[a] - mean[a];
            for b in a..k {
                cov[(a, b)] += da * (s[b] - mean[b]);
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = cov[(a, b)] / m as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let min_eig = cov
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < jitter {
        for a in 0..k {
            cov[(a, a)] += jitter;
        }
    }
    Ok((mean, cov))
}

/// Everything produced by one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpmcIterationOutput {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Drawn log-rates, full `K`-vectors.
    pub samples: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    pub log_iw: Vec<f64>,
    /// Normalised transformed weights.
    pub tiw: Vec<f64>,
    /// Resampled free components.
    pub resampled: Vec<Vec<f64>>,
    /// Moment-matched mean over the free components.
    pub mean: Vec<f64>,
    /// Moment-matched covariance over the free components (row-major rows).
    pub cov: Vec<Vec<f64>>,
    pub ness: f64,
    /// One latent path per sample when recorded (`None` for zero-likelihood samples).
    #[serde(skip)]
    pub paths: Option<Vec<Option<Trajectory>>>,
}

impl NpmcIterationOutput {
    pub fn variance(&self, free_index: usize) -> f64 {
        self.cov[free_index][free_index]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpmcAbort {
    pub iteration: usize,
    pub reason: String,
    /// Mean and covariance of the last valid Gaussian proposal, if any.
    pub last_mean: Option<Vec<f64>>,
    pub last_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NpmcRun {
    pub free: Vec<usize>,
    pub iterations: Vec<NpmcIterationOutput>,
    pub abort: Option<NpmcAbort>,
}

impl NpmcRun {
    pub fn last(&self) -> Option<&NpmcIterationOutput> {
        self.iterations.last()
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Runs the sampler over the free components of `space`.
pub fn run_npmc<L: LikelihoodEstimator + ?Sized>(
    estimator: &L,
    priors: &PriorSpec,
    space: &ParameterSpace,
    cfg: &NpmcConfig,
) -> Result<NpmcRun> {
    cfg.validate()?;
    if space.full_dim() != priors.dimension() {
        return Err(SkmError::DimensionMismatch {
            context: "parameter space",
            expected: priors.dimension(),
            got: space.full_dim(),
        });
    }
    let mut proposal = ProposalPdf::Prior;
    let mut run = NpmcRun {
        free: space.free.clone(),
        iterations: Vec::with_capacity(cfg.iterations),
        abort: None,
    };

    for ell in 1..=cfg.iterations {
        let want_paths = match cfg.record_paths {
            PathRecording::None => false,
            PathRecording::Final => ell == cfg.iterations,
            PathRecording::All => true,
        };
        let key = ell as u64;
        let mut draw_rng = substream(cfg.seed, &[key, 0]);
        let free_samples: Vec<Vec<f64>> = (0..cfg.samples)
            .map(|_| proposal.sample(priors, space, &mut draw_rng))
            .collect();

        let evaluated: Vec<(f64, f64, f64, Option<Trajectory>)> = free_samples
            .par_iter()
            .enumerate()
            .map(|(i, free)| -> Result<_> {
                let log_prior = space.log_prior(priors, free);
                let log_q = proposal.log_pdf(priors, space, free);
                if log_prior == f64::NEG_INFINITY {
                    return Ok((f64::NEG_INFINITY, log_prior, log_q, None));
                }
                let mut rng: SkmRng = substream(cfg.seed, &[key, 1, i as u64]);
                let est = estimator.estimate(&space.embed(free), want_paths, &mut rng)?;
                Ok((est.log_likelihood, log_prior, log_q, est.path))
            })
            .collect::<Result<_>>()?;

        let mut log_likelihood = Vec::with_capacity(cfg.samples);
        let mut log_iw = Vec::with_capacity(cfg.samples);
        let mut paths = want_paths.then(|| Vec::with_capacity(cfg.samples));
        for (ll, lp, lq, path) in evaluated {
            log_likelihood.push(ll);
            log_iw.push(compute_log_iw(ll, lp, lq)?);
            if let Some(p) = paths.as_mut() {
                p.push(path);
            }
        }

        let tiw = match clip_weights(&log_iw, cfg.clip) {
            Ok(w) => w,
            Err(SkmError::DegeneratePopulation) => {
                let (last_mean, last_cov) = match &proposal {
                    ProposalPdf::Prior => (None, None),
                    ProposalPdf::Gaussian(g) => (Some(g.mean().to_vec()), Some(matrix_rows(g.cov()))),
                };
                run.abort = Some(NpmcAbort {
                    iteration: ell,
                    reason: "every importance weight is zero".into(),
                    last_mean,
                    last_cov,
                });
                return Ok(run);
            }
            Err(e) => return Err(e),
        };

        let mut resample_rng = substream(cfg.seed, &[key, 2]);
        let resampled = multinomial_resample(&free_samples, &tiw, &mut resample_rng);
        let (mean, cov) = fit_gaussian(&resampled, cfg.jitter)?;
        let ness = ness_is(&tiw);

        run.iterations.push(NpmcIterationOutput {
            iteration: ell,
            samples: free_samples.iter().map(|f| space.embed(f)).collect(),
            log_likelihood,
            log_iw,
            tiw,
            resampled,
            mean: mean.clone(),
            cov: matrix_rows(&cov),
            ness,
            paths,
        });
        proposal = ProposalPdf::Gaussian(GaussianProposal::new(mean, cov)?);
    }
    Ok(run)
}

/// TIW-weighted posterior means of the log-rates and (when recorded) of the
/// latent populations, `x̂[n][v]`.
pub fn posterior_estimates(out: &NpmcIterationOutput) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
    let k = out.samples.first().map_or(0, Vec::len);
    let mut theta_hat = vec![0.0; k];
    for (s, &w) in out.samples.iter().zip(&out.tiw) {
        for (acc, v) in theta_hat.iter_mut().zip(s) {
            *acc += w * v;
        }
    }

    let x_hat = out.paths.as_ref().and_then(|paths| {
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for (path, &w) in paths.iter().zip(&out.tiw) {
            if w == 0.0 {
                continue;
            }
            let path = path.as_ref()?;
            let grid = acc.get_or_insert_with(|| {
                vec![vec![0.0; path.x0.len()]; path.states.len()]
            });
            for (row, x) in grid.iter_mut().zip(&path.states) {
                for (a, &xv) in row.iter_mut().zip(x.iter()) {
                    *a += w * xv as f64;
                }
            }
        }
        acc
    });
    (theta_hat, x_hat)
}

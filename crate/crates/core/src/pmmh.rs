//! Particle-marginal Metropolis-Hastings.
//!
//! A Gaussian random walk on the free log-rates proposes `θ*`; a particle
//! filter supplies both `ln p̂(y | θ*)` and a latent path `x*`. On rejection
//! the previous `θ`, path and likelihood *estimate* are carried forward
//! unchanged, which is what keeps the chain exact for the true posterior.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkmError};
use crate::gillespie::Trajectory;
use crate::likelihood::{LikelihoodEstimate, LikelihoodEstimator};
use crate::model::{ParameterSpace, PriorSpec};
use crate::rng::{substream, SkmRng};

pub const DEFAULT_INIT_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_variance: f64,
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retries")]
    pub init_retries: usize,
}

fn default_retries() -> usize {
    DEFAULT_INIT_RETRIES
}

impl PmmhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.iterations {
            return Err(SkmError::InvalidConfig("burn-in exceeds iteration count".into()));
        }
        if self.thin == 0 {
            return Err(SkmError::InvalidConfig("thinning factor must be at least 1".into()));
        }
        if !(self.proposal_variance > 0.0 && self.proposal_variance.is_finite()) {
            return Err(SkmError::InvalidConfig("proposal variance must be positive".into()));
        }
        if self.particles == 0 {
            return Err(SkmError::InvalidConfig("particle count must be at least 1".into()));
        }
        if self.init_retries == 0 {
            return Err(SkmError::InvalidConfig("initialisation needs at least one attempt".into()));
        }
        Ok(())
    }

    /// Number of samples kept after burn-in and thinning.
    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in.min(self.iterations)) / self.thin.max(1)
    }
}

/// Sampler products. Index 0 of the full-chain vectors is the initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    /// Full log-rate chain `θ^(0..=I)`, all `K` components.
    pub theta: Vec<Vec<f64>>,
    /// Stored `ln p̂(y | θ^(i))` for `i = 0..=I`.
    pub log_likelihood: Vec<f64>,
    /// `ln p̂(y | θ*)` of the candidate proposed at iteration `i = 1..=I`.
    pub candidate_log_likelihood: Vec<f64>,
    /// Acceptance indicator for iterations `1..=I`.
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    /// Iteration numbers kept by post-processing.
    pub retained_iterations: Vec<usize>,
    pub retained_theta: Vec<Vec<f64>>,
    pub retained_paths: Vec<Trajectory>,
    /// Prior draws needed to start the chain.
    pub init_attempts: usize,
}

/// `θ* = θ + ε`, `ε ~ N(0, γ² I)`.
pub fn propose_theta<R: Rng + ?Sized>(theta: &[f64], variance: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    theta
        .iter()
        .map(|&t| {
            let z: f64 = StandardNormal.sample(rng);
            t + sd * z
        })
        .collect()
}

/// Log-density of the random-walk proposal, `ln N(to; from, γ² I)`.
pub fn log_proposal_density(to: &[f64], from: &[f64], variance: f64) -> f64 {
    let k = to.len() as f64;
    let sq: f64 = to.iter().zip(from).map(|(a, b)| (a - b).powi(2)).sum();
    -0.5 * k * (2.0 * std::f64::consts::PI * variance).ln() - sq / (2.0 * variance)
}

/// `min(0, (ℓ* + π*) − (ℓ + π))`; the symmetric proposal ratio is omitted.
pub fn log_acceptance(
    loglik_star: f64,
    logprior_star: f64,
    loglik_cur: f64,
    logprior_cur: f64,
) -> Result<f64> {
    let candidate = loglik_star + logprior_star;
    let current = loglik_cur + logprior_cur;
    if current == f64::NEG_INFINITY {
        if candidate == f64::NEG_INFINITY {
            return Err(SkmError::ChainOutsideSupport);
        }
        return Ok(0.0);
    }
    if candidate.is_nan() || current.is_nan() {
        return Err(SkmError::Precondition("NaN in acceptance ratio".into()));
    }
    Ok((candidate - current).min(0.0))
}

/// Iteration numbers `B + T, B + 2T, …` (1-based) kept from `I` iterations.
pub fn retained_iterations(iterations: usize, burn_in: usize, thin: usize) -> Vec<usize> {
    assert!(thin >= 1, "thinning factor must be at least 1");
    (1..)
        .map(|m| burn_in + m * thin)
        .take_while(|&i| i <= iterations)
        .collect()
}

/// Drops the burn-in and keeps every `thin`-th element; `chain[0]` is iteration 1.
pub fn postprocess<T: Clone>(chain: &[T], burn_in: usize, thin: usize) -> Vec<T> {
    retained_iterations(chain.len(), burn_in, thin)
        .into_iter()
        .map(|i| chain[i - 1].clone())
        .collect()
}

fn evaluate<L: LikelihoodEstimator + ?Sized>(
    estimator: &L,
    theta: &[f64],
    rng: &mut SkmRng,
) -> Result<LikelihoodEstimate> {
    estimator.estimate(theta, true, rng)
}

/// Runs the chain over the free components of `space`.
pub fn run_pmmh<L: LikelihoodEstimator + ?Sized>(
    estimator: &L,
    priors: &PriorSpec,
    space: &ParameterSpace,
    cfg: &PmmhConfig,
) -> Result<ChainOutput> {
    cfg.validate()?;
    if space.full_dim() != priors.dimension() {
        return Err(SkmError::DimensionMismatch {
            context: "parameter space",
            expected: priors.dimension(),
            got: space.full_dim(),
        });
    }
    // Separate streams for chain moves and for likelihood evaluations.
    let mut moves = substream(cfg.seed, &[0]);
    let mut filters = substream(cfg.seed, &[1]);

    let mut init_attempts = 0;
    let (mut free, mut current) = loop {
        if init_attempts == cfg.init_retries {
            return Err(SkmError::InitializationFailed(init_attempts));
        }
        init_attempts += 1;
        let candidate = space.sample_prior(priors, &mut moves);
        let est = evaluate(estimator, &space.embed(&candidate), &mut filters)?;
        if est.log_likelihood > f64::NEG_INFINITY {
            break (candidate, est);
        }
    };
    let mut log_prior = space.log_prior(priors, &free);
    let mut current_path = current.path.take();

    let iterations = cfg.iterations;
    let retained = retained_iterations(iterations, cfg.burn_in, cfg.thin);
    let mut next_retained = retained.iter().copied().peekable();

    let mut out = ChainOutput {
        theta: Vec::with_capacity(iterations + 1),
        log_likelihood: Vec::with_capacity(iterations + 1),
        candidate_log_likelihood: Vec::with_capacity(iterations),
        accepted: Vec::with_capacity(iterations),
        acceptance_rate: 0.0,
        retained_iterations: retained.clone(),
        retained_theta: Vec::with_capacity(retained.len()),
        retained_paths: Vec::with_capacity(retained.len()),
        init_attempts,
    };
    out.theta.push(space.embed(&free));
    out.log_likelihood.push(current.log_likelihood);

    let mut accepted_count = 0usize;
    for i in 1..=iterations {
        let proposal = propose_theta(&free, cfg.proposal_variance, &mut moves);
        let prior_star = space.log_prior(priors, &proposal);
        let candidate = if prior_star == f64::NEG_INFINITY {
            LikelihoodEstimate::zero()
        } else {
            evaluate(estimator, &space.embed(&proposal), &mut filters)?
        };
        let log_alpha = log_acceptance(
            candidate.log_likelihood,
            prior_star,
            current.log_likelihood,
            log_prior,
        )?;
        let u: f64 = moves.random();
        let accept = u.ln() < log_alpha;
        out.candidate_log_likelihood.push(candidate.log_likelihood);
        if accept {
            accepted_count += 1;
            free = proposal;
            log_prior = prior_star;
            current.log_likelihood = candidate.log_likelihood;
            current_path = candidate.path;
        }
        out.accepted.push(accept);
        out.theta.push(space.embed(&free));
        out.log_likelihood.push(current.log_likelihood);

        if next_retained.peek() == Some(&i) {
            next_retained.next();
            out.retained_theta.push(space.embed(&free));
            if let Some(path) = &current_path {
                out.retained_paths.push(path.clone());
            }
        }
    }
    out.acceptance_rate = if iterations == 0 {
        0.0
    } else {
        accepted_count as f64 / iterations as f64
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::AnalyticLikelihood;
    use crate::model::InitialPrior;
    use crate::rng::from_seed;

    #[test]
    fn zero_variance_proposal_is_identity() {
        let theta = vec![0.3, -1.0];
        assert_eq!(propose_theta(&theta, 0.0, &mut from_seed(1)), theta);
    }

    #[test]
    fn proposal_covariance_matches_variance() {
        let mut rng = from_seed(12);
        let gamma2 = 0.7;
        let n = 100_000;
        let origin = [1.0, -2.0];
        let mut s = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let p = propose_theta(&origin, gamma2, &mut rng);
            let d = [p[0] - origin[0], p[1] - origin[1]];
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += d[a] * d[b];
                }
            }
        }
        for a in 0..2 {
            let v = s[a][a] / n as f64;
            assert!((v / gamma2 - 1.0).abs() < 0.03, "var {v}");
        }
        assert!((s[0][1] / n as f64).abs() < 0.03 * gamma2);
    }

    #[test]
    fn proposal_is_symmetric() {
        let a = [0.1, 0.2, -0.5];
        let b = [0.4, -0.3, 0.0];
        assert_eq!(log_proposal_density(&a, &b, 0.5), log_proposal_density(&b, &a, 0.5));
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(log_acceptance(-3.0, -1.0, -3.0, -1.0).unwrap(), 0.0);
        assert_eq!(
            log_acceptance(-3.0, f64::NEG_INFINITY, -3.0, -1.0).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(log_acceptance(-10.0, -1.0, -12.0, -1.0).unwrap(), 0.0);
        assert_eq!(log_acceptance(-14.0, -1.0, -12.0, -1.0).unwrap(), -2.0);
        assert!(log_acceptance(f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY, -1.0).is_err());
    }

    #[test]
    fn postprocessing_counts() {
        assert_eq!(retained_iterations(10_000, 1_000, 9).len(), 1_000);
        assert_eq!(retained_iterations(15_000, 1_000, 14).len(), 1_000);
        assert_eq!(retained_iterations(10, 10, 3).len(), 0);
        let chain: Vec<usize> = (1..=7).collect();
        assert_eq!(postprocess(&chain, 0, 1), chain);
        assert_eq!(postprocess(&chain, 2, 2), vec![4, 6]);
    }

    fn gaussian_toy() -> (AnalyticLikelihood<impl Fn(&[f64]) -> f64 + Sync>, PriorSpec) {
        let like = AnalyticLikelihood(|t: &[f64]| -0.5 * (t[0] - 0.5).powi(2) / 0.09);
        let prior = PriorSpec::new(vec![(-10.0, 10.0)], InitialPrior::Poisson { means: vec![1.0] }).unwrap();
        (like, prior)
    }

    #[test]
    fn empty_retention_is_valid() {
        let (like, prior) = gaussian_toy();
        let cfg = PmmhConfig {
            iterations: 50,
            burn_in: 50,
            thin: 1,
            proposal_variance: 0.1,
            particles: 1,
            seed: 3,
            init_retries: 10,
        };
        let out = run_pmmh(&like, &prior, &ParameterSpace::all(1), &cfg).unwrap();
        assert!(out.retained_theta.is_empty());
        assert_eq!(out.accepted.len(), 50);
    }

    #[test]
    fn rejection_carries_the_stored_estimate_forward() {
        let (like, prior) = gaussian_toy();
        let cfg = PmmhConfig {
            iterations: 2_000,
            burn_in: 0,
            thin: 1,
            proposal_variance: 1.0,
            particles: 1,
            seed: 8,
            init_retries: 10,
        };
        let out = run_pmmh(&like, &prior, &ParameterSpace::all(1), &cfg).unwrap();
        for i in 1..=cfg.iterations {
            if out.accepted[i - 1] {
                assert_eq!(out.log_likelihood[i], out.candidate_log_likelihood[i - 1]);
            } else {
                assert_eq!(out.log_likelihood[i].to_bits(), out.log_likelihood[i - 1].to_bits());
                assert_eq!(out.theta[i], out.theta[i - 1]);
            }
        }
        let rate = out.accepted.iter().filter(|&&a| a).count() as f64 / 2000.0;
        assert_eq!(rate, out.acceptance_rate);
    }

    #[test]
    fn chain_is_deterministic_in_seed() {
        let (like, prior) = gaussian_toy();
        let cfg = PmmhConfig {
            iterations: 300,
            burn_in: 10,
            thin: 2,
            proposal_variance: 0.5,
            particles: 1,
            seed: 77,
            init_retries: 10,
        };
        let a = run_pmmh(&like, &prior, &ParameterSpace::all(1), &cfg).unwrap();
        let b = run_pmmh(&like, &prior, &ParameterSpace::all(1), &cfg).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.accepted, b.accepted);
    }

    #[test]
    fn zero_likelihood_everywhere_fails_initialisation() {
        let like = AnalyticLikelihood(|_: &[f64]| f64::NEG_INFINITY);
        let prior = PriorSpec::new(vec![(0.0, 1.0)], InitialPrior::Poisson { means: vec![1.0] }).unwrap();
        let cfg = PmmhConfig {
            iterations: 5,
            burn_in: 0,
            thin: 1,
            proposal_variance: 0.5,
            particles: 1,
            seed: 1,
            init_retries: 7,
        };
        assert!(matches!(
            run_pmmh(&like, &prior, &ParameterSpace::all(1), &cfg),
            Err(SkmError::InitializationFailed(7))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = PmmhConfig {
            iterations: 10,
            burn_in: 11,
            thin: 1,
            proposal_variance: 1.0,
            particles: 1,
            seed: 0,
            init_retries: 1,
        };
        assert!(cfg.validate().is_err());
        cfg.burn_in = 0;
        cfg.thin = 0;
        assert!(cfg.validate().is_err());
        cfg.thin = 1;
        cfg.proposal_variance = 0.0;
        assert!(cfg.validate().is_err());
    }
}

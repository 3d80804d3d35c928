//! Likelihood estimators consumed by the samplers.

use crate::error::{Result, SkmError};
use crate::filter::{run_filter, sample_path, FilterOptions};
use crate::gillespie::{ObservationSet, Trajectory};
use crate::model::{InitialPrior, ReactionNetwork};
use crate::rng::SkmRng;

/// Output of one likelihood evaluation.
#[derive(Debug, Clone)]
pub struct LikelihoodEstimate {
    /// Log-likelihood estimate; `-inf` for a zero estimate.
    pub log_likelihood: f64,
    /// A latent path drawn from the conditional approximation, when requested.
    pub path: Option<Trajectory>,
}

impl LikelihoodEstimate {
    pub fn zero() -> Self {
        Self {
            log_likelihood: f64::NEG_INFINITY,
            path: None,
        }
    }
}

/// Something that returns an (unbiased, possibly noisy) likelihood of a
/// full log-rate vector.
pub trait LikelihoodEstimator: Sync {
    fn estimate(&self, theta: &[f64], want_path: bool, rng: &mut SkmRng) -> Result<LikelihoodEstimate>;
}

/// Particle-filter likelihood for a reaction network observed with
/// Gaussian noise.
#[derive(Debug, Clone)]
pub struct ParticleLikelihood<'a> {
    pub network: &'a ReactionNetwork,
    pub initial: &'a InitialPrior,
    pub obs: &'a ObservationSet,
    pub options: FilterOptions,
}

impl<'a> ParticleLikelihood<'a> {
    pub fn new(
        network: &'a ReactionNetwork,
        initial: &'a InitialPrior,
        obs: &'a ObservationSet,
        particles: usize,
    ) -> Self {
        Self {
            network,
            initial,
            obs,
            options: FilterOptions::new(particles),
        }
    }
}

impl LikelihoodEstimator for ParticleLikelihood<'_> {
    fn estimate(&self, theta: &[f64], want_path: bool, rng: &mut SkmRng) -> Result<LikelihoodEstimate> {
        let rates: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let mut options = self.options.clone();
        options.track_paths = want_path;
        let out = match run_filter(self.network, &rates, self.initial, self.obs, &options, rng) {
            Ok(out) => out,
            // Rates producing runaway or undefined dynamics have zero likelihood.
            Err(SkmError::EventCapExceeded { .. }) | Err(SkmError::NonFiniteHazard { .. }) => {
                return Ok(LikelihoodEstimate::zero())
            }
            Err(e) => return Err(e),
        };
        if out.degenerate {
            return Ok(LikelihoodEstimate::zero());
        }
        let path = if want_path {
            Some(sample_path(&out, rng)?)
        } else {
            None
        };
        Ok(LikelihoodEstimate {
            log_likelihood: out.log_marginal_likelihood,
            path,
        })
    }
}

/// Closed-form log-likelihood, for samplers run against analytic targets.
pub struct AnalyticLikelihood<F>(pub F);

impl<F> LikelihoodEstimator for AnalyticLikelihood<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn estimate(&self, theta: &[f64], _want_path: bool, _rng: &mut SkmRng) -> Result<LikelihoodEstimate> {
        Ok(LikelihoodEstimate {
            log_likelihood: (self.0)(theta),
            path: None,
        })
    }
}

//! Bootstrap particle filter with Gillespie propagation.
//!
//! Each step propagates every particle over one observation interval,
//! weights it by the Gaussian observation density, accumulates the
//! log of the mean unnormalised weight into the marginal-likelihood
//! estimate, and resamples multinomially. Resampling is unconditional.
//!
//! Particle `j` owns a random stream derived from a seed drawn from the
//! caller's generator and its index, so the output is bit-identical whether
//! propagation runs on one thread or many.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Result, SkmError};
use crate::gillespie::{advance, check_rates, ObservationSet, Trajectory, DEFAULT_EVENT_CAP};
use crate::model::{InitialPrior, ObservationModel, ReactionNetwork, StateVector};
use crate::resample::{categorical, multinomial_indices, normalize_log_weights};
use crate::rng::{substream, SkmRng};

/// A step whose best particle has log-weight below this is treated as
/// having all weights numerically zero.
pub const LOG_WEIGHT_FLOOR: f64 = -708.0;

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub particles: usize,
    /// Keep per-step states and ancestry so paths can be drawn afterwards.
    pub track_paths: bool,
    /// Keep every step's unnormalised log-weights.
    pub record_weights: bool,
    pub event_cap: u64,
    /// Propagate in parallel once the ensemble has at least this many particles.
    pub parallel_threshold: usize,
}

impl FilterOptions {
    pub fn new(particles: usize) -> Self {
        Self {
            particles,
            track_paths: false,
            record_weights: false,
            event_cap: DEFAULT_EVENT_CAP,
            parallel_threshold: 512,
        }
    }

    pub fn with_paths(mut self) -> Self {
        self.track_paths = true;
        self
    }

    pub fn with_weights(mut self) -> Self {
        self.record_weights = true;
        self
    }
}

/// Weighted particle system after the last assimilated step.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    species: usize,
    particles: usize,
    /// `history[n]` holds all particle states at step `n` (0 = initial draw),
    /// flattened `J × V`. Only the last entry is kept when paths are untracked.
    history: Vec<Vec<i64>>,
    /// `resampled[n - 1][j]`: index of the step-`n` particle copied into slot `j`.
    resampled: Vec<Vec<usize>>,
    /// Normalised weights of the final step, before resampling.
    pub last_weights: Vec<f64>,
    pub log_likelihood: f64,
    pub steps: usize,
    pub delta: f64,
}

impl ParticleEnsemble {
    pub fn particle_count(&self) -> usize {
        self.particles
    }

    pub fn tracks_paths(&self) -> bool {
        self.history.len() == self.steps + 1
    }

    /// Final (pre-resampling) state of particle `j`.
    pub fn final_state(&self, j: usize) -> &[i64] {
        let last = self.history.last().expect("ensemble has at least one step");
        &last[j * self.species..(j + 1) * self.species]
    }

    /// Full path of the pre-resampling particle `j` at the last step.
    pub fn weighted_path(&self, j: usize) -> Result<Trajectory> {
        if !self.tracks_paths() {
            return Err(SkmError::Precondition("filter was run without path tracking".into()));
        }
        let v = self.species;
        let mut idx = j;
        let mut states = Vec::with_capacity(self.steps);
        for n in (1..=self.steps).rev() {
            states.push(StateVector(self.history[n][idx * v..(idx + 1) * v].to_vec()));
            if n >= 2 {
                idx = self.resampled[n - 2][idx];
            }
        }
        states.reverse();
        Ok(Trajectory {
            x0: StateVector(self.history[0][idx * v..(idx + 1) * v].to_vec()),
            states,
            delta: self.delta,
            event_count: 0,
        })
    }

    /// Path held in slot `j` after the final resampling.
    pub fn path(&self, j: usize) -> Result<Trajectory> {
        let source = self
            .resampled
            .last()
            .map_or(j, |r| r[j]);
        self.weighted_path(source)
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub ensemble: ParticleEnsemble,
    /// `ln p̂(y | θ)`; `-inf` when the filter degenerated.
    pub log_marginal_likelihood: f64,
    pub degenerate: bool,
    /// Per-step `ln((1/J) Σ_j ω*_n)`.
    pub log_increments: Vec<f64>,
    /// Per-step effective sample size of the normalised weights.
    pub ess: Vec<f64>,
    /// Per-step unnormalised log-weights when requested.
    pub step_log_weights: Option<Vec<Vec<f64>>>,
    pub event_count: u64,
}

/// Precomputed Gaussian observation log-density.
#[derive(Debug, Clone)]
pub struct GaussianObservation<'a> {
    model: &'a ObservationModel,
    log_norm: f64,
    inv_two_var: f64,
}

impl<'a> GaussianObservation<'a> {
    pub fn new(model: &'a ObservationModel) -> Self {
        let d = model.obs_dim() as f64;
        let var = model.noise_variance();
        Self {
            model,
            log_norm: -0.5 * d * (2.0 * std::f64::consts::PI * var).ln(),
            inv_two_var: 0.5 / var,
        }
    }

    #[inline]
    pub fn log_density(&self, y: &[f64], x: &[i64]) -> f64 {
        let cols = self.model.state_dim();
        let m = self.model.matrix();
        let mut sq = 0.0;
        for (r, &yr) in y.iter().enumerate() {
            let row = &m[r * cols..(r + 1) * cols];
            let mean: f64 = row.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
            let e = yr - mean;
            sq += e * e;
        }
        self.log_norm - sq * self.inv_two_var
    }
}

/// `ln N_D(y; M x, σ² I)`.
pub fn gaussian_log_likelihood(y: &[f64], x: &[i64], model: &ObservationModel) -> Result<f64> {
    check_dim("observation vector", model.obs_dim(), y.len())?;
    check_dim("state vector", model.state_dim(), x.len())?;
    Ok(GaussianObservation::new(model).log_density(y, x))
}

/// Runs the bootstrap filter for rate constants `rates` (i.e. `exp(θ)`).
pub fn run_filter<R: Rng + ?Sized>(
    network: &ReactionNetwork,
    rates: &[f64],
    initial: &InitialPrior,
    obs: &ObservationSet,
    options: &FilterOptions,
    rng: &mut R,
) -> Result<FilterOutput> {
    let v = network.species_count();
    let j_count = options.particles;
    if j_count == 0 {
        return Err(SkmError::InvalidConfig("particle count must be at least 1".into()));
    }
    if obs.is_empty() {
        return Err(SkmError::Precondition("no observations to filter".into()));
    }
    check_rates(network, rates)?;
    check_dim("initial prior", v, initial.dimension())?;
    check_dim("observation matrix columns", v, obs.obs_model.state_dim())?;

    let base_seed: u64 = rng.random();
    let mut streams: Vec<SkmRng> = (0..j_count).map(|j| substream(base_seed, &[j as u64])).collect();
    let mut current = vec![0i64; j_count * v];
    for (x, stream) in current.chunks_mut(v).zip(streams.iter_mut()) {
        initial.sample_into(stream, x);
    }

    let density = GaussianObservation::new(&obs.obs_model);
    let steps = obs.len();
    let mut history = Vec::with_capacity(if options.track_paths { steps + 1 } else { 1 });
    let mut resampled: Vec<Vec<usize>> = Vec::with_capacity(if options.track_paths { steps } else { 1 });
    let mut log_increments = Vec::with_capacity(steps);
    let mut ess = Vec::with_capacity(steps);
    let mut step_log_weights = options.record_weights.then(|| Vec::with_capacity(steps));
    let mut log_w = vec![0.0; j_count];
    let mut log_likelihood = 0.0;
    let mut last_weights = vec![1.0 / j_count as f64; j_count];
    let mut event_count = 0u64;
    let mut degenerate = false;
    let mut assimilated = 0;

    if options.track_paths {
        history.push(current.clone());
    }

    let propagate = |x: &mut [i64], stream: &mut SkmRng| {
        advance(network, rates, x, obs.delta, options.event_cap, stream)
    };

    for (n, y) in obs.y.iter().enumerate() {
        let events: u64 = if j_count >= options.parallel_threshold {
            current
                .par_chunks_mut(v)
                .zip(streams.par_iter_mut())
                .map(|(x, s)| propagate(x, s))
                .collect::<Result<Vec<u64>>>()?
                .into_iter()
                .sum()
        } else {
            let mut total = 0;
            for (x, s) in current.chunks_mut(v).zip(streams.iter_mut()) {
                total += propagate(x, s)?;
            }
            total
        };
        event_count += events;

        for (lw, x) in log_w.iter_mut().zip(current.chunks(v)) {
            *lw = density.log_density(y, x);
        }
        if let Some(rec) = step_log_weights.as_mut() {
            rec.push(log_w.clone());
        }
        if options.track_paths {
            history.push(current.clone());
        }
        assimilated = n + 1;

        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > LOG_WEIGHT_FLOOR) {
            degenerate = true;
            log_likelihood = f64::NEG_INFINITY;
            log_increments.push(f64::NEG_INFINITY);
            ess.push(0.0);
            last_weights = vec![0.0; j_count];
            break;
        }
        let (weights, log_sum) = normalize_log_weights(&log_w);
        let increment = log_sum - (j_count as f64).ln();
        log_increments.push(increment);
        log_likelihood += increment;
        ess.push(1.0 / weights.iter().map(|w| w * w).sum::<f64>());

        let picks = multinomial_indices(&weights, j_count, rng);
        let previous = current.clone();
        for (slot, &src) in current.chunks_mut(v).zip(&picks) {
            slot.copy_from_slice(&previous[src * v..(src + 1) * v]);
        }
        if options.track_paths {
            resampled.push(picks);
        } else {
            resampled.clear();
            resampled.push(picks);
            history.clear();
            history.push(previous);
        }
        last_weights = weights;
    }

    if !options.track_paths && history.is_empty() {
        history.push(current);
    }

    Ok(FilterOutput {
        ensemble: ParticleEnsemble {
            species: v,
            particles: j_count,
            history,
            resampled,
            last_weights,
            log_likelihood,
            steps: assimilated,
            delta: obs.delta,
        },
        log_marginal_likelihood: log_likelihood,
        degenerate,
        log_increments,
        ess,
        step_log_weights,
        event_count,
    })
}

/// Draws one latent path from the final weighted particle set.
pub fn sample_path<R: Rng + ?Sized>(out: &FilterOutput, rng: &mut R) -> Result<Trajectory> {
    if out.degenerate {
        return Err(SkmError::DegenerateFilter);
    }
    let j = categorical(&out.ensemble.last_weights, rng);
    out.ensemble.weighted_path(j)
}

/// Index drawn by [`sample_path`] for the same generator state.
pub fn sample_path_index<R: Rng + ?Sized>(out: &FilterOutput, rng: &mut R) -> Result<usize> {
    if out.degenerate {
        return Err(SkmError::DegenerateFilter);
    }
    Ok(categorical(&out.ensemble.last_weights, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gillespie::{simulate_trajectory, synthesize_observations};
    use crate::model::{build_prokaryotic, prokaryotic, PriorSpec};
    use crate::rng::from_seed;

    fn prokaryotic_data(steps: usize, seed: u64) -> ObservationSet {
        let net = build_prokaryotic();
        let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
        let traj =
            simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, steps, &mut from_seed(seed)).unwrap();
        let co = ObservationModel::complete(5, 4.0).unwrap();
        synthesize_observations(&traj, &co, &mut from_seed(seed + 1)).unwrap()
    }

    #[test]
    fn density_examples() {
        let m = ObservationModel::new(1, 1, vec![1.0], 4.0).unwrap();
        let at_mean = gaussian_log_likelihood(&[3.0], &[3], &m).unwrap();
        assert!((at_mean - (1.0 / (8.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        let m2 = ObservationModel::new(1, 1, vec![2.0], 4.0).unwrap();
        let off = gaussian_log_likelihood(&[0.0], &[1], &m2).unwrap();
        assert!((off - (-0.5 * (8.0 * std::f64::consts::PI).ln() - 0.5)).abs() < 1e-12);

        let co = ObservationModel::complete(3, 2.0).unwrap();
        let val = gaussian_log_likelihood(&[1.0, 2.0, 3.0], &[0, 2, 5], &co).unwrap();
        let s = 1.0 + 0.0 + 4.0;
        let expected = -1.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - s / 4.0;
        assert!((val - expected).abs() < 1e-12);
        assert!(gaussian_log_likelihood(&[1.0], &[0, 2, 5], &co).is_err());
    }

    #[test]
    fn likelihood_equals_sum_of_stored_increments() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(10, 3);
        let prior = PriorSpec::prokaryotic();
        let out = run_filter(
            &net,
            &prokaryotic::TRUE_RATES,
            &prior.x0,
            &obs,
            &FilterOptions::new(50).with_weights(),
            &mut from_seed(17),
        )
        .unwrap();
        assert!(!out.degenerate);
        let recomputed: f64 = out
            .step_log_weights
            .as_ref()
            .unwrap()
            .iter()
            .map(|lw| {
                let mean = lw.iter().map(|l| l.exp()).sum::<f64>() / lw.len() as f64;
                mean.ln()
            })
            .sum();
        assert!((recomputed - out.log_marginal_likelihood).abs() < 1e-9);
        let summed: f64 = out.log_increments.iter().sum();
        assert_eq!(summed, out.log_marginal_likelihood);
        let total: f64 = out.ensemble.last_weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_particle_collapses_to_path_likelihood() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(8, 5);
        let prior = PriorSpec::prokaryotic();
        let out = run_filter(
            &net,
            &prokaryotic::TRUE_RATES,
            &prior.x0,
            &obs,
            &FilterOptions::new(1).with_paths(),
            &mut from_seed(2),
        )
        .unwrap();
        let path = out.ensemble.weighted_path(0).unwrap();
        let direct: f64 = path
            .states
            .iter()
            .zip(&obs.y)
            .map(|(x, y)| gaussian_log_likelihood(y, x, &obs.obs_model).unwrap())
            .sum();
        assert!((direct - out.log_marginal_likelihood).abs() < 1e-9);
    }

    #[test]
    fn serial_and_parallel_propagation_agree() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(10, 9);
        let prior = PriorSpec::prokaryotic();
        let mut serial = FilterOptions::new(64).with_paths();
        serial.parallel_threshold = usize::MAX;
        let mut parallel = serial.clone();
        parallel.parallel_threshold = 1;
        let a = run_filter(&net, &prokaryotic::TRUE_RATES, &prior.x0, &obs, &serial, &mut from_seed(4)).unwrap();
        let b = run_filter(&net, &prokaryotic::TRUE_RATES, &prior.x0, &obs, &parallel, &mut from_seed(4)).unwrap();
        assert_eq!(a.log_marginal_likelihood.to_bits(), b.log_marginal_likelihood.to_bits());
        assert_eq!(a.ensemble.path(3).unwrap(), b.ensemble.path(3).unwrap());
    }

    #[test]
    fn implausible_rates_degenerate() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(5, 1);
        let prior = PriorSpec::prokaryotic();
        // Fast transcription and translation with no decay drives proteins far above the data.
        let rates = [0.1, 0.7, 7.0, 7.0, 1e-3, 1e-3, 1e-3, 1e-3];
        let out = run_filter(&net, &rates, &prior.x0, &obs, &FilterOptions::new(20), &mut from_seed(1)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.log_marginal_likelihood, f64::NEG_INFINITY);
        assert!(matches!(sample_path(&out, &mut from_seed(1)), Err(SkmError::DegenerateFilter)));
    }

    #[test]
    fn paths_are_consistent_with_ancestry() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(12, 21);
        let prior = PriorSpec::prokaryotic();
        let out = run_filter(
            &net,
            &prokaryotic::TRUE_RATES,
            &prior.x0,
            &obs,
            &FilterOptions::new(30).with_paths(),
            &mut from_seed(8),
        )
        .unwrap();
        for j in 0..30 {
            let p = out.ensemble.weighted_path(j).unwrap();
            assert_eq!(p.states.len(), 12);
            assert_eq!(p.states.last().unwrap().as_slice(), out.ensemble.final_state(j));
            // Gene copies are conserved along each path given its own x0.
            let c = p.x0[3] + p.x0[4];
            assert!(p.states.iter().all(|x| x[3] + x[4] == c));
        }
        let a = sample_path(&out, &mut from_seed(99)).unwrap();
        let b = sample_path(&out, &mut from_seed(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_path_requires_tracking() {
        let net = build_prokaryotic();
        let obs = prokaryotic_data(3, 2);
        let prior = PriorSpec::prokaryotic();
        let out =
            run_filter(&net, &prokaryotic::TRUE_RATES, &prior.x0, &obs, &FilterOptions::new(5), &mut from_seed(1)).unwrap();
        assert!(sample_path(&out, &mut from_seed(1)).is_err());
    }
}

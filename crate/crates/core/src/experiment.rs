//! Replicated inference experiments on the prokaryotic network.
//!
//! An experiment simulates `P` ground-truth trajectories, observes each one
//! under both scenarios (the same path, independent noise), runs a sampler on
//! every replicate, and aggregates accuracy and efficiency metrics.
//!
//! All randomness comes from seeds derived from the master seed and the
//! replicate number. Scheduling order never changes a result, and the data
//! for replicate `p` do not depend on which sampler is run on them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{mse_chain, mse_moments, ness_mcmc, prior_mse_uniform, MetricRecord, Scenario};
use crate::error::{Result, SkmError};
use crate::filter::{run_filter, FilterOptions, FilterOutput};
use crate::gillespie::{simulate_trajectory, synthesize_observations, ObservationSet, Trajectory};
use crate::io;
use crate::likelihood::ParticleLikelihood;
use crate::model::{build_prokaryotic, prokaryotic, InitialPrior, ObservationModel, ParameterSpace, PriorSpec, StateVector};
use crate::npmc::{posterior_estimates, run_npmc, NpmcConfig, NpmcRun, PathRecording};
use crate::pmmh::{run_pmmh, ChainOutput, PmmhConfig};
use crate::rng::{derive_seed, substream};

pub const CONFIG_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const RNG_DESCRIPTION: &str = "ChaCha8 streams keyed by SplitMix64-mixed (seed, path) tuples";
pub const MODEL_NAME: &str = "prokaryotic";

const DATA_KEY: u64 = 0;
const SAMPLER_KEY: u64 = 1;

/// Which log-rates are inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferenceMode {
    /// One parameter (1-based index); the others are pinned to the truth.
    SingleParam { index: usize },
    AllParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Pmmh(PmmhConfig),
    Npmc(NpmcConfig),
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pmmh(_) => "pmmh",
            Self::Npmc(_) => "npmc",
        }
    }

    fn code(&self) -> u64 {
        match self {
            Self::Pmmh(_) => 0,
            Self::Npmc(_) => 1,
        }
    }

    /// Number of likelihood evaluations per run.
    pub fn evaluations(&self) -> usize {
        match self {
            Self::Pmmh(c) => c.iterations,
            Self::Npmc(c) => c.iterations * c.samples,
        }
    }

    /// `I = 10⁴`, `B = 10³`, `T = 9`, `γ² = 1`, `J = 100`.
    pub fn pmmh_single() -> Self {
        Self::Pmmh(PmmhConfig {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 9,
            proposal_variance: 1.0,
            particles: 100,
            seed: 0,
            init_retries: crate::pmmh::DEFAULT_INIT_RETRIES,
        })
    }

    /// `I = 15·10³`, `B = 10³`, `T = 14`, `γ² = 1`, `J = 200`.
    pub fn pmmh_all() -> Self {
        Self::Pmmh(PmmhConfig {
            iterations: 15_000,
            burn_in: 1_000,
            thin: 14,
            proposal_variance: 1.0,
            particles: 200,
            seed: 0,
            init_retries: crate::pmmh::DEFAULT_INIT_RETRIES,
        })
    }

    /// `L = 10`, `M = 10³`, `M_T = 100`, `J = 100`.
    pub fn npmc_single() -> Self {
        Self::Npmc(NpmcConfig {
            iterations: 10,
            samples: 1_000,
            clip: 100,
            particles: 100,
            seed: 0,
            jitter: crate::npmc::DEFAULT_JITTER,
            record_paths: PathRecording::Final,
        })
    }

    /// `L = 15`, `M = 10³`, `M_T = 100`, `J = 200`.
    pub fn npmc_all() -> Self {
        Self::Npmc(NpmcConfig {
            iterations: 15,
            samples: 1_000,
            clip: 100,
            particles: 200,
            seed: 0,
            jitter: crate::npmc::DEFAULT_JITTER,
            record_paths: PathRecording::Final,
        })
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub mode: InferenceMode,
    /// Number of observations `N`.
    pub observations: usize,
    pub delta: f64,
    pub noise_variance: f64,
    pub true_rates: Vec<f64>,
    /// Initial state of the ground-truth trajectories.
    pub x0: Vec<i64>,
    /// Means of the Poisson prior on the initial state.
    pub x0_prior_means: Vec<f64>,
    /// Uniform prior bounds shared by every log-rate.
    pub theta_bounds: [f64; 2],
    pub sampler: SamplerSpec,
    pub replicates: usize,
    pub seed: u64,
    /// Write per-step filter diagnostics at the true rates for each replicate.
    pub filter_diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_VERSION,
            scenario: Scenario::Co,
            mode: InferenceMode::SingleParam { index: 1 },
            observations: 100,
            delta: prokaryotic::DELTA,
            noise_variance: prokaryotic::NOISE_VARIANCE,
            true_rates: prokaryotic::TRUE_RATES.to_vec(),
            x0: prokaryotic::INITIAL_STATE.to_vec(),
            x0_prior_means: prokaryotic::INITIAL_STATE.iter().map(|&x| x as f64).collect(),
            theta_bounds: [prokaryotic::THETA_LOWER, prokaryotic::THETA_UPPER],
            sampler: SamplerSpec::npmc_single(),
            replicates: 10,
            seed: 20_070_101,
            filter_diagnostics: false,
        }
    }
}

impl ExperimentConfig {
    /// Single-parameter setting: `θ₁` inferred, `N = 100`.
    pub fn single_parameter(scenario: Scenario, sampler: SamplerSpec) -> Self {
        Self {
            scenario,
            sampler,
            ..Self::default()
        }
    }

    /// All eight log-rates inferred, `N = 200`.
    pub fn all_parameters(scenario: Scenario, sampler: SamplerSpec) -> Self {
        Self {
            scenario,
            sampler,
            mode: InferenceMode::AllParams,
            observations: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_VERSION {
            return Err(SkmError::SchemaMismatch(format!(
                "experiment config version {} (expected {CONFIG_VERSION})",
                self.schema_version
            )));
        }
        if self.true_rates.len() != 8 || self.x0.len() != 5 || self.x0_prior_means.len() != 5 {
            return Err(SkmError::InvalidConfig(
                "the prokaryotic model needs 8 rates and 5 initial populations".into(),
            ));
        }
        if self.true_rates.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(SkmError::InvalidConfig("true rates must be positive".into()));
        }
        if let InferenceMode::SingleParam { index } = self.mode {
            if !(1..=8).contains(&index) {
                return Err(SkmError::InvalidConfig(format!("parameter index {index} outside 1..=8")));
            }
        }
        if self.observations == 0 || self.replicates == 0 {
            return Err(SkmError::InvalidConfig("N and P must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.noise_variance > 0.0) {
            return Err(SkmError::InvalidConfig("Δ and σ² must be positive".into()));
        }
        let [lo, hi] = self.theta_bounds;
        let truth = self.true_theta();
        if !(lo < hi) || truth.iter().any(|&t| !(t > lo && t < hi)) {
            return Err(SkmError::InvalidConfig("true log-rates must lie inside the prior box".into()));
        }
        match &self.sampler {
            SamplerSpec::Pmmh(c) => {
                c.validate()?;
                if c.retained_count() == 0 {
                    return Err(SkmError::InvalidConfig(
                        "burn-in and thinning leave no retained samples".into(),
                    ));
                }
            }
            SamplerSpec::Npmc(c) => c.validate()?,
        }
        Ok(())
    }

    pub fn true_theta(&self) -> Vec<f64> {
        self.true_rates.iter().map(|c| c.ln()).collect()
    }

    /// 0-based indices of the inferred components.
    pub fn free(&self) -> Vec<usize> {
        match self.mode {
            InferenceMode::SingleParam { index } => vec![index - 1],
            InferenceMode::AllParams => (0..self.true_rates.len()).collect(),
        }
    }

    pub fn observation_model(&self, scenario: Scenario) -> Result<ObservationModel> {
        match scenario {
            Scenario::Co => ObservationModel::complete(5, self.noise_variance),
            Scenario::Po => ObservationModel::prokaryotic_partial(self.noise_variance),
        }
    }

    pub fn priors(&self) -> Result<PriorSpec> {
        let [lo, hi] = self.theta_bounds;
        PriorSpec::new(
            vec![(lo, hi); self.true_rates.len()],
            InitialPrior::Poisson {
                means: self.x0_prior_means.clone(),
            },
        )
    }

    pub fn parameter_space(&self) -> Result<ParameterSpace> {
        ParameterSpace::pinned(self.true_theta(), self.free())
    }

    pub fn data_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.seed, &[DATA_KEY, replicate as u64])
    }

    pub fn sampler_seed(&self, replicate: usize) -> u64 {
        let scenario = match self.scenario {
            Scenario::Co => 0,
            Scenario::Po => 1,
        };
        derive_seed(self.seed, &[SAMPLER_KEY, replicate as u64, scenario, self.sampler.code()])
    }

    /// Prior MSE of each inferred component, from the exact rates.
    pub fn prior_mse(&self) -> Vec<f64> {
        let truth = self.true_theta();
        self.free()
            .iter()
            .map(|&k| prior_mse_uniform(self.theta_bounds[0], self.theta_bounds[1], truth[k]))
            .collect()
    }
}

/// One ground-truth trajectory and its two observation records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub replicate: usize,
    pub data_seed: u64,
    pub trajectory: Trajectory,
    pub co: ObservationSet,
    pub po: ObservationSet,
}

impl Dataset {
    pub fn observations(&self, scenario: Scenario) -> &ObservationSet {
        match scenario {
            Scenario::Co => &self.co,
            Scenario::Po => &self.po,
        }
    }
}

pub fn generate_dataset(cfg: &ExperimentConfig, replicate: usize) -> Result<Dataset> {
    let network = build_prokaryotic();
    let data_seed = cfg.data_seed(replicate);
    let trajectory = simulate_trajectory(
        &network,
        &cfg.true_rates,
        &StateVector::new(cfg.x0.clone()),
        cfg.delta,
        cfg.observations,
        &mut substream(data_seed, &[0]),
    )?;
    let co = synthesize_observations(&trajectory, &cfg.observation_model(Scenario::Co)?, &mut substream(data_seed, &[1]))?;
    let po = synthesize_observations(&trajectory, &cfg.observation_model(Scenario::Po)?, &mut substream(data_seed, &[2]))?;
    Ok(Dataset {
        replicate,
        data_seed,
        trajectory,
        co,
        po,
    })
}

pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    cfg.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|p| generate_dataset(cfg, p))
        .collect()
}

/// Per-iteration NPMC summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub ness: f64,
    pub mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone)]
pub enum SamplerOutput {
    Pmmh(ChainOutput),
    Npmc(NpmcRun),
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub metrics: MetricRecord,
    pub output: SamplerOutput,
    /// NPMC only.
    pub series: Vec<IterationSummary>,
    /// Posterior mean of the populations, `x̂[n][v]`, when paths were kept.
    pub x_hat: Option<Vec<Vec<f64>>>,
    pub filter_diagnostics: Option<FilterOutput>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub data_seed: u64,
    pub sampler_seed: u64,
    pub wall_clock_secs: f64,
    pub result: std::result::Result<ReplicateResult, String>,
}

fn npmc_series(run: &NpmcRun, truth: &[f64]) -> Vec<IterationSummary> {
    run.iterations
        .iter()
        .map(|it| {
            let mse: Vec<f64> = run
                .free
                .iter()
                .enumerate()
                .map(|(f, &k)| mse_moments(it.mean[f], it.cov[f][f], truth[k]))
                .collect();
            IterationSummary {
                iteration: it.iteration,
                mean: it.mean.clone(),
                cov: it.cov.clone(),
                ness: it.ness,
                mean_mse: mse.iter().sum::<f64>() / mse.len() as f64,
                mse,
            }
        })
        .collect()
}

fn mean_paths(paths: &[Trajectory]) -> Option<Vec<Vec<f64>>> {
    let first = paths.first()?;
    let mut acc = vec![vec![0.0; first.x0.len()]; first.states.len()];
    for p in paths {
        for (row, x) in acc.iter_mut().zip(&p.states) {
            for (a, &v) in row.iter_mut().zip(x.iter()) {
                *a += v as f64;
            }
        }
    }
    let m = paths.len() as f64;
    acc.iter_mut().flatten().for_each(|a| *a /= m);
    Some(acc)
}

fn run_sampler(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<ReplicateResult> {
    let network = build_prokaryotic();
    let priors = cfg.priors()?;
    let space = cfg.parameter_space()?;
    let truth = cfg.true_theta();
    let obs = data.observations(cfg.scenario);
    let free = cfg.free();

    let filter_diagnostics = if cfg.filter_diagnostics {
        let particles = match &cfg.sampler {
            SamplerSpec::Pmmh(c) => c.particles,
            SamplerSpec::Npmc(c) => c.particles,
        };
        let options = FilterOptions::new(particles).with_weights();
        Some(run_filter(&network, &cfg.true_rates, &priors.x0, obs, &options, &mut substream(seed, &[99]))?)
    } else {
        None
    };

    match &cfg.sampler {
        SamplerSpec::Pmmh(c) => {
            let estimator = ParticleLikelihood::new(&network, &priors.x0, obs, c.particles);
            let chain = run_pmmh(&estimator, &priors, &space, &PmmhConfig { seed, ..c.clone() })?;
            let mse: Vec<f64> = free.iter().map(|&k| mse_chain(&chain.retained_theta, truth[k], k)).collect();
            let projected: Vec<Vec<f64>> = chain.retained_theta.iter().map(|t| space.project(t)).collect();
            let ness = match ness_mcmc(&projected) {
                Ok(v) => v,
                // A chain that never moved has the smallest possible NESS.
                Err(SkmError::ZeroVariance) => 1.0 / projected.len().max(1) as f64,
                Err(e) => return Err(e),
            };
            let metrics = MetricRecord::new(data.replicate, cfg.scenario, "pmmh", mse, ness, Some(chain.acceptance_rate));
            Ok(ReplicateResult {
                metrics,
                x_hat: mean_paths(&chain.retained_paths),
                output: SamplerOutput::Pmmh(chain),
                series: Vec::new(),
                filter_diagnostics,
            })
        }
        SamplerSpec::Npmc(c) => {
            let estimator = ParticleLikelihood::new(&network, &priors.x0, obs, c.particles);
            let run = run_npmc(&estimator, &priors, &space, &NpmcConfig { seed, ..c.clone() })?;
            if let Some(abort) = &run.abort {
                return Err(SkmError::Precondition(format!(
                    "population degenerated at iteration {}: {}",
                    abort.iteration, abort.reason
                )));
            }
            let series = npmc_series(&run, &truth);
            let last = series.last().expect("validated run has iterations");
            let metrics = MetricRecord::new(data.replicate, cfg.scenario, "npmc", last.mse.clone(), last.ness, None);
            let x_hat = run.last().and_then(|it| posterior_estimates(it).1);
            Ok(ReplicateResult {
                metrics,
                output: SamplerOutput::Npmc(run),
                series,
                x_hat,
                filter_diagnostics,
            })
        }
    }
}

/// Runs the configured sampler on one replicate, capturing failures.
pub fn run_replicate(cfg: &ExperimentConfig, data: &Dataset) -> ReplicateOutcome {
    let seed = cfg.sampler_seed(data.replicate);
    let start = Instant::now();
    let result = run_sampler(cfg, data, seed).map_err(|e| e.to_string());
    ReplicateOutcome {
        replicate: data.replicate,
        data_seed: data.data_seed,
        sampler_seed: seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        result,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and standard deviation over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub model: String,
    pub scenario: Scenario,
    pub sampler: String,
    pub mode: InferenceMode,
    pub observations: usize,
    pub delta: f64,
    /// 1-based indices of the inferred parameters.
    pub parameters: Vec<usize>,
    pub true_theta: Vec<f64>,
    pub prior_mse: Vec<f64>,
    pub replicates: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub mse_mean: Vec<f64>,
    pub mse_std: Vec<f64>,
    pub mean_mse_mean: f64,
    pub mean_mse_std: f64,
    pub ness_mean: f64,
    pub ness_std: f64,
    pub acceptance_mean: Option<f64>,
    pub acceptance_std: Option<f64>,
    /// NPMC only: mean NESS and mean MSE at each iteration.
    pub ness_by_iteration: Option<Vec<f64>>,
    pub mean_mse_by_iteration: Option<Vec<f64>>,
}

pub fn aggregate(cfg: &ExperimentConfig, outcomes: &[ReplicateOutcome]) -> Aggregate {
    let ok: Vec<&ReplicateResult> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| format!("replicate {}: {e}", o.replicate)))
        .collect();
    let free = cfg.free();
    let truth = cfg.true_theta();
    let (mse_mean, mse_std): (Vec<f64>, Vec<f64>) = (0..free.len())
        .map(|f| mean_std(&ok.iter().map(|r| r.metrics.mse[f]).collect::<Vec<_>>()))
        .unzip();
    let (mean_mse_mean, mean_mse_std) = mean_std(&ok.iter().map(|r| r.metrics.mean_mse).collect::<Vec<_>>());
    let (ness_mean, ness_std) = mean_std(&ok.iter().map(|r| r.metrics.ness).collect::<Vec<_>>());
    let acc: Vec<f64> = ok.iter().filter_map(|r| r.metrics.acceptance_rate).collect();
    let (acceptance_mean, acceptance_std) = if acc.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&acc);
        (Some(m), Some(s))
    };
    let by_iteration = |pick: fn(&IterationSummary) -> f64| -> Option<Vec<f64>> {
        let len = ok.iter().map(|r| r.series.len()).min()?;
        if len == 0 {
            return None;
        }
        Some(
            (0..len)
                .map(|l| ok.iter().map(|r| pick(&r.series[l])).sum::<f64>() / ok.len() as f64)
                .collect(),
        )
    };
    Aggregate {
        schema_version: CONFIG_VERSION,
        model: MODEL_NAME.into(),
        scenario: cfg.scenario,
        sampler: cfg.sampler.name().into(),
        mode: cfg.mode,
        observations: cfg.observations,
        delta: cfg.delta,
        parameters: free.iter().map(|k| k + 1).collect(),
        true_theta: free.iter().map(|&k| truth[k]).collect(),
        prior_mse: cfg.prior_mse(),
        replicates: outcomes.len(),
        failed: failures.len(),
        failures,
        mse_mean,
        mse_std,
        mean_mse_mean,
        mean_mse_std,
        ness_mean,
        ness_std,
        acceptance_mean,
        acceptance_std,
        ness_by_iteration: by_iteration(|s| s.ness),
        mean_mse_by_iteration: by_iteration(|s| s.mean_mse),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcomes: Vec<ReplicateOutcome>,
    pub aggregate: Aggregate,
}

/// Runs every replicate. `datasets` must cover `0..P` in order when given;
/// otherwise they are generated from the master seed.
pub fn run_experiment(cfg: &ExperimentConfig, datasets: Option<&[Dataset]>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let generated;
    let data = match datasets {
        Some(d) => {
            if d.len() != cfg.replicates || d.iter().enumerate().any(|(p, ds)| ds.replicate != p) {
                return Err(SkmError::Precondition(format!(
                    "expected datasets for replicates 0..{}",
                    cfg.replicates
                )));
            }
            d
        }
        None => {
            generated = generate_datasets(cfg)?;
            &generated[..]
        }
    };
    let outcomes: Vec<ReplicateOutcome> = data.par_iter().map(|d| run_replicate(cfg, d)).collect();
    let aggregate = aggregate(cfg, &outcomes);
    Ok(ExperimentResult { outcomes, aggregate })
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    pub trajectory: String,
    pub co: String,
    pub po: String,
}

/// Replication envelope written next to each replicate's CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEnvelope {
    pub format_version: u32,
    pub model: String,
    pub replicate: usize,
    pub data_seed: u64,
    pub delta: f64,
    pub noise_variance: f64,
    pub x0: Vec<i64>,
    pub files: DataFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub data_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    /// Wall-clock seconds per 10³ likelihood evaluations (informational).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secs_per_1000_samples: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub software_version: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub replicates: Vec<ReplicateRecord>,
    pub files: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_DESCRIPTION.into(),
            config: cfg.clone(),
            replicates: Vec::new(),
            files: Vec::new(),
        }
    }
}

fn tag(p: usize) -> String {
    format!("p{p:03}")
}

pub fn data_envelope_name(p: usize) -> String {
    format!("data_{}.json", tag(p))
}

/// Writes trajectories, both observation records and an envelope for each
/// replicate, plus `manifest_simulate.json`.
pub fn write_datasets(dir: &Path, cfg: &ExperimentConfig, datasets: &[Dataset]) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("simulate", cfg);
    for d in datasets {
        let files = DataFiles {
            trajectory: format!("traj_{}.csv", tag(d.replicate)),
            co: format!("obs_co_{}.csv", tag(d.replicate)),
            po: format!("obs_po_{}.csv", tag(d.replicate)),
        };
        io::write_trajectory_csv(&dir.join(&files.trajectory), &d.trajectory)?;
        io::write_observations_csv(&dir.join(&files.co), &d.co)?;
        io::write_observations_csv(&dir.join(&files.po), &d.po)?;
        let envelope = DataEnvelope {
            format_version: CONFIG_VERSION,
            model: MODEL_NAME.into(),
            replicate: d.replicate,
            data_seed: d.data_seed,
            delta: cfg.delta,
            noise_variance: cfg.noise_variance,
            x0: d.trajectory.x0.0.clone(),
            files: files.clone(),
        };
        let env_name = data_envelope_name(d.replicate);
        io::write_json(&dir.join(&env_name), &envelope)?;
        manifest.files.extend([files.trajectory, files.co, files.po, env_name]);
        manifest.replicates.push(ReplicateRecord {
            replicate: d.replicate,
            data_seed: d.data_seed,
            sampler_seed: None,
            wall_clock_secs: None,
            secs_per_1000_samples: None,
            status: None,
        });
    }
    manifest.files.push("manifest_simulate.json".into());
    io::write_json(&dir.join("manifest_simulate.json"), &manifest)?;
    Ok(manifest)
}

/// Reads datasets written by [`write_datasets`].
pub fn read_datasets(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<Dataset>> {
    (0..cfg.replicates)
        .map(|p| {
            let env: DataEnvelope = io::read_json(&dir.join(data_envelope_name(p)))?;
            if env.model != MODEL_NAME
                || env.replicate != p
                || env.delta != cfg.delta
                || env.noise_variance != cfg.noise_variance
            {
                return Err(SkmError::SchemaMismatch(format!(
                    "data envelope for replicate {p} does not match the experiment config"
                )));
            }
            let trajectory = io::read_trajectory_csv(&dir.join(&env.files.trajectory), StateVector::new(env.x0.clone()), env.delta)?;
            let co = io::read_observations_csv(&dir.join(&env.files.co), cfg.observation_model(Scenario::Co)?, env.delta)?;
            let po = io::read_observations_csv(&dir.join(&env.files.po), cfg.observation_model(Scenario::Po)?, env.delta)?;
            if co.len() != cfg.observations || po.len() != cfg.observations {
                return Err(SkmError::SchemaMismatch(format!(
                    "replicate {p} has {} observations, config expects {}",
                    co.len(),
                    cfg.observations
                )));
            }
            Ok(Dataset {
                replicate: p,
                data_seed: env.data_seed,
                trajectory,
                co,
                po,
            })
        })
        .collect()
}

fn write_grid_csv(path: &Path, delta: f64, grid: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let v = grid.first().map_or(0, Vec::len);
    let mut header = vec!["n".to_string(), "t".to_string()];
    header.extend((1..=v).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for (n, row) in grid.iter().enumerate() {
        let mut rec = vec![(n + 1).to_string(), ((n + 1) as f64 * delta).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-replicate sampler output, `metrics.csv`, `aggregate.json` and
/// `manifest_infer.json`.
pub fn write_experiment(dir: &Path, cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = RunManifest::new("infer", cfg);
    let scen = cfg.scenario.tag().to_ascii_lowercase();
    let mut records = Vec::new();
    for o in &result.outcomes {
        let t = tag(o.replicate);
        let evaluations = cfg.sampler.evaluations() as f64;
        manifest.replicates.push(ReplicateRecord {
            replicate: o.replicate,
            data_seed: o.data_seed,
            sampler_seed: Some(o.sampler_seed),
            wall_clock_secs: Some(o.wall_clock_secs),
            secs_per_1000_samples: Some(o.wall_clock_secs * 1000.0 / evaluations),
            status: Some(match &o.result {
                Ok(_) => "ok".into(),
                Err(e) => format!("failed: {e}"),
            }),
        });
        let Ok(r) = &o.result else { continue };
        records.push(r.metrics.clone());
        match &r.output {
            SamplerOutput::Pmmh(chain) => {
                let name = format!("chain_{scen}_{t}.csv");
                io::write_chain_csv(&dir.join(&name), chain)?;
                manifest.files.push(name);
            }
            SamplerOutput::Npmc(run) => {
                let name = format!("npmc_{scen}_{t}.csv");
                io::write_npmc_iterations_csv(&dir.join(&name), run)?;
                manifest.files.push(name);
                let name = format!("npmc_{scen}_{t}_summary.json");
                io::write_json(&dir.join(&name), &r.series)?;
                manifest.files.push(name);
            }
        }
        if let Some(x_hat) = &r.x_hat {
            let name = format!("xhat_{}_{scen}_{t}.csv", cfg.sampler.name());
            write_grid_csv(&dir.join(&name), cfg.delta, x_hat)?;
            manifest.files.push(name);
        }
        if let Some(diag) = &r.filter_diagnostics {
            let name = format!("filter_{scen}_{t}.csv");
            io::write_filter_diagnostics_csv(&dir.join(&name), diag)?;
            manifest.files.push(name);
        }
    }
    io::write_metrics_csv(&dir.join("metrics.csv"), &cfg.free(), &records)?;
    io::write_json(&dir.join("aggregate.json"), &result.aggregate)?;
    manifest.files.extend(["metrics.csv", "aggregate.json", "manifest_infer.json"].map(String::from));
    io::write_json(&dir.join("manifest_infer.json"), &manifest)?;
    Ok(manifest)
}

/// Reads an experiment config from either a config file or a manifest.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let value: serde_json::Value = io::read_json(path)?;
    let cfg = if value.get("manifest_version").is_some() {
        let manifest: RunManifest = serde_json::from_value(value)?;
        manifest.config
    } else {
        serde_json::from_value(value)?
    };
    Ok(cfg)
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("skm-out")
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mse: Vec<f64>,
    pub mean_mse: f64,
    pub mean_mse_std: f64,
    pub ness: f64,
    pub acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub parameters: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
    /// First row minus second, componentwise.
    pub difference: ComparisonRow,
}

fn row_of(a: &Aggregate) -> ComparisonRow {
    ComparisonRow {
        label: format!("{} {}", a.sampler, a.scenario),
        mse: a.mse_mean.clone(),
        mean_mse: a.mean_mse_mean,
        mean_mse_std: a.mean_mse_std,
        ness: a.ness_mean,
        acceptance: a.acceptance_mean,
    }
}

/// Side-by-side summary of two aggregates over the same parameters and data
/// size.
pub fn compare(a: &Aggregate, b: &Aggregate) -> Result<Comparison> {
    let mismatch = |what: &str| Err(SkmError::SchemaMismatch(format!("aggregates differ in {what}")));
    if a.schema_version != b.schema_version {
        return mismatch("schema version");
    }
    if a.model != b.model {
        return mismatch("model");
    }
    if a.observations != b.observations {
        return mismatch("observation count N");
    }
    if a.delta != b.delta {
        return mismatch("Δ");
    }
    if a.parameters != b.parameters || a.true_theta != b.true_theta {
        return mismatch("inferred parameters");
    }
    let (ra, rb) = (row_of(a), row_of(b));
    let difference = ComparisonRow {
        label: "difference".into(),
        mse: ra.mse.iter().zip(&rb.mse).map(|(x, y)| x - y).collect(),
        mean_mse: ra.mean_mse - rb.mean_mse,
        mean_mse_std: ra.mean_mse_std - rb.mean_mse_std,
        ness: ra.ness - rb.ness,
        acceptance: match (ra.acceptance, rb.acceptance) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        },
    };
    Ok(Comparison {
        parameters: a.parameters.clone(),
        rows: vec![
            ComparisonRow {
                label: "prior".into(),
                mse: a.prior_mse.clone(),
                mean_mse: a.prior_mse.iter().sum::<f64>() / a.prior_mse.len().max(1) as f64,
                mean_mse_std: 0.0,
                ness: f64::NAN,
                acceptance: None,
            },
            ra,
            rb,
        ],
        difference,
    })
}

impl Comparison {
    /// Plain-text table: one MSE column per parameter plus the mean, then
    /// the spread and efficiency columns.
    pub fn render(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.parameters.iter().map(|k| format!("theta_{k}")));
        header.push("mean".into());
        header.extend(["std", "NESS", "acc"].map(String::from));
        let fmt = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.4}") };
        let mut lines = vec![header];
        for row in self.rows.iter().chain(std::iter::once(&self.difference)) {
            let mut line = vec![row.label.clone()];
            line.extend(row.mse.iter().map(|&v| fmt(v)));
            line.push(fmt(row.mean_mse));
            line.push(fmt(row.mean_mse_std));
            line.push(fmt(row.ness));
            line.push(row.acceptance.map_or("-".into(), fmt));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

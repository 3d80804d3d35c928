//! `skm`: simulate data, run the samplers, compare aggregates and run the
//! verification suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use skm_core::diagnostics::Scenario;
use skm_core::experiment::{self, Aggregate, ExperimentConfig, InferenceMode, SamplerSpec};
use skm_core::io;
use skm_core::verify::{self, VerifyConfig};

#[derive(Parser, Debug)]
#[command(name = "skm", version, about = "Bayesian inference for stochastic kinetic models")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON config file, or a manifest to replay.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate ground-truth trajectories and both observation records.
    Simulate(DataArgs),
    /// Run a sampler on every replicate and aggregate the metrics.
    Infer(InferArgs),
    /// Put two aggregate files side by side.
    Compare { first: PathBuf, second: PathBuf },
    /// Run the convergence checks; exits non-zero if any fails.
    Verify,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Number of replicates P.
    #[arg(long)]
    replicates: Option<usize>,
    /// Number of observations N.
    #[arg(long)]
    observations: Option<usize>,
    /// Infer all eight log-rates (also sets N = 200 unless given).
    #[arg(long, conflicts_with = "param")]
    all_params: bool,
    /// Infer a single log-rate (1-based index).
    #[arg(long)]
    param: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplerKind {
    Pmmh,
    Npmc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    Co,
    Po,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerKind>,
    /// Read datasets written by `simulate` instead of regenerating them.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Dump per-step filter diagnostics at the true rates.
    #[arg(long)]
    filter_diagnostics: bool,
    /// PMMH iterations I, or NPMC iterations L.
    #[arg(long)]
    iterations: Option<usize>,
    /// NPMC samples per iteration M.
    #[arg(long)]
    samples: Option<usize>,
    /// NPMC clipping parameter M_T.
    #[arg(long)]
    clip: Option<usize>,
    /// Particles per filter J.
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Random-walk variance γ².
    #[arg(long)]
    proposal_variance: Option<f64>,
}

fn base_config(cli: &Cli) -> Result<(ExperimentConfig, bool)> {
    match &cli.config {
        Some(path) => Ok((
            experiment::load_config(path).with_context(|| format!("reading {}", path.display()))?,
            true,
        )),
        None => Ok((ExperimentConfig::default(), false)),
    }
}

fn apply_data_args(cfg: &mut ExperimentConfig, args: &DataArgs, from_file: bool) {
    if args.all_params {
        cfg.mode = InferenceMode::AllParams;
        if args.observations.is_none() && !from_file {
            cfg.observations = 200;
        }
    }
    if let Some(index) = args.param {
        cfg.mode = InferenceMode::SingleParam { index };
    }
    if let Some(p) = args.replicates {
        cfg.replicates = p;
    }
    if let Some(n) = args.observations {
        cfg.observations = n;
    }
}

fn experiment_config(cli: &Cli, args: &InferArgs) -> Result<ExperimentConfig> {
    let (mut cfg, from_file) = base_config(cli)?;
    apply_data_args(&mut cfg, &args.data, from_file);
    let all = cfg.mode == InferenceMode::AllParams;
    if let Some(s) = args.scenario {
        cfg.scenario = match s {
            ScenarioArg::Co => Scenario::Co,
            ScenarioArg::Po => Scenario::Po,
        };
    }
    // A sampler named on the command line replaces the file's sampler only
    // when the kind differs; without a file the preset for the mode is used.
    let file_is_pmmh = matches!(cfg.sampler, SamplerSpec::Pmmh(_));
    match args.sampler {
        Some(SamplerKind::Pmmh) if !from_file || !file_is_pmmh => {
            cfg.sampler = if all { SamplerSpec::pmmh_all() } else { SamplerSpec::pmmh_single() };
        }
        Some(SamplerKind::Npmc) if !from_file || file_is_pmmh => {
            cfg.sampler = if all { SamplerSpec::npmc_all() } else { SamplerSpec::npmc_single() };
        }
        None if !from_file && all => cfg.sampler = SamplerSpec::npmc_all(),
        _ => {}
    }
    match &mut cfg.sampler {
        SamplerSpec::Pmmh(c) => {
            if args.samples.is_some() || args.clip.is_some() {
                bail!("--samples and --clip apply to npmc only");
            }
            c.iterations = args.iterations.unwrap_or(c.iterations);
            c.particles = args.particles.unwrap_or(c.particles);
            c.burn_in = args.burn_in.unwrap_or(c.burn_in);
            c.thin = args.thin.unwrap_or(c.thin);
            c.proposal_variance = args.proposal_variance.unwrap_or(c.proposal_variance);
        }
        SamplerSpec::Npmc(c) => {
            if args.burn_in.is_some() || args.thin.is_some() || args.proposal_variance.is_some() {
                bail!("--burn-in, --thin and --proposal-variance apply to pmmh only");
            }
            c.iterations = args.iterations.unwrap_or(c.iterations);
            c.samples = args.samples.unwrap_or(c.samples);
            c.clip = args.clip.unwrap_or(c.clip);
            c.particles = args.particles.unwrap_or(c.particles);
        }
    }
    if args.filter_diagnostics {
        cfg.filter_diagnostics = true;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(experiment::default_out_dir)
}

fn simulate(cli: &Cli, args: &DataArgs) -> Result<()> {
    let (mut cfg, from_file) = base_config(cli)?;
    apply_data_args(&mut cfg, args, from_file);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let datasets = experiment::generate_datasets(&cfg)?;
    let dir = out_dir(cli);
    let manifest = experiment::write_datasets(&dir, &cfg, &datasets)?;
    println!(
        "wrote {} replicates ({} files) to {}",
        datasets.len(),
        manifest.files.len(),
        dir.display()
    );
    Ok(())
}

fn infer(cli: &Cli, args: &InferArgs) -> Result<()> {
    let cfg = experiment_config(cli, args)?;
    let datasets = match &args.data_dir {
        Some(dir) => Some(experiment::read_datasets(dir, &cfg)?),
        None => None,
    };
    let result = experiment::run_experiment(&cfg, datasets.as_deref())?;
    let dir = out_dir(cli);
    experiment::write_experiment(&dir, &cfg, &result)?;
    let a = &result.aggregate;
    println!(
        "{} {}: mean MSE {:.4} ± {:.4}, NESS {:.4}{} over {} runs ({} failed)",
        a.sampler,
        a.scenario,
        a.mean_mse_mean,
        a.mean_mse_std,
        a.ness_mean,
        a.acceptance_mean.map_or(String::new(), |r| format!(", acceptance {r:.4}")),
        a.replicates - a.failed,
        a.failed
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn compare(cli: &Cli, first: &Path, second: &Path) -> Result<()> {
    let a: Aggregate = io::read_json(first).with_context(|| format!("reading {}", first.display()))?;
    let b: Aggregate = io::read_json(second).with_context(|| format!("reading {}", second.display()))?;
    let cmp = experiment::compare(&a, &b)?;
    let table = cmp.render();
    print!("{table}");
    if let Some(dir) = &cli.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("comparison.txt"), &table)?;
        io::write_json(&dir.join("comparison.json"), &cmp)?;
    }
    Ok(())
}

/// Returns whether every check passed.
fn run_verify(cli: &Cli) -> Result<bool> {
    let mut cfg: VerifyConfig = match &cli.config {
        Some(path) => io::read_json(path).with_context(|| format!("reading {}", path.display()))?,
        None => VerifyConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.clipping.seed = seed;
        cfg.is_rate.seed = seed;
        cfg.nis_rate.seed = seed;
        cfg.pf_rate.seed = seed;
    }
    let report = verify::run_verification(&cfg)?;
    for c in &report.checks {
        let value = match (c.slope, c.lhs, c.rhs) {
            (Some(s), _, _) => format!("slope {s:.3}"),
            (None, Some(l), Some(r)) => format!("{l:.4e} <= {r:.4e}"),
            _ => String::new(),
        };
        println!("{:<4} {:<24} {value}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir)?;
    io::write_json(&dir.join("verification.json"), &report)?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(&cli, args).map(|_| true),
        Command::Infer(args) => infer(&cli, args).map(|_| true),
        Command::Compare { first, second } => compare(&cli, first, second).map(|_| true),
        Command::Verify => run_verify(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then
//! asserts it.
//!
//! Tests take a shared lock so their wall-clock budgets are measured without
//! competing for the CPU. The reduced eight-parameter comparison only runs
//! with `SKM_EXTENDED=1`.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::Rng;

use skm_core::diagnostics::{ness_is, prior_mse_uniform, Scenario};
use skm_core::experiment::{generate_datasets, run_experiment, Aggregate, ExperimentConfig, SamplerSpec};
use skm_core::filter::{run_filter, sample_path, FilterOptions};
use skm_core::gillespie::{simulate_trajectory, synthesize_observations, ObservationSet};
use skm_core::likelihood::ParticleLikelihood;
use skm_core::model::{build_prokaryotic, prokaryotic, InitialPrior, ObservationModel, ParameterSpace, PriorSpec, StateVector};
use skm_core::npmc::{clip_log_weights, clip_weights, run_npmc, NpmcConfig};
use skm_core::pmmh::{run_pmmh, PmmhConfig};
use skm_core::rng::{from_seed, substream};
use skm_core::toy::TwoStateToy;
use skm_core::verify::{check_is_rate, check_pf_likelihood_rate, clipping_bound_sweep, ClippingSweepConfig, PfRateConfig, RateCheckConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

// Writes through the raw handle so the line survives libtest output capture.
fn emit(line: String) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn report(criterion: u32, passed: bool, detail: String) -> bool {
    emit(format!("{} criterion {criterion}: {detail}", if passed { "PASS" } else { "FAIL" }));
    passed
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

#[test]
fn criterion_1_clipping_exactness() {
    let _guard = serial();
    let start = Instant::now();
    let lw: Vec<f64> = [10.0f64, 5.0, 3.0, 2.0, 1.0].iter().map(|w| w.ln()).collect();
    let w = clip_weights(&lw, 3).unwrap();
    let expected = [0.25, 0.25, 0.25, 1.0 / 6.0, 1.0 / 12.0];
    let max_err = w.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sweep = clipping_bound_sweep(&ClippingSweepConfig {
        trials: 1000,
        ..ClippingSweepConfig::default()
    })
    .unwrap();
    let elapsed = start.elapsed();
    let passed = max_err < 1e-12 && sweep.trials == 1000 && sweep.failures == 0 && elapsed < Duration::from_secs(1);
    assert!(report(
        1,
        passed,
        format!(
            "max |w - expected| = {max_err:.1e}, bound failures {}/{} (worst lhs/rhs {:.3}), {}",
            sweep.failures,
            sweep.trials,
            sweep.worst_ratio,
            secs(elapsed)
        )
    ));
}

#[test]
fn criterion_2_prior_baseline() {
    let _guard = serial();
    let mse = prior_mse_uniform(-7.0, 2.0, -2.30);
    let passed = (mse - 6.79).abs() <= 0.01;
    assert!(report(2, passed, format!("prior MSE {mse:.4} (target 6.79 ± 0.01)")));
}

#[test]
fn criterion_3_filter_unbiasedness() {
    let _guard = serial();
    let start = Instant::now();
    let toy = TwoStateToy::default();
    let exact = toy.exact_likelihood(&toy.rates);
    let net = toy.network();
    let obs = toy.observations().unwrap();
    let initial = toy.initial_prior();
    let mut errors = Vec::new();
    for (particles, key) in [(5usize, 0u64), (20, 1)] {
        let options = FilterOptions::new(particles);
        let runs = 10_000u64;
        let mean = (0..runs)
            .map(|r| {
                let out = run_filter(&net, &toy.rates, &initial, &obs, &options, &mut substream(0xacc3, &[key, r])).unwrap();
                out.log_marginal_likelihood.exp()
            })
            .sum::<f64>()
            / runs as f64;
        errors.push((particles, (mean - exact).abs() / exact));
    }
    let elapsed = start.elapsed();
    let passed = errors.iter().all(|&(_, e)| e < 0.02) && elapsed < Duration::from_secs(120);
    let detail: Vec<String> = errors.iter().map(|(j, e)| format!("J={j} rel err {e:.4}")).collect();
    assert!(report(3, passed, format!("{} (< 0.02), {}", detail.join(", "), secs(elapsed))));
}

#[test]
fn criterion_4_rate_suite() {
    let _guard = serial();
    let start = Instant::now();
    let is = check_is_rate(&RateCheckConfig::default()).unwrap();
    let pf = check_pf_likelihood_rate(&PfRateConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let band = |s: Option<f64>| s.is_some_and(|s| (-0.65..=-0.35).contains(&s));
    let passed = band(is.plain.slope) && band(is.clipped.slope) && band(pf.slope) && elapsed < Duration::from_secs(600);
    let fmt = |s: Option<f64>| s.map_or("undefined".to_string(), |s| format!("{s:.3}"));
    assert!(report(
        4,
        passed,
        format!(
            "slopes: IS plain {}, IS clipped {}, PF likelihood {} (band [-0.65, -0.35]), {}",
            fmt(is.plain.slope),
            fmt(is.clipped.slope),
            fmt(pf.slope),
            secs(elapsed)
        )
    ));
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn mse_line(a: &Aggregate) -> String {
    format!(
        "{} {} MSE {:.4} ± {:.4} ({} failed)",
        a.sampler, a.scenario, a.mean_mse_mean, a.mean_mse_std, a.failed
    )
}

/// Single-parameter experiment at `P = 10`, shared by criteria 5, 6 and 7.
#[test]
fn criteria_5_6_7_single_parameter_experiment() {
    let _guard = serial();
    let start = Instant::now();
    let base = ExperimentConfig::single_parameter(Scenario::Co, SamplerSpec::npmc_single());
    let datasets = generate_datasets(&base).unwrap();
    let run = |scenario, sampler: SamplerSpec| {
        let t = Instant::now();
        let cfg = ExperimentConfig::single_parameter(scenario, sampler);
        let agg = run_experiment(&cfg, Some(&datasets)).unwrap().aggregate;
        emit(format!("{} ({})", mse_line(&agg), secs(t.elapsed())));
        agg
    };
    let npmc_co = run(Scenario::Co, SamplerSpec::npmc_single());
    let npmc_po = run(Scenario::Po, SamplerSpec::npmc_single());
    let pmmh_co = run(Scenario::Co, SamplerSpec::pmmh_single());
    let pmmh_po = run(Scenario::Po, SamplerSpec::pmmh_single());
    let elapsed = start.elapsed();

    let none_failed = [&npmc_co, &npmc_po, &pmmh_co, &pmmh_po].iter().all(|a| a.failed == 0);
    let c5 = none_failed
        && within(npmc_co.mean_mse_mean, 0.005, 0.10)
        && within(npmc_po.mean_mse_mean, 0.05, 0.60)
        && within(pmmh_co.mean_mse_mean, 0.005, 0.12)
        && within(pmmh_po.mean_mse_mean, 0.05, 0.65);
    let c5_line = format!(
        "{}; {}; {}; {}; total {} (runtime reported, not asserted)",
        mse_line(&npmc_co),
        mse_line(&npmc_po),
        mse_line(&pmmh_co),
        mse_line(&pmmh_po),
        secs(elapsed)
    );

    let acc_co = pmmh_co.acceptance_mean.unwrap_or(f64::NAN);
    let acc_po = pmmh_po.acceptance_mean.unwrap_or(f64::NAN);
    let c6 = within(acc_po, 0.03, 0.25) && within(acc_co, 0.0005, 0.02);
    let c6_line = format!("PMMH acceptance PO {acc_po:.4} (band [0.03, 0.25]), CO {acc_co:.4} (band [0.0005, 0.02])");

    let plateau = |a: &Aggregate| -> (f64, f64, bool) {
        let series = a.ness_by_iteration.as_deref().unwrap_or(&[]);
        match (series.get(4), series.get(9)) {
            (Some(&n5), Some(&n10)) => (n5, n10, (n10 - n5).abs() <= 0.10 * n5),
            _ => (f64::NAN, f64::NAN, false),
        }
    };
    let (co5, co10, co_ok) = plateau(&npmc_co);
    let (po5, po10, po_ok) = plateau(&npmc_po);
    let c7 = co_ok && po_ok;
    let c7_line = format!(
        "mean NESS at iterations 5 and 10: CO {co5:.4} -> {co10:.4}, PO {po5:.4} -> {po10:.4} (within 10%)"
    );

    let r5 = report(5, c5, c5_line);
    let r6 = report(6, c6, c6_line);
    let r7 = report(7, c7, c7_line);
    assert!(r5 && r6 && r7);
}

/// Reduced eight-parameter comparison (`P = 5`); ordering claims only.
#[test]
fn criterion_8_all_parameters_ordering() {
    let _guard = serial();
    if std::env::var("SKM_EXTENDED").map_or(true, |v| v != "1") {
        emit("SKIP criterion 8: set SKM_EXTENDED=1 to run the reduced eight-parameter experiment".to_string());
        return;
    }
    let start = Instant::now();
    let base = ExperimentConfig {
        replicates: 5,
        ..ExperimentConfig::all_parameters(Scenario::Co, SamplerSpec::npmc_all())
    };
    let datasets = generate_datasets(&base).unwrap();
    let run = |scenario, sampler: SamplerSpec| {
        let t = Instant::now();
        let cfg = ExperimentConfig {
            replicates: 5,
            ..ExperimentConfig::all_parameters(scenario, sampler)
        };
        let agg = run_experiment(&cfg, Some(&datasets)).unwrap().aggregate;
        emit(format!("{} ({})", mse_line(&agg), secs(t.elapsed())));
        agg
    };
    let npmc_co = run(Scenario::Co, SamplerSpec::npmc_all());
    let npmc_po = run(Scenario::Po, SamplerSpec::npmc_all());
    let pmmh_co = run(Scenario::Co, SamplerSpec::pmmh_all());
    let passed = npmc_co.mean_mse_mean < pmmh_co.mean_mse_mean && npmc_co.mean_mse_mean < npmc_po.mean_mse_mean;
    assert!(report(
        8,
        passed,
        format!(
            "NPMC CO {:.3} < PMMH CO {:.3} and < NPMC PO {:.3}, {}",
            npmc_co.mean_mse_mean,
            pmmh_co.mean_mse_mean,
            npmc_po.mean_mse_mean,
            secs(start.elapsed())
        )
    ));
}

fn small_prokaryotic_record(steps: usize, seed: u64) -> (ObservationSet, InitialPrior) {
    let net = build_prokaryotic();
    let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
    let traj = simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, steps, &mut from_seed(seed)).unwrap();
    let obs = synthesize_observations(&traj, &ObservationModel::prokaryotic_partial(4.0).unwrap(), &mut from_seed(seed + 1)).unwrap();
    let initial = InitialPrior::Poisson {
        means: prokaryotic::INITIAL_STATE.iter().map(|&v| v as f64).collect(),
    };
    (obs, initial)
}

#[test]
fn criterion_9_invariant_suites() {
    let _guard = serial();
    let start = Instant::now();
    let net = build_prokaryotic();
    let mut failures: Vec<&str> = Vec::new();

    // Conservation on simulated trajectories and on filter-drawn paths.
    let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
    let conserved = (0..200u64).all(|s| {
        let traj = simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, 100, &mut substream(9, &[s])).unwrap();
        traj.states.iter().all(|x| x.0[3] + x.0[4] == 10 && x.0.iter().all(|&v| v >= 0))
    });
    let (obs, initial) = small_prokaryotic_record(40, 3);
    let paths_conserved = (0..20u64).all(|s| {
        let out = run_filter(&net, &prokaryotic::TRUE_RATES, &initial, &obs, &FilterOptions::new(100).with_paths(), &mut substream(10, &[s])).unwrap();
        let path = sample_path(&out, &mut substream(11, &[s])).unwrap();
        let total = path.x0.0[3] + path.x0.0[4];
        path.states.iter().all(|x| x.0[3] + x.0[4] == total)
    });
    if !(conserved && paths_conserved) {
        failures.push("conservation");
    }

    // Flat top and NESS improvement on random log-weights.
    let mut rng = from_seed(12);
    let mut flat_top = true;
    let mut ness_improves = true;
    for _ in 0..1000 {
        let m = rng.random_range(5..200usize);
        let clip = rng.random_range(2..m);
        let lw: Vec<f64> = (0..m).map(|_| rng.random_range(-30.0..5.0)).collect();
        let clipped = clip_log_weights(&lw, clip).unwrap();
        let mut sorted = lw.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let threshold = sorted[clip - 1];
        flat_top &= clipped.iter().zip(&lw).all(|(&c, &l)| c == l.min(threshold));
        flat_top &= clipped.iter().filter(|&&c| c == threshold).count() >= clip;
        let (plain, _) = skm_core::resample::normalize_log_weights(&lw);
        let tiw = clip_weights(&lw, clip).unwrap();
        ness_improves &= ness_is(&tiw) >= ness_is(&plain) * (1.0 - 1e-12);
    }
    if !flat_top {
        failures.push("flat top");
    }
    if !ness_improves {
        failures.push("NESS improvement");
    }

    // Pseudo-marginal carry-forward: rejected moves keep the stored estimate.
    let (obs, initial) = small_prokaryotic_record(15, 21);
    let estimator = ParticleLikelihood::new(&net, &initial, &obs, 30);
    let priors = PriorSpec::prokaryotic();
    let space = ParameterSpace::pinned(prokaryotic::TRUE_RATES.iter().map(|c| c.ln()).collect(), vec![0]).unwrap();
    let chain = run_pmmh(
        &estimator,
        &priors,
        &space,
        &PmmhConfig {
            iterations: 400,
            burn_in: 0,
            thin: 1,
            proposal_variance: 1.0,
            particles: 30,
            seed: 22,
            init_retries: 100,
        },
    )
    .unwrap();
    let mut carried = chain.accepted.iter().any(|a| !a) && chain.accepted.iter().any(|&a| a);
    for i in 1..chain.theta.len() {
        if chain.accepted[i - 1] {
            carried &= chain.log_likelihood[i] == chain.candidate_log_likelihood[i - 1];
        } else {
            carried &= chain.log_likelihood[i].to_bits() == chain.log_likelihood[i - 1].to_bits()
                && chain.theta[i] == chain.theta[i - 1];
        }
    }
    if !carried {
        failures.push("carry-forward");
    }

    // Bit-level determinism under different thread counts.
    let npmc_cfg = NpmcConfig {
        iterations: 3,
        samples: 60,
        clip: 10,
        particles: 20,
        seed: 23,
        jitter: 1e-8,
        record_paths: Default::default(),
    };
    let in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let run = run_npmc(&estimator, &priors, &space, &npmc_cfg).unwrap();
            let exp_cfg = ExperimentConfig {
                observations: 10,
                replicates: 3,
                ..ExperimentConfig::single_parameter(Scenario::Po, SamplerSpec::Npmc(npmc_cfg.clone()))
            };
            let agg = run_experiment(&exp_cfg, None).unwrap().aggregate;
            let bits: Vec<u64> = run
                .iterations
                .iter()
                .flat_map(|it| it.log_iw.iter().chain(&it.tiw).chain(it.samples.iter().flatten()))
                .map(|v| v.to_bits())
                .collect();
            (bits, serde_json::to_string(&agg).unwrap())
        })
    };
    if in_pool(1) != in_pool(4) {
        failures.push("thread determinism");
    }

    let elapsed = start.elapsed();
    let passed = failures.is_empty() && elapsed < Duration::from_secs(300);
    let detail = if failures.is_empty() {
        "conservation, flat top, NESS improvement, carry-forward and thread determinism hold".to_string()
    } else {
        format!("violated: {}", failures.join(", "))
    };
    assert!(report(9, passed, format!("{detail}, {}", secs(elapsed))));
}

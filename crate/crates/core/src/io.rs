//! CSV and JSON persistence.
//!
//! Every file is UTF-8 with LF line endings. Floats use Rust's shortest
//! round-trip formatting, so reading a file back gives the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diagnostics::MetricRecord;
use crate::error::{Result, SkmError};
use crate::filter::FilterOutput;
use crate::gillespie::{ObservationSet, Trajectory};
use crate::model::{ObservationModel, StateVector};
use crate::npmc::NpmcRun;
use crate::pmmh::ChainOutput;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path)?)
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |k| format!("{prefix}_{k}"))
}

fn check_header(path: &Path, got: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if got.iter().ne(expected.iter().map(String::as_str)) {
        return Err(SkmError::SchemaMismatch(format!(
            "{}: header {:?}, expected {:?}",
            path.display(),
            got.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| SkmError::Parse(format!("{}: cannot parse `{field}`", path.display())))
}

/// `n, t, x_1..x_V`, one row per observation time (the initial state lives
/// in the data envelope).
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["n".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("x", traj.x0.len()))
        .collect();
    w.write_record(&header)?;
    for (n, x) in traj.states.iter().enumerate() {
        let step = n + 1;
        let mut row = vec![step.to_string(), (step as f64 * traj.delta).to_string()];
        row.extend(x.iter().map(i64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, x0: StateVector, delta: f64) -> Result<Trajectory> {
    let mut r = reader(path)?;
    let v = x0.len();
    let expected: Vec<String> = ["n".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("x", v))
        .collect();
    check_header(path, r.headers()?, &expected)?;
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x: Vec<i64> = rec.iter().skip(2).map(|f| parse(path, f)).collect::<Result<_>>()?;
        states.push(StateVector::new(x));
    }
    Ok(Trajectory {
        x0,
        states,
        delta,
        event_count: 0,
    })
}

/// `n, t, y_1..y_D`.
pub fn write_observations_csv(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = ["n".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("y", obs.obs_model.obs_dim()))
        .collect();
    w.write_record(&header)?;
    for (n, y) in obs.y.iter().enumerate() {
        let step = n + 1;
        let mut row = vec![step.to_string(), (step as f64 * obs.delta).to_string()];
        row.extend(y.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations_csv(path: &Path, obs_model: ObservationModel, delta: f64) -> Result<ObservationSet> {
    let mut r = reader(path)?;
    let expected: Vec<String> = ["n".to_string(), "t".to_string()]
        .into_iter()
        .chain(numbered("y", obs_model.obs_dim()))
        .collect();
    check_header(path, r.headers()?, &expected)?;
    let mut y = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        y.push(rec.iter().skip(2).map(|f| parse(path, f)).collect::<Result<Vec<f64>>>()?);
    }
    ObservationSet::new(y, obs_model, delta)
}

fn bool_flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// `i, θ_1..θ_K, loglik, accepted`. Row 0 is the initial state and is
/// flagged as accepted.
pub fn write_chain_csv(path: &Path, chain: &ChainOutput) -> Result<()> {
    let mut w = writer(path)?;
    let k = chain.theta.first().map_or(0, Vec::len);
    let header: Vec<String> = ["i".to_string()]
        .into_iter()
        .chain(numbered("theta", k))
        .chain(["loglik".to_string(), "accepted".to_string()])
        .collect();
    w.write_record(&header)?;
    for (i, (theta, ll)) in chain.theta.iter().zip(&chain.log_likelihood).enumerate() {
        let accepted = if i == 0 { true } else { chain.accepted[i - 1] };
        let mut row = vec![i.to_string()];
        row.extend(theta.iter().map(f64::to_string));
        row.push(ll.to_string());
        row.push(bool_flag(accepted).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `l, i, θ_1..θ_K, logIW, TIW` for every iteration and sample.
pub fn write_npmc_iterations_csv(path: &Path, run: &NpmcRun) -> Result<()> {
    let mut w = writer(path)?;
    let k = run
        .iterations
        .first()
        .and_then(|it| it.samples.first())
        .map_or(0, Vec::len);
    let header: Vec<String> = ["l".to_string(), "i".to_string()]
        .into_iter()
        .chain(numbered("theta", k))
        .chain(["logIW".to_string(), "TIW".to_string()])
        .collect();
    w.write_record(&header)?;
    for it in &run.iterations {
        for (i, theta) in it.samples.iter().enumerate() {
            let mut row = vec![it.iteration.to_string(), (i + 1).to_string()];
            row.extend(theta.iter().map(f64::to_string));
            row.push(it.log_iw[i].to_string());
            row.push(it.tiw[i].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Column names `MSE_k` use the 1-based index of each inferred parameter.
pub fn metrics_header(free: &[usize]) -> Vec<String> {
    ["run", "scenario", "sampler"]
        .iter()
        .map(|s| s.to_string())
        .chain(free.iter().map(|k| format!("MSE_{}", k + 1)))
        .chain(["meanMSE", "NESS", "acc_rate"].iter().map(|s| s.to_string()))
        .collect()
}

/// `run, scenario, sampler, MSE_1..MSE_K, meanMSE, NESS, acc_rate`; the
/// acceptance rate is empty for samplers without one.
pub fn write_metrics_csv(path: &Path, free: &[usize], records: &[MetricRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(metrics_header(free))?;
    for r in records {
        let mut row = vec![r.run.to_string(), r.scenario.to_string(), r.sampler.clone()];
        row.extend(r.mse.iter().map(f64::to_string));
        row.push(r.mean_mse.to_string());
        row.push(r.ness.to_string());
        row.push(r.acceptance_rate.map(|a| a.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step effective sample size and log-likelihood increment.
pub fn write_filter_diagnostics_csv(path: &Path, out: &FilterOutput) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["n", "ess", "log_increment"])?;
    for (n, (ess, inc)) in out.ess.iter().zip(&out.log_increments).enumerate() {
        w.write_record([(n + 1).to_string(), ess.to_string(), inc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

//! Exact stochastic simulation (direct method) between observation times.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SkmError};
use crate::model::{ObservationModel, ReactionNetwork, StateVector};

/// Default bound on reactions fired within one interval.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

const STACK_HAZARDS: usize = 32;

/// Latent populations on the grid `t = nΔ`, `n = 1..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: StateVector,
    pub states: Vec<StateVector>,
    pub delta: f64,
    pub event_count: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Noisy observations `y_1..y_N` of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub y: Vec<Vec<f64>>,
    pub obs_model: ObservationModel,
    pub delta: f64,
}

impl ObservationSet {
    pub fn new(y: Vec<Vec<f64>>, obs_model: ObservationModel, delta: f64) -> Result<Self> {
        if y.is_empty() {
            return Err(SkmError::Precondition("observation set is empty".into()));
        }
        for row in &y {
            check_dim("observation vector", obs_model.obs_dim(), row.len())?;
        }
        if !(delta > 0.0) {
            return Err(SkmError::Precondition("Δ must be positive".into()));
        }
        Ok(Self {
            y,
            obs_model,
            delta,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Advances `x` in place by `duration` time units and returns the number of
/// reactions fired. No validation; callers must pass a well-formed state.
#[inline]
pub fn advance<R: Rng + ?Sized>(
    network: &ReactionNetwork,
    rates: &[f64],
    x: &mut [i64],
    duration: f64,
    event_cap: u64,
    rng: &mut R,
) -> Result<u64> {
    let k = network.reaction_count();
    let mut stack = [0.0f64; STACK_HAZARDS];
    let mut heap = Vec::new();
    let h: &mut [f64] = if k <= STACK_HAZARDS {
        &mut stack[..k]
    } else {
        heap.resize(k, 0.0);
        &mut heap
    };

    let mut elapsed = 0.0;
    let mut events = 0u64;
    network.hazards_into(x, rates, h);
    loop {
        let h0: f64 = h.iter().sum();
        if h0 == 0.0 {
            return Ok(events);
        }
        if !h0.is_finite() {
            let reaction = h.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(SkmError::NonFiniteHazard { reaction });
        }
        let wait: f64 = Exp1.sample(rng);
        elapsed += wait / h0;
        if elapsed > duration {
            return Ok(events);
        }
        if events >= event_cap {
            return Err(SkmError::EventCapExceeded { cap: event_cap });
        }

        // Zero hazards never satisfy `target < acc` first, so they are never
        // selected; rounding overshoot falls back to the last positive one.
        let target = rng.random::<f64>() * h0;
        let mut acc = 0.0;
        let mut chosen = None;
        for (r, &hr) in h.iter().enumerate() {
            acc += hr;
            if target < acc {
                chosen = Some(r);
                break;
            }
        }
        let chosen = chosen.or_else(|| h.iter().rposition(|&hr| hr > 0.0));
        let fired = chosen.expect("h0 > 0 implies a positive hazard");
        network.fire(x, fired);
        for &d in network.dependents(fired) {
            h[d] = network.hazard(d, x, rates[d]);
        }
        events += 1;
    }
}

/// Simulates the network from `state` for `duration` time units.
pub fn simulate_interval<R: Rng + ?Sized>(
    network: &ReactionNetwork,
    rates: &[f64],
    state: &StateVector,
    duration: f64,
    rng: &mut R,
) -> Result<(StateVector, u64)> {
    simulate_interval_capped(network, rates, state, duration, DEFAULT_EVENT_CAP, rng)
}

pub fn simulate_interval_capped<R: Rng + ?Sized>(
    network: &ReactionNetwork,
    rates: &[f64],
    state: &StateVector,
    duration: f64,
    event_cap: u64,
    rng: &mut R,
) -> Result<(StateVector, u64)> {
    network.check_state(state)?;
    check_rates(network, rates)?;
    if !(duration >= 0.0) {
        return Err(SkmError::Precondition("duration must be non-negative".into()));
    }
    let mut x = state.0.clone();
    let events = advance(network, rates, &mut x, duration, event_cap, rng)?;
    Ok((StateVector(x), events))
}

pub(crate) fn check_rates(network: &ReactionNetwork, rates: &[f64]) -> Result<()> {
    check_dim("rate constants", network.reaction_count(), rates.len())?;
    if let Some(reaction) = rates.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(SkmError::NonFiniteHazard { reaction });
    }
    Ok(())
}

/// Simulates `steps` consecutive intervals of length `delta`, recording the
/// state at the end of each.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    network: &ReactionNetwork,
    rates: &[f64],
    x0: &StateVector,
    delta: f64,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    network.check_state(x0)?;
    check_rates(network, rates)?;
    if steps == 0 {
        return Err(SkmError::Precondition("trajectory needs at least one step".into()));
    }
    if !(delta > 0.0) {
        return Err(SkmError::Precondition("Δ must be positive".into()));
    }
    let mut x = x0.0.clone();
    let mut states = Vec::with_capacity(steps);
    let mut event_count = 0;
    for _ in 0..steps {
        event_count += advance(network, rates, &mut x, delta, DEFAULT_EVENT_CAP, rng)?;
        debug_assert!(
            !network.conserves(x0) || network.conserves(&x),
            "conservation law violated"
        );
        states.push(StateVector(x.clone()));
    }
    Ok(Trajectory {
        x0: x0.clone(),
        states,
        delta,
        event_count,
    })
}

/// `y_n = M x_n + w_n` with `w_n ~ N(0, σ² I)`.
pub fn synthesize_observations<R: Rng + ?Sized>(
    traj: &Trajectory,
    obs_model: &ObservationModel,
    rng: &mut R,
) -> Result<ObservationSet> {
    synthesize_observations_scaled(traj, obs_model, 1.0, rng)
}

/// As [`synthesize_observations`] with the noise multiplied by `noise_scale`
/// (`0` gives `y_n = M x_n` exactly).
pub fn synthesize_observations_scaled<R: Rng + ?Sized>(
    traj: &Trajectory,
    obs_model: &ObservationModel,
    noise_scale: f64,
    rng: &mut R,
) -> Result<ObservationSet> {
    check_dim("observation matrix columns", traj.x0.len(), obs_model.state_dim())?;
    let sd = obs_model.noise_variance().sqrt() * noise_scale;
    let y = traj
        .states
        .iter()
        .map(|x| {
            let mut row = obs_model.project(x);
            for v in &mut row {
                let z: f64 = StandardNormal.sample(rng);
                *v += sd * z;
            }
            row
        })
        .collect();
    ObservationSet::new(y, obs_model.clone(), traj.delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_prokaryotic, prokaryotic, ConservationLaw};
    use crate::rng::from_seed;

    fn death_network() -> ReactionNetwork {
        ReactionNetwork::new(vec!["X".into()], vec!["death".into()], vec![1], vec![0], vec![])
            .unwrap()
    }

    #[test]
    fn absorbing_state_fires_nothing() {
        let net = build_prokaryotic();
        let (x, events) = simulate_interval(
            &net,
            &prokaryotic::TRUE_RATES,
            &StateVector::new(vec![0; 5]),
            10.0,
            &mut from_seed(1),
        )
        .unwrap();
        assert_eq!(x.0, vec![0; 5]);
        assert_eq!(events, 0);
    }

    #[test]
    fn zero_duration_is_identity() {
        let net = build_prokaryotic();
        let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
        let (x, events) =
            simulate_interval(&net, &prokaryotic::TRUE_RATES, &x0, 0.0, &mut from_seed(1)).unwrap();
        assert_eq!(x, x0);
        assert_eq!(events, 0);
    }

    #[test]
    fn pure_death_mean_and_variance() {
        let net = death_network();
        let mut rng = from_seed(2024);
        let reps = 10_000;
        let x0 = StateVector::new(vec![1000]);
        let finals: Vec<f64> = (0..reps)
            .map(|_| simulate_interval(&net, &[0.5], &x0, 1.0, &mut rng).unwrap().0[0] as f64)
            .collect();
        let mean = finals.iter().sum::<f64>() / reps as f64;
        let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let p = (-0.5f64).exp();
        assert!((mean / (1000.0 * p) - 1.0).abs() < 0.02, "mean {mean}");
        let exact_var = 1000.0 * p * (1.0 - p);
        assert!((var / exact_var - 1.0).abs() < 0.05, "var {var} vs {exact_var}");
    }

    #[test]
    fn event_cap_turns_runaway_into_error() {
        let birth = ReactionNetwork::new(vec!["X".into()], vec!["birth".into()], vec![1], vec![2], vec![])
            .unwrap();
        let res = simulate_interval_capped(
            &birth,
            &[1.0],
            &StateVector::new(vec![100]),
            100.0,
            1000,
            &mut from_seed(5),
        );
        assert!(matches!(res, Err(SkmError::EventCapExceeded { cap: 1000 })));
    }

    #[test]
    fn non_finite_rates_are_rejected() {
        let net = death_network();
        let res = simulate_interval(&net, &[f64::INFINITY], &StateVector::new(vec![3]), 1.0, &mut from_seed(5));
        assert!(matches!(res, Err(SkmError::NonFiniteHazard { .. })));
    }

    #[test]
    fn single_step_trajectory_equals_interval() {
        let net = build_prokaryotic();
        let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
        let traj =
            simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, 1, &mut from_seed(9)).unwrap();
        let (x, events) =
            simulate_interval(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, &mut from_seed(9)).unwrap();
        assert_eq!(traj.states, vec![x]);
        assert_eq!(traj.event_count, events);
    }

    #[test]
    fn trajectories_conserve_gene_copies_and_are_reproducible() {
        let net = build_prokaryotic();
        let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
        let a = simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, 200, &mut from_seed(4)).unwrap();
        let b = simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, 200, &mut from_seed(4)).unwrap();
        assert_eq!(a, b);
        for x in &a.states {
            assert_eq!(x[prokaryotic::DNA_P2] + x[prokaryotic::DNA], 10);
            assert!(x.iter().all(|&n| n >= 0));
        }
        assert!(a.event_count > 0);
    }

    #[test]
    fn conservation_laws_hold_on_a_reversible_toy() {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec!["fwd".into(), "back".into()],
            vec![1, 0, 0, 1],
            vec![0, 1, 1, 0],
            vec![ConservationLaw { coefficients: vec![1, 1], constant: 7 }],
        )
        .unwrap();
        let traj = simulate_trajectory(&net, &[1.0, 2.0], &StateVector::new(vec![7, 0]), 0.5, 50, &mut from_seed(1))
            .unwrap();
        assert!(traj.states.iter().all(|x| net.conserves(x)));
    }

    #[test]
    fn observation_scenarios() {
        let net = build_prokaryotic();
        let x0 = StateVector::new(prokaryotic::INITIAL_STATE.to_vec());
        let traj = simulate_trajectory(&net, &prokaryotic::TRUE_RATES, &x0, 1.0, 20, &mut from_seed(8)).unwrap();

        let co = ObservationModel::complete(5, 4.0).unwrap();
        let y = synthesize_observations(&traj, &co, &mut from_seed(1)).unwrap();
        assert_eq!(y.len(), 20);
        assert!(y.y.iter().all(|row| row.len() == 5));

        let po = ObservationModel::prokaryotic_partial(4.0).unwrap();
        let exact = synthesize_observations_scaled(&traj, &po, 0.0, &mut from_seed(1)).unwrap();
        for (row, x) in exact.y.iter().zip(&traj.states) {
            assert_eq!(row, &vec![(x[1] + 2 * x[2]) as f64]);
        }
        let noisy = synthesize_observations(&traj, &po, &mut from_seed(1)).unwrap();
        let resid: f64 = noisy
            .y
            .iter()
            .zip(&exact.y)
            .map(|(a, b)| (a[0] - b[0]).powi(2))
            .sum::<f64>()
            / 20.0;
        assert!(resid > 0.5 && resid < 12.0, "residual variance {resid}");
    }
}

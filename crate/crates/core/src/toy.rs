//! A single molecule switching between two forms, `A ⇌ B`.
//!
//! The state space has two points, so the exact likelihood of a short
//! observation record is a finite sum over paths. That makes it the reference
//! model for checking the particle filter.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkmError};
use crate::gillespie::ObservationSet;
use crate::model::{ConservationLaw, InitialPrior, ObservationModel, ReactionNetwork};

/// Species `[A, B]`, reactions `A → B` and `B → A`, with `A + B = 1`.
pub fn two_state_network() -> ReactionNetwork {
    ReactionNetwork::new(
        vec!["A".into(), "B".into()],
        vec!["switch_off".into(), "switch_on".into()],
        vec![1, 0, 0, 1],
        vec![0, 1, 1, 0],
        vec![ConservationLaw {
            coefficients: vec![1, 1],
            constant: 1,
        }],
    )
    .expect("two-state network is well formed")
}

/// Rates, initial distribution and observation record of the toy.
/// Observations are `y_n = x_A(nΔ) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStateToy {
    /// `[c_off, c_on]`.
    pub rates: [f64; 2],
    /// Probability that the molecule starts as `A`.
    pub initial_a: f64,
    pub delta: f64,
    pub noise_variance: f64,
    pub y: Vec<f64>,
}

impl Default for TwoStateToy {
    fn default() -> Self {
        Self {
            rates: [0.5, 0.3],
            initial_a: 0.6,
            delta: 1.0,
            noise_variance: 0.25,
            y: vec![0.9, 0.2, 0.7],
        }
    }
}

impl TwoStateToy {
    pub fn validate(&self) -> Result<()> {
        if self.rates.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(SkmError::InvalidConfig("toy rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_a) {
            return Err(SkmError::InvalidConfig("initial probability outside [0, 1]".into()));
        }
        if !(self.delta > 0.0 && self.noise_variance > 0.0) {
            return Err(SkmError::InvalidConfig("Δ and σ² must be positive".into()));
        }
        if self.y.len() > 20 {
            return Err(SkmError::InvalidConfig("toy enumeration supports at most 20 observations".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> ReactionNetwork {
        two_state_network()
    }

    pub fn initial_prior(&self) -> InitialPrior {
        InitialPrior::Categorical {
            states: vec![vec![1, 0], vec![0, 1]],
            probabilities: vec![self.initial_a, 1.0 - self.initial_a],
        }
    }

    pub fn observation_model(&self) -> ObservationModel {
        ObservationModel::new(1, 2, vec![1.0, 0.0], self.noise_variance).expect("valid toy observation model")
    }

    pub fn observations(&self) -> Result<ObservationSet> {
        ObservationSet::new(
            self.y.iter().map(|&v| vec![v]).collect(),
            self.observation_model(),
            self.delta,
        )
    }

    /// Log-rates with the first component replaced.
    pub fn theta_with_first(&self, theta1: f64) -> Vec<f64> {
        vec![theta1, self.rates[1].ln()]
    }

    /// Exact likelihood `p(y | c)` by summing over every path.
    pub fn exact_likelihood(&self, rates: &[f64]) -> f64 {
        let p = transition_matrix(rates[0], rates[1], self.delta);
        let init = [self.initial_a, 1.0 - self.initial_a];
        let n = self.y.len();
        let mut total = 0.0;
        // Bit k of `code` is the state after k steps; bit 0 is x0. 0 = A, 1 = B.
        for code in 0u32..(1 << (n + 1)) {
            let state = |k: usize| ((code >> k) & 1) as usize;
            let mut prob = init[state(0)];
            for k in 1..=n {
                let x_a = if state(k) == 0 { 1.0 } else { 0.0 };
                prob *= p[state(k - 1)][state(k)] * gaussian_pdf(self.y[k - 1], x_a, self.noise_variance);
            }
            total += prob;
        }
        total
    }

    pub fn exact_likelihood_theta(&self, theta: &[f64]) -> f64 {
        let rates: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        self.exact_likelihood(&rates)
    }
}

/// `P[i][j]`, the probability of being in `j` after `delta` starting from
/// `i` (0 = A, 1 = B), for switching rates `off` (A → B) and `on` (B → A).
pub fn transition_matrix(off: f64, on: f64, delta: f64) -> [[f64; 2]; 2] {
    let s = off + on;
    let decay = (-s * delta).exp();
    let a_to_a = (on + off * decay) / s;
    let b_to_b = (off + on * decay) / s;
    [[a_to_a, 1.0 - a_to_a], [1.0 - b_to_b, b_to_b]]
}

fn gaussian_pdf(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

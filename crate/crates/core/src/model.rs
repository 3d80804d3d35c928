//! Stochastic kinetic models: reaction networks, hazards, priors and
//! observation operators.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SkmError};

/// Species populations (molecule counts) at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<i64>);

impl StateVector {
    pub fn new(x: Vec<i64>) -> Self {
        Self(x)
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for StateVector {
    type Target = [i64];

    fn deref(&self) -> &[i64] {
        &self.0
    }
}

impl From<Vec<i64>> for StateVector {
    fn from(x: Vec<i64>) -> Self {
        Self(x)
    }
}

/// A linear invariant `coefficients · x = constant`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservationLaw {
    pub coefficients: Vec<i64>,
    pub constant: i64,
}

impl ConservationLaw {
    pub fn value(&self, x: &[i64]) -> i64 {
        self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn holds(&self, x: &[i64]) -> bool {
        self.value(x) == self.constant
    }
}

/// Reactant factor of one reaction: species index and coefficient (> 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Reactant {
    species: usize,
    coeff: u32,
}

/// Species/reaction structure of a stochastic kinetic model.
///
/// `reactants` and `products` are the K×V coefficient matrices (row-major,
/// one row per reaction); the V×K stoichiometry matrix is derived from them
/// and never stored independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species_names: Vec<String>,
    reaction_names: Vec<String>,
    reactants: Vec<u32>,
    products: Vec<u32>,
    stoichiometry: Vec<i64>,
    conservation_laws: Vec<ConservationLaw>,
    reactant_lists: Vec<Vec<Reactant>>,
    changes: Vec<Vec<(usize, i64)>>,
    /// `dependents[r]`: reactions whose hazard reads a species that `r` changes.
    dependents: Vec<Vec<usize>>,
}

impl ReactionNetwork {
    /// Builds a network from its coefficient matrices (`K×V`, row-major).
    pub fn new(
        species_names: Vec<String>,
        reaction_names: Vec<String>,
        reactants: Vec<u32>,
        products: Vec<u32>,
        conservation_laws: Vec<ConservationLaw>,
    ) -> Result<Self> {
        let v = species_names.len();
        let k = reaction_names.len();
        if v == 0 || k == 0 {
            return Err(SkmError::InvalidNetwork(
                "a network needs at least one species and one reaction".into(),
            ));
        }
        check_dim("reactant matrix", k * v, reactants.len())?;
        check_dim("product matrix", k * v, products.len())?;
        for law in &conservation_laws {
            check_dim("conservation law", v, law.coefficients.len())?;
        }

        let mut stoichiometry = vec![0i64; v * k];
        let mut reactant_lists = Vec::with_capacity(k);
        let mut changes = Vec::with_capacity(k);
        for r in 0..k {
            let mut list = Vec::new();
            let mut delta = Vec::new();
            for s in 0..v {
                let p = reactants[r * v + s];
                let q = products[r * v + s];
                let net = i64::from(q) - i64::from(p);
                stoichiometry[s * k + r] = net;
                if p > 0 {
                    list.push(Reactant { species: s, coeff: p });
                }
                if net != 0 {
                    delta.push((s, net));
                }
            }
            reactant_lists.push(list);
            changes.push(delta);
        }

        for (i, law) in conservation_laws.iter().enumerate() {
            for r in 0..k {
                let drift: i64 = (0..v)
                    .map(|s| law.coefficients[s] * stoichiometry[s * k + r])
                    .sum();
                if drift != 0 {
                    return Err(SkmError::InvalidNetwork(format!(
                        "conservation law {i} is not preserved by reaction {}",
                        reaction_names[r]
                    )));
                }
            }
        }

        let dependents = changes
            .iter()
            .map(|delta: &Vec<(usize, i64)>| {
                (0..k)
                    .filter(|&d| {
                        reactant_lists[d]
                            .iter()
                            .any(|re: &Reactant| delta.iter().any(|&(s, _)| s == re.species))
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            species_names,
            reaction_names,
            reactants,
            products,
            stoichiometry,
            conservation_laws,
            reactant_lists,
            changes,
            dependents,
        })
    }

    pub fn species_count(&self) -> usize {
        self.species_names.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reaction_names.len()
    }

    pub fn species_names(&self) -> &[String] {
        &self.species_names
    }

    pub fn reaction_names(&self) -> &[String] {
        &self.reaction_names
    }

    pub fn conservation_laws(&self) -> &[ConservationLaw] {
        &self.conservation_laws
    }

    /// Reactant coefficient `p_kv`.
    pub fn reactant_coeff(&self, reaction: usize, species: usize) -> u32 {
        self.reactants[reaction * self.species_count() + species]
    }

    /// Product coefficient `q_kv`.
    pub fn product_coeff(&self, reaction: usize, species: usize) -> u32 {
        self.products[reaction * self.species_count() + species]
    }

    /// Entry `S[species, reaction]` of the stoichiometry matrix.
    pub fn stoichiometry(&self, species: usize, reaction: usize) -> i64 {
        self.stoichiometry[species * self.reaction_count() + reaction]
    }

    /// Column `S[:, reaction]`.
    pub fn stoichiometry_column(&self, reaction: usize) -> Vec<i64> {
        (0..self.species_count())
            .map(|s| self.stoichiometry(s, reaction))
            .collect()
    }

    /// True when every declared conservation law holds at `x`.
    pub fn conserves(&self, x: &[i64]) -> bool {
        self.conservation_laws.iter().all(|law| law.holds(x))
    }

    pub fn check_state(&self, x: &[i64]) -> Result<()> {
        check_dim("state vector", self.species_count(), x.len())?;
        if let Some(species) = x.iter().position(|&n| n < 0) {
            return Err(SkmError::Precondition(format!(
                "species {species} has a negative population"
            )));
        }
        Ok(())
    }

    /// Hazard of a single reaction: `c_k ∏_v binom(x_v, p_kv)`.
    #[inline]
    pub fn hazard(&self, reaction: usize, x: &[i64], rate: f64) -> f64 {
        let mut h = rate;
        for r in &self.reactant_lists[reaction] {
            let n = x[r.species];
            if n < i64::from(r.coeff) {
                return 0.0;
            }
            match r.coeff {
                1 => h *= n as f64,
                2 => h *= (n * (n - 1)) as f64 * 0.5,
                p => h *= binomial(n, p),
            }
        }
        h
    }

    /// Fills `h` with the hazard vector and returns the total hazard `h0`.
    #[inline]
    pub fn hazards_into(&self, x: &[i64], rates: &[f64], h: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (k, slot) in h.iter_mut().enumerate() {
            let hk = self.hazard(k, x, rates[k]);
            *slot = hk;
            total += hk;
        }
        total
    }

    /// Hazard vector `h` and total hazard `h0` at state `x`.
    pub fn hazards(&self, x: &[i64], params: &RateParams) -> Result<(Vec<f64>, f64)> {
        self.check_state(x)?;
        check_dim("rate constants", self.reaction_count(), params.c.len())?;
        let mut h = vec![0.0; self.reaction_count()];
        let h0 = self.hazards_into(x, &params.c, &mut h);
        Ok((h, h0))
    }

    /// Reactions whose hazard may change when `reaction` fires.
    #[inline]
    pub(crate) fn dependents(&self, reaction: usize) -> &[usize] {
        &self.dependents[reaction]
    }

    /// In-place `x += S[:, reaction]` without feasibility checks.
    #[inline]
    pub(crate) fn fire(&self, x: &mut [i64], reaction: usize) {
        for &(s, d) in &self.changes[reaction] {
            x[s] += d;
        }
    }

    /// Returns `x + S[:, reaction]`, rejecting updates that would go negative.
    pub fn apply_reaction(&self, x: &StateVector, reaction: usize) -> Result<StateVector> {
        check_dim("state vector", self.species_count(), x.len())?;
        if reaction >= self.reaction_count() {
            return Err(SkmError::DimensionMismatch {
                context: "reaction index",
                expected: self.reaction_count(),
                got: reaction,
            });
        }
        let mut next = x.0.clone();
        self.fire(&mut next, reaction);
        if let Some(species) = next.iter().position(|&n| n < 0) {
            return Err(SkmError::InvalidTransition { reaction, species });
        }
        Ok(StateVector(next))
    }

    /// Declarative JSON description of the network.
    pub fn to_document(&self) -> NetworkDocument {
        let v = self.species_count();
        let coeff_map = |row: &[u32]| -> BTreeMap<String, u32> {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| (self.species_names[s].clone(), c))
                .collect()
        };
        NetworkDocument {
            format_version: NETWORK_FORMAT_VERSION,
            species: self.species_names.clone(),
            reactions: (0..self.reaction_count())
                .map(|r| ReactionDocument {
                    name: self.reaction_names[r].clone(),
                    reactants: coeff_map(&self.reactants[r * v..(r + 1) * v]),
                    products: coeff_map(&self.products[r * v..(r + 1) * v]),
                })
                .collect(),
            conservation_laws: self
                .conservation_laws
                .iter()
                .map(|law| ConservationDocument {
                    coefficients: law
                        .coefficients
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0)
                        .map(|(s, &c)| (self.species_names[s].clone(), c))
                        .collect(),
                    constant: law.constant,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.format_version != NETWORK_FORMAT_VERSION {
            return Err(SkmError::SchemaMismatch(format!(
                "network format version {} (expected {NETWORK_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let v = doc.species.len();
        let index: BTreeMap<&str, usize> = doc
            .species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if index.len() != v {
            return Err(SkmError::InvalidNetwork("duplicate species name".into()));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| SkmError::InvalidNetwork(format!("unknown species `{name}`")))
        };

        let k = doc.reactions.len();
        let mut reactants = vec![0u32; k * v];
        let mut products = vec![0u32; k * v];
        for (r, reaction) in doc.reactions.iter().enumerate() {
            for (name, &c) in &reaction.reactants {
                reactants[r * v + lookup(name)?] = c;
            }
            for (name, &c) in &reaction.products {
                products[r * v + lookup(name)?] = c;
            }
        }
        let laws = doc
            .conservation_laws
            .iter()
            .map(|law| {
                let mut coefficients = vec![0i64; v];
                for (name, &c) in &law.coefficients {
                    coefficients[lookup(name)?] = c;
                }
                Ok(ConservationLaw {
                    coefficients,
                    constant: law.constant,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            doc.species.clone(),
            doc.reactions.iter().map(|r| r.name.clone()).collect(),
            reactants,
            products,
            laws,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

fn binomial(n: i64, p: u32) -> f64 {
    let p = i64::from(p);
    if n < p {
        return 0.0;
    }
    (0..p).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format_version: u32,
    pub species: Vec<String>,
    pub reactions: Vec<ReactionDocument>,
    #[serde(default)]
    pub conservation_laws: Vec<ConservationDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionDocument {
    pub name: String,
    #[serde(default)]
    pub reactants: BTreeMap<String, u32>,
    #[serde(default)]
    pub products: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationDocument {
    pub coefficients: BTreeMap<String, i64>,
    pub constant: i64,
}

/// Number of gene copies in the prokaryotic model.
pub const PROKARYOTIC_GENE_COPIES: i64 = 10;

/// Species index constants for the prokaryotic autoregulatory network.
pub mod prokaryotic {
    pub const RNA: usize = 0;
    pub const P: usize = 1;
    pub const P2: usize = 2;
    pub const DNA_P2: usize = 3;
    pub const DNA: usize = 4;

    /// True rate constants used to generate synthetic data.
    pub const TRUE_RATES: [f64; 8] = [0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1];
    /// Initial populations, also the means of the Poisson initial prior.
    pub const INITIAL_STATE: [i64; 5] = [8, 8, 8, 5, 5];
    pub const THETA_LOWER: f64 = -7.0;
    pub const THETA_UPPER: f64 = 2.0;
    pub const DELTA: f64 = 1.0;
    pub const NOISE_VARIANCE: f64 = 4.0;
}

/// The five-species, eight-reaction prokaryotic autoregulatory network,
/// species ordered `[RNA, P, P2, DNA_P2, DNA]`.
pub fn build_prokaryotic() -> ReactionNetwork {
    use prokaryotic::*;
    const V: usize = 5;
    type Side = &'static [(usize, u32)];
    // (reactants, products) per reaction.
    let layout: [(Side, Side); 8] = [
        (&[(DNA, 1), (P2, 1)], &[(DNA_P2, 1)]),
        (&[(DNA_P2, 1)], &[(DNA, 1), (P2, 1)]),
        (&[(DNA, 1)], &[(DNA, 1), (RNA, 1)]),
        (&[(RNA, 1)], &[(RNA, 1), (P, 1)]),
        (&[(P, 2)], &[(P2, 1)]),
        (&[(P2, 1)], &[(P, 2)]),
        (&[(RNA, 1)], &[]),
        (&[(P, 1)], &[]),
    ];
    let mut reactants = vec![0u32; 8 * V];
    let mut products = vec![0u32; 8 * V];
    for (r, (lhs, rhs)) in layout.iter().enumerate() {
        for &(s, c) in *lhs {
            reactants[r * V + s] = c;
        }
        for &(s, c) in *rhs {
            products[r * V + s] = c;
        }
    }
    ReactionNetwork::new(
        ["RNA", "P", "P2", "DNA_P2", "DNA"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        (1..=8).map(|r| format!("r{r}")).collect(),
        reactants,
        products,
        vec![ConservationLaw {
            coefficients: vec![0, 0, 0, 1, 1],
            constant: PROKARYOTIC_GENE_COPIES,
        }],
    )
    .expect("prokaryotic network is well formed")
}

/// Rate constants `c` and their natural logarithms `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub c: Vec<f64>,
    pub theta: Vec<f64>,
}

impl RateParams {
    pub fn from_rates(c: Vec<f64>) -> Result<Self> {
        if c.iter().any(|&ck| !(ck > 0.0 && ck.is_finite())) {
            return Err(SkmError::Precondition(
                "rate constants must be positive and finite".into(),
            ));
        }
        let theta = c.iter().map(|ck| ck.ln()).collect();
        Ok(Self { c, theta })
    }

    pub fn from_theta(theta: Vec<f64>) -> Self {
        let c = theta.iter().map(|t| t.exp()).collect();
        Self { c, theta }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

/// Prior over the initial populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialPrior {
    /// Independent Poisson counts with the given means.
    Poisson { means: Vec<f64> },
    /// A finite list of states with probabilities (small enumerable models).
    Categorical {
        states: Vec<Vec<i64>>,
        probabilities: Vec<f64>,
    },
}

impl InitialPrior {
    pub fn dimension(&self) -> usize {
        match self {
            Self::Poisson { means } => means.len(),
            Self::Categorical { states, .. } => states.first().map_or(0, Vec::len),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Poisson { means } => {
                if means.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                    return Err(SkmError::InvalidPrior("Poisson means must be > 0".into()));
                }
            }
            Self::Categorical {
                states,
                probabilities,
            } => {
                check_dim("categorical prior", states.len(), probabilities.len())?;
                let dim = self.dimension();
                if states.is_empty()
                    || states.iter().any(|s| s.len() != dim || s.iter().any(|&n| n < 0))
                {
                    return Err(SkmError::InvalidPrior("malformed categorical states".into()));
                }
                let total: f64 = probabilities.iter().sum();
                if probabilities.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(SkmError::InvalidPrior(
                        "categorical probabilities must be a distribution".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Draws one initial state into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [i64]) {
        match self {
            Self::Poisson { means } => {
                for (slot, &m) in out.iter_mut().zip(means) {
                    let d = Poisson::new(m).expect("validated mean");
                    *slot = d.sample(rng) as i64;
                }
            }
            Self::Categorical {
                states,
                probabilities,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = states.len() - 1;
                for (i, p) in probabilities.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.copy_from_slice(&states[pick]);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        let mut x = vec![0; self.dimension()];
        self.sample_into(rng, &mut x);
        StateVector(x)
    }
}

/// Independent uniform priors on the log-rates plus the initial-state prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta_bounds: Vec<(f64, f64)>,
    pub x0: InitialPrior,
}

impl PriorSpec {
    pub fn new(theta_bounds: Vec<(f64, f64)>, x0: InitialPrior) -> Result<Self> {
        if let Some(k) = theta_bounds.iter().position(|(lo, hi)| !(lo < hi)) {
            return Err(SkmError::InvalidPrior(format!(
                "bounds for component {k} are not increasing"
            )));
        }
        x0.validate()?;
        Ok(Self { theta_bounds, x0 })
    }

    /// `U(-7, 2)` on every log-rate and Poisson(`[8,8,8,5,5]`) initial counts.
    pub fn prokaryotic() -> Self {
        use prokaryotic::*;
        Self::new(
            vec![(THETA_LOWER, THETA_UPPER); 8],
            InitialPrior::Poisson {
                means: INITIAL_STATE.iter().map(|&x| x as f64).collect(),
            },
        )
        .expect("prokaryotic prior is well formed")
    }

    pub fn dimension(&self) -> usize {
        self.theta_bounds.len()
    }

    /// Log-density of component `k` at `value`; the support is open.
    pub fn log_prior_component(&self, k: usize, value: f64) -> f64 {
        let (lo, hi) = self.theta_bounds[k];
        if value > lo && value < hi {
            -(hi - lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Joint log-density of the log-rates, `-inf` outside the box.
    pub fn log_prior_theta(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(k, &t)| self.log_prior_component(k, t))
            .sum()
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.theta_bounds
            .iter()
            .map(|&(lo, hi)| sample_open_uniform(rng, lo, hi))
            .collect()
    }

    /// Draws `(θ, x0)` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, StateVector) {
        let theta = self.sample_theta(rng);
        let x0 = self.x0.sample(rng);
        (theta, x0)
    }
}

/// Uniform draw on the open interval `(lo, hi)`.
pub(crate) fn sample_open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        let t = lo + (hi - lo) * u;
        if t > lo && t < hi {
            return t;
        }
    }
}

/// Linear-Gaussian observation operator `y = M x + w`, `w ~ N(0, σ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
    noise_variance: f64,
}

impl ObservationModel {
    /// `matrix` is `rows × cols`, row-major.
    pub fn new(rows: usize, cols: usize, matrix: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(SkmError::InvalidObservationModel(
                "observation matrix must be non-empty".into(),
            ));
        }
        check_dim("observation matrix", rows * cols, matrix.len())?;
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(SkmError::InvalidObservationModel(
                "noise variance must be positive".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            matrix,
            noise_variance,
        })
    }

    /// Every species observed: `M = I_V`.
    pub fn complete(species: usize, noise_variance: f64) -> Result<Self> {
        let mut m = vec![0.0; species * species];
        for i in 0..species {
            m[i * species + i] = 1.0;
        }
        Self::new(species, species, m, noise_variance)
    }

    /// Prokaryotic partial observation: total protein `x_P + 2 x_P2`.
    pub fn prokaryotic_partial(noise_variance: f64) -> Result<Self> {
        Self::new(1, 5, vec![0.0, 1.0, 2.0, 0.0, 0.0], noise_variance)
    }

    pub fn obs_dim(&self) -> usize {
        self.rows
    }

    pub fn state_dim(&self) -> usize {
        self.cols
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `M x` into `out`.
    #[inline]
    pub fn project_into(&self, x: &[i64], out: &mut [f64]) {
        for (r, slot) in out.iter_mut().enumerate() {
            let row = &self.matrix[r * self.cols..(r + 1) * self.cols];
            *slot = row.iter().zip(x).map(|(m, &xi)| m * xi as f64).sum();
        }
    }

    pub fn project(&self, x: &[i64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.project_into(x, &mut out);
        out
    }
}

/// Which log-rate components are inferred; the others stay at fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    /// Full-length θ; entries at free indices are placeholders.
    pub base: Vec<f64>,
    pub free: Vec<usize>,
}

impl ParameterSpace {
    /// All components free.
    pub fn all(dimension: usize) -> Self {
        Self {
            base: vec![0.0; dimension],
            free: (0..dimension).collect(),
        }
    }

    /// Only the listed components are free; the rest are pinned to `base`.
    pub fn pinned(base: Vec<f64>, free: Vec<usize>) -> Result<Self> {
        if free.is_empty() {
            return Err(SkmError::InvalidConfig("no free parameters".into()));
        }
        let mut sorted = free.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != free.len() || sorted.iter().any(|&k| k >= base.len()) {
            return Err(SkmError::InvalidConfig("invalid free-parameter indices".into()));
        }
        Ok(Self { base, free })
    }

    pub fn full_dim(&self) -> usize {
        self.base.len()
    }

    pub fn free_dim(&self) -> usize {
        self.free.len()
    }

    pub fn embed(&self, free_values: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for (&k, &v) in self.free.iter().zip(free_values) {
            theta[k] = v;
        }
        theta
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&k| theta[k]).collect()
    }

    /// Prior log-density of the free components only.
    pub fn log_prior(&self, priors: &PriorSpec, free_values: &[f64]) -> f64 {
        self.free
            .iter()
            .zip(free_values)
            .map(|(&k, &v)| priors.log_prior_component(k, v))
            .sum()
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, priors: &PriorSpec, rng: &mut R) -> Vec<f64> {
        self.free
            .iter()
            .map(|&k| {
                let (lo, hi) = priors.theta_bounds[k];
                sample_open_uniform(rng, lo, hi)
            })
            .collect()
    }
}

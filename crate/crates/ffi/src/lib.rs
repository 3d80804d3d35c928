//! C interface to `skm-core`.
//!
//! Networks and observation records are opaque heap handles created by a
//! `skm_*_new`-style constructor and released with the matching `_free`.
//! Every fallible call returns an [`SkmStatus`]; on failure the message is
//! kept per thread and can be copied out with [`skm_last_error_message`].
//! Output buffers are always caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use skm_core::diagnostics::ness_is;
use skm_core::filter::{run_filter, FilterOptions};
use skm_core::gillespie::{simulate_trajectory, ObservationSet};
use skm_core::model::{build_prokaryotic, InitialPrior, ObservationModel, ReactionNetwork, StateVector};
use skm_core::npmc::clip_weights;
use skm_core::rng::from_seed;
use skm_core::SkmError;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidModel = 4,
    /// Event cap hit, non-finite hazard or an impossible transition.
    Simulation = 5,
    /// Filter or weight degeneracy.
    Degenerate = 6,
    Parse = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

/// Opaque reaction network.
pub struct SkmNetwork {
    inner: ReactionNetwork,
}

/// Opaque observation record with its observation model.
pub struct SkmObservations {
    inner: ObservationSet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &SkmError) -> SkmStatus {
    match err {
        SkmError::DimensionMismatch { .. } => SkmStatus::DimensionMismatch,
        SkmError::InvalidNetwork(_) | SkmError::InvalidPrior(_) | SkmError::InvalidObservationModel(_) => {
            SkmStatus::InvalidModel
        }
        SkmError::InvalidConfig(_) | SkmError::Precondition(_) => SkmStatus::InvalidArgument,
        SkmError::InvalidTransition { .. } | SkmError::NonFiniteHazard { .. } | SkmError::EventCapExceeded { .. } => {
            SkmStatus::Simulation
        }
        SkmError::DegenerateFilter | SkmError::DegeneratePopulation => SkmStatus::Degenerate,
        SkmError::Json(_) | SkmError::Parse(_) | SkmError::SchemaMismatch(_) => SkmStatus::Parse,
        _ => SkmStatus::Internal,
    }
}

struct Failure(SkmStatus, String);

impl From<SkmError> for Failure {
    fn from(e: SkmError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: SkmStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.to_string()))
}

/// Runs `f`, records any error or panic, and maps it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SkmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SkmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside skm".into());
            SkmStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SkmStatus::NullPointer, &format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(SkmStatus::NullPointer, &format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SkmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn network<'a>(p: *const SkmNetwork) -> Result<&'a ReactionNetwork, Failure> {
    p.as_ref()
        .map(|n| &n.inner)
        .ok_or_else(|| Failure(SkmStatus::NullPointer, "network handle is null".into()))
}

fn product(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(SkmStatus::InvalidArgument, "buffer size overflows".into()))
}

fn expect_len(what: &str, expected: usize, got: usize) -> Result<(), Failure> {
    if expected != got {
        return fail(
            SkmStatus::DimensionMismatch,
            &format!("{what}: expected {expected}, got {got}"),
        );
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length in bytes, excluding
/// the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn skm_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn skm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The five-species, eight-reaction prokaryotic auto-regulation network.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`skm_network_free`].
#[no_mangle]
pub unsafe extern "C" fn skm_network_prokaryotic(out: *mut *mut SkmNetwork) -> SkmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(SkmNetwork {
            inner: build_prokaryotic(),
        }));
        Ok(())
    })
}

/// Parses a network from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skm_network_from_json(json: *const c_char, out: *mut *mut SkmNetwork) -> SkmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if json.is_null() {
            return fail(SkmStatus::NullPointer, "json is null");
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Failure(SkmStatus::Parse, "json is not UTF-8".into()))?;
        let inner = ReactionNetwork::from_json(text)?;
        *out = Box::into_raw(Box::new(SkmNetwork { inner }));
        Ok(())
    })
}

/// Writes the network's JSON document into `buf` (NUL-terminated). `written`
/// receives the length excluding the terminator; if `capacity` is too small
/// nothing is written and `BufferTooSmall` is returned with `written` set to
/// the required length.
///
/// # Safety
/// `net` must be a live handle, `buf` must hold `capacity` bytes (or be null
/// when `capacity` is 0) and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn skm_network_to_json(
    net: *const SkmNetwork,
    buf: *mut c_char,
    capacity: usize,
    written: *mut usize,
) -> SkmStatus {
    guard(|| {
        let net = network(net)?;
        let written = out_ref(written, "written")?;
        let text = net.to_json()?;
        *written = text.len();
        if capacity <= text.len() {
            return fail(SkmStatus::BufferTooSmall, "buffer too small for network JSON");
        }
        let dst = slice_mut(buf.cast::<u8>(), capacity, "buf")?;
        dst[..text.len()].copy_from_slice(text.as_bytes());
        dst[text.len()] = 0;
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skm_network_free(net: *mut SkmNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Species count V, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skm_network_species_count(net: *const SkmNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.species_count())
}

/// Reaction count K, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skm_network_reaction_count(net: *const SkmNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.reaction_count())
}

/// Mass-action hazards `h_k(x, c)` for state `x` (length V) and rate
/// constants `rates` (length K). `hazards` receives K values and `total`
/// (optional) their sum.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `total` may be null.
#[no_mangle]
pub unsafe extern "C" fn skm_network_hazards(
    net: *const SkmNetwork,
    x: *const i64,
    species: usize,
    rates: *const f64,
    reactions: usize,
    hazards: *mut f64,
    total: *mut f64,
) -> SkmStatus {
    guard(|| {
        let net = network(net)?;
        expect_len("state length", net.species_count(), species)?;
        expect_len("rate count", net.reaction_count(), reactions)?;
        let x = slice(x, species, "x")?;
        let rates = slice(rates, reactions, "rates")?;
        let h = slice_mut(hazards, reactions, "hazards")?;
        net.check_state(x)?;
        let sum = net.hazards_into(x, rates, h);
        if let Some(t) = total.as_mut() {
            *t = sum;
        }
        Ok(())
    })
}

/// Gillespie simulation from `x0` over `steps` intervals of length `delta`.
/// `states` receives `steps × V` counts, row `n` being the state at
/// `(n + 1)·delta`. The same seed always gives the same path.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn skm_simulate(
    net: *const SkmNetwork,
    rates: *const f64,
    reactions: usize,
    x0: *const i64,
    species: usize,
    delta: f64,
    steps: usize,
    seed: u64,
    states: *mut i64,
) -> SkmStatus {
    guard(|| {
        let net = network(net)?;
        expect_len("rate count", net.reaction_count(), reactions)?;
        expect_len("state length", net.species_count(), species)?;
        let rates = slice(rates, reactions, "rates")?;
        let x0 = StateVector::new(slice(x0, species, "x0")?.to_vec());
        let out = slice_mut(states, product(steps, species)?, "states")?;
        let traj = simulate_trajectory(net, rates, &x0, delta, steps, &mut from_seed(seed))?;
        for (row, x) in out.chunks_exact_mut(species).zip(&traj.states) {
            row.copy_from_slice(x.as_slice());
        }
        Ok(())
    })
}

/// Observation record `y` (`n × d`, row-major) for the model
/// `y = M x + N(0, σ² I)` with `M` given as `d × species`, row-major.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn skm_observations_new(
    y: *const f64,
    n: usize,
    d: usize,
    matrix: *const f64,
    species: usize,
    noise_variance: f64,
    delta: f64,
    out: *mut *mut SkmObservations,
) -> SkmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = ObservationModel::new(d, species, slice(matrix, product(d, species)?, "matrix")?.to_vec(), noise_variance)?;
        let rows = if d == 0 {
            Vec::new()
        } else {
            slice(y, product(n, d)?, "y")?.chunks_exact(d).map(<[f64]>::to_vec).collect()
        };
        let inner = ObservationSet::new(rows, model, delta)?;
        *out = Box::into_raw(Box::new(SkmObservations { inner }));
        Ok(())
    })
}

/// # Safety
/// `obs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skm_observations_free(obs: *mut SkmObservations) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

/// Bootstrap particle-filter estimate of `ln p(y | c)` with `particles`
/// particles and independent Poisson initial counts with means
/// `initial_means` (length V). A degenerate filter yields `-inf` and `Ok`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn skm_filter_log_likelihood(
    net: *const SkmNetwork,
    rates: *const f64,
    reactions: usize,
    initial_means: *const f64,
    species: usize,
    obs: *const SkmObservations,
    particles: usize,
    seed: u64,
    log_likelihood: *mut f64,
) -> SkmStatus {
    guard(|| {
        let net = network(net)?;
        let obs = obs
            .as_ref()
            .map(|o| &o.inner)
            .ok_or_else(|| Failure(SkmStatus::NullPointer, "observation handle is null".into()))?;
        let result = out_ref(log_likelihood, "log_likelihood")?;
        expect_len("rate count", net.reaction_count(), reactions)?;
        let rates = slice(rates, reactions, "rates")?;
        let initial = InitialPrior::Poisson {
            means: slice(initial_means, species, "initial_means")?.to_vec(),
        };
        let out = run_filter(net, rates, &initial, obs, &FilterOptions::new(particles), &mut from_seed(seed))?;
        *result = out.log_marginal_likelihood;
        Ok(())
    })
}

/// Normalised clipped weights from `m` log-weights: the `clip` largest are
/// flattened to the `clip`-th largest before normalising.
///
/// # Safety
/// `log_weights` and `weights` must each hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn skm_clip_weights(
    log_weights: *const f64,
    m: usize,
    clip: usize,
    weights: *mut f64,
) -> SkmStatus {
    guard(|| {
        let lw = slice(log_weights, m, "log_weights")?;
        let out = slice_mut(weights, m, "weights")?;
        out.copy_from_slice(&clip_weights(lw, clip)?);
        Ok(())
    })
}

/// Normalised effective sample size `1 / (M Σ w²)` of `m` normalised weights.
///
/// # Safety
/// `weights` must hold `m` values and `ness` be valid.
#[no_mangle]
pub unsafe extern "C" fn skm_ness_is(weights: *const f64, m: usize, ness: *mut f64) -> SkmStatus {
    guard(|| {
        if m == 0 {
            return fail(SkmStatus::InvalidArgument, "no weights");
        }
        let w = slice(weights, m, "weights")?;
        *out_ref(ness, "ness")? = ness_is(w);
        Ok(())
    })
}

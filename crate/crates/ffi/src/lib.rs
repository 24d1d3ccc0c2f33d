//! C ABI over `predmdp`.
//!
//! Objects are opaque handles created by `*_new`-style functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PredmdpStatus`]; on failure `predmdp_last_error_message` describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;
use std::sync::Arc;

use predmdp::bola::{compute_budget, BudgetInputs};
use predmdp::envs::{build_random_mdp, RewardLaw};
use predmdp::mdp::text::parse_text;
use predmdp::mdp::{classical_value_iteration, TabularMdp};
use predmdp::planner::{self, BayesOperator, ScenarioSet, DEFAULT_ENUMERATION_CAP};
use predmdp::prediction::{NoiseChannel, PredictionOracle, PredictionSpec};
use predmdp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredmdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMdp = 3,
    ShapeMismatch = 4,
    NonConvergence = 5,
    EnumerationBudget = 6,
    Precondition = 7,
    Parse = 8,
    Io = 9,
    /// A caller-supplied buffer is too small.
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

pub const PREDMDP_NOISE_NONE: u32 = 0;
/// `param` is the mixing weight `η`.
pub const PREDMDP_NOISE_UNIFORM_MIX: u32 = 1;
/// `param` is the Dirichlet concentration.
pub const PREDMDP_NOISE_DIRICHLET_JITTER: u32 = 2;

/// Opaque validated MDP.
pub struct PredmdpMdp {
    inner: Arc<TabularMdp>,
}

/// Opaque weighted set of prediction batches.
pub struct PredmdpScenarios {
    inner: ScenarioSet,
}

/// Opaque prediction oracle with its own RNG stream.
pub struct PredmdpOracle {
    mdp: Arc<TabularMdp>,
    inner: PredictionOracle,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PredmdpBudgetInputs {
    pub gamma: f64,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_predictable: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PredmdpBudget {
    pub n1: u64,
    pub n2: u64,
    pub d1: u64,
    pub d2: u64,
    pub n1_raw: f64,
    pub n2_raw: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> PredmdpStatus {
    match err {
        Error::InvalidArgument { .. } => PredmdpStatus::InvalidArgument,
        Error::InvalidMdp(_) => PredmdpStatus::InvalidMdp,
        Error::ShapeMismatch(_) => PredmdpStatus::ShapeMismatch,
        Error::NonConvergence { .. } => PredmdpStatus::NonConvergence,
        Error::EnumerationBudget { .. } => PredmdpStatus::EnumerationBudget,
        Error::Precondition(_) => PredmdpStatus::Precondition,
        Error::Parse { .. } => PredmdpStatus::Parse,
        Error::Io { .. } => PredmdpStatus::Io,
        _ => PredmdpStatus::Other,
    }
}

/// Internal failure carrying a status and a message.
struct Failure(PredmdpStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PredmdpStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PredmdpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PredmdpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {message}"));
            PredmdpStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn slice_out<'a, T>(data: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(Failure(
            PredmdpStatus::BufferTooSmall,
            format!("`{what}` holds {len} entries, need {needed}"),
        ));
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(data, needed))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn mdp_ref<'a>(mdp: *const PredmdpMdp) -> Result<&'a PredmdpMdp, Failure> {
    mdp.as_ref().ok_or_else(|| null("mdp"))
}

fn noise_channel(kind: u32, param: f64) -> Result<NoiseChannel, Failure> {
    let channel = match kind {
        PREDMDP_NOISE_NONE => NoiseChannel::None,
        PREDMDP_NOISE_UNIFORM_MIX => NoiseChannel::UniformMix { eta: param },
        PREDMDP_NOISE_DIRICHLET_JITTER => NoiseChannel::DirichletJitter { concentration: param },
        other => {
            return Err(Failure(
                PredmdpStatus::InvalidArgument,
                format!("unknown noise kind {other}"),
            ))
        }
    };
    channel.validate()?;
    Ok(channel)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn predmdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn predmdp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an MDP from row-major tables: `transition[(s*A + a)*S + s']`,
/// `reward[s*A + a]`.
///
/// # Safety
/// `transition` and `reward` must point to `S*A*S` and `S*A` doubles.
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_new(
    num_states: usize,
    num_actions: usize,
    transition: *const f64,
    reward: *const f64,
    discount: f64,
    out: *mut *mut PredmdpMdp,
) -> PredmdpStatus {
    guard(|| {
        let cells = num_states
            .checked_mul(num_actions)
            .ok_or_else(|| Failure(PredmdpStatus::InvalidArgument, "table size overflows".into()))?;
        let t = slice_in(transition, cells.saturating_mul(num_states), "transition")?;
        let r = slice_in(reward, cells, "reward")?;
        let mdp = TabularMdp::new(num_states, num_actions, t.to_vec(), r.to_vec(), discount)?;
        write_out(out, PredmdpMdp { inner: Arc::new(mdp) })
    })
}

/// Parses the plain-text MDP format.
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_from_text(text: *const c_char, out: *mut *mut PredmdpMdp) -> PredmdpStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let source = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| Failure(PredmdpStatus::Parse, format!("text is not UTF-8: {e}")))?;
        let mdp = parse_text(source, std::path::Path::new("<ffi>"))?;
        write_out(out, PredmdpMdp { inner: Arc::new(mdp) })
    })
}

/// Random MDP with Dirichlet(1) rows and Uniform[0,1] rewards.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_random(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    seed: u64,
    out: *mut *mut PredmdpMdp,
) -> PredmdpStatus {
    guard(|| {
        let mdp = build_random_mdp(num_states, num_actions, discount, RewardLaw::Uniform, seed)?;
        write_out(out, PredmdpMdp { inner: Arc::new(mdp) })
    })
}

/// # Safety
/// `mdp` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_free(mdp: *mut PredmdpMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_num_states(mdp: *const PredmdpMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.inner.num_states())
}

/// # Safety
/// `mdp` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_num_actions(mdp: *const PredmdpMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.inner.num_actions())
}

/// # Safety
/// `mdp` must be a valid handle or null (returns NaN).
#[no_mangle]
pub unsafe extern "C" fn predmdp_mdp_discount(mdp: *const PredmdpMdp) -> f64 {
    mdp.as_ref().map_or(f64::NAN, |m| m.inner.discount())
}

/// Classical value iteration; writes `|S|` values.
///
/// # Safety
/// `values` must hold `values_len` doubles; `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn predmdp_value_iteration(
    mdp: *const PredmdpMdp,
    tol: f64,
    max_iters: usize,
    values: *mut f64,
    values_len: usize,
    iterations: *mut usize,
) -> PredmdpStatus {
    guard(|| {
        let mdp = mdp_ref(mdp)?;
        let out = slice_out(values, values_len, mdp.inner.num_states(), "values")?;
        let result = classical_value_iteration(&mdp.inner, tol, max_iters)?;
        out.copy_from_slice(&result.values.into_inner());
        if let Some(it) = iterations.as_mut() {
            *it = result.iterations;
        }
        Ok(())
    })
}

unsafe fn spec_from(
    mdp: &TabularMdp,
    horizon: usize,
    actions: *const usize,
    num_predictable: usize,
) -> Result<PredictionSpec, Failure> {
    let actions = slice_in(actions, num_predictable, "predictable_actions")?;
    Ok(PredictionSpec::new(horizon, actions.to_vec(), mdp.num_actions())?)
}

/// Draws `count` prediction batches from a fresh oracle.
///
/// # Safety
/// `predictable_actions` must hold `num_predictable` indices.
#[no_mangle]
pub unsafe extern "C" fn predmdp_scenarios_sample(
    mdp: *const PredmdpMdp,
    horizon: usize,
    predictable_actions: *const usize,
    num_predictable: usize,
    noise_kind: u32,
    noise_param: f64,
    count: usize,
    seed: u64,
    out: *mut *mut PredmdpScenarios,
) -> PredmdpStatus {
    guard(|| {
        let mdp = mdp_ref(mdp)?;
        let spec = spec_from(&mdp.inner, horizon, predictable_actions, num_predictable)?;
        let channel = noise_channel(noise_kind, noise_param)?;
        let oracle = PredictionOracle::new(mdp.inner.clone(), spec, channel, seed)?;
        let set = ScenarioSet::uniform(oracle.take(count).collect())?;
        write_out(out, PredmdpScenarios { inner: set })
    })
}

/// Exact law of accurate predictions, enumerated up to `cap` batches.
///
/// # Safety
/// `predictable_actions` must hold `num_predictable` indices.
#[no_mangle]
pub unsafe extern "C" fn predmdp_scenarios_exact(
    mdp: *const PredmdpMdp,
    horizon: usize,
    predictable_actions: *const usize,
    num_predictable: usize,
    cap: usize,
    out: *mut *mut PredmdpScenarios,
) -> PredmdpStatus {
    guard(|| {
        let mdp = mdp_ref(mdp)?;
        let spec = spec_from(&mdp.inner, horizon, predictable_actions, num_predictable)?;
        let set = ScenarioSet::exact_accurate_law(&mdp.inner, &spec, cap)?;
        write_out(out, PredmdpScenarios { inner: set })
    })
}

/// # Safety
/// `scenarios` must be a valid handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn predmdp_scenarios_len(scenarios: *const PredmdpScenarios) -> usize {
    scenarios.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `scenarios` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn predmdp_scenarios_free(scenarios: *mut PredmdpScenarios) {
    if !scenarios.is_null() {
        drop(Box::from_raw(scenarios));
    }
}

/// Fixed point of the Bayesian Bellman operator; writes `|S|` values.
///
/// # Safety
/// Handles must be valid; `values` must hold `values_len` doubles;
/// `iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn predmdp_bayes_value_iteration(
    mdp: *const PredmdpMdp,
    scenarios: *const PredmdpScenarios,
    tol: f64,
    max_iters: usize,
    values: *mut f64,
    values_len: usize,
    iterations: *mut usize,
) -> PredmdpStatus {
    guard(|| {
        let mdp = mdp_ref(mdp)?;
        let scenarios = scenarios.as_ref().ok_or_else(|| null("scenarios"))?;
        let out = slice_out(values, values_len, mdp.inner.num_states(), "values")?;
        let result = BayesOperator::new(&mdp.inner, &scenarios.inner)?.solve(tol, max_iters)?;
        out.copy_from_slice(&result.values);
        if let Some(it) = iterations.as_mut() {
            *it = result.iterations;
        }
        Ok(())
    })
}

/// Prediction oracle over `mdp`; the handle keeps the MDP alive.
///
/// # Safety
/// `predictable_actions` must hold `num_predictable` indices.
#[no_mangle]
pub unsafe extern "C" fn predmdp_oracle_new(
    mdp: *const PredmdpMdp,
    horizon: usize,
    predictable_actions: *const usize,
    num_predictable: usize,
    noise_kind: u32,
    noise_param: f64,
    seed: u64,
    out: *mut *mut PredmdpOracle,
) -> PredmdpStatus {
    guard(|| {
        let mdp = mdp_ref(mdp)?;
        let spec = spec_from(&mdp.inner, horizon, predictable_actions, num_predictable)?;
        let channel = noise_channel(noise_kind, noise_param)?;
        let inner = PredictionOracle::new(mdp.inner.clone(), spec, channel, seed)?;
        write_out(
            out,
            PredmdpOracle {
                mdp: mdp.inner.clone(),
                inner,
            },
        )
    })
}

/// Draws the next batch and plans `K` actions from `state` against it with
/// terminal values `terminal` (length `|S|`).
///
/// # Safety
/// `oracle` must be valid; `terminal` must hold `terminal_len` doubles;
/// `actions` must hold `actions_len` entries; `expected_return` may be null.
#[no_mangle]
pub unsafe extern "C" fn predmdp_oracle_plan(
    oracle: *mut PredmdpOracle,
    state: usize,
    terminal: *const f64,
    terminal_len: usize,
    actions: *mut usize,
    actions_len: usize,
    expected_return: *mut f64,
) -> PredmdpStatus {
    guard(|| {
        let oracle = oracle.as_mut().ok_or_else(|| null("oracle"))?;
        let ns = oracle.mdp.num_states();
        if terminal_len != ns {
            return Err(Failure(
                PredmdpStatus::ShapeMismatch,
                format!("terminal has {terminal_len} entries, |S| = {ns}"),
            ));
        }
        let terminal = slice_in(terminal, terminal_len, "terminal")?;
        let horizon = oracle.inner.spec().horizon();
        let out = slice_out(actions, actions_len, horizon, "actions")?;
        let batch = oracle.inner.next_batch();
        let plan = planner::plan(&oracle.mdp, &batch, state, terminal, DEFAULT_ENUMERATION_CAP)?;
        out.copy_from_slice(&plan.actions);
        if let Some(r) = expected_return.as_mut() {
            *r = plan.expected_return;
        }
        Ok(())
    })
}

/// # Safety
/// `oracle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn predmdp_oracle_free(oracle: *mut PredmdpOracle) {
    if !oracle.is_null() {
        drop(Box::from_raw(oracle));
    }
}

/// Closed-form sample budgets.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn predmdp_compute_budget(
    inputs: *const PredmdpBudgetInputs,
    out: *mut PredmdpBudget,
) -> PredmdpStatus {
    guard(|| {
        let i = inputs.as_ref().ok_or_else(|| null("inputs"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let b = compute_budget(&BudgetInputs {
            gamma: i.gamma,
            horizon: i.horizon,
            num_states: i.num_states,
            num_actions: i.num_actions,
            num_predictable: i.num_predictable,
            delta: i.delta,
            epsilon: i.epsilon,
            alpha: i.alpha,
        })?;
        *out = PredmdpBudget {
            n1: b.n1,
            n2: b.n2,
            d1: b.d1,
            d2: b.d2,
            n1_raw: b.n1_raw,
            n2_raw: b.n2_raw,
        };
        Ok(())
    })
}

//! C interface to the metatrace library.
//!
//! Objects are opaque handles created by `mt_*_new`/`mt_*_from_*` and released with the matching
//! `mt_*_free`. Every fallible call returns an [`MtStatus`]; on failure a message is kept per
//! thread and can be read with [`mt_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use metatrace::dp;
use metatrace::env::RingWorld;
use metatrace::harness::{run_and_aggregate, ExperimentConfig};
use metatrace::learners::{LearnerKind, LinearLearner, StepContext};
use metatrace::mdp::{DiscountFunction, FiniteMdp, TabularPolicy};
use metatrace::meta::{self, LambdaFunction, MetaStepInputs, UpdateOutcome};
use metatrace::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    Singular = 4,
    NotConverged = 5,
    Divergence = 6,
    Config = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtLearnerKind {
    TdLambda = 0,
    TrueOnlineTd = 1,
    TrueOnlineGtd = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtUpdateOutcome {
    Applied = 0,
    Cancelled = 1,
    Unchanged = 2,
}

/// Statistics at the successor state consumed by META and λ-greedy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MtMetaInputs {
    pub gamma_next: f64,
    pub rho_acc: f64,
    pub v_next: f64,
    pub e_g: f64,
    pub e_glambda: f64,
    pub var_glambda: f64,
    pub kappa: f64,
}

/// One transition for a learner step. `x_t` and `x_next` point at `dim` doubles each.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MtTransition {
    pub x_t: *const f64,
    pub x_next: *const f64,
    pub dim: usize,
    pub reward: f64,
    pub gamma_t: f64,
    pub gamma_next: f64,
    pub lambda_t: f64,
    pub lambda_next: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub struct MtMdp(FiniteMdp);
pub struct MtPolicy(TabularPolicy);
pub struct MtLambda(LambdaFunction);
pub struct MtLearner {
    kind: LearnerKind,
    inner: LinearLearner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MtStatus {
    match e {
        Error::InvalidMdp(_)
        | Error::InvalidPolicy(_)
        | Error::InvalidDiscount(_)
        | Error::AbsoluteContinuity { .. }
        | Error::ZeroBehaviorProbability { .. } => MtStatus::InvalidModel,
        Error::StateOutOfRange { .. } | Error::ShapeMismatch { .. } | Error::EnvTerminated => {
            MtStatus::InvalidArgument
        }
        Error::Singular(_) => MtStatus::Singular,
        Error::NotConverged { .. } | Error::NonTerminating(_) => MtStatus::NotConverged,
        Error::Divergence { .. } => MtStatus::Divergence,
        Error::Config(_) | Error::Json(_) => MtStatus::Config,
        Error::Io(_) | Error::Csv(_) => MtStatus::Io,
    }
}

struct Failure(MtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: MtStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MtStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(MtStatus::NullPointer, format!("{name} is null")))
}

unsafe fn as_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(MtStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MtStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(MtStatus::NullPointer, format!("{name} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MtStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(MtStatus::InvalidArgument, format!("{name}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(MtStatus::NullPointer, format!("{name} is null"));
    }
    out.write(value);
    Ok(())
}

fn copy_into(dst: &mut [f64], src: &[f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Error::ShapeMismatch { expected: src.len(), got: dst.len() }.into());
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn inputs(m: &MtMetaInputs) -> MetaStepInputs {
    MetaStepInputs {
        gamma_next: m.gamma_next,
        rho_acc: m.rho_acc,
        v_next: m.v_next,
        e_g: m.e_g,
        e_glambda: m.e_glambda,
        var_glambda: m.var_glambda,
        kappa: m.kappa,
    }
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length in bytes, or 0 when there is none.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn mt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Parses an MDP from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_mdp_from_json(json: *const c_char, out: *mut *mut MtMdp) -> MtStatus {
    guard(|| {
        let mdp = FiniteMdp::from_json_str(str_in(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(MtMdp(mdp))), "out")
    })
}

/// RingWorld with `n` non-terminal states (odd) as a finite MDP.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_mdp_ringworld(n: usize, out: *mut *mut MtMdp) -> MtStatus {
    guard(|| {
        let mdp = RingWorld::new(n)?.as_finite_mdp();
        write_out(out, Box::into_raw(Box::new(MtMdp(mdp))), "out")
    })
}

/// # Safety
/// `mdp` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_mdp_free(mdp: *mut MtMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn mt_mdp_n_states(mdp: *const MtMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_states())
}

/// # Safety
/// `mdp` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn mt_mdp_n_actions(mdp: *const MtMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_actions())
}

/// Policy from a row-major `n_states × n_actions` probability matrix.
///
/// # Safety
/// `probs` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_policy_new(
    mdp: *const MtMdp,
    probs: *const f64,
    len: usize,
    out: *mut *mut MtPolicy,
) -> MtStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        let p = slice_in(probs, len, "probs")?;
        let (n, k) = (m.n_states(), m.n_actions());
        if len != n * k {
            return Err(Error::ShapeMismatch { expected: n * k, got: len }.into());
        }
        let rows = p.chunks_exact(k.max(1)).map(<[f64]>::to_vec).collect();
        let policy = TabularPolicy::new(m, rows)?;
        write_out(out, Box::into_raw(Box::new(MtPolicy(policy))), "out")
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_policy_free(policy: *mut MtPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Exact values of `policy` under per-state discounts `gamma` (length n_states).
///
/// # Safety
/// `gamma` and `values` must hold `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn mt_solve_values(
    mdp: *const MtMdp,
    policy: *const MtPolicy,
    gamma: *const f64,
    values: *mut f64,
    n: usize,
) -> MtStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        let pi = &as_ref(policy, "policy")?.0;
        let g = DiscountFunction::new(m, slice_in(gamma, n, "gamma")?.to_vec())?;
        let v = dp::solve_values_direct(m, pi, &g)?;
        copy_into(slice_out(values, n, "values")?, &v.v)
    })
}

/// Normalized state frequencies of `policy`.
///
/// # Safety
/// `freq` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_solve_frequencies(
    mdp: *const MtMdp,
    policy: *const MtPolicy,
    freq: *mut f64,
    n: usize,
) -> MtStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        let pi = &as_ref(policy, "policy")?.0;
        let d = dp::solve_state_frequencies(m, pi, dp::DEFAULT_THETA, dp::DEFAULT_MAX_SWEEPS)?;
        copy_into(slice_out(freq, n, "freq")?, &d.d)
    })
}

/// ∂J/∂λ' at `lambda_next`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mt_meta_partial(lambda_next: f64, m: *const MtMetaInputs, out: *mut f64) -> MtStatus {
    guard(|| write_out(out, meta::meta_partial(lambda_next, &inputs(as_ref(m, "inputs")?)), "out"))
}

/// Minimizer of the one-step objective over [0, 1]; `degenerate` reports a vanishing denominator.
///
/// # Safety
/// Pointers must be valid; `degenerate` may be null.
#[no_mangle]
pub unsafe extern "C" fn mt_meta_minimizer(m: *const MtMetaInputs, out: *mut f64, degenerate: *mut bool) -> MtStatus {
    guard(|| {
        let (l, d) = meta::meta_minimizer_flagged(&inputs(as_ref(m, "inputs")?));
        if !degenerate.is_null() {
            degenerate.write(d);
        }
        write_out(out, l, "out")
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_lambda_greedy_target(v_next: f64, e_g: f64, var_g: f64, out: *mut f64) -> MtStatus {
    guard(|| write_out(out, meta::lambda_greedy_target(v_next, e_g, var_g), "out"))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_lambda_new(dim: usize, out: *mut *mut MtLambda) -> MtStatus {
    guard(|| write_out(out, Box::into_raw(Box::new(MtLambda(LambdaFunction::new(dim)))), "out"))
}

/// # Safety
/// `lambda` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_lambda_free(lambda: *mut MtLambda) {
    if !lambda.is_null() {
        drop(Box::from_raw(lambda));
    }
}

/// λ(x), clipped to [0, 1].
///
/// # Safety
/// `x` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_lambda_value(lambda: *const MtLambda, x: *const f64, dim: usize, out: *mut f64) -> MtStatus {
    guard(|| {
        let lf = &as_ref(lambda, "lambda")?.0;
        if dim != lf.w.len() {
            return Err(Error::ShapeMismatch { expected: lf.w.len(), got: dim }.into());
        }
        write_out(out, lf.value(slice_in(x, dim, "x")?), "out")
    })
}

/// One META step on λ at `x_next`.
///
/// # Safety
/// `x_next` must hold `dim` doubles; `outcome` may be null.
#[no_mangle]
pub unsafe extern "C" fn mt_meta_update(
    lambda: *mut MtLambda,
    x_next: *const f64,
    dim: usize,
    m: *const MtMetaInputs,
    outcome: *mut MtUpdateOutcome,
) -> MtStatus {
    guard(|| {
        let lf = &mut as_mut(lambda, "lambda")?.0;
        if dim != lf.w.len() {
            return Err(Error::ShapeMismatch { expected: lf.w.len(), got: dim }.into());
        }
        let r = meta::meta_update(lf, slice_in(x_next, dim, "x_next")?, &inputs(as_ref(m, "inputs")?));
        if !outcome.is_null() {
            outcome.write(match r {
                UpdateOutcome::Applied => MtUpdateOutcome::Applied,
                UpdateOutcome::Cancelled => MtUpdateOutcome::Cancelled,
                UpdateOutcome::Unchanged => MtUpdateOutcome::Unchanged,
            });
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_new(kind: MtLearnerKind, dim: usize, out: *mut *mut MtLearner) -> MtStatus {
    guard(|| {
        let kind = match kind {
            MtLearnerKind::TdLambda => LearnerKind::TdLambda,
            MtLearnerKind::TrueOnlineTd => LearnerKind::TrueOnlineTd,
            MtLearnerKind::TrueOnlineGtd => LearnerKind::TrueOnlineGtd,
        };
        let l = MtLearner { kind, inner: LinearLearner::for_kind(kind, dim) };
        write_out(out, Box::into_raw(Box::new(l)), "out")
    })
}

/// # Safety
/// `learner` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_free(learner: *mut MtLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Clears traces at an episode boundary.
///
/// # Safety
/// `learner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_reset_episode(learner: *mut MtLearner) -> MtStatus {
    guard(|| {
        as_mut(learner, "learner")?.inner.reset_episode();
        Ok(())
    })
}

/// Advances the learner on one transition; `delta` receives the TD error (may be null).
///
/// # Safety
/// `tr` must be valid and its feature pointers must hold `tr.dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_step(learner: *mut MtLearner, tr: *const MtTransition, delta: *mut f64) -> MtStatus {
    guard(|| {
        let l = as_mut(learner, "learner")?;
        let tr = as_ref(tr, "transition")?;
        if tr.dim != l.inner.dim() {
            return Err(Error::ShapeMismatch { expected: l.inner.dim(), got: tr.dim }.into());
        }
        let ctx = StepContext {
            x_t: slice_in(tr.x_t, tr.dim, "x_t")?,
            x_next: slice_in(tr.x_next, tr.dim, "x_next")?,
            r: tr.reward,
            gamma_t: tr.gamma_t,
            gamma_next: tr.gamma_next,
            lambda_t: tr.lambda_t,
            lambda_next: tr.lambda_next,
            rho: tr.rho,
            alpha: tr.alpha,
            beta: tr.beta,
        };
        let d = l.inner.step(l.kind, &ctx)?;
        if !delta.is_null() {
            delta.write(d);
        }
        Ok(())
    })
}

/// wᵀx.
///
/// # Safety
/// `x` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_value(learner: *const MtLearner, x: *const f64, dim: usize, out: *mut f64) -> MtStatus {
    guard(|| {
        let l = &as_ref(learner, "learner")?.inner;
        if dim != l.dim() {
            return Err(Error::ShapeMismatch { expected: l.dim(), got: dim }.into());
        }
        write_out(out, l.value(slice_in(x, dim, "x")?), "out")
    })
}

/// Copies the primary weights into `out`.
///
/// # Safety
/// `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn mt_learner_weights(learner: *const MtLearner, out: *mut f64, dim: usize) -> MtStatus {
    guard(|| {
        let l = &as_ref(learner, "learner")?.inner;
        copy_into(slice_out(out, dim, "out")?, &l.w)
    })
}

/// Runs an experiment config (JSON or TOML text) and returns the per-cell summaries as a JSON
/// array. Release the string with `mt_string_free`.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mt_run_experiment(config: *const c_char, out: *mut *mut c_char) -> MtStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(str_in(config, "config")?)?;
        let outcome = run_and_aggregate(&cfg)?;
        let json = serde_json::to_string(&outcome.summaries).map_err(Error::from)?;
        let c = CString::new(json).map_err(|e| Failure(MtStatus::Io, e.to_string()))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

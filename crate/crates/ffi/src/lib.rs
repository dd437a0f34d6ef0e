//! C ABI over the `bofn` library: registered problems and an ask/tell
//! optimizer behind opaque handles.
//!
//! Every function returns a [`BofnStatus`]; on failure the message is
//! available from [`bofn_last_error`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bofn::acquisition::{suggest, FlatGpModel, Method, SaaConfig, SuggestModel};
use bofn::benchmarks::{self, PROBLEM_IDS};
use bofn::harness::initial_design;
use bofn::netmodel::{EvaluationLog, NetworkModel};
use bofn::network::{evaluate_network, NetworkProblem};
use bofn::numerics::{mix_seed, project};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BofnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownProblem = 3,
    DimensionMismatch = 4,
    NoObservations = 5,
    ModelFailure = 6,
    AcquisitionFailure = 7,
    Panic = 8,
}

/// Acquisition method selector for [`bofn_optimizer_new`].
pub const BOFN_METHOD_EI_FN: u32 = 0;
pub const BOFN_METHOD_EI: u32 = 1;
pub const BOFN_METHOD_RANDOM: u32 = 2;

/// Opaque problem handle.
pub struct BofnProblem {
    inner: NetworkProblem,
}

/// Opaque ask/tell optimizer handle.
pub struct BofnOptimizer {
    problem: NetworkProblem,
    method: Method,
    saa: SaaConfig,
    design: Vec<Vec<f64>>,
    log: EvaluationLog,
    network: Option<NetworkModel>,
    fit_seed: u64,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

type FfiResult = Result<(), (BofnStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> BofnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BofnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BofnStatus::Panic
        }
    }
}

fn null(what: &str) -> (BofnStatus, String) {
    (BofnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (BofnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (BofnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, what: &str) -> FfiResult {
    if got == want {
        Ok(())
    } else {
        Err((BofnStatus::DimensionMismatch, format!("{what} has length {got}, expected {want}")))
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bofn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of registered problems.
#[no_mangle]
pub extern "C" fn bofn_problem_count() -> usize {
    PROBLEM_IDS.len()
}

/// Writes the NUL-terminated id of problem `index` into `buf` (capacity
/// `len` bytes).
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_id(index: usize, buf: *mut c_char, len: usize) -> BofnStatus {
    guard(|| {
        if buf.is_null() {
            return Err(null("buf"));
        }
        let id = PROBLEM_IDS
            .get(index)
            .ok_or((BofnStatus::InvalidArgument, format!("problem index {index} out of range")))?;
        if id.len() + 1 > len {
            return Err((BofnStatus::InvalidArgument, format!("buffer of {len} bytes too small for '{id}'")));
        }
        ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Creates a handle for the registered problem `id`.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_new(id: *const c_char, out: *mut *mut BofnProblem) -> BofnStatus {
    guard(|| {
        if id.is_null() {
            return Err(null("id"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let id = CStr::from_ptr(id)
            .to_str()
            .map_err(|_| (BofnStatus::InvalidArgument, "id is not valid UTF-8".to_string()))?;
        let inner = benchmarks::problem(id).map_err(|e| (BofnStatus::UnknownProblem, e.to_string()))?;
        *out = Box::into_raw(Box::new(BofnProblem { inner }));
        Ok(())
    })
}

/// Releases a problem handle; null is ignored.
///
/// # Safety
/// `problem` must come from [`bofn_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_free(problem: *mut BofnProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Decision dimension, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_dim(problem: *const BofnProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim())
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_node_count(problem: *const BofnProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.node_count())
}

/// Copies box bounds into `lower` and `upper` (each of length `dim`).
///
/// # Safety
/// `problem` must be a live handle; `lower`/`upper` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_bounds(
    problem: *const BofnProblem,
    lower: *mut f64,
    upper: *mut f64,
    dim: usize,
) -> BofnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        check_len(dim, p.dim(), "bounds")?;
        slice_mut(lower, dim, "lower")?.copy_from_slice(p.bounds().lower());
        slice_mut(upper, dim, "upper")?.copy_from_slice(p.bounds().upper());
        Ok(())
    })
}

/// Writes the simplex cap into `cap`, or a negative value for box-only
/// problems.
///
/// # Safety
/// `problem` must be a live handle and `cap` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_simplex_cap(problem: *const BofnProblem, cap: *mut f64) -> BofnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        let cap = cap.as_mut().ok_or_else(|| null("cap"))?;
        *cap = p.constraint().map_or(-1.0, |c| c.cap());
        Ok(())
    })
}

/// Writes the reference optimum into `value`; `InvalidArgument` when the
/// problem has none.
///
/// # Safety
/// `problem` must be a live handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_reference_optimum(problem: *const BofnProblem, value: *mut f64) -> BofnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        let value = value.as_mut().ok_or_else(|| null("value"))?;
        *value = p
            .reference_optimum()
            .ok_or((BofnStatus::InvalidArgument, format!("{} has no reference optimum", p.name())))?;
        Ok(())
    })
}

/// Evaluates every node at `x`; node values go to `h` (length
/// `node_count`), the objective is `h[node_count - 1]`.
///
/// # Safety
/// `problem` must be a live handle; `x` holds `dim` values and `h` room for
/// `node_count` values.
#[no_mangle]
pub unsafe extern "C" fn bofn_problem_evaluate(
    problem: *const BofnProblem,
    x: *const f64,
    dim: usize,
    h: *mut f64,
    node_count: usize,
) -> BofnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        check_len(dim, p.dim(), "x")?;
        check_len(node_count, p.node_count(), "h")?;
        let x = slice(x, dim, "x")?;
        let out = slice_mut(h, node_count, "h")?;
        let values = evaluate_network(p, x).map_err(|e| (BofnStatus::InvalidArgument, e.to_string()))?;
        out.copy_from_slice(&values);
        Ok(())
    })
}

/// Creates an optimizer over a copy of `problem`. `method` is one of the
/// `BOFN_METHOD_*` constants; the first `2(D+1)` asks return a seeded
/// uniform design.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_new(
    problem: *const BofnProblem,
    method: u32,
    mc_samples: usize,
    restarts: usize,
    seed: u64,
    out: *mut *mut BofnOptimizer,
) -> BofnStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let method = match method {
            BOFN_METHOD_EI_FN => Method::EiFn,
            BOFN_METHOD_EI => Method::Ei,
            BOFN_METHOD_RANDOM => Method::Random,
            m => return Err((BofnStatus::InvalidArgument, format!("unknown method {m}"))),
        };
        let saa =
            SaaConfig { mc_samples, restarts, raw_candidates: SaaConfig::default().raw_candidates.max(restarts), seed };
        saa.validate().map_err(|e| (BofnStatus::InvalidArgument, e.to_string()))?;
        let fit_seed = mix_seed(seed, 3);
        *out = Box::into_raw(Box::new(BofnOptimizer {
            problem: p.clone(),
            method,
            saa,
            design: initial_design(p, seed),
            log: EvaluationLog::new(),
            network: (method == Method::EiFn).then(|| NetworkModel::new(p.clone(), fit_seed)),
            fit_seed,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 2)),
        }));
        Ok(())
    })
}

/// Releases an optimizer handle; null is ignored.
///
/// # Safety
/// `optimizer` must come from [`bofn_optimizer_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_free(optimizer: *mut BofnOptimizer) {
    if !optimizer.is_null() {
        drop(Box::from_raw(optimizer));
    }
}

/// Number of observations told so far, or 0 for a null handle.
///
/// # Safety
/// `optimizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_observation_count(optimizer: *const BofnOptimizer) -> usize {
    optimizer.as_ref().map_or(0, |o| o.log.len())
}

/// Writes the next point to evaluate into `x` (length `dim`).
///
/// # Safety
/// `optimizer` must be a live handle and `x` hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_ask(optimizer: *mut BofnOptimizer, x: *mut f64, dim: usize) -> BofnStatus {
    guard(|| {
        let o = optimizer.as_mut().ok_or_else(|| null("optimizer"))?;
        check_len(dim, o.problem.dim(), "x")?;
        let out = slice_mut(x, dim, "x")?;
        let next = if let Some(p) = o.design.get(o.log.len()) {
            p.clone()
        } else {
            let acq = |e: bofn::acquisition::AcquisitionError| (BofnStatus::AcquisitionFailure, e.to_string());
            let point = match o.method {
                Method::EiFn => {
                    let model = o.network.as_ref().expect("network model");
                    suggest(Method::EiFn, SuggestModel::Network(model), &o.saa, &mut o.rng).map_err(acq)?
                }
                Method::Ei => {
                    let flat = FlatGpModel::fit(&o.problem, &o.log, o.fit_seed)
                        .map_err(|e| (BofnStatus::ModelFailure, e.to_string()))?;
                    suggest(Method::Ei, SuggestModel::Flat(&flat, &o.problem), &o.saa, &mut o.rng).map_err(acq)?
                }
                Method::Random => {
                    suggest(Method::Random, SuggestModel::Problem(&o.problem), &o.saa, &mut o.rng).map_err(acq)?
                }
            };
            project(&point, o.problem.bounds(), o.problem.constraint())
        };
        out.copy_from_slice(&next);
        Ok(())
    })
}

/// Records an observation: decision `x` (length `dim`) and every node value
/// `h` (length `node_count`).
///
/// # Safety
/// `optimizer` must be a live handle; `x` and `h` must hold `dim` and
/// `node_count` values.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_tell(
    optimizer: *mut BofnOptimizer,
    x: *const f64,
    dim: usize,
    h: *const f64,
    node_count: usize,
) -> BofnStatus {
    guard(|| {
        let o = optimizer.as_mut().ok_or_else(|| null("optimizer"))?;
        check_len(dim, o.problem.dim(), "x")?;
        check_len(node_count, o.problem.node_count(), "h")?;
        let x = slice(x, dim, "x")?;
        let h = slice(h, node_count, "h")?;
        if x.iter().chain(h).any(|v| !v.is_finite()) {
            return Err((BofnStatus::InvalidArgument, "observation contains non-finite values".into()));
        }
        if let Some(model) = o.network.as_mut() {
            *model = model.ingest(x, h).map_err(|e| (BofnStatus::ModelFailure, e.to_string()))?;
        }
        o.log.push(x.to_vec(), h.to_vec());
        Ok(())
    })
}

/// Writes the incumbent point into `x` and its objective into `value`.
///
/// # Safety
/// `optimizer` must be a live handle; `x` holds `dim` values and `value` is
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bofn_optimizer_best(
    optimizer: *const BofnOptimizer,
    x: *mut f64,
    dim: usize,
    value: *mut f64,
) -> BofnStatus {
    guard(|| {
        let o = optimizer.as_ref().ok_or_else(|| null("optimizer"))?;
        check_len(dim, o.problem.dim(), "x")?;
        let out = slice_mut(x, dim, "x")?;
        let value = value.as_mut().ok_or_else(|| null("value"))?;
        let best = o.log.incumbent_point().ok_or((BofnStatus::NoObservations, "no observations yet".to_string()))?;
        out.copy_from_slice(best);
        *value = o.log.g_star().expect("nonempty log");
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_round_trip() {
        set_error("boom");
        let msg = unsafe { CStr::from_ptr(bofn_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("x")), BofnStatus::Panic);
    }
}

//! C ABI over `ifs-core`.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every function returns an [`IfsStatus`]; on failure
//! a description is available from [`ifs_last_error_message`] on the same
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ifs_core::error::Error;
use ifs_core::graph::{Edge, InterferenceGraph};
use ifs_core::linalg::Matrix;
use ifs_core::panel::{PanelDataset, TreatmentMatrix};
use ifs_core::perm::{aggregate_pvalues, run_test, PermutationTestResult, TestConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Validation = 2,
    Infeasible = 3,
    Internal = 4,
    Panic = 5,
}

/// Validated panel of treatments, outcomes and covariates.
pub struct IfsPanel(PanelDataset);

/// Undirected interference graph.
pub struct IfsGraph(InterferenceGraph);

/// Outcome of a permutation test.
pub struct IfsResult(PermutationTestResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IfsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Validation(_) => IfsStatus::Validation,
            Error::Infeasible(_) => IfsStatus::Infeasible,
            Error::Numerical(_) => IfsStatus::Internal,
            Error::Input(_) | Error::Io { .. } | Error::Csv { .. } => IfsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(IfsStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IfsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside ifs");
            IfsStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Builds a panel from row-major arrays: `treatments` and `outcomes` are
/// `n * k`, `covariates` is `n * d`, `pi` has `k` entries or is null (then
/// the observed treated fractions are used). Units are named `0..n-1`.
///
/// # Safety
/// Non-null pointers must reference arrays of the stated lengths; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifs_panel_new(
    n: usize,
    k: usize,
    d: usize,
    treatments: *const u8,
    outcomes: *const f64,
    covariates: *const f64,
    pi: *const f64,
    out: *mut *mut IfsPanel,
) -> IfsStatus {
    guard(|| {
        let len = n.checked_mul(k).ok_or_else(|| invalid("n * k overflows"))?;
        let w = input(treatments, len, "treatments")?;
        let y = input(outcomes, len, "outcomes")?;
        let x = input(covariates, n.saturating_mul(d), "covariates")?;
        if n == 0 || k == 0 {
            return Err(invalid("panel needs at least one unit and one experiment"));
        }
        let pi = if pi.is_null() {
            (0..k)
                .map(|c| (0..n).map(|i| f64::from(w[i * k + c])).sum::<f64>() / n as f64)
                .collect()
        } else {
            slice::from_raw_parts(pi, k).to_vec()
        };
        let rows: Vec<Vec<u8>> = w.chunks(k).map(<[u8]>::to_vec).collect();
        let panel = PanelDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            TreatmentMatrix::from_rows(&rows)?,
            Matrix::from_row_major(n, k, y)?,
            Matrix::from_row_major(n, d, x)?,
            pi,
        )?;
        store(out, IfsPanel(panel))
    })
}

/// # Safety
/// `panel` must come from `ifs_panel_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ifs_panel_free(panel: *mut IfsPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Builds an undirected graph on `n` vertices from `m` edges `src[i]-dst[i]`;
/// `weights` may be null.
///
/// # Safety
/// Non-null pointers must reference arrays of length `m`; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ifs_graph_new(
    n: usize,
    m: usize,
    src: *const usize,
    dst: *const usize,
    weights: *const f64,
    out: *mut *mut IfsGraph,
) -> IfsStatus {
    guard(|| {
        let s = input(src, m, "src")?;
        let t = input(dst, m, "dst")?;
        let wt = if weights.is_null() {
            None
        } else {
            Some(slice::from_raw_parts(weights, m))
        };
        let edges: Vec<Edge> = (0..m)
            .map(|i| Edge {
                src: s[i],
                dst: t[i],
                weight: wt.map(|w| w[i]),
            })
            .collect();
        let (g, _) = InterferenceGraph::from_edges(n, &edges, wt.is_some())?;
        store(out, IfsGraph(g))
    })
}

/// # Safety
/// `graph` must come from `ifs_graph_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ifs_graph_free(graph: *mut IfsGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Runs the test described by `config_json` (the same fields as the TOML
/// test configuration). `graph` may be null for tests that need none.
///
/// # Safety
/// `panel` and a non-null `graph` must be live handles; `config_json` must
/// be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifs_run_test(
    panel: *const IfsPanel,
    graph: *const IfsGraph,
    config_json: *const c_char,
    out: *mut *mut IfsResult,
) -> IfsStatus {
    guard(|| {
        let panel = panel.as_ref().ok_or_else(|| invalid("panel is null"))?;
        let graph = graph.as_ref().map(|g| &g.0);
        if config_json.is_null() {
            return Err(invalid("config is null"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| invalid("config is not UTF-8"))?;
        let config: TestConfig = serde_json::from_str(text)
            .map_err(|e| invalid(&format!("invalid test configuration: {e}")))?;
        let result = run_test(&panel.0, graph, &config)?;
        store(out, IfsResult(result))
    })
}

/// P-value of a result, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_p_value(result: *const IfsResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.p_value)
}

/// Observed statistic of a result, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_t_observed(result: *const IfsResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.t_observed)
}

/// Number of replicate statistics held by a result.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_replicate_count(result: *const IfsResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.t_replicates.len())
}

/// Copies up to `len` replicate statistics into `buf`.
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_replicates(
    result: *const IfsResult,
    buf: *mut f64,
    len: usize,
) -> IfsStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| invalid("result is null"))?;
        let take = len.min(r.0.t_replicates.len());
        if take > 0 {
            if buf.is_null() {
                return Err(invalid("buffer is null"));
            }
            ptr::copy_nonoverlapping(r.0.t_replicates.as_ptr(), buf, take);
        }
        Ok(())
    })
}

/// Serializes a result as JSON; free the string with `ifs_string_free`.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_to_json(
    result: *const IfsResult,
    out: *mut *mut c_char,
) -> IfsStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| invalid("result is null"))?;
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let json = serde_json::to_string(&r.0).map_err(|e| Failure(IfsStatus::Internal, e.to_string()))?;
        *out = CString::new(json)
            .map_err(|e| Failure(IfsStatus::Internal, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ifs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `result` must come from `ifs_run_test` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ifs_result_free(result: *mut IfsResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// `min(1, 2 * mean(ps))` over `len` p-values.
///
/// # Safety
/// `ps` must reference `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifs_aggregate_pvalues(ps: *const f64, len: usize, out: *mut f64) -> IfsStatus {
    guard(|| {
        let ps = input(ps, len, "p-values")?;
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out = aggregate_pvalues(ps)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ifs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ifs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

//! C ABI over the forest black box and the explanation pipeline.
//!
//! Every fallible function returns a [`ClimaxStatus`]; on failure the message
//! is available from [`climax_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use climax::blackbox::{train_forest, ForestConfig, ForestModel, ProbabilityModel};
use climax::evaluation::jaccard;
use climax::influence::InfluenceConfig;
use climax::surrogate::FeatureStats;
use climax::{explain, Balancer, ClimaxError, ExplainConfig, Explanation, Method};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimaxStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Model = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimaxMethod {
    Lime = 0,
    LClimax = 1,
    CeClimax = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClimaxBalancer {
    None = 0,
    Ros = 1,
    Gmm = 2,
}

/// Options for [`climax_explain`]. Start from
/// [`climax_explain_options_default`]; a NaN `lambda` selects the method's
/// default penalty.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ClimaxExplainOptions {
    pub method: ClimaxMethod,
    pub balancer: ClimaxBalancer,
    pub influence: bool,
    pub keep_fraction: f64,
    pub n_prime: usize,
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
}

/// A trained forest together with the feature scale of its training data.
pub struct ClimaxForest {
    model: ForestModel,
    stats: FeatureStats,
}

pub struct ClimaxExplanation {
    inner: Explanation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &ClimaxError) -> ClimaxStatus {
    match e.exit_code() {
        2 => ClimaxStatus::Config,
        3 => ClimaxStatus::Data,
        4 => ClimaxStatus::Model,
        _ => ClimaxStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), ClimaxStatus>>(f: F) -> ClimaxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClimaxStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            ClimaxStatus::Panic
        }
    }
}

fn fail(e: ClimaxError) -> ClimaxStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> ClimaxStatus {
    set_error(format!("{what} is null"));
    ClimaxStatus::NullPointer
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], ClimaxStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], ClimaxStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ClimaxStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn climax_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Trains a forest on a row-major `n_rows × n_cols` matrix and class labels
/// `0..C`.
///
/// # Safety
/// `data` must hold `n_rows * n_cols` values, `labels` `n_rows` values, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn climax_forest_train(
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    labels: *const usize,
    n_trees: usize,
    max_depth: usize,
    seed: u64,
    out: *mut *mut ClimaxForest,
) -> ClimaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = slice_in(data, n_rows * n_cols, "data")?;
        let labels = slice_in(labels, n_rows, "labels")?;
        let x = DMatrix::from_row_slice(n_rows, n_cols, values);
        let cfg = ForestConfig { n_trees, max_depth, ..Default::default() };
        let model = train_forest(&x, labels, &cfg, seed).map_err(fail)?;
        let stats = FeatureStats::from_data(&x);
        *out = Box::into_raw(Box::new(ClimaxForest { model, stats }));
        Ok(())
    })
}

/// Writes class probabilities for `n_rows` row-major instances into `out`,
/// which must hold `n_rows * climax_forest_n_classes(forest)` values.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn climax_forest_predict_proba(
    forest: *const ClimaxForest,
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
    out_len: usize,
) -> ClimaxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let values = slice_in(data, n_rows * n_cols, "data")?;
        let c = f.model.n_classes();
        if out_len < n_rows * c {
            set_error(format!("output holds {out_len} values, need {}", n_rows * c));
            return Err(ClimaxStatus::Config);
        }
        let out = slice_out(out, n_rows * c, "out")?;
        let probs = f.model.predict_proba(&DMatrix::from_row_slice(n_rows, n_cols, values)).map_err(fail)?;
        for i in 0..n_rows {
            for j in 0..c {
                out[i * c + j] = probs[(i, j)];
            }
        }
        Ok(())
    })
}

/// Class count of the forest, or 0 for a null handle.
///
/// # Safety
/// `forest` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_forest_n_classes(forest: *const ClimaxForest) -> usize {
    forest.as_ref().map_or(0, |f| f.model.n_classes())
}

/// Feature count of the forest, or 0 for a null handle.
///
/// # Safety
/// `forest` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_forest_n_features(forest: *const ClimaxForest) -> usize {
    forest.as_ref().map_or(0, |f| f.stats.n_features())
}

/// # Safety
/// `forest` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn climax_forest_free(forest: *mut ClimaxForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

#[no_mangle]
pub extern "C" fn climax_explain_options_default() -> ClimaxExplainOptions {
    let d = ExplainConfig::default();
    ClimaxExplainOptions {
        method: ClimaxMethod::CeClimax,
        balancer: ClimaxBalancer::Gmm,
        influence: false,
        keep_fraction: InfluenceConfig::default().keep_fraction,
        n_prime: d.n_prime,
        k: d.k,
        lambda: f64::NAN,
        seed: 0,
    }
}

fn config_of(o: &ClimaxExplainOptions) -> ExplainConfig {
    ExplainConfig {
        method: match o.method {
            ClimaxMethod::Lime => Method::Lime,
            ClimaxMethod::LClimax => Method::LClimax,
            ClimaxMethod::CeClimax => Method::CeClimax,
        },
        balancer: match o.balancer {
            ClimaxBalancer::None => Balancer::None,
            ClimaxBalancer::Ros => Balancer::Ros,
            ClimaxBalancer::Gmm => Balancer::Gmm,
        },
        influence: o.influence.then(|| InfluenceConfig { keep_fraction: o.keep_fraction, ..Default::default() }),
        n_prime: o.n_prime,
        k: o.k,
        lambda: (!o.lambda.is_nan()).then_some(o.lambda),
        seed: o.seed,
        ..Default::default()
    }
}

/// Explains the forest's prediction at `x` (length `d`, feature units).
///
/// # Safety
/// `forest` and `options` must be live, `x` must hold `d` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn climax_explain(
    forest: *const ClimaxForest,
    x: *const f64,
    d: usize,
    options: *const ClimaxExplainOptions,
    out: *mut *mut ClimaxExplanation,
) -> ClimaxStatus {
    guard(|| {
        let f = handle(forest, "forest")?;
        let o = handle(options, "options")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = slice_in(x, d, "x")?;
        let e = explain(x, &f.model, &f.stats, &config_of(o)).map_err(fail)?;
        *out = Box::into_raw(Box::new(ClimaxExplanation { inner: e }));
        Ok(())
    })
}

/// Length of φ, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_n_features(e: *const ClimaxExplanation) -> usize {
    e.as_ref().map_or(0, |e| e.inner.phi.len())
}

/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_target_class(e: *const ClimaxExplanation) -> usize {
    e.as_ref().map_or(0, |e| e.inner.target_class)
}

/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_intercept(e: *const ClimaxExplanation) -> f64 {
    e.as_ref().map_or(f64::NAN, |e| e.inner.intercept)
}

/// Copies φ into `out` (capacity `len` ≥ the feature count).
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_phi(e: *const ClimaxExplanation, out: *mut f64, len: usize) -> ClimaxStatus {
    guard(|| {
        let e = handle(e, "explanation")?;
        let phi = &e.inner.phi;
        if len < phi.len() {
            set_error(format!("output holds {len} values, need {}", phi.len()));
            return Err(ClimaxStatus::Config);
        }
        slice_out(out, phi.len(), "out")?.copy_from_slice(phi);
        Ok(())
    })
}

/// Number of ranked top features, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_top_count(e: *const ClimaxExplanation) -> usize {
    e.as_ref().map_or(0, |e| e.inner.top_features.len())
}

/// Copies the ranked top features into `indices` and `scores` (capacity
/// `len` ≥ the top count).
///
/// # Safety
/// Both outputs must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_top_features(
    e: *const ClimaxExplanation,
    indices: *mut usize,
    scores: *mut f64,
    len: usize,
) -> ClimaxStatus {
    guard(|| {
        let e = handle(e, "explanation")?;
        let top = &e.inner.top_features;
        if len < top.len() {
            set_error(format!("output holds {len} values, need {}", top.len()));
            return Err(ClimaxStatus::Config);
        }
        let idx = slice_out(indices, top.len(), "indices")?;
        let sc = slice_out(scores, top.len(), "scores")?;
        for (i, f) in top.iter().enumerate() {
            idx[i] = f.index;
            sc[i] = f.score;
        }
        Ok(())
    })
}

/// The explanation document as a newly allocated string; release it with
/// [`climax_string_free`]. NULL on a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_document(e: *const ClimaxExplanation) -> *mut c_char {
    match e.as_ref() {
        Some(e) => CString::new(e.inner.to_document()).map_or(ptr::null_mut(), CString::into_raw),
        None => {
            set_error("explanation is null".into());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn climax_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `e` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn climax_explanation_free(e: *mut ClimaxExplanation) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Jaccard index of two feature-index sets.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn climax_jaccard(
    a: *const usize,
    na: usize,
    b: *const usize,
    nb: usize,
    out: *mut f64,
) -> ClimaxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = slice_in(a, na, "a")?;
        let b = slice_in(b, nb, "b")?;
        *out = jaccard(a, b).map_err(fail)?;
        Ok(())
    })
}

//! C ABI for the adastudent library.
//!
//! Every fallible function returns an [`AbstStatus`]. On failure a message is
//! kept per thread and can be read with [`abst_last_error`]. Stateful objects
//! are opaque handles created by `*_new`/`*_load` and released by `*_free`.
//! All array arguments are `(pointer, length)` pairs owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use adastudent::aggregator::{AggregateState, Snapshot};
use adastudent::harness::{Experiment, ExperimentConfig, Variant};
use adastudent::model::{poly_lr, read_snapshot_file, write_snapshot_file, ParamVector, ProbMap};
use adastudent::rng::{stream, Stream};
use adastudent::sampler::SampleDistribution;
use adastudent::uncertainty::{kl_variance_image, normalize_scores_with_temperature, Criterion, ScoreVector};
use adastudent::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbstStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or zero length where data is required.
    InvalidArgument = 1,
    Config = 2,
    Divergence = 3,
    Io = 4,
    CorruptSnapshot = 5,
    Domain = 6,
    Shape = 7,
    NonFinite = 8,
    Contract = 9,
    Panic = 10,
}

/// Sampling distribution over target images.
pub struct AbstDistribution {
    inner: SampleDistribution,
}

/// Running mean of student parameter snapshots.
pub struct AbstAggregate {
    inner: AggregateState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> AbstStatus {
    match err {
        Error::Config(_) => AbstStatus::Config,
        Error::Divergence { .. } => AbstStatus::Divergence,
        Error::Io(_) | Error::Csv(_) => AbstStatus::Io,
        Error::CorruptSnapshot(_) => AbstStatus::CorruptSnapshot,
        Error::Domain(_) => AbstStatus::Domain,
        Error::Shape(_) | Error::Index { .. } => AbstStatus::Shape,
        Error::NonFinite(_) => AbstStatus::NonFinite,
        Error::Contract(_) => AbstStatus::Contract,
        Error::Scoring { source, .. } => status_of(source),
    }
}

struct Fail(AbstStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(message: &str) -> Fail {
    Fail(AbstStatus::InvalidArgument, message.to_string())
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> AbstStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AbstStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AbstStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a, T>(data: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn out_ref<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    out.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn opt_str<'a>(s: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn req_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    opt_str(s, what)?.ok_or_else(|| invalid(&format!("{what} is null")))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; empty if nothing has failed.
#[no_mangle]
pub extern "C" fn abst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `lr0 * (1 - iter / total) ^ 0.9`.
///
/// # Safety
/// `out` must be a valid pointer to one `double`.
#[no_mangle]
pub unsafe extern "C" fn abst_poly_lr(iter: usize, total: usize, lr0: f64, out: *mut f64) -> AbstStatus {
    guard(|| {
        *out_ref(out, "out")? = poly_lr(iter, total, lr0)?;
        Ok(())
    })
}

/// Softmax of `scores / temperature` into `out` (both of length `len`).
///
/// # Safety
/// `scores` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abst_normalize_scores(
    scores: *const f64,
    len: usize,
    temperature: f64,
    out: *mut f64,
) -> AbstStatus {
    guard(|| {
        let scores = ScoreVector {
            scores: slice(scores, len, "scores")?.to_vec(),
            criterion: Criterion::KlVariance,
        };
        let normalized = normalize_scores_with_temperature(&scores, temperature)?;
        slice_mut(out, len, "out")?.copy_from_slice(&normalized);
        Ok(())
    })
}

/// Mean per-pixel `KL(primary || aux)` of two `height x width x classes`
/// probability maps (pixel-major, classes innermost).
///
/// # Safety
/// `primary` and `aux` must point to `height * width * classes` doubles and
/// `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn abst_kl_variance_image(
    primary: *const f64,
    aux: *const f64,
    height: usize,
    width: usize,
    classes: usize,
    out: *mut f64,
) -> AbstStatus {
    guard(|| {
        let n = height * width * classes;
        let p = ProbMap::new(height, width, classes, slice(primary, n, "primary")?.to_vec())?;
        let q = ProbMap::new(height, width, classes, slice(aux, n, "aux")?.to_vec())?;
        *out_ref(out, "out")? = kl_variance_image(&p, &q)?;
        Ok(())
    })
}

/// Uniform distribution over `n` target images.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`abst_distribution_free`].
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_new(n: usize, out: *mut *mut AbstDistribution) -> AbstStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let inner = SampleDistribution::init_uniform(n)?;
        *slot = Box::into_raw(Box::new(AbstDistribution { inner }));
        Ok(())
    })
}

/// Replace the distribution by `(D + normalized) / 2`, renormalized.
///
/// # Safety
/// `dist` must be a live handle and `normalized` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_update(
    dist: *mut AbstDistribution,
    normalized: *const f64,
    len: usize,
) -> AbstStatus {
    guard(|| {
        let d = out_ref(dist, "dist")?;
        d.inner = d.inner.update(slice(normalized, len, "normalized")?)?;
        Ok(())
    })
}

/// Number of images the distribution covers; 0 for a null handle.
///
/// # Safety
/// `dist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_len(dist: *const AbstDistribution) -> usize {
    dist.as_ref().map_or(0, |d| d.inner.len())
}

/// Copy the weights into `out`, which must hold exactly `len` doubles.
///
/// # Safety
/// `dist` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_weights(
    dist: *const AbstDistribution,
    out: *mut f64,
    len: usize,
) -> AbstStatus {
    guard(|| {
        let d = dist.as_ref().ok_or_else(|| invalid("dist is null"))?;
        if len != d.inner.len() {
            return Err(Fail(AbstStatus::Shape, format!("buffer of {len} for {} weights", d.inner.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(d.inner.weights());
        Ok(())
    })
}

/// Shannon entropy of the weights (natural log).
///
/// # Safety
/// `dist` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_entropy(dist: *const AbstDistribution, out: *mut f64) -> AbstStatus {
    guard(|| {
        let d = dist.as_ref().ok_or_else(|| invalid("dist is null"))?;
        *out_ref(out, "out")? = d.inner.entropy();
        Ok(())
    })
}

/// `count` indices drawn with replacement, deterministic in `seed`.
///
/// # Safety
/// `dist` must be a live handle and `out` must point to `count` elements.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_draw(
    dist: *const AbstDistribution,
    seed: u64,
    count: usize,
    out: *mut usize,
) -> AbstStatus {
    guard(|| {
        let d = dist.as_ref().ok_or_else(|| invalid("dist is null"))?;
        let draws = d.inner.draw(&mut stream(seed, Stream::Sampling), count);
        slice_mut(out, count, "out")?.copy_from_slice(&draws);
        Ok(())
    })
}

/// # Safety
/// `dist` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abst_distribution_free(dist: *mut AbstDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Start a running mean from the first snapshot.
///
/// # Safety
/// `params` must point to `len` doubles and `out` must be a valid pointer;
/// on success it receives a handle to free with [`abst_aggregate_free`].
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_new(
    params: *const f64,
    len: usize,
    out: *mut *mut AbstAggregate,
) -> AbstStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let params = ParamVector::new(slice(params, len, "params")?.to_vec())?;
        let inner = AggregateState::init(&Snapshot::new(params, 1)?)?;
        *slot = Box::into_raw(Box::new(AbstAggregate { inner }));
        Ok(())
    })
}

/// Fold the next snapshot into the running mean.
///
/// # Safety
/// `agg` must be a live handle and `params` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_update(agg: *mut AbstAggregate, params: *const f64, len: usize) -> AbstStatus {
    guard(|| {
        let a = out_ref(agg, "agg")?;
        let params = ParamVector::new(slice(params, len, "params")?.to_vec())?;
        let snap = Snapshot::new(params, a.inner.count() + 1)?;
        a.inner = a.inner.update_running_mean(&snap)?;
        Ok(())
    })
}

/// Number of snapshots folded in; 0 for a null handle.
///
/// # Safety
/// `agg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_count(agg: *const AbstAggregate) -> usize {
    agg.as_ref().map_or(0, |a| a.inner.count())
}

/// Parameter count of the aggregate; 0 for a null handle.
///
/// # Safety
/// `agg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_len(agg: *const AbstAggregate) -> usize {
    agg.as_ref().map_or(0, |a| a.inner.mean_params().len())
}

/// Copy the mean parameters into `out`, which must hold exactly `len` doubles.
///
/// # Safety
/// `agg` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_params(agg: *const AbstAggregate, out: *mut f64, len: usize) -> AbstStatus {
    guard(|| {
        let a = agg.as_ref().ok_or_else(|| invalid("agg is null"))?;
        let params = a.inner.mean_params().as_slice();
        if len != params.len() {
            return Err(Fail(AbstStatus::Shape, format!("buffer of {len} for {} parameters", params.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(params);
        Ok(())
    })
}

/// Write the aggregate as a snapshot file.
///
/// # Safety
/// `agg` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_save(agg: *const AbstAggregate, path: *const c_char) -> AbstStatus {
    guard(|| {
        let a = agg.as_ref().ok_or_else(|| invalid("agg is null"))?;
        let path = req_str(path, "path")?;
        write_snapshot_file(path.as_ref(), &a.inner.to_file())?;
        Ok(())
    })
}

/// Read an aggregate snapshot file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_load(path: *const c_char, out: *mut *mut AbstAggregate) -> AbstStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let path = req_str(path, "path")?;
        let inner = AggregateState::from_file(read_snapshot_file(path.as_ref())?)?;
        *slot = Box::into_raw(Box::new(AbstAggregate { inner }));
        Ok(())
    })
}

/// # Safety
/// `agg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn abst_aggregate_free(agg: *mut AbstAggregate) {
    if !agg.is_null() {
        drop(Box::from_raw(agg));
    }
}

/// Run one experiment.
///
/// `config_json` may be null for defaults. A non-null `variant` names a
/// sampler/aggregation preset. A non-null `out_dir` receives report.csv,
/// student.abst and aggregate.abst. On success the final student and
/// aggregate target mIoU are written to the non-null output pointers.
///
/// # Safety
/// String arguments must be null or NUL-terminated; output pointers must be
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn abst_run_experiment(
    config_json: *const c_char,
    variant: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    final_student_miou: *mut f64,
    final_aggregate_miou: *mut f64,
) -> AbstStatus {
    guard(|| {
        let mut cfg = match opt_str(config_json, "config_json")? {
            Some(text) => ExperimentConfig::from_json(text)?,
            None => ExperimentConfig::default(),
        };
        if let Some(name) = opt_str(variant, "variant")? {
            Variant::from_name(name)?.apply(&mut cfg);
        }
        cfg.seed = seed;
        cfg.output_dir = opt_str(out_dir, "out_dir")?.map(PathBuf::from);
        let outcome = Experiment::new(cfg)?.run()?;
        let last = outcome.report.rows.last().expect("at least one epoch");
        if let Some(s) = final_student_miou.as_mut() {
            *s = last.student_tgt_miou;
        }
        if let Some(a) = final_aggregate_miou.as_mut() {
            *a = last.aggregate_tgt_miou;
        }
        Ok(())
    })
}

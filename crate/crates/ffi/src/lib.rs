//! C ABI over the `horizonrec` library.
//!
//! Objects cross the boundary as opaque handles created by `*_open` /
//! `*_load` and released by the matching `*_free`. Every fallible call
//! returns an [`HrStatus`]; on failure the message is kept per thread and
//! can be fetched with [`hr_last_error_message`]. Panics are caught and
//! reported as [`HrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use horizonrec::checkpoint::load_model;
use horizonrec::data::{Context, Dataset, Role};
use horizonrec::diffusion::make_schedule;
use horizonrec::eval::{evaluate, top_k, EvalOptions};
use horizonrec::model::{HorizonModel, RetrievalIndex};
use horizonrec::retrieval::{lowpass_weight, retrieve_topk, RetrievalDatabase};
use horizonrec::seeds::rng_for;
use horizonrec::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    NotFound = 8,
    Panic = 9,
}

/// Which held-out event to evaluate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrSplit {
    Validation = 0,
    Test = 1,
}

/// A loaded dataset directory.
pub struct HrDataset {
    inner: Dataset,
}

/// A loaded retrieval database.
pub struct HrDatabase {
    inner: RetrievalDatabase,
}

/// A trained model, with its retrieval database when the variant needs one.
pub struct HrModel {
    model: HorizonModel,
    db: Option<RetrievalDatabase>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> HrStatus {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => HrStatus::NotFound,
        Error::Io { .. } => HrStatus::Io,
        Error::Parse { .. } | Error::Format(_) => HrStatus::Format,
        Error::Checkpoint(_) => HrStatus::Checkpoint,
        Error::NonFinite(_) => HrStatus::NonFinite,
        _ => HrStatus::InvalidArgument,
    }
}

struct Fail(HrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: HrStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(fail(HrStatus::NullPointer, format!("{what} is NULL")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HrStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(HrStatus::NullPointer, format!("{what} handle is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(HrStatus::NullPointer, format!("{what} output pointer is NULL")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated
/// and always NUL-terminated when `len > 0`). Returns the length needed to
/// hold the whole message including the terminator.
///
/// # Safety
/// `buf` must be NULL or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Opens a dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dataset_open(dir: *const c_char, out: *mut *mut HrDataset) -> HrStatus {
    guard(|| {
        let out = out_ptr(out, "dataset")?;
        *out = std::ptr::null_mut();
        let dir = path_arg(dir, "dataset directory")?;
        let inner = Dataset::load(&dir)?;
        *out = Box::into_raw(Box::new(HrDataset { inner }));
        Ok(())
    })
}

/// Releases a dataset handle (NULL is ignored).
///
/// # Safety
/// `ds` must be NULL or a handle from [`hr_dataset_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hr_dataset_free(ds: *mut HrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of users in the dataset.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dataset_users(ds: *const HrDataset, out: *mut usize) -> HrStatus {
    guard(|| {
        *out_ptr(out, "count")? = handle(ds, "dataset")?.inner.users.len();
        Ok(())
    })
}

/// Copies the external id of target item `index` (1-based) into `buf`.
/// `needed` receives the length including the terminator; when it exceeds
/// `len` nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `ds` must be a live handle; `buf` must hold `len` bytes; `needed` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_dataset_target_item(
    ds: *const HrDataset,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> HrStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let needed = out_ptr(needed, "needed")?;
        let id = ds
            .inner
            .target_vocab
            .item(index)
            .ok_or_else(|| fail(HrStatus::InvalidArgument, format!("target item index {index} out of range")))?;
        *needed = id.len() + 1;
        if buf.is_null() || len < id.len() + 1 {
            return Err(fail(HrStatus::BufferTooSmall, format!("item id needs {} bytes", id.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(id.as_ptr(), buf.cast::<u8>(), id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Opens a retrieval database file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_db_open(path: *const c_char, out: *mut *mut HrDatabase) -> HrStatus {
    guard(|| {
        let out = out_ptr(out, "database")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path, "database path")?;
        let inner = RetrievalDatabase::load(&path)?;
        *out = Box::into_raw(Box::new(HrDatabase { inner }));
        Ok(())
    })
}

/// Releases a database handle (NULL is ignored).
///
/// # Safety
/// `db` must be NULL or a handle from [`hr_db_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hr_db_free(db: *mut HrDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Number of segments in the database.
///
/// # Safety
/// `db` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_db_rows(db: *const HrDatabase, out: *mut usize) -> HrStatus {
    guard(|| {
        *out_ptr(out, "rows")? = handle(db, "database")?.inner.rows();
        Ok(())
    })
}

/// Embedding width of the database.
///
/// # Safety
/// `db` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_db_dim(db: *const HrDatabase, out: *mut usize) -> HrStatus {
    guard(|| {
        *out_ptr(out, "dim")? = handle(db, "database")?.inner.dim();
        Ok(())
    })
}

/// Cosine top-`k` rows for `query` (width `dim`), best first. Writes up
/// to `k` row indices to `rows` and their number to `count`.
///
/// # Safety
/// `query` must point to `dim` doubles, `rows` to `k` writable `size_t`s,
/// and `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_db_topk(
    db: *const HrDatabase,
    query: *const f64,
    dim: usize,
    k: usize,
    rows: *mut usize,
    count: *mut usize,
) -> HrStatus {
    guard(|| {
        let db = handle(db, "database")?;
        let count = out_ptr(count, "count")?;
        *count = 0;
        if query.is_null() || (rows.is_null() && k > 0) {
            return Err(fail(HrStatus::NullPointer, "query or rows buffer is NULL"));
        }
        let q = std::slice::from_raw_parts(query, dim);
        let found = retrieve_topk(q, &db.inner, k)?;
        std::ptr::copy_nonoverlapping(found.as_ptr(), rows, found.len());
        *count = found.len();
        Ok(())
    })
}

/// Loads a trained model checkpoint. `db_path` may be NULL for variants
/// that do not retrieve noise; otherwise it names the database to use.
///
/// # Safety
/// `ckpt` must be a NUL-terminated string, `db_path` NULL or one, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_model_load(ckpt: *const c_char, db_path: *const c_char, out: *mut *mut HrModel) -> HrStatus {
    guard(|| {
        let out = out_ptr(out, "model")?;
        *out = std::ptr::null_mut();
        let ckpt = path_arg(ckpt, "checkpoint path")?;
        if !ckpt.is_file() {
            return Err(fail(HrStatus::NotFound, format!("checkpoint not found: {}", ckpt.display())));
        }
        let (model, meta) = load_model(&ckpt)?;
        let db = if model.config.variant.uses_retrieval() {
            let p = if db_path.is_null() {
                meta.db_path.map(PathBuf::from).ok_or_else(|| {
                    fail(HrStatus::InvalidArgument, "this model needs a retrieval database path")
                })?
            } else {
                path_arg(db_path, "database path")?
            };
            Some(RetrievalDatabase::load(&p)?)
        } else {
            None
        };
        *out = Box::into_raw(Box::new(HrModel { model, db }));
        Ok(())
    })
}

/// Releases a model handle (NULL is ignored).
///
/// # Safety
/// `model` must be NULL or a handle from [`hr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hr_model_free(model: *mut HrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// HR@k and NDCG@k of `model` on one held-out split of `ds`.
///
/// # Safety
/// Handles must be live; `hr` and `ndcg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_model_evaluate(
    model: *const HrModel,
    ds: *const HrDataset,
    split: HrSplit,
    k: usize,
    hr: *mut f64,
    ndcg: *mut f64,
) -> HrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(ds, "dataset")?;
        let (hr, ndcg) = (out_ptr(hr, "hr")?, out_ptr(ndcg, "ndcg")?);
        if k == 0 {
            return Err(fail(HrStatus::InvalidArgument, "k must be positive"));
        }
        let role = match split {
            HrSplit::Validation => Role::Validation,
            HrSplit::Test => Role::Test,
        };
        let index = m.db.as_ref().map(|db| RetrievalIndex::new(db, &ds.inner));
        let opts = EvalOptions {
            ks: vec![k],
            mask_seen: false,
            seed: m.model.config.eval_seed,
        };
        let (report, _) = evaluate(&m.model, &ds.inner, index.as_ref(), role, &opts)?;
        *hr = report.hr[0];
        *ndcg = report.ndcg[0];
        Ok(())
    })
}

/// Top-`k` target items (1-based vocabulary indices, best first) to follow
/// the complete history of `user_id`.
///
/// # Safety
/// Handles must be live, `user_id` NUL-terminated, `items` must hold `k`
/// writable `size_t`s and `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_model_recommend(
    model: *const HrModel,
    ds: *const HrDataset,
    user_id: *const c_char,
    k: usize,
    items: *mut usize,
    count: *mut usize,
) -> HrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(ds, "dataset")?;
        let count = out_ptr(count, "count")?;
        *count = 0;
        if items.is_null() && k > 0 {
            return Err(fail(HrStatus::NullPointer, "items buffer is NULL"));
        }
        let user_id = path_arg(user_id, "user id")?;
        let user_id = user_id.to_string_lossy();
        let u = ds
            .inner
            .user_index(&user_id)
            .ok_or_else(|| fail(HrStatus::NotFound, format!("unknown user {user_id}")))?;
        let hist = &ds.inner.users[u];
        let ctx = Context {
            source: &hist.source,
            target: &hist.target,
            mixed: &hist.mixed,
        };
        let index = m.db.as_ref().map(|db| RetrievalIndex::new(db, &ds.inner));
        let mut rng = rng_for(m.model.config.eval_seed, &[u as u64, hist.target.len() as u64]);
        let state = m.model.infer_context(&ctx, u, hist.mixed.len(), index.as_ref(), &mut rng)?;
        let top = top_k(&m.model.scores(&state.tilde)?, k, &[]);
        std::ptr::copy_nonoverlapping(top.as_ptr(), items, top.len());
        *count = top.len();
        Ok(())
    })
}

/// Writes `ᾱ_1..ᾱ_T` of the linear schedule into `out` (`steps` doubles).
///
/// # Safety
/// `out` must point to `steps` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_schedule_alpha_bar(steps: usize, beta_start: f64, beta_end: f64, out: *mut f64) -> HrStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HrStatus::NullPointer, "output buffer is NULL"));
        }
        let s = make_schedule(steps, beta_start, beta_end)?;
        std::ptr::copy_nonoverlapping(s.alpha_bar.as_ptr(), out, steps);
        Ok(())
    })
}

/// Position weight of item `j` in a segment spanning `k..=l`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_lowpass_weight(j: usize, l: usize, k: usize, c: f64, n: f64, out: *mut f64) -> HrStatus {
    guard(|| {
        let out = out_ptr(out, "weight")?;
        if !(1 <= k && k <= j && j <= l) {
            return Err(fail(HrStatus::InvalidArgument, format!("need 1 <= k <= j <= l (got k={k}, j={j}, l={l})")));
        }
        *out = lowpass_weight(j, l, k, c, n);
        Ok(())
    })
}

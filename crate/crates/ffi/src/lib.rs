//! C ABI for building, persisting and querying Ball-Tree and BC-Tree
//! indexes.
//!
//! Every fallible function returns a [`P2hStatus`]. On failure a message is
//! kept per thread and can be read with [`p2h_last_error`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use p2hnns::P2hIndex as _;
use p2hnns::{
    exact_topk, load_vectors, normalize_query, AnyTree, Budget, Error, Neighbor, PointSet,
    Preference, SearchParams, TreeKind, VectorFormat,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2hStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    DimensionMismatch = 5,
    DegenerateQuery = 6,
    KOutOfRange = 7,
    Empty = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2hTreeKind {
    Ball = 0,
    Bc = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2hFormat {
    /// Guess from the file extension.
    Auto = 0,
    Fvecs = 1,
    Bvecs = 2,
    Csv = 3,
    RawF32 = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P2hPreference {
    Center = 0,
    LowerBound = 1,
}

/// Per-query work counters.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct P2hCounters {
    pub center_ip_count: u64,
    pub candidates_verified: u64,
    pub nodes_visited: u64,
    pub leaves_scanned: u64,
}

/// Search settings. `budget == 0` means unlimited.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct P2hSearchOptions {
    pub k: usize,
    pub budget: u64,
    pub preference: P2hPreference,
}

/// Opaque point set.
pub struct P2hPointSet(PointSet);

/// Opaque tree index. Owns its own copy of the indexed points.
pub struct P2hIndex(AnyTree);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> P2hStatus {
    match err {
        Error::Io(_) => P2hStatus::Io,
        Error::Malformed { .. } | Error::Invariant(_) => P2hStatus::Malformed,
        Error::DimensionMismatch { .. } => P2hStatus::DimensionMismatch,
        Error::DegenerateQuery => P2hStatus::DegenerateQuery,
        Error::KOutOfRange { .. } => P2hStatus::KOutOfRange,
        Error::Empty => P2hStatus::Empty,
        _ => P2hStatus::InvalidArgument,
    }
}

struct Fail(P2hStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(P2hStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> P2hStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            P2hStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            P2hStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Fail(P2hStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_neighbors(
    found: &[Neighbor],
    out_ids: *mut u32,
    out_distances: *mut f64,
    out_count: *mut usize,
) -> Result<(), Fail> {
    if out_ids.is_null() || out_distances.is_null() || out_count.is_null() {
        return Err(null("output buffer"));
    }
    for (i, n) in found.iter().enumerate() {
        *out_ids.add(i) = n.id;
        *out_distances.add(i) = n.distance;
    }
    *out_count = found.len();
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn p2h_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `n * raw_dim` row-major floats into a new point set.
///
/// # Safety
/// `rows` must point to `n * raw_dim` readable floats and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn p2h_pointset_from_rows(
    rows: *const f32,
    n: usize,
    raw_dim: usize,
    out: *mut *mut P2hPointSet,
) -> P2hStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(raw_dim)
            .ok_or_else(|| Fail(P2hStatus::InvalidArgument, "n * raw_dim overflows".into()))?;
        let raw = slice_arg(rows, len, "rows")?;
        let set = PointSet::from_raw(raw, raw_dim)?;
        *out = Box::into_raw(Box::new(P2hPointSet(set)));
        Ok(())
    })
}

/// Reads a point set from disk.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn p2h_pointset_load(
    path: *const c_char,
    format: P2hFormat,
    out: *mut *mut P2hPointSet,
) -> P2hStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let format = match format {
            P2hFormat::Auto => VectorFormat::from_extension(path).ok_or_else(|| {
                Fail(
                    P2hStatus::InvalidArgument,
                    format!("cannot infer format of {}", path.display()),
                )
            })?,
            P2hFormat::Fvecs => VectorFormat::Fvecs,
            P2hFormat::Bvecs => VectorFormat::Bvecs,
            P2hFormat::Csv => VectorFormat::Csv,
            P2hFormat::RawF32 => VectorFormat::RawF32,
        };
        *out = Box::into_raw(Box::new(P2hPointSet(load_vectors(path, format)?)));
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn p2h_pointset_len(set: *const P2hPointSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Dimensionality of the input rows, before the appended constant.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn p2h_pointset_dim(set: *const P2hPointSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.raw_dim())
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn p2h_pointset_free(set: *mut P2hPointSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Builds a tree over `set`. The index keeps its own copy of the points.
///
/// # Safety
/// `set` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_build(
    set: *const P2hPointSet,
    kind: P2hTreeKind,
    leaf_size: usize,
    seed: u64,
    out: *mut *mut P2hIndex,
) -> P2hStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let set = ref_arg(set, "point set")?;
        let kind = match kind {
            P2hTreeKind::Ball => TreeKind::Ball,
            P2hTreeKind::Bc => TreeKind::Bc,
        };
        *out = Box::into_raw(Box::new(P2hIndex(AnyTree::build(
            kind, &set.0, leaf_size, seed,
        )?)));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_save(index: *const P2hIndex, path: *const c_char) -> P2hStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let path = path_arg(path)?;
        std::fs::write(path, index.0.to_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// Loads an index file. `set` must be the point set it was built from.
///
/// # Safety
/// `path` must be a NUL-terminated string, `set` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_load(
    path: *const c_char,
    set: *const P2hPointSet,
    out: *mut *mut P2hIndex,
) -> P2hStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let set = ref_arg(set, "point set")?;
        *out = Box::into_raw(Box::new(P2hIndex(AnyTree::load(path, &set.0)?)));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_kind(
    index: *const P2hIndex,
    out: *mut P2hTreeKind,
) -> P2hStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match index.0.kind() {
            TreeKind::Ball => P2hTreeKind::Ball,
            TreeKind::Bc => P2hTreeKind::Bc,
        };
        Ok(())
    })
}

/// Number of indexed points, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_len(index: *const P2hIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.len())
}

/// Finds the `options.k` points nearest to the hyperplane
/// `<w, p> + b = 0`, given as `coeffs = [w..., b]` with
/// `coeffs_len = dim + 1`. The normal need not be unit length.
///
/// Results are written ascending by distance. `out_ids` and
/// `out_distances` need room for `options.k` entries. `counters` may be
/// null.
///
/// # Safety
/// All non-null pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_search(
    index: *const P2hIndex,
    coeffs: *const f64,
    coeffs_len: usize,
    options: P2hSearchOptions,
    out_ids: *mut u32,
    out_distances: *mut f64,
    out_count: *mut usize,
    counters: *mut P2hCounters,
) -> P2hStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let query = normalize_query(slice_arg(coeffs, coeffs_len, "coeffs")?)?;
        let params = SearchParams {
            k: options.k,
            budget: match options.budget {
                0 => Budget::Unlimited,
                c => Budget::Candidates(c),
            },
            preference: match options.preference {
                P2hPreference::Center => Preference::Center,
                P2hPreference::LowerBound => Preference::LowerBound,
            },
        };
        let result = index.0.search(&query, &params)?;
        write_neighbors(&result.neighbors, out_ids, out_distances, out_count)?;
        if let Some(c) = counters.as_mut() {
            let r = result.counters;
            *c = P2hCounters {
                center_ip_count: r.center_ip_count,
                candidates_verified: r.candidates_verified,
                nodes_visited: r.nodes_visited,
                leaves_scanned: r.leaves_scanned,
            };
        }
        Ok(())
    })
}

/// Exhaustive scan with the same query convention and output layout as
/// [`p2h_index_search`].
///
/// # Safety
/// All pointers must be valid for the sizes described there.
#[no_mangle]
pub unsafe extern "C" fn p2h_exact_topk(
    set: *const P2hPointSet,
    coeffs: *const f64,
    coeffs_len: usize,
    k: usize,
    out_ids: *mut u32,
    out_distances: *mut f64,
    out_count: *mut usize,
) -> P2hStatus {
    guard(|| {
        let set = ref_arg(set, "point set")?;
        let query = normalize_query(slice_arg(coeffs, coeffs_len, "coeffs")?)?;
        let found = exact_topk(&set.0, &query, k)?;
        write_neighbors(&found, out_ids, out_distances, out_count)
    })
}

/// # Safety
/// `index` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn p2h_index_free(index: *mut P2hIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

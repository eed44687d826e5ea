//! C ABI for the speculative retrieval engine.
//!
//! Handles are opaque. Every entry point returns a [`HasStatus`]; on failure
//! a message is available from [`has_last_error`] on the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use has_core::engine::{Engine, EngineConfig, ScoringMode};
use has_core::{DocId, Embedding, FlatIndex, HasError, IvfIndex, LatencyModel, QueryId};

/// Status codes; 2, 3 and 4 match the `has` binary's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HasStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Runtime = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

impl From<&HasError> for HasStatus {
    fn from(e: &HasError) -> Self {
        match e.exit_code() {
            2 => HasStatus::Config,
            3 => HasStatus::Data,
            _ => HasStatus::Runtime,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HasEngineConfig {
    pub k: usize,
    pub tau: f64,
    pub h_max: usize,
    pub n_probe: usize,
    pub n_buckets: usize,
    pub subset_fraction: f64,
    pub fuzzy_for_validation: bool,
    pub fuzzy_for_draft: bool,
    pub early_exit: bool,
    pub ivf_seed: u64,
    pub latency_seed: u64,
}

impl Default for HasEngineConfig {
    fn default() -> Self {
        let d = EngineConfig::default();
        HasEngineConfig {
            k: d.k,
            tau: d.tau,
            h_max: d.h_max,
            n_probe: d.n_probe,
            n_buckets: d.n_buckets,
            subset_fraction: d.subset_fraction,
            fuzzy_for_validation: d.fuzzy_for_validation,
            fuzzy_for_draft: d.fuzzy_for_draft,
            early_exit: false,
            ivf_seed: 42,
            latency_seed: LatencyModel::default().seed,
        }
    }
}

impl HasEngineConfig {
    fn to_core(self) -> EngineConfig {
        EngineConfig {
            k: self.k,
            tau: self.tau,
            h_max: self.h_max,
            n_probe: self.n_probe,
            n_buckets: self.n_buckets,
            subset_fraction: self.subset_fraction,
            fuzzy_for_validation: self.fuzzy_for_validation,
            fuzzy_for_draft: self.fuzzy_for_draft,
            scoring: if self.early_exit {
                ScoringMode::EarlyExit
            } else {
                ScoringMode::Full
            },
        }
    }
}

/// Per-call result summary. Document ids and scores go to caller buffers.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HasRetrieval {
    pub n_docs: usize,
    pub accepted: bool,
    /// Valid only when `accepted`.
    pub matched_query: u64,
    pub matched_score: f64,
    pub edge_seconds: f64,
    pub cloud_seconds: f64,
    pub total_seconds: f64,
    pub evictions: usize,
}

/// Opaque engine handle.
pub struct HasEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (HasStatus, String)>) -> HasStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HasStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside has-ffi".into());
            HasStatus::Panic
        }
    }
}

fn core_err(e: HasError) -> (HasStatus, String) {
    (HasStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (HasStatus, String) {
    (HasStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next `has_*` call on the same thread.
#[no_mangle]
pub extern "C" fn has_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn has_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default configuration to `out`.
///
/// # Safety
/// `out` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn has_engine_config_default(out: *mut HasEngineConfig) -> HasStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: checked non-null; caller guarantees validity.
        unsafe { out.write(HasEngineConfig::default()) };
        Ok(())
    })
}

/// Builds an engine over `n_docs` documents.
///
/// `vectors` holds `n_docs * dim` floats, row-major; rows need not be
/// normalized. `doc_ids` holds `n_docs` distinct ids. On success `*out`
/// receives a handle to release with [`has_engine_free`].
///
/// # Safety
/// `config` must be valid for reads, `doc_ids` for `n_docs` reads, `vectors`
/// for `n_docs * dim` reads, and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn has_engine_new(
    config: *const HasEngineConfig,
    dim: usize,
    doc_ids: *const u64,
    vectors: *const f32,
    n_docs: usize,
    out: *mut *mut HasEngine,
) -> HasStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n_docs > 0 && (doc_ids.is_null() || vectors.is_null()) {
            return Err(null("doc_ids or vectors"));
        }
        if dim == 0 {
            return Err((HasStatus::Config, "dim must be positive".into()));
        }
        // SAFETY: pointers checked above; lengths are the caller's contract.
        let cfg = unsafe { *config };
        let len = n_docs
            .checked_mul(dim)
            .ok_or_else(|| (HasStatus::Config, "n_docs * dim overflows".to_string()))?;
        let (ids, data) = if n_docs == 0 {
            (&[][..], &[][..])
        } else {
            unsafe {
                (
                    slice::from_raw_parts(doc_ids, n_docs),
                    slice::from_raw_parts(vectors, len),
                )
            }
        };
        let docs = ids
            .iter()
            .zip(data.chunks_exact(dim))
            .map(|(id, row)| {
                Embedding::new(row.to_vec())
                    .and_then(Embedding::ensure_normalized)
                    .map(|e| (DocId(*id), e))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(core_err)?;
        let core_cfg = cfg.to_core();
        core_cfg.validate().map_err(core_err)?;
        let full = FlatIndex::new(dim, &docs).map_err(core_err)?;
        let ivf = IvfIndex::build(dim, &docs, cfg.n_buckets, cfg.subset_fraction, cfg.ivf_seed)
            .map_err(core_err)?;
        let engine = Engine::new(
            core_cfg,
            Arc::new(full),
            Arc::new(ivf),
            LatencyModel::with_seed(cfg.latency_seed),
        )
        .map_err(core_err)?;
        let handle = Box::into_raw(Box::new(HasEngine { inner: engine }));
        // SAFETY: checked non-null.
        unsafe { out.write(handle) };
        Ok(())
    })
}

/// Retrieves up to `k` documents for one query.
///
/// `out_ids` and `out_scores` (either may be NULL) receive `result.n_docs`
/// entries and must hold at least `capacity`. Fails with `BufferTooSmall`
/// when `capacity` is below the configured `k`. Safe to call concurrently on
/// one engine.
///
/// # Safety
/// `engine` must come from [`has_engine_new`] and not be freed; `query` must
/// be valid for `dim` reads; non-NULL output buffers for `capacity` writes;
/// `result` for one write.
#[no_mangle]
pub unsafe extern "C" fn has_engine_retrieve(
    engine: *const HasEngine,
    query_id: u64,
    query: *const f32,
    dim: usize,
    out_ids: *mut u64,
    out_scores: *mut f32,
    capacity: usize,
    result: *mut HasRetrieval,
) -> HasStatus {
    guard(|| {
        if engine.is_null() {
            return Err(null("engine"));
        }
        if query.is_null() {
            return Err(null("query"));
        }
        if result.is_null() {
            return Err(null("result"));
        }
        // SAFETY: caller contract.
        let engine = unsafe { &(*engine).inner };
        let k = engine.config().k;
        if capacity < k && !(out_ids.is_null() && out_scores.is_null()) {
            return Err((
                HasStatus::BufferTooSmall,
                format!("capacity {capacity} is below k = {k}"),
            ));
        }
        let q = unsafe { slice::from_raw_parts(query, dim) };
        let q = Embedding::new(q.to_vec())
            .and_then(Embedding::ensure_normalized)
            .map_err(core_err)?;
        let out = engine.retrieve(QueryId(query_id), &q).map_err(core_err)?;
        for (i, h) in out.docs.iter().enumerate() {
            // SAFETY: i < n_docs <= k <= capacity.
            unsafe {
                if !out_ids.is_null() {
                    out_ids.add(i).write(h.doc_id.0);
                }
                if !out_scores.is_null() {
                    out_scores.add(i).write(h.score.value());
                }
            }
        }
        let summary = HasRetrieval {
            n_docs: out.docs.len(),
            accepted: out.accepted,
            matched_query: out.matched_query.map_or(0, |m| m.0),
            matched_score: out.matched_score.unwrap_or(0.0),
            edge_seconds: out.latency.edge_seconds,
            cloud_seconds: out.latency.cloud_seconds,
            total_seconds: out.latency.total_seconds,
            evictions: out.evictions.len(),
        };
        unsafe { result.write(summary) };
        Ok(())
    })
}

/// Number of cached queries, or 0 for NULL.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn has_engine_cache_len(engine: *const HasEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    catch_unwind(AssertUnwindSafe(|| unsafe {
        (*engine).inner.cache().len()
    }))
    .unwrap_or(0)
}

/// Cache footprint in bytes, or 0 for NULL.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn has_engine_cache_memory(engine: *const HasEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    catch_unwind(AssertUnwindSafe(|| unsafe {
        (*engine).inner.cache().memory_footprint()
    }))
    .unwrap_or(0)
}

/// Empties the query cache.
///
/// # Safety
/// `engine` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn has_engine_reset_cache(engine: *const HasEngine) -> HasStatus {
    guard(|| {
        if engine.is_null() {
            return Err(null("engine"));
        }
        unsafe { (*engine).inner.reset_cache() }.map_err(core_err)
    })
}

/// Releases an engine. NULL is a no-op.
///
/// # Safety
/// `engine` must be NULL or a handle from [`has_engine_new`] not yet freed,
/// with no calls in flight.
#[no_mangle]
pub unsafe extern "C" fn has_engine_free(engine: *mut HasEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

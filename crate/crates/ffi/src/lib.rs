//! C interface to `convres`.
//!
//! Every fallible function returns a [`ConvresStatus`]; on failure the
//! message is available from [`convres_last_error`] on the same thread.
//! Objects are opaque handles released with their `_free` function.
//! Strings returned through out-pointers are owned by the caller and
//! released with [`convres_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use convres::corpus::Corpus;
use convres::query::ResolvedQuery;
use convres::resolver::{predict_terms, ResolverModel};
use convres::retrieval::{search, InvertedIndex};
use convres::run::RankedList;
use convres::supervision::parse_topics;
use convres::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvresStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    Io = 3,
    Incompatible = 4,
    Config = 5,
    Numerical = 6,
    /// A panic was caught at the boundary.
    Internal = 7,
}

impl From<&Error> for ConvresStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Parse { .. } | Error::Json(_) => ConvresStatus::InvalidInput,
            Error::Config(_) => ConvresStatus::Config,
            Error::Incompatible { .. } => ConvresStatus::Incompatible,
            Error::Numerical(_) => ConvresStatus::Numerical,
            Error::Io { .. } => ConvresStatus::Io,
        }
    }
}

/// Passage index.
pub struct ConvresIndex(InvertedIndex);

/// Trained term classifier.
pub struct ConvresModel(ResolverModel);

/// Ranked passages for one query.
pub struct ConvresRanking {
    list: RankedList,
    ids: Vec<CString>,
}

impl ConvresRanking {
    fn new(list: RankedList) -> Self {
        let ids = list
            .ids()
            .map(|id| CString::new(id).unwrap_or_else(|_| CString::new(id.replace('\0', "")).expect("no NUL")))
            .collect();
        ConvresRanking { list, ids }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("NULs removed")));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, recording any error or panic for [`convres_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ConvresStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ConvresStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} must not be null"));
            ConvresStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            ConvresStatus::from(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ConvresStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::invalid(format!("{what} is not valid UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Lib(Error::invalid("string contains NUL")))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn convres_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn convres_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds an index from a `id<TAB>text` passage file.
///
/// # Safety
/// `corpus_tsv` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_index_build(corpus_tsv: *const c_char, out: *mut *mut ConvresIndex) -> ConvresStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let corpus = Corpus::read_tsv(Path::new(str_arg(corpus_tsv, "corpus_tsv")?))?;
        put(out, ConvresIndex(InvertedIndex::build(corpus.passages())?));
        Ok(())
    })
}

/// Loads an index directory written by [`convres_index_save`] or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_index_load(dir: *const c_char, out: *mut *mut ConvresIndex) -> ConvresStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, ConvresIndex(InvertedIndex::load(Path::new(str_arg(dir, "dir")?))?));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn convres_index_save(index: *const ConvresIndex, dir: *const c_char) -> ConvresStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        index.0.save(Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Number of indexed passages; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_index_num_passages(index: *const ConvresIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.num_passages())
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convres_index_free(index: *mut ConvresIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Query-likelihood search for a plain-text query.
///
/// # Safety
/// `index` must be a live handle, the strings NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn convres_search(
    index: *const ConvresIndex,
    query_id: *const c_char,
    query_text: *const c_char,
    depth: usize,
    mu: f64,
    out: *mut *mut ConvresRanking,
) -> ConvresStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let qid = str_arg(query_id, "query_id")?;
        let query = ResolvedQuery::from_text(str_arg(query_text, "query_text")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, ConvresRanking::new(search(&index.0, qid, &query, depth, mu)?));
        Ok(())
    })
}

/// Search with a weighted query given as a JSON object `{"term": weight}`
/// over normalized terms, as produced by [`convres_model_resolve`].
///
/// # Safety
/// As for [`convres_search`].
#[no_mangle]
pub unsafe extern "C" fn convres_search_weighted(
    index: *const ConvresIndex,
    query_id: *const c_char,
    query_json: *const c_char,
    depth: usize,
    mu: f64,
    out: *mut *mut ConvresRanking,
) -> ConvresStatus {
    guard(|| {
        let index = ref_arg(index, "index")?;
        let qid = str_arg(query_id, "query_id")?;
        let query: ResolvedQuery = serde_json::from_str(str_arg(query_json, "query_json")?).map_err(Error::from)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, ConvresRanking::new(search(&index.0, qid, &query, depth, mu)?));
        Ok(())
    })
}

/// Number of entries; 0 for NULL.
///
/// # Safety
/// `ranking` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_ranking_len(ranking: *const ConvresRanking) -> usize {
    ranking.as_ref().map_or(0, |r| r.ids.len())
}

/// Passage id at `rank` (0-based), or NULL when out of range. Borrowed from
/// the ranking; valid until it is freed.
///
/// # Safety
/// `ranking` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_ranking_passage_id(ranking: *const ConvresRanking, rank: usize) -> *const c_char {
    ranking
        .as_ref()
        .and_then(|r| r.ids.get(rank))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Score at `rank` (0-based); NaN when out of range.
///
/// # Safety
/// `ranking` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn convres_ranking_score(ranking: *const ConvresRanking, rank: usize) -> f64 {
    ranking
        .as_ref()
        .and_then(|r| r.list.entries.get(rank))
        .map_or(f64::NAN, |e| e.score)
}

/// # Safety
/// `ranking` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convres_ranking_free(ranking: *mut ConvresRanking) {
    if !ranking.is_null() {
        drop(Box::from_raw(ranking));
    }
}

/// Reciprocal rank fusion of `count` rankings; the first fixes the
/// candidate set.
///
/// # Safety
/// `rankings` must point to `count` live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn convres_rrf_fuse(
    rankings: *const *const ConvresRanking,
    count: usize,
    k: f64,
    out: *mut *mut ConvresRanking,
) -> ConvresStatus {
    guard(|| {
        if rankings.is_null() {
            return Err(Failure::Null("rankings"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let lists = std::slice::from_raw_parts(rankings, count)
            .iter()
            .map(|&r| ref_arg(r, "ranking").map(|r| &r.list))
            .collect::<Result<Vec<_>, _>>()?;
        put(out, ConvresRanking::new(convres::fusion::rrf_fuse(&lists, k)?));
        Ok(())
    })
}

/// Loads a classifier checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convres_model_load(path: *const c_char, out: *mut *mut ConvresModel) -> ConvresStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        put(out, ConvresModel(ResolverModel::load(Path::new(str_arg(path, "path")?))?));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convres_model_free(model: *mut ConvresModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Resolves turn `turn` of a topic given as one JSON line
/// (`{"topic_id": .., "turns": [{"turn": 1, "query": ..}, ..]}`).
/// Writes `{"terms": [..], "query": {"term": weight, ..}}` to `out_json`.
///
/// # Safety
/// `model` must be a live handle, `topic_json` NUL-terminated and
/// `out_json` valid.
#[no_mangle]
pub unsafe extern "C" fn convres_model_resolve(
    model: *const ConvresModel,
    topic_json: *const c_char,
    turn: u32,
    threshold: f64,
    out_json: *mut *mut c_char,
) -> ConvresStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let text = str_arg(topic_json, "topic_json")?;
        if out_json.is_null() {
            return Err(Failure::Null("out_json"));
        }
        let topics = parse_topics(text.as_bytes(), "topic_json")?;
        let [topic] = topics.as_slice() else {
            return Err(Error::invalid(format!("expected one topic, got {}", topics.len())).into());
        };
        let current = topic
            .turn(turn)
            .ok_or_else(|| Error::invalid(format!("topic {} has no turn {turn}", topic.topic_id)))?;
        let terms = predict_terms(&model.0, topic, turn, threshold)?;
        let query = convres::query::resolve(&current.query, &terms);
        let body = serde_json::json!({"terms": terms, "query": query});
        *out_json = owned_string(body.to_string())?;
        Ok(())
    })
}

//! C ABI over the recdcl engine.
//!
//! Every fallible function returns an [`RdclStatus`]; on failure the message
//! is available from [`rdcl_last_error`] on the same thread. Handles are
//! opaque, owned by the caller once returned, and released with the matching
//! `*_free` function. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use recdcl::corpus::{self, InteractionTable, Split, SplitRatios};
use recdcl::eval;
use recdcl::graph::BipartiteGraph;
use recdcl::model::{HistoricalCache, ModelState};
use recdcl::trainer::{self, TrainConfig};
use recdcl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdclStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Config = 6,
    Shape = 7,
    Numeric = 8,
    Checkpoint = 9,
    OutOfRange = 10,
    Panic = 11,
}

/// Interactions with their train/valid/test assignment.
pub struct RdclCorpus {
    table: InteractionTable,
}

/// Training hyperparameters.
pub struct RdclConfig {
    config: TrainConfig,
}

/// Trained parameters bound to the graph of the corpus they belong to.
pub struct RdclModel {
    state: ModelState,
    hist: HistoricalCache,
    graph: BipartiteGraph,
    train_items: Vec<Vec<u32>>,
    normalized: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NUL bytes removed"));
}

struct Failure(RdclStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.category() {
            "io" => RdclStatus::Io,
            "parse" => RdclStatus::Parse,
            "data" => RdclStatus::Data,
            "config" => RdclStatus::Config,
            "shape" => RdclStatus::Shape,
            "numeric" => RdclStatus::Numeric,
            "checkpoint" => RdclStatus::Checkpoint,
            _ => RdclStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RdclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RdclStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RdclStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RdclStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RdclStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn give<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version. Static; never freed.
#[no_mangle]
pub extern "C" fn rdcl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string after
/// a successful one. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn rdcl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a split manifest written by `recdcl split`.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rdcl_corpus_load_manifest(path: *const c_char, out: *mut *mut RdclCorpus) -> RdclStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let table = InteractionTable::read_manifest(path)?;
        give(out, RdclCorpus { table })
    })
}

/// Reads a `user item [timestamp]` file, keeps `fraction` of the users and
/// splits per user with the given ratios.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rdcl_corpus_ingest_split(
    path: *const c_char,
    fraction: f64,
    train: f64,
    valid: f64,
    test: f64,
    seed: u64,
    out: *mut *mut RdclCorpus,
) -> RdclStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let mut raw = corpus::ingest(path)?;
        if fraction != 1.0 {
            raw = raw.subsample_users(fraction, seed)?;
        }
        let ratios = SplitRatios { train, valid, test };
        let table = corpus::split(&raw, ratios, seed)?;
        give(out, RdclCorpus { table })
    })
}

/// # Safety
/// `corpus` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn rdcl_corpus_counts(
    corpus: *const RdclCorpus,
    users: *mut usize,
    items: *mut usize,
    pairs: *mut usize,
) -> RdclStatus {
    guard(|| {
        let t = &handle(corpus, "corpus")?.table;
        for (p, v) in [(users, t.user_count), (items, t.item_count), (pairs, t.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rdcl_corpus_free(corpus: *mut RdclCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// One of `beauty`, `food`, `game`, `yelp`.
///
/// # Safety
/// `name` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rdcl_config_preset(name: *const c_char, out: *mut *mut RdclConfig) -> RdclStatus {
    guard(|| {
        let config = TrainConfig::preset(str_arg(name, "name")?)?;
        give(out, RdclConfig { config })
    })
}

/// Sets one key as in a configuration file, e.g. `("F", "64")`.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn rdcl_config_set(
    config: *mut RdclConfig,
    key: *const c_char,
    value: *const c_char,
) -> RdclStatus {
    guard(|| {
        let c = handle_mut(config, "config")?;
        c.config.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rdcl_config_free(config: *mut RdclConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Trains with early stopping and returns the best checkpoint.
/// `best_valid_recall20` may be null.
///
/// # Safety
/// `config` and `corpus` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rdcl_train(
    config: *const RdclConfig,
    corpus: *const RdclCorpus,
    out: *mut *mut RdclModel,
    best_valid_recall20: *mut f64,
) -> RdclStatus {
    guard(|| {
        let config = &handle(config, "config")?.config;
        let table = &handle(corpus, "corpus")?.table;
        config.validate()?;
        let fit = trainer::fit(config, table)?;
        if let Some(r) = best_valid_recall20.as_mut() {
            *r = fit.best_recall20;
        }
        give(
            out,
            RdclModel {
                state: fit.best_state,
                hist: fit.best_hist,
                graph: fit.graph,
                train_items: table.items_by_user(Split::Train),
                normalized: config.normalized_scoring,
            },
        )
    })
}

/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn rdcl_model_save(model: *const RdclModel, path: *const c_char) -> RdclStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.state.save_checkpoint(&m.hist, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Loads a checkpoint trained on `corpus`. Scores use raw inner products
/// unless `normalized` is non-zero.
///
/// # Safety
/// `corpus` must be a live handle, `path` a valid C string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rdcl_model_load(
    corpus: *const RdclCorpus,
    path: *const c_char,
    normalized: u8,
    out: *mut *mut RdclModel,
) -> RdclStatus {
    guard(|| {
        let table = &handle(corpus, "corpus")?.table;
        let (state, hist) = ModelState::load_checkpoint(str_arg(path, "path")?)?;
        if state.n_users != table.user_count || state.n_items != table.item_count {
            return Err(Failure(
                RdclStatus::Shape,
                format!(
                    "checkpoint has {} users and {} items, corpus has {} and {}",
                    state.n_users, state.n_items, table.user_count, table.item_count
                ),
            ));
        }
        let graph = BipartiteGraph::build(table)?;
        give(
            out,
            RdclModel {
                state,
                hist,
                graph,
                train_items: table.items_by_user(Split::Train),
                normalized: normalized != 0,
            },
        )
    })
}

/// # Safety
/// `model` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn rdcl_model_shape(
    model: *const RdclModel,
    users: *mut usize,
    items: *mut usize,
    dim: *mut usize,
) -> RdclStatus {
    guard(|| {
        let s = &handle(model, "model")?.state;
        for (p, v) in [(users, s.n_users), (items, s.n_items), (dim, s.dim)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Writes one score per item into `scores[0..len]`; `len` must equal the
/// item count. With `mask_train` non-zero the user's training items score
/// `-inf`.
///
/// # Safety
/// `model` must be a live handle and `scores` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rdcl_model_score_user(
    model: *const RdclModel,
    user: u32,
    mask_train: u8,
    scores: *mut f64,
    len: usize,
) -> RdclStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        if user as usize >= m.state.n_users {
            return Err(Failure(
                RdclStatus::OutOfRange,
                format!("user {user} out of range 0..{}", m.state.n_users),
            ));
        }
        if len != m.state.n_items {
            return Err(Failure(
                RdclStatus::Shape,
                format!("buffer holds {len} scores, model has {} items", m.state.n_items),
            ));
        }
        let scorer = eval::Scorer::new(&m.state, &m.graph, m.normalized)?;
        let masked: &[u32] = if mask_train != 0 {
            &m.train_items[user as usize]
        } else {
            &[]
        };
        let out = std::slice::from_raw_parts_mut(scores, len);
        out.copy_from_slice(&scorer.score_all(user, masked));
        Ok(())
    })
}

/// Recall@k and NDCG@k on the valid (`split` = 1) or test (`split` = 2)
/// interactions of `corpus`, averaged over users holding any.
///
/// # Safety
/// `model` and `corpus` must be live handles; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn rdcl_evaluate(
    model: *const RdclModel,
    corpus: *const RdclCorpus,
    split: u8,
    k: usize,
    recall: *mut f64,
    ndcg: *mut f64,
) -> RdclStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let table = &handle(corpus, "corpus")?.table;
        let split = match Split::from_code(split) {
            Some(s @ (Split::Valid | Split::Test)) => s,
            _ => {
                return Err(Failure(
                    RdclStatus::OutOfRange,
                    format!("split must be 1 or 2, got {split}"),
                ))
            }
        };
        let metrics = eval::evaluate(&m.state, &m.graph, table, split, &[k], m.normalized)?;
        if let Some(r) = recall.as_mut() {
            *r = metrics.recall[0];
        }
        if let Some(n) = ndcg.as_mut() {
            *n = metrics.ndcg[0];
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rdcl_model_free(model: *mut RdclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

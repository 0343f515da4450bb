//! C ABI for the multilinguality laboratory.
//!
//! Conventions: every fallible function returns [`MlStatus`]; on failure a
//! thread-local message is retrievable with `mlmlab_last_error` (free it
//! with `mlmlab_string_free`). Objects are opaque handles created and
//! destroyed by the paired `_free` functions. Passing NULL where a handle
//! is required yields `MLMLAB_STATUS_USAGE`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use mlmlab::corpus::{read_archive, split_nonparallel, write_archive, Lang, ParallelCorpus, Split};
use mlmlab::eval::{evaluate_model, kendall_tau_distance, EvalOptions, EvalReport};
use mlmlab::experiment::{lookup, run_experiment, LabConfig};
use mlmlab::model::{load_checkpoint, EncoderModel};
use mlmlab::tokenizer::{
    extend_shifted, load_vocabulary, save_vocabulary, tokenize, train_wordpiece, Vocabulary,
};
use mlmlab::Error;

/// Result codes mirrored by the CLI's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    MlmlabStatusOk = 0,
    MlmlabStatusUsage = 1,
    MlmlabStatusData = 2,
    MlmlabStatusDiverged = 3,
    MlmlabStatusInternal = 4,
}

use MlStatus::*;

/// Opaque wordpiece vocabulary (two-language table).
pub struct MlVocab {
    inner: Vocabulary,
}

/// Opaque tokenized two-language corpus.
pub struct MlCorpus {
    inner: ParallelCorpus,
}

/// Opaque encoder checkpoint.
pub struct MlModel {
    inner: EncoderModel<f32>,
}

/// Opaque evaluation report.
pub struct MlReport {
    inner: EvalReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MlStatus {
    match err {
        Error::Diverged { .. } => MlmlabStatusDiverged,
        Error::Config(_) => MlmlabStatusUsage,
        _ => MlmlabStatusData,
    }
}

fn run_guarded(f: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlmlabStatusOk,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MlmlabStatusInternal
        }
    }
}

fn api_err(e: Error) -> (MlStatus, String) {
    (status_of(&e), e.to_string())
}

fn usage(msg: &str) -> (MlStatus, String) {
    (MlmlabStatusUsage, msg.to_string())
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (MlStatus, String)> {
    if p.is_null() {
        return Err(usage(&format!("{name} is NULL")));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| usage(&format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, (MlStatus, String)> {
    if p.is_null() {
        Err(usage(&format!("{name} is NULL")))
    } else {
        Ok(unsafe { &*p })
    }
}

fn lang_arg(lang: i32) -> Result<Lang, (MlStatus, String)> {
    match lang {
        0 => Ok(Lang::Eng),
        1 => Ok(Lang::Fake),
        other => Err(usage(&format!(
            "lang must be 0 (eng) or 1 (fake), got {other}"
        ))),
    }
}

/// Library version string; static, do not free.
#[no_mangle]
pub extern "C" fn mlmlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The last error message on this thread, or NULL. Caller frees with
/// `mlmlab_string_free`.
#[no_mangle]
pub extern "C" fn mlmlab_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

#[no_mangle]
pub extern "C" fn mlmlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        unsafe {
            drop(CString::from_raw(s));
        }
    }
}

/// Force single-threaded kernels (non-zero = on) for exact reproducibility.
#[no_mangle]
pub extern "C" fn mlmlab_set_single_thread(on: i32) {
    mlmlab::tensor::set_single_thread(on != 0);
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

/// Train a WordPiece vocabulary on a text file and extend it to the
/// two-language table.
///
/// # Safety
/// `corpus_path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_vocab_train(
    corpus_path: *const c_char,
    target_size: u32,
    shift_special: i32,
    out: *mut *mut MlVocab,
) -> MlStatus {
    run_guarded(|| {
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let path = unsafe { path_arg(corpus_path, "corpus_path")? };
        let raw =
            mlmlab::corpus::load_corpus(&path, Split::Train, &mlmlab::corpus::SplitRule::default())
                .map_err(api_err)?;
        let mono = train_wordpiece(&raw, target_size as usize).map_err(api_err)?;
        let vocab = extend_shifted(&mono, shift_special != 0);
        unsafe {
            *out = Box::into_raw(Box::new(MlVocab { inner: vocab }));
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_vocab_load(
    path: *const c_char,
    out: *mut *mut MlVocab,
) -> MlStatus {
    run_guarded(|| {
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let path = unsafe { path_arg(path, "path")? };
        let vocab = load_vocabulary(&path).map_err(api_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(MlVocab { inner: vocab }));
        }
        Ok(())
    })
}

/// # Safety
/// `vocab` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_vocab_save(vocab: *const MlVocab, path: *const c_char) -> MlStatus {
    run_guarded(|| {
        let v = unsafe { handle(vocab, "vocab")? };
        let path = unsafe { path_arg(path, "path")? };
        save_vocabulary(&v.inner, &path).map_err(api_err)
    })
}

/// Total (two-language) vocabulary size; 0 if the handle is NULL.
#[no_mangle]
pub extern "C" fn mlmlab_vocab_total_size(vocab: *const MlVocab) -> u32 {
    if vocab.is_null() {
        return 0;
    }
    unsafe { &*vocab }.inner.total_size()
}

/// Monolingual vocabulary size (= the fake-language id shift).
#[no_mangle]
pub extern "C" fn mlmlab_vocab_mono_size(vocab: *const MlVocab) -> u32 {
    if vocab.is_null() {
        return 0;
    }
    unsafe { &*vocab }.inner.mono_size
}

#[no_mangle]
pub extern "C" fn mlmlab_vocab_free(vocab: *mut MlVocab) {
    if !vocab.is_null() {
        unsafe {
            drop(Box::from_raw(vocab));
        }
    }
}

/// Tokenize whitespace-separated `text` into `lang` token ids.
/// Writes at most `cap` ids to `out_ids`; `out_len` always receives the
/// full tokenization length (call with cap 0 to query the size).
///
/// # Safety
/// Pointers must be valid; `out_ids` must hold `cap` u32 slots.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_tokenize(
    vocab: *const MlVocab,
    text: *const c_char,
    lang: i32,
    out_ids: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> MlStatus {
    run_guarded(|| {
        let v = unsafe { handle(vocab, "vocab")? };
        if out_len.is_null() {
            return Err(usage("out_len is NULL"));
        }
        if text.is_null() {
            return Err(usage("text is NULL"));
        }
        let text = unsafe { CStr::from_ptr(text) }
            .to_str()
            .map_err(|_| usage("text is not valid UTF-8"))?;
        let lang = lang_arg(lang)?;
        let words: Vec<String> = text.split_whitespace().map(|w| w.to_string()).collect();
        let t = tokenize(&words, &v.inner, v.inner.language(lang));
        unsafe {
            *out_len = t.ids.len();
        }
        if !out_ids.is_null() && cap > 0 {
            let n = t.ids.len().min(cap);
            unsafe {
                std::ptr::copy_nonoverlapping(t.ids.as_ptr(), out_ids, n);
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

/// Tokenize a text file into the two-language corpus, optionally inverted
/// (fake side reversed) or split into non-parallel halves.
///
/// # Safety
/// `vocab` must be live; `input_path` a valid C string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_corpus_prepare(
    vocab: *const MlVocab,
    input_path: *const c_char,
    invert: i32,
    no_parallel: i32,
    out: *mut *mut MlCorpus,
) -> MlStatus {
    run_guarded(|| {
        let v = unsafe { handle(vocab, "vocab")? };
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let path = unsafe { path_arg(input_path, "input_path")? };
        let raw =
            mlmlab::corpus::load_corpus(&path, Split::Train, &mlmlab::corpus::SplitRule::default())
                .map_err(api_err)?;
        let eng: Vec<Vec<u32>> = raw
            .sentences
            .iter()
            .map(|s| tokenize(s, &v.inner, v.inner.language(Lang::Eng)).ids)
            .collect();
        let mut corpus =
            ParallelCorpus::from_tokenized(eng, v.inner.language(Lang::Fake), invert != 0)
                .map_err(api_err)?;
        if no_parallel != 0 {
            corpus = split_nonparallel(&corpus).map_err(api_err)?;
        }
        unsafe {
            *out = Box::into_raw(Box::new(MlCorpus { inner: corpus }));
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_corpus_load(
    path: *const c_char,
    out: *mut *mut MlCorpus,
) -> MlStatus {
    run_guarded(|| {
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let path = unsafe { path_arg(path, "path")? };
        let corpus = read_archive(&path).map_err(api_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(MlCorpus { inner: corpus }));
        }
        Ok(())
    })
}

/// # Safety
/// `corpus` must be live; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_corpus_save(
    corpus: *const MlCorpus,
    path: *const c_char,
) -> MlStatus {
    run_guarded(|| {
        let c = unsafe { handle(corpus, "corpus")? };
        let path = unsafe { path_arg(path, "path")? };
        write_archive(&c.inner, &path).map_err(api_err)
    })
}

/// Sentence count of one side (lang 0 = base, 1 = fake); 0 on NULL.
#[no_mangle]
pub extern "C" fn mlmlab_corpus_len(corpus: *const MlCorpus, lang: i32) -> usize {
    if corpus.is_null() {
        return 0;
    }
    let c = unsafe { &*corpus };
    match lang {
        0 => c.inner.eng.len(),
        _ => c.inner.fake.len(),
    }
}

#[no_mangle]
pub extern "C" fn mlmlab_corpus_free(corpus: *mut MlCorpus) {
    if !corpus.is_null() {
        unsafe {
            drop(Box::from_raw(corpus));
        }
    }
}

// ---------------------------------------------------------------------------
// model + evaluation
// ---------------------------------------------------------------------------

/// # Safety
/// `path` must be a valid C string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_checkpoint_load(
    path: *const c_char,
    out: *mut *mut MlModel,
) -> MlStatus {
    run_guarded(|| {
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let path = unsafe { path_arg(path, "path")? };
        let model = load_checkpoint(&path).map_err(api_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(MlModel { inner: model }));
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mlmlab_model_free(model: *mut MlModel) {
    if !model.is_null() {
        unsafe {
            drop(Box::from_raw(model));
        }
    }
}

/// Evaluate a checkpoint against a parallel dev corpus.
///
/// # Safety
/// All handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_evaluate(
    model: *const MlModel,
    dev: *const MlCorpus,
    vocab: *const MlVocab,
    max_pairs: usize,
    out: *mut *mut MlReport,
) -> MlStatus {
    run_guarded(|| {
        let m = unsafe { handle(model, "model")? };
        let d = unsafe { handle(dev, "dev")? };
        let v = unsafe { handle(vocab, "vocab")? };
        if out.is_null() {
            return Err(usage("out is NULL"));
        }
        let opts = EvalOptions {
            max_pairs: if max_pairs == 0 { 1000 } else { max_pairs },
            ..EvalOptions::default()
        };
        let report = evaluate_model(&m.inner, &d.inner, &v.inner, &opts).map_err(api_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(MlReport { inner: report }));
        }
        Ok(())
    })
}

/// Read one metric field off a report. Field names: mu, f1_0, rho_0, tau_0,
/// f1_8, rho_8, tau_8, train_ppl, dev_ppl.
///
/// # Safety
/// `report` must be live; `field` a valid C string; `value` valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_report_field(
    report: *const MlReport,
    field: *const c_char,
    value: *mut f64,
) -> MlStatus {
    run_guarded(|| {
        let r = unsafe { handle(report, "report")? };
        if value.is_null() {
            return Err(usage("value is NULL"));
        }
        if field.is_null() {
            return Err(usage("field is NULL"));
        }
        let name = unsafe { CStr::from_ptr(field) }
            .to_str()
            .map_err(|_| usage("field is not valid UTF-8"))?;
        let rep = &r.inner;
        let v = match name {
            "mu" => rep.mu,
            "f1_0" => rep.f1_0,
            "rho_0" => rep.rho_0,
            "tau_0" => rep.tau_0,
            "f1_8" => rep.f1_8,
            "rho_8" => rep.rho_8,
            "tau_8" => rep.tau_8,
            "train_ppl" => rep.train_ppl,
            "dev_ppl" => rep.dev_ppl,
            other => return Err(usage(&format!("unknown report field: {other}"))),
        };
        unsafe {
            *value = v;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn mlmlab_report_free(report: *mut MlReport) {
    if !report.is_null() {
        unsafe {
            drop(Box::from_raw(report));
        }
    }
}

// ---------------------------------------------------------------------------
// experiments and metrics
// ---------------------------------------------------------------------------

/// Run a full experiment by ID. `config_path` may be NULL (defaults);
/// `seeds` may be NULL to use the default seed list. On success
/// `out_mean_mu` receives the across-seed mean of the aggregate score.
///
/// # Safety
/// Strings must be valid C strings or NULL where documented; `seeds` must
/// point to `n_seeds` u64 values when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_run_experiment(
    id: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    seeds: *const u64,
    n_seeds: usize,
    out_mean_mu: *mut f64,
) -> MlStatus {
    run_guarded(|| {
        if id.is_null() {
            return Err(usage("id is NULL"));
        }
        let id = unsafe { CStr::from_ptr(id) }
            .to_str()
            .map_err(|_| usage("id is not valid UTF-8"))?;
        let lab = if config_path.is_null() {
            LabConfig::default()
        } else {
            let p = unsafe { path_arg(config_path, "config_path")? };
            LabConfig::from_file(&p).map_err(api_err)?
        };
        let out_dir = unsafe { path_arg(out_dir, "out_dir")? };
        let mut spec = lookup(id).map_err(api_err)?;
        if !seeds.is_null() && n_seeds > 0 {
            spec.seeds = unsafe { std::slice::from_raw_parts(seeds, n_seeds) }.to_vec();
        }
        std::fs::create_dir_all(&out_dir).map_err(|e| api_err(Error::io(out_dir.clone(), e)))?;
        let agg = run_experiment(&spec, &lab, Some(Path::new(&out_dir))).map_err(api_err)?;
        if !out_mean_mu.is_null() {
            unsafe {
                *out_mean_mu = agg.stat("mu").0;
            }
        }
        Ok(())
    })
}

/// Word-order score of a permutation of 0..len-1 (identity = 1.0).
///
/// # Safety
/// `perm` must point to `len` u32 values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mlmlab_kendall_tau(
    perm: *const u32,
    len: usize,
    out: *mut f64,
) -> MlStatus {
    run_guarded(|| {
        if perm.is_null() || out.is_null() {
            return Err(usage("perm/out is NULL"));
        }
        let slice = unsafe { std::slice::from_raw_parts(perm, len) };
        let perm: Vec<usize> = slice.iter().map(|&x| x as usize).collect();
        let v = kendall_tau_distance(&perm).map_err(api_err)?;
        unsafe {
            *out = v;
        }
        Ok(())
    })
}

//! C ABI for the streamdec decoding engine.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns a
//! [`StreamdecStatus`]; on failure a message is available from
//! [`streamdec_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use streamdec_core::metrics::write_trace_jsonl;
use streamdec_core::scheduler::{adaptive_threshold, decode};
use streamdec_core::{
    DecodeConfig, DecodeResult, Denoiser, Error, LocalMarkovOracle, OracleScript, SchedulerKind,
    ScriptedOracle, TokenId, ToyTransformer,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamdecStatus {
    Ok = 0,
    NullPointer = 1,
    /// Parameters or configuration rejected.
    InvalidArgument = 2,
    /// A denoiser or script could not be built.
    InvalidDenoiser = 3,
    /// Decoding failed part way.
    DecodeFailed = 4,
    /// Caller buffer too small; the required length was written back.
    BufferTooSmall = 5,
    Utf8 = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamdecScheduler {
    Streaming = 0,
    FixedThreshold = 1,
    PrefixCache = 2,
    Vanilla = 3,
}

impl From<StreamdecScheduler> for SchedulerKind {
    fn from(s: StreamdecScheduler) -> Self {
        match s {
            StreamdecScheduler::Streaming => SchedulerKind::Streaming,
            StreamdecScheduler::FixedThreshold => SchedulerKind::FixedThreshold,
            StreamdecScheduler::PrefixCache => SchedulerKind::PrefixCache,
            StreamdecScheduler::Vanilla => SchedulerKind::Vanilla,
        }
    }
}

impl From<SchedulerKind> for StreamdecScheduler {
    fn from(s: SchedulerKind) -> Self {
        match s {
            SchedulerKind::Streaming => StreamdecScheduler::Streaming,
            SchedulerKind::FixedThreshold => StreamdecScheduler::FixedThreshold,
            SchedulerKind::PrefixCache => StreamdecScheduler::PrefixCache,
            SchedulerKind::Vanilla => StreamdecScheduler::Vanilla,
        }
    }
}

/// Decoding parameters; mirrors the engine's decode config.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct StreamdecConfig {
    pub gen_len: usize,
    pub block_size: usize,
    pub window: usize,
    pub tau0: f64,
    pub alpha: f64,
    pub early_exit: bool,
    pub keep_trailing: bool,
    pub steps_per_block: usize,
    pub scheduler: StreamdecScheduler,
    pub seed: u64,
}

impl From<&StreamdecConfig> for DecodeConfig {
    fn from(c: &StreamdecConfig) -> Self {
        DecodeConfig {
            gen_len: c.gen_len,
            block_size: c.block_size,
            window: c.window,
            tau0: c.tau0,
            alpha: c.alpha,
            early_exit: c.early_exit,
            keep_trailing: c.keep_trailing,
            steps_per_block: c.steps_per_block,
            scheduler: c.scheduler.into(),
            seed: c.seed,
        }
    }
}

/// Whole-run cost totals.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct StreamdecCounters {
    pub forward_calls: u64,
    pub query_tokens: u64,
    pub key_tokens: u64,
    pub attention_pairs: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub non_eos_tokens: u64,
}

/// Opaque denoiser handle.
pub struct StreamdecDenoiser {
    inner: Box<dyn Denoiser>,
}

/// Opaque decode result handle.
pub struct StreamdecResult {
    inner: DecodeResult,
    trace_jsonl: Option<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> StreamdecStatus {
    match e {
        Error::InvalidDenoiser(_) | Error::MalformedScript(_) | Error::OddEmbedDim(_) => {
            StreamdecStatus::InvalidDenoiser
        }
        Error::NonDivisible { .. }
        | Error::ZeroLength
        | Error::EmptyPrompt
        | Error::VocabMismatch { .. }
        | Error::ParamOutOfRange { .. }
        | Error::ConfigInvalid { .. } => StreamdecStatus::InvalidArgument,
        _ => StreamdecStatus::DecodeFailed,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (StreamdecStatus, String)>) -> StreamdecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StreamdecStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside streamdec");
            StreamdecStatus::Panic
        }
    }
}

fn engine<T>(r: streamdec_core::Result<T>) -> Result<T, (StreamdecStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (StreamdecStatus, String) {
    (StreamdecStatus::NullPointer, format!("`{what}` is null"))
}

fn give_denoiser(out: *mut *mut StreamdecDenoiser, d: Box<dyn Denoiser>) {
    // SAFETY: callers check `out` for null before building the denoiser.
    unsafe { *out = Box::into_raw(Box::new(StreamdecDenoiser { inner: d })) };
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn streamdec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn streamdec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default decode parameters to `out`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `StreamdecConfig`.
#[no_mangle]
pub unsafe extern "C" fn streamdec_config_default(out: *mut StreamdecConfig) -> StreamdecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = DecodeConfig::default();
        *out = StreamdecConfig {
            gen_len: d.gen_len,
            block_size: d.block_size,
            window: d.window,
            tau0: d.tau0,
            alpha: d.alpha,
            early_exit: d.early_exit,
            keep_trailing: d.keep_trailing,
            steps_per_block: d.steps_per_block,
            scheduler: d.scheduler.into(),
            seed: d.seed,
        };
        Ok(())
    })
}

/// `tau0 * (1 - alpha * (1 - r_mask))`, with range checks.
///
/// # Safety
/// `out` must be NULL or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn streamdec_adaptive_threshold(
    tau0: f64,
    alpha: f64,
    r_mask: f64,
    out: *mut f64,
) -> StreamdecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = engine(adaptive_threshold(tau0, alpha, r_mask))?;
        Ok(())
    })
}

/// Deterministic local oracle with locality radius `radius`.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn streamdec_denoiser_local_markov(
    radius: usize,
    vocab: usize,
    seed: u64,
    out: *mut *mut StreamdecDenoiser,
) -> StreamdecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        give_denoiser(
            out,
            Box::new(engine(LocalMarkovOracle::new(radius, vocab, seed))?),
        );
        Ok(())
    })
}

/// One-layer seeded attention model.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn streamdec_denoiser_toy_transformer(
    embed_dim: usize,
    vocab: usize,
    seed: u64,
    out: *mut *mut StreamdecDenoiser,
) -> StreamdecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        give_denoiser(
            out,
            Box::new(engine(ToyTransformer::new(embed_dim, vocab, seed))?),
        );
        Ok(())
    })
}

/// Scripted oracle from its JSON text. `vocab == 0` infers the vocabulary
/// from the script.
///
/// # Safety
/// `script_json` must be NULL or a valid NUL-terminated string; `out` must be
/// NULL or point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn streamdec_denoiser_scripted(
    script_json: *const c_char,
    vocab: usize,
    out: *mut *mut StreamdecDenoiser,
) -> StreamdecStatus {
    guard(|| {
        if script_json.is_null() {
            return Err(null("script_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(script_json)
            .to_str()
            .map_err(|e| (StreamdecStatus::Utf8, e.to_string()))?;
        let script = engine(OracleScript::from_json(text))?;
        let d = if vocab == 0 {
            engine(ScriptedOracle::new(&script))?
        } else {
            engine(ScriptedOracle::with_vocab(&script, vocab))?
        };
        give_denoiser(out, Box::new(d));
        Ok(())
    })
}

/// # Safety
/// `d` must be NULL or a handle from a `streamdec_denoiser_*` constructor
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn streamdec_denoiser_free(d: *mut StreamdecDenoiser) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Decodes `gen_len` tokens after the prompt.
///
/// # Safety
/// `denoiser` must be a live handle, `prompt` must point to `prompt_len`
/// readable `uint32_t`, `config` to one readable `StreamdecConfig` and `out`
/// to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn streamdec_decode(
    denoiser: *const StreamdecDenoiser,
    prompt: *const u32,
    prompt_len: usize,
    config: *const StreamdecConfig,
    out: *mut *mut StreamdecResult,
) -> StreamdecStatus {
    guard(|| {
        if denoiser.is_null() {
            return Err(null("denoiser"));
        }
        if prompt.is_null() && prompt_len > 0 {
            return Err(null("prompt"));
        }
        if config.is_null() {
            return Err(null("config"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let tokens: Vec<TokenId> = if prompt_len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(prompt, prompt_len)
                .iter()
                .map(|&t| TokenId(t))
                .collect()
        };
        let cfg = DecodeConfig::from(&*config);
        let result = engine(decode(&tokens, (*denoiser).inner.as_ref(), &cfg))?;
        *out = Box::into_raw(Box::new(StreamdecResult {
            inner: result,
            trace_jsonl: None,
        }));
        Ok(())
    })
}

/// Number of generated slots in the result (NULL gives 0).
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_len(r: *const StreamdecResult) -> usize {
    r.as_ref().map_or(0, |r| r.inner.tokens.len())
}

/// Copies the generated token ids into `buf`. `written` receives the number
/// of ids copied, or the required capacity when `cap` is too small.
///
/// # Safety
/// `r` must be a live result handle, `buf` must point to `cap` writable
/// `uint32_t` and `written` to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_tokens(
    r: *const StreamdecResult,
    buf: *mut u32,
    cap: usize,
    written: *mut usize,
) -> StreamdecStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("result"))?;
        if written.is_null() {
            return Err(null("written"));
        }
        let tokens = &r.inner.tokens;
        *written = tokens.len();
        if cap < tokens.len() {
            return Err((
                StreamdecStatus::BufferTooSmall,
                format!("need {} slots, have {cap}", tokens.len()),
            ));
        }
        if buf.is_null() && !tokens.is_empty() {
            return Err(null("buf"));
        }
        for (i, t) in tokens.iter().enumerate() {
            *buf.add(i) = t.0;
        }
        Ok(())
    })
}

/// Block after which decoding stopped early, or -1.
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_exited_early_at(r: *const StreamdecResult) -> i64 {
    r.as_ref()
        .and_then(|r| r.inner.exited_early_at)
        .map_or(-1, |b| b as i64)
}

/// Number of decode steps taken.
///
/// # Safety
/// `r` must be NULL or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_steps(r: *const StreamdecResult) -> usize {
    r.as_ref().map_or(0, |r| r.inner.trace.len())
}

/// # Safety
/// `r` must be a live result handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_counters(
    r: *const StreamdecResult,
    out: *mut StreamdecCounters,
) -> StreamdecStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = &r.inner.ledger.totals;
        *out = StreamdecCounters {
            forward_calls: t.forward_calls,
            query_tokens: t.query_tokens,
            key_tokens: t.key_tokens,
            attention_pairs: t.attention_pairs,
            cache_hits: t.cache_hits,
            cache_misses: t.cache_misses,
            non_eos_tokens: r
                .inner
                .tokens
                .iter()
                .filter(|&&t| t != TokenId::EOS)
                .count() as u64,
        };
        Ok(())
    })
}

/// Step trace as JSON lines. The string is owned by the result and lives
/// until the result is freed; NULL on failure.
///
/// # Safety
/// `r` must be NULL or a live result handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_trace_jsonl(r: *mut StreamdecResult) -> *const c_char {
    let Some(r) = r.as_mut() else {
        set_error("`result` is null");
        return ptr::null();
    };
    if r.trace_jsonl.is_none() {
        let mut buf = Vec::new();
        if let Err(e) = write_trace_jsonl(&mut buf, &r.inner.trace) {
            set_error(e.to_string());
            return ptr::null();
        }
        r.trace_jsonl = CString::new(buf).ok();
    }
    r.trace_jsonl.as_ref().map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `r` must be NULL or a live result handle from [`streamdec_decode`].
#[no_mangle]
pub unsafe extern "C" fn streamdec_result_free(r: *mut StreamdecResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

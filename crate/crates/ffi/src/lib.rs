//! C interface to trained recipe generators and the text metrics.
//!
//! Conventions:
//! - Every fallible function returns an [`RgStatus`]; on anything other
//!   than `RG_STATUS_OK` the message is available from [`rg_last_error`]
//!   on the same thread until the next failing call.
//! - Output values are written through caller-supplied pointers and only
//!   on success.
//! - Strings handed out by the library are owned by the caller and must be
//!   released with [`rg_string_free`]; models with [`rg_model_free`].
//! - Panics never cross the boundary; they are reported as
//!   `RG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recipegen::checkpoint::Checkpoint;
use recipegen::corpus::CalorieLevel;
use recipegen::dataset::encode_name;
use recipegen::evaluation::{corpus_bleu, metric_tokens, rouge_l};
use recipegen::generation::{generate_with, GenerateConfig};
use recipegen::model::{EncodedInput, UserContext, Variant};
use recipegen::tokenizer::{BOS, EOS};

/// Ingredients beyond this many are ignored, as in the training pipeline.
pub const RG_MAX_INGREDIENTS: usize = 5;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was out of range or inconsistent with the model.
    InvalidArgument = 3,
    /// A file could not be read or is not a valid checkpoint.
    Io = 4,
    /// The model failed while scoring or decoding.
    Model = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// A loaded checkpoint: model weights, tokenizer and vocabularies.
pub struct RgModel {
    checkpoint: Checkpoint,
}

/// Conditioning input for one recipe.
///
/// `techniques`/`technique_weights` describe the user's technique
/// preferences and are only accepted by `prior_tech` models; pass
/// `n_techniques = 0` for a user without history. Unknown technique names
/// are ignored.
#[repr(C)]
pub struct RgRecipeInput {
    /// Recipe name, UTF-8.
    pub name: *const c_char,
    /// `n_ingredients` UTF-8 ingredient names; at least one is required.
    pub ingredients: *const *const c_char,
    pub n_ingredients: usize,
    /// 0 = low, 1 = medium, 2 = high.
    pub calorie_level: u32,
    pub techniques: *const *const c_char,
    pub technique_weights: *const f64,
    pub n_techniques: usize,
}

struct Failure {
    status: RgStatus,
    message: String,
}

impl Failure {
    fn new(status: RgStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

impl From<recipegen::Error> for Failure {
    fn from(e: recipegen::Error) -> Self {
        use recipegen::Error as E;
        let status = match &e {
            E::MissingFile(_) | E::Io { .. } | E::Json(_) => RgStatus::Io,
            E::Model(_) | E::Diverged { .. } => RgStatus::Model,
            _ => RgStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

/// Runs `body`, converting failures and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RgStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            RgStatus::Panic
        }
    }
}

fn non_null<T>(ptr: *const T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        Err(Failure::new(RgStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(ptr, what)?;
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure::new(RgStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `ptr` must be null (with `len = 0`) or point to `len` string pointers.
unsafe fn read_str_array<'a>(ptr: *const *const c_char, len: usize, what: &str) -> Result<Vec<&'a str>, Failure> {
    if len == 0 {
        return Ok(Vec::new());
    }
    non_null(ptr, what)?;
    std::slice::from_raw_parts(ptr, len)
        .iter()
        .enumerate()
        .map(|(i, &p)| read_str(p, &format!("{what}[{i}]")))
        .collect()
}

fn into_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(RgStatus::Model, "decoded text contains a NUL byte"))
}

/// # Safety
/// `model` and `input` must be valid; see [`RgRecipeInput`].
unsafe fn encode(model: &RgModel, input: *const RgRecipeInput) -> Result<(EncodedInput, UserContext), Failure> {
    non_null(input, "input")?;
    let input = &*input;
    let ck = &model.checkpoint;
    let name = read_str(input.name, "input.name")?;
    let ingredients = read_str_array(input.ingredients, input.n_ingredients, "input.ingredients")?;
    if ingredients.is_empty() {
        return Err(Failure::new(RgStatus::InvalidArgument, "at least one ingredient is required"));
    }
    let calorie = CalorieLevel::from_index(input.calorie_level as usize).ok_or_else(|| {
        Failure::new(RgStatus::InvalidArgument, format!("calorie level {} is not 0, 1 or 2", input.calorie_level))
    })?;
    let encoded = EncodedInput {
        name: encode_name(&ck.bpe, name),
        ingredients: ingredients.iter().take(RG_MAX_INGREDIENTS).map(|i| ck.vocab.ingredient_row(i)).collect(),
        calorie,
    };
    let techniques = read_str_array(input.techniques, input.n_techniques, "input.techniques")?;
    let user = if techniques.is_empty() {
        UserContext::Empty
    } else {
        if ck.variant() != Variant::PriorTech {
            return Err(Failure::new(
                RgStatus::InvalidArgument,
                format!("technique preferences need a prior_tech model, this one is {}", ck.variant()),
            ));
        }
        non_null(input.technique_weights, "input.technique_weights")?;
        let weights = std::slice::from_raw_parts(input.technique_weights, techniques.len());
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Failure::new(
                RgStatus::InvalidArgument,
                format!("technique weight {w} is not a finite non-negative number"),
            ));
        }
        UserContext::Techniques(
            techniques
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w > 0.0)
                .filter_map(|(t, &w)| ck.vocab.technique_row(t).map(|row| (row, w)))
                .collect(),
        )
    };
    Ok((encoded, user))
}

/// Loads a checkpoint written by `recipegen train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_model_load(path: *const c_char, out: *mut *mut RgModel) -> RgStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        non_null(out, "out")?;
        // a file that parses but fails validation is as unusable as a missing one
        let checkpoint = Checkpoint::load(Path::new(path)).map_err(|e| Failure::new(RgStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(RgModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`rg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rg_model_free(model: *mut RgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model variant name (`enc_dec`, `prior_tech`, `prior_recipe`
/// or `prior_name`) as a newly allocated string.
///
/// # Safety
/// `model` must be a live model and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_model_variant(model: *const RgModel, out: *mut *mut c_char) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = into_c_string((*model).checkpoint.variant().name().to_string())?;
        Ok(())
    })
}

/// Writes the size of the model's output vocabulary.
///
/// # Safety
/// `model` must be a live model and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_model_vocab_size(model: *const RgModel, out: *mut usize) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).checkpoint.bpe.vocab_size();
        Ok(())
    })
}

/// Samples recipe instructions with top-`k` sampling (`k = 1` is greedy),
/// emitting at most `max_len` tokens. The same `seed` reproduces the same
/// text. The result is a newly allocated string.
///
/// # Safety
/// `model` must be a live model, `input` valid as described on
/// [`RgRecipeInput`], and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_generate(
    model: *const RgModel,
    input: *const RgRecipeInput,
    k: u32,
    max_len: u32,
    seed: u64,
    out: *mut *mut c_char,
) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let model = &*model;
        let (encoded, user) = encode(model, input)?;
        let config = GenerateConfig { k: k as usize, max_len: max_len as usize };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = generate_with(&model.checkpoint.model, &encoded, &user, &config, &mut rng, None)?;
        let body: Vec<u32> = ids.into_iter().filter(|&t| t != EOS).collect();
        *out = into_c_string(model.checkpoint.bpe.decode(&body)?)?;
        Ok(())
    })
}

/// Writes the teacher-forced log-likelihood (natural log) of `text` as the
/// recipe's instructions, end-of-sequence included, and the number of
/// predicted tokens when `n_tokens` is not null.
///
/// # Safety
/// `model` must be a live model, `input` valid as described on
/// [`RgRecipeInput`], `text` a NUL-terminated string, `out` a valid pointer
/// and `n_tokens` null or valid.
#[no_mangle]
pub unsafe extern "C" fn rg_log_likelihood(
    model: *const RgModel,
    input: *const RgRecipeInput,
    text: *const c_char,
    out: *mut f64,
    n_tokens: *mut usize,
) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let model = &*model;
        let (encoded, user) = encode(model, input)?;
        let text = read_str(text, "text")?;
        let mut target = vec![BOS];
        target.extend(model.checkpoint.bpe.encode(text));
        target.push(EOS);
        let score = model.checkpoint.model.sequence_log_likelihood(&encoded, &user, &target)?;
        *out = score.total;
        if !n_tokens.is_null() {
            *n_tokens = score.per_token.len();
        }
        Ok(())
    })
}

/// BLEU-`n` (1 ≤ n ≤ 4) of `candidate` against `reference` on lowercase
/// word tokens, in [0, 100].
///
/// # Safety
/// Both strings must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_bleu(
    candidate: *const c_char,
    reference: *const c_char,
    n: u32,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        let c = metric_tokens(read_str(candidate, "candidate")?);
        let r = metric_tokens(read_str(reference, "reference")?);
        non_null(out, "out")?;
        if !(1..=4).contains(&n) {
            return Err(Failure::new(RgStatus::InvalidArgument, format!("BLEU order {n} is not in 1..=4")));
        }
        *out = corpus_bleu(&[(c.as_slice(), r.as_slice())], n as usize);
        Ok(())
    })
}

/// ROUGE-L F-measure of `candidate` against `reference` on lowercase word
/// tokens, in [0, 100].
///
/// # Safety
/// Both strings must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_rouge_l(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> RgStatus {
    guard(|| {
        let c = metric_tokens(read_str(candidate, "candidate")?);
        let r = metric_tokens(read_str(reference, "reference")?);
        non_null(out, "out")?;
        *out = rouge_l(&c, &r);
        Ok(())
    })
}

/// Message of the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread and
/// must not be freed.
#[no_mangle]
pub extern "C" fn rg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

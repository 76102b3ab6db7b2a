//! C ABI over the core pipeline: problem generation and verification,
//! divergence kernels, quote localization, checkpointed models, and the
//! experiment runner.
//!
//! Conventions: every function returns a [`RosdStatus`]; results come back
//! through out-pointers. Heap objects cross the boundary as opaque handles
//! with matching `_free` functions; strings are UTF-8, allocated by this
//! library, and released with `rosd_string_free`. `rosd_last_error_message`
//! returns a thread-local description of the most recent failure.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::ptr;

use rosd_core::distill::{forward_kl, jsd, TokenDistribution};
use rosd_core::harness::{parse_kv_file, run_experiment, TrainConfig};
use rosd_core::locate::{locate, MatchKind};
use rosd_core::policy::{load_model, sample_response, PolicyModel, Rollout, Tokenizer};
use rosd_core::tasks::{
    generate_problems, problems_from_jsonl, problems_to_jsonl, verify, Problem, TaskFamily,
};
use rosd_core::Error;

/// Status codes returned by every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RosdStatus {
    Ok = 0,
    NullPointer = 1,
    Utf8Error = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    ContractViolation = 5,
    ParseError = 6,
    IoError = 7,
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> RosdStatus {
    match err {
        Error::Config(_) => RosdStatus::ConfigError,
        Error::Input(_) => RosdStatus::InvalidArgument,
        Error::Contract(_) => RosdStatus::ContractViolation,
        Error::ReflectionParse { .. } => RosdStatus::ParseError,
        Error::Io(_) => RosdStatus::IoError,
        Error::Json(_) => RosdStatus::ParseError,
    }
}

fn fail(err: Error) -> RosdStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, RosdStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} is null"));
        return Err(RosdStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        RosdStatus::Utf8Error
    })
}

fn string_out(s: String, out: *mut *mut c_char) -> RosdStatus {
    let c = match CString::new(s) {
        Ok(c) => c,
        Err(_) => {
            set_error("output contained an interior NUL byte");
            return RosdStatus::Internal;
        }
    };
    unsafe { *out = c.into_raw() };
    RosdStatus::Ok
}

/// Borrowed description of the most recent error on this thread. Valid until
/// the next failing call; do not free.
#[no_mangle]
pub extern "C" fn rosd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string allocated by this library.
///
/// # Safety
/// `s` must be a pointer previously returned through a `char**` out-param of
/// this library, not yet freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn rosd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque set of generated problems.
pub struct RosdProblemSet {
    problems: Vec<Problem>,
}

/// Opaque checkpointed policy model plus its tokenizer.
pub struct RosdModel {
    model: PolicyModel,
    tokenizer: Tokenizer,
}

/// Generates `n` problems of `family` ("arith_chain" or "string_transform")
/// from `seed` into a new handle.
///
/// # Safety
/// `family` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_problems_generate(
    family: *const c_char,
    seed: u64,
    n: usize,
    out: *mut *mut RosdProblemSet,
) -> RosdStatus {
    if out.is_null() {
        set_error("out is null");
        return RosdStatus::NullPointer;
    }
    let family = match cstr_arg(family, "family") {
        Ok(f) => f,
        Err(code) => return code,
    };
    let family: TaskFamily = match family.parse() {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    match generate_problems(family, seed, n) {
        Ok(problems) => {
            *out = Box::into_raw(Box::new(RosdProblemSet { problems }));
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parses problems from JSON lines into a new handle.
///
/// # Safety
/// `jsonl` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_problems_from_jsonl(
    jsonl: *const c_char,
    out: *mut *mut RosdProblemSet,
) -> RosdStatus {
    if out.is_null() {
        set_error("out is null");
        return RosdStatus::NullPointer;
    }
    let jsonl = match cstr_arg(jsonl, "jsonl") {
        Ok(s) => s,
        Err(code) => return code,
    };
    match problems_from_jsonl(jsonl) {
        Ok(problems) => {
            *out = Box::into_raw(Box::new(RosdProblemSet { problems }));
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of problems in the set; 0 for NULL.
///
/// # Safety
/// `set` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rosd_problems_len(set: *const RosdProblemSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).problems.len()
}

/// Serializes the whole set as JSON lines.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_problems_to_jsonl(
    set: *const RosdProblemSet,
    out: *mut *mut c_char,
) -> RosdStatus {
    if set.is_null() || out.is_null() {
        set_error("set or out is null");
        return RosdStatus::NullPointer;
    }
    match problems_to_jsonl(&(*set).problems) {
        Ok(s) => string_out(s, out),
        Err(e) => fail(e),
    }
}

/// Copies the prompt of problem `idx`.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_problem_prompt(
    set: *const RosdProblemSet,
    idx: usize,
    out: *mut *mut c_char,
) -> RosdStatus {
    if set.is_null() || out.is_null() {
        set_error("set or out is null");
        return RosdStatus::NullPointer;
    }
    let set = &*set;
    match set.problems.get(idx) {
        Some(p) => string_out(p.prompt.clone(), out),
        None => {
            set_error(&format!("index {idx} out of range"));
            RosdStatus::InvalidArgument
        }
    }
}

/// Verifies a response against problem `idx`. `reward_out` receives 0 or 1;
/// `extracted_out` (optional) receives the extracted answer or NULL.
///
/// # Safety
/// `set` must be a live handle; `response` a valid string; `reward_out`
/// a valid pointer; `extracted_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rosd_verify(
    set: *const RosdProblemSet,
    idx: usize,
    response: *const c_char,
    reward_out: *mut i32,
    extracted_out: *mut *mut c_char,
) -> RosdStatus {
    if set.is_null() || reward_out.is_null() {
        set_error("set or reward_out is null");
        return RosdStatus::NullPointer;
    }
    let response = match cstr_arg(response, "response") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let set = &*set;
    let Some(problem) = set.problems.get(idx) else {
        set_error(&format!("index {idx} out of range"));
        return RosdStatus::InvalidArgument;
    };
    let result = verify(problem, response);
    *reward_out = result.reward as i32;
    if !extracted_out.is_null() {
        match result.extracted_answer {
            Some(ans) => {
                let code = string_out(ans, extracted_out);
                if code != RosdStatus::Ok {
                    return code;
                }
            }
            None => *extracted_out = ptr::null_mut(),
        }
    }
    RosdStatus::Ok
}

/// Frees a problem-set handle. NULL is ignored.
///
/// # Safety
/// `set` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rosd_problems_free(set: *mut RosdProblemSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

unsafe fn dist_from_raw(p: *const f64, n: usize, name: &str) -> Result<Vec<f64>, RosdStatus> {
    if p.is_null() {
        set_error(&format!("{name} is null"));
        return Err(RosdStatus::NullPointer);
    }
    if n == 0 {
        set_error("distributions need at least one entry");
        return Err(RosdStatus::InvalidArgument);
    }
    Ok(std::slice::from_raw_parts(p, n).to_vec())
}

/// KL(p || q) over two length-`n` probability vectors. Disjoint support
/// yields +infinity, not an error.
///
/// # Safety
/// `p` and `q` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rosd_forward_kl(
    p: *const f64,
    q: *const f64,
    n: usize,
    out: *mut f64,
) -> RosdStatus {
    if out.is_null() {
        set_error("out is null");
        return RosdStatus::NullPointer;
    }
    let (pv, qv) = match (dist_from_raw(p, n, "p"), dist_from_raw(q, n, "q")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    *out = forward_kl(&TokenDistribution::full(pv), &TokenDistribution::full(qv));
    RosdStatus::Ok
}

/// Jensen-Shannon divergence with mixture weight `alpha` in (0,1).
///
/// # Safety
/// `p` and `q` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rosd_jsd(
    p: *const f64,
    q: *const f64,
    n: usize,
    alpha: f64,
    out: *mut f64,
) -> RosdStatus {
    if out.is_null() {
        set_error("out is null");
        return RosdStatus::NullPointer;
    }
    let (pv, qv) = match (dist_from_raw(p, n, "p"), dist_from_raw(q, n, "q")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    match jsd(
        &TokenDistribution::full(pv),
        &TokenDistribution::full(qv),
        alpha,
    ) {
        Ok(v) => {
            *out = v;
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Locates an error quote inside a rollout text (tokenized with the default
/// task tokenizer). `k_out` receives the token index (0 when unmatched),
/// `matched_out` 0/1, and `match_kind_out` 0=none, 1=exact, 2=normalized.
///
/// # Safety
/// `quote` and `rollout_text` must be valid strings; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn rosd_locate(
    quote: *const c_char,
    rollout_text: *const c_char,
    k_out: *mut usize,
    matched_out: *mut i32,
    match_kind_out: *mut i32,
) -> RosdStatus {
    if k_out.is_null() || matched_out.is_null() || match_kind_out.is_null() {
        set_error("out pointer is null");
        return RosdStatus::NullPointer;
    }
    let quote = match cstr_arg(quote, "quote") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let text = match cstr_arg(rollout_text, "rollout_text") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let tokenizer = Tokenizer::new();
    let rollout = Rollout::synthetic(&tokenizer, "ffi", text, 0);
    match locate(quote, &rollout) {
        Ok(loc) => {
            *k_out = loc.k;
            *matched_out = loc.matched as i32;
            *match_kind_out = match loc.match_kind {
                MatchKind::None => 0,
                MatchKind::Exact => 1,
                MatchKind::Normalized => 2,
            };
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads a model checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a valid string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_model_load(
    path: *const c_char,
    out: *mut *mut RosdModel,
) -> RosdStatus {
    if out.is_null() {
        set_error("out is null");
        return RosdStatus::NullPointer;
    }
    let path = match cstr_arg(path, "path") {
        Ok(s) => s,
        Err(code) => return code,
    };
    match load_model(&PathBuf::from(path)) {
        Ok((model, tokenizer)) => {
            *out = Box::into_raw(Box::new(RosdModel { model, tokenizer }));
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Samples one seeded response for a prompt.
///
/// # Safety
/// `model` must be a live handle; `prompt` a valid string; `text_out` valid.
#[no_mangle]
pub unsafe extern "C" fn rosd_model_sample(
    model: *const RosdModel,
    prompt: *const c_char,
    temperature: f64,
    max_new_tokens: usize,
    seed: u64,
    text_out: *mut *mut c_char,
) -> RosdStatus {
    if model.is_null() || text_out.is_null() {
        set_error("model or text_out is null");
        return RosdStatus::NullPointer;
    }
    let prompt = match cstr_arg(prompt, "prompt") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let handle = &*model;
    let problem = Problem {
        id: "ffi".into(),
        family: TaskFamily::ArithChain,
        prompt: prompt.to_string(),
        answer: String::new(),
        step_trace: vec![],
        seed: 0,
    };
    match sample_response(
        &handle.model,
        &handle.tokenizer,
        &problem,
        temperature,
        max_new_tokens,
        seed,
    ) {
        Ok(text) => string_out(text, text_out),
        Err(e) => fail(e),
    }
}

/// mean@k accuracy of the model over a problem set.
///
/// # Safety
/// `model` and `set` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rosd_model_evaluate(
    model: *const RosdModel,
    set: *const RosdProblemSet,
    k: usize,
    temperature: f64,
    max_new_tokens: usize,
    seed: u64,
    out: *mut f64,
) -> RosdStatus {
    if model.is_null() || set.is_null() || out.is_null() {
        set_error("model, set, or out is null");
        return RosdStatus::NullPointer;
    }
    let handle = &*model;
    let set = &*set;
    match rosd_core::harness::evaluate(
        &handle.model,
        &handle.tokenizer,
        &set.problems,
        k,
        temperature,
        max_new_tokens,
        seed,
    ) {
        Ok(v) => {
            *out = v;
            RosdStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Frees a model handle. NULL is ignored.
///
/// # Safety
/// `model` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rosd_model_free(model: *mut RosdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs a full training experiment from a flat `key = value` config string
/// into `out_dir`, returning the summary as JSON.
///
/// # Safety
/// `config_kv` and `out_dir` must be valid strings; `summary_json_out` valid.
#[no_mangle]
pub unsafe extern "C" fn rosd_run_experiment(
    config_kv: *const c_char,
    out_dir: *const c_char,
    summary_json_out: *mut *mut c_char,
) -> RosdStatus {
    if summary_json_out.is_null() {
        set_error("summary_json_out is null");
        return RosdStatus::NullPointer;
    }
    let config_kv = match cstr_arg(config_kv, "config_kv") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let out_dir = match cstr_arg(out_dir, "out_dir") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cfg = match parse_kv_file(config_kv).and_then(|kv| TrainConfig::from_kv(&kv)) {
        Ok(cfg) => cfg,
        Err(e) => return fail(e),
    };
    match run_experiment(&cfg, &PathBuf::from(out_dir)) {
        Ok(summary) => match serde_json::to_string_pretty(&summary) {
            Ok(json) => string_out(json, summary_json_out),
            Err(e) => fail(Error::from(e)),
        },
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn take_string(p: *mut c_char) -> String {
        assert!(!p.is_null());
        let s = CStr::from_ptr(p).to_str().unwrap().to_string();
        rosd_string_free(p);
        s
    }

    #[test]
    fn problem_generation_and_verification() {
        unsafe {
            let mut set: *mut RosdProblemSet = ptr::null_mut();
            let st = rosd_problems_generate(c("arith_chain").as_ptr(), 7, 3, &mut set);
            assert_eq!(st, RosdStatus::Ok);
            assert_eq!(rosd_problems_len(set), 3);

            let mut jsonl: *mut c_char = ptr::null_mut();
            assert_eq!(rosd_problems_to_jsonl(set, &mut jsonl), RosdStatus::Ok);
            let jsonl_str = take_string(jsonl);
            assert_eq!(jsonl_str.lines().count(), 3);

            let jsonl_c = c(&jsonl_str);
            let mut set2: *mut RosdProblemSet = ptr::null_mut();
            assert_eq!(
                rosd_problems_from_jsonl(jsonl_c.as_ptr(), &mut set2),
                RosdStatus::Ok
            );
            assert_eq!(rosd_problems_len(set2), 3);

            // Verify the reference solution of problem 0 through the C path.
            let canon = (&(*set).problems)[0].canonical_solution();
            let mut reward = -1i32;
            let mut extracted: *mut c_char = ptr::null_mut();
            let resp = c(&canon);
            assert_eq!(
                rosd_verify(set, 0, resp.as_ptr(), &mut reward, &mut extracted),
                RosdStatus::Ok
            );
            assert_eq!(reward, 1);
            let got = take_string(extracted);
            assert!(!got.is_empty());

            let resp = c("ANSWER : definitely-not");
            let mut extracted2: *mut c_char = ptr::null_mut();
            assert_eq!(
                rosd_verify(set, 0, resp.as_ptr(), &mut reward, &mut extracted2),
                RosdStatus::Ok
            );
            assert_eq!(reward, 0);
            if !extracted2.is_null() {
                take_string(extracted2);
            }

            rosd_problems_free(set);
            rosd_problems_free(set2);
        }
    }

    #[test]
    fn error_codes_and_messages() {
        unsafe {
            let mut set: *mut RosdProblemSet = ptr::null_mut();
            let st = rosd_problems_generate(c("nope").as_ptr(), 7, 3, &mut set);
            assert_eq!(st, RosdStatus::ConfigError);
            let msg = CStr::from_ptr(rosd_last_error_message()).to_str().unwrap();
            assert!(msg.contains("unknown task family"));

            let st = rosd_problems_generate(ptr::null(), 7, 3, &mut set);
            assert_eq!(st, RosdStatus::NullPointer);

            let st = rosd_problems_generate(c("arith_chain").as_ptr(), 7, 0, &mut set);
            assert_eq!(st, RosdStatus::ConfigError);
        }
    }

    #[test]
    fn divergence_kernels() {
        unsafe {
            let p = [0.5f64, 0.5];
            let q = [0.25f64, 0.75];
            let mut out = 0f64;
            assert_eq!(
                rosd_forward_kl(p.as_ptr(), q.as_ptr(), 2, &mut out),
                RosdStatus::Ok
            );
            assert!((out - 0.143841).abs() < 1e-5);

            let a = [1.0f64, 0.0];
            let b = [0.0f64, 1.0];
            assert_eq!(
                rosd_jsd(a.as_ptr(), b.as_ptr(), 2, 0.5, &mut out),
                RosdStatus::Ok
            );
            assert!((out - std::f64::consts::LN_2).abs() < 1e-9);

            assert_eq!(
                rosd_jsd(a.as_ptr(), b.as_ptr(), 2, 1.5, &mut out),
                RosdStatus::ConfigError
            );
        }
    }

    #[test]
    fn locate_maps_quotes_to_token_indices() {
        unsafe {
            let text = c("STEP 1 : ( 3 + 5 ) mod 7 = 1\nANSWER : 1");
            let quote = c("( 3 + 5 )");
            let (mut k, mut matched, mut kind) = (0usize, 0i32, -1i32);
            assert_eq!(
                rosd_locate(quote.as_ptr(), text.as_ptr(), &mut k, &mut matched, &mut kind),
                RosdStatus::Ok
            );
            assert_eq!((k, matched, kind), (3, 1, 1));

            let missing = c("( 9 * 9 )");
            assert_eq!(
                rosd_locate(missing.as_ptr(), text.as_ptr(), &mut k, &mut matched, &mut kind),
                RosdStatus::Ok
            );
            assert_eq!((k, matched, kind), (0, 0, 0));

            let empty = c("");
            assert_eq!(
                rosd_locate(empty.as_ptr(), text.as_ptr(), &mut k, &mut matched, &mut kind),
                RosdStatus::ContractViolation
            );
        }
    }

    #[test]
    fn experiment_runs_from_kv_config() {
        unsafe {
            let dir = tempdir_path("rosd-ffi-exp");
            let cfg = c("method = grpo\nsteps = 2\nbatch_size = 2\ngroup_size = 2\n\
                         eval_every = 2\neval_samples = 1\nmax_new_tokens = 8\n\
                         d_model = 16\nn_heads = 2\nn_layers = 1\ncontext_len = 128\n\
                         train_problems = 4\neval_problems = 2\ncheckpoint_every = 2");
            let out_dir = c(dir.to_str().unwrap());
            let mut summary: *mut c_char = ptr::null_mut();
            let st = rosd_run_experiment(cfg.as_ptr(), out_dir.as_ptr(), &mut summary);
            assert_eq!(
                st,
                RosdStatus::Ok,
                "error: {:?}",
                CStr::from_ptr(rosd_last_error_message())
            );
            let json = take_string(summary);
            assert!(json.contains("final_step"));

            // Load the final checkpoint and evaluate through the C surface.
            let ckpt = dir.join("checkpoints/step-2/model.ckpt");
            let ckpt_c = c(ckpt.to_str().unwrap());
            let mut model: *mut RosdModel = ptr::null_mut();
            assert_eq!(rosd_model_load(ckpt_c.as_ptr(), &mut model), RosdStatus::Ok);

            let mut set: *mut RosdProblemSet = ptr::null_mut();
            assert_eq!(
                rosd_problems_generate(c("arith_chain").as_ptr(), 3, 2, &mut set),
                RosdStatus::Ok
            );
            let mut score = -1.0f64;
            assert_eq!(
                rosd_model_evaluate(model, set, 1, 1.0, 8, 0, &mut score),
                RosdStatus::Ok
            );
            assert!((0.0..=1.0).contains(&score));

            let mut text: *mut c_char = ptr::null_mut();
            let prompt = c("Compute ( 1 + 1 ) mod 3");
            assert_eq!(
                rosd_model_sample(model, prompt.as_ptr(), 1.0, 8, 9, &mut text),
                RosdStatus::Ok
            );
            take_string(text);

            rosd_model_free(model);
            rosd_problems_free(set);
            std::fs::remove_dir_all(&dir).ok();
        }
    }

    fn tempdir_path(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}

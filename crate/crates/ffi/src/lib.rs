//! C ABI over the cogdebias core.
//!
//! Every entry point returns a [`CogdebiasStatus`]. Results come back through
//! out-pointers; strings handed out by the library are NUL-terminated UTF-8
//! and must be released with [`cogdebias_string_free`]. On failure the
//! message is available from [`cogdebias_last_error`] on the same thread.
//! Structured values cross the boundary as JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cogdebias::bias::{inject, make_cue, render_control, AnswerOption, BiasType, PromptDoc, TaskInstance};
use cogdebias::dataset;
use cogdebias::evaluation::{exact_score, parse_decision, ratio_to_f64, run_experiment, Condition, ExperimentSettings};
use cogdebias::gateway::{Backend, BiasedAgent, BiasedAgentConfig, CallParams, MockScript, ScriptedMock, Session};
use cogdebias::sacd::{run_sacd, SacdVariant};
use cogdebias::strategies::{run_strategy, StrategyId, StrategyOptions};
use cogdebias::templates::Templates;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CogdebiasStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidArgument = 4,
    BackendError = 5,
    Panic = 6,
}

/// Opaque model backend plus the prompt templates used with it.
pub struct CogdebiasBackend {
    backend: Box<dyn Backend>,
    templates: Templates,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CogdebiasStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: CogdebiasStatus, msg: impl ToString) -> FfiResult<T> {
    Err(Failure(status, msg.to_string()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CogdebiasStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CogdebiasStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CogdebiasStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(CogdebiasStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(CogdebiasStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn json<T: serde::de::DeserializeOwned>(raw: &str, name: &str) -> FfiResult<T> {
    serde_json::from_str(raw).or_else(|e| fail(CogdebiasStatus::InvalidJson, format!("{name}: {e}")))
}

fn arg<T, E: ToString>(r: Result<T, E>) -> FfiResult<T> {
    r.or_else(|e| fail(CogdebiasStatus::InvalidArgument, e))
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> FfiResult<()> {
    if out.is_null() {
        return fail(CogdebiasStatus::NullArgument, "output pointer is null");
    }
    let c = CString::new(value).or_else(|_| fail(CogdebiasStatus::InvalidArgument, "output contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}

unsafe fn instance(p: *const c_char) -> FfiResult<TaskInstance> {
    let inst: TaskInstance = json(text(p, "instance_json")?, "instance_json")?;
    arg(inst.validate())?;
    Ok(inst)
}

/// A prompt document as JSON, or a rendered prompt as plain text.
unsafe fn prompt(p: *const c_char) -> FfiResult<PromptDoc> {
    let raw = text(p, "prompt")?;
    Ok(serde_json::from_str(raw).unwrap_or_else(|_| PromptDoc::from_rendered(raw)))
}

unsafe fn backend_ref<'a>(p: *const CogdebiasBackend) -> FfiResult<&'a CogdebiasBackend> {
    p.as_ref().ok_or(Failure(CogdebiasStatus::NullArgument, "backend is null".into()))
}

unsafe fn emit_backend(out: *mut *mut CogdebiasBackend, backend: Box<dyn Backend>) -> FfiResult<()> {
    if out.is_null() {
        return fail(CogdebiasStatus::NullArgument, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(CogdebiasBackend { backend, templates: Templates::builtin() }));
    Ok(())
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cogdebias_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a rule-scripted mock backend from a script in JSON.
///
/// # Safety
/// `script_json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_backend_new_mock(
    script_json: *const c_char,
    out: *mut *mut CogdebiasBackend,
) -> CogdebiasStatus {
    guard(|| {
        let script: MockScript = json(text(script_json, "script_json")?, "script_json")?;
        let mock = arg(ScriptedMock::try_new(script))?;
        emit_backend(out, Box::new(mock))
    })
}

/// Creates the seeded biased-agent simulator.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_backend_new_simulator(
    p_target_treatment: f64,
    p_target_control: f64,
    seed: u64,
    out: *mut *mut CogdebiasBackend,
) -> CogdebiasStatus {
    guard(|| {
        let agent = arg(BiasedAgent::new(BiasedAgentConfig { p_target_treatment, p_target_control, seed }))?;
        emit_backend(out, Box::new(agent))
    })
}

/// # Safety
/// `backend` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_backend_free(backend: *mut CogdebiasBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

/// Renders the control prompt of an instance as plain text.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_render_control(instance_json: *const c_char, out: *mut *mut c_char) -> CogdebiasStatus {
    guard(|| {
        let inst = instance(instance_json)?;
        write_string(out, arg(render_control(&inst))?.render())
    })
}

/// Injects comma-separated bias cues (anchoring, bandwagon, loss_aversion)
/// in the given order and returns the treatment prompt document as JSON.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_inject(
    instance_json: *const c_char,
    biases: *const c_char,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let inst = instance(instance_json)?;
        let mut list = Vec::new();
        for name in text(biases, "biases")?.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match BiasType::from_label(name) {
                Some(b) => list.push(b),
                None => return fail(CogdebiasStatus::InvalidArgument, format!("unknown bias `{name}`")),
            }
        }
        let control = arg(render_control(&inst))?;
        write_string(out, to_json(&arg(inject(&control, &list, &inst))?))
    })
}

/// Cue sentence for one bias type.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_make_cue(
    bias: *const c_char,
    instance_json: *const c_char,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let name = text(bias, "bias")?;
        let Some(b) = BiasType::from_label(name) else {
            return fail(CogdebiasStatus::InvalidArgument, format!("unknown bias `{name}`"));
        };
        let inst = instance(instance_json)?;
        write_string(out, arg(make_cue(b, &inst))?.rendered_text)
    })
}

/// Extracts the chosen option label from a raw model answer. `options_json`
/// is an array of `{"label", "text"}` objects. The output is the label, or
/// an empty string when the answer is unparsed.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_parse_decision(
    raw: *const c_char,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let raw = text(raw, "raw")?;
        let options: Vec<AnswerOption> = json(text(options_json, "options_json")?, "options_json")?;
        if options.is_empty() {
            return fail(CogdebiasStatus::InvalidArgument, "options are empty");
        }
        let decision = parse_decision(raw, &options);
        write_string(out, decision.label().unwrap_or_default().to_string())
    })
}

/// Bias score from target-pick counts: treatment rate minus control rate.
/// `out_exact` (optional) receives the reduced fraction as "p/q".
///
/// # Safety
/// `out_score` must be writable; `out_exact` may be null.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_bias_score(
    treatment_hits: u64,
    treatment_n: u64,
    control_hits: u64,
    control_n: u64,
    out_score: *mut f64,
    out_exact: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        if out_score.is_null() {
            return fail(CogdebiasStatus::NullArgument, "out_score is null");
        }
        if treatment_hits > treatment_n || control_hits > control_n {
            return fail(CogdebiasStatus::InvalidArgument, "hit count exceeds arm size");
        }
        let r = arg(exact_score(treatment_hits, treatment_n, control_hits, control_n))?;
        *out_score = ratio_to_f64(&r);
        if !out_exact.is_null() {
            write_string(out_exact, format!("{}/{}", r.numer(), r.denom()))?;
        }
        Ok(())
    })
}

/// Runs the debiasing loop on a prompt (JSON document or rendered text).
/// `variant` is "full", "no_bd" or "no_ba". Returns the trace as JSON.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_run_sacd(
    backend: *const CogdebiasBackend,
    prompt_text: *const c_char,
    t_max: u32,
    variant: *const c_char,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let b = backend_ref(backend)?;
        let doc = prompt(prompt_text)?;
        let variant: SacdVariant = arg(text(variant, "variant")?.parse())?;
        let mut session = Session::new(&b.backend, &b.templates, CallParams::default());
        let trace = run_sacd(&doc, &mut session, t_max as usize, variant);
        let trace = match trace {
            Err(cogdebias::sacd::SacdError::Gateway(e)) => return fail(CogdebiasStatus::BackendError, e),
            other => arg(other)?,
        };
        write_string(out, to_json(&trace))
    })
}

/// Runs one prompting strategy by key (vanilla, cot, sacd, ...) and returns
/// the outcome, transcript included, as JSON.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_run_strategy(
    backend: *const CogdebiasBackend,
    strategy: *const c_char,
    prompt_text: *const c_char,
    t_max: u32,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let b = backend_ref(backend)?;
        let id: StrategyId = arg(text(strategy, "strategy")?.parse())?;
        let doc = prompt(prompt_text)?;
        let mut session = Session::new(&b.backend, &b.templates, CallParams::default());
        let options = StrategyOptions { exemplars: None, t_max: t_max as usize };
        let outcome = run_strategy(id, &doc, &mut session, options);
        let outcome = match outcome {
            Err(e) if e.is_transport() => return fail(CogdebiasStatus::BackendError, e),
            other => arg(other)?,
        };
        write_string(out, to_json(&outcome))
    })
}

/// Runs a strategy over a JSONL dataset for comma-separated conditions and
/// returns the experiment result as JSON.
///
/// # Safety
/// Pointers must be valid; free the output with `cogdebias_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cogdebias_run_experiment(
    backend: *const CogdebiasBackend,
    dataset_jsonl: *const c_char,
    strategy: *const c_char,
    conditions: *const c_char,
    t_max: u32,
    workers: u32,
    out: *mut *mut c_char,
) -> CogdebiasStatus {
    guard(|| {
        let b = backend_ref(backend)?;
        let instances = arg(dataset::parse_jsonl(text(dataset_jsonl, "dataset_jsonl")?))?;
        let id: StrategyId = arg(text(strategy, "strategy")?.parse())?;
        let conditions: Vec<Condition> = arg(text(conditions, "conditions")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>())?;
        let mut settings = ExperimentSettings::new(&b.templates);
        settings.t_max = t_max as usize;
        settings.workers = workers.max(1) as usize;
        let result = arg(run_experiment(&instances, id, &conditions, &b.backend, &settings))?;
        write_string(out, to_json(&result))
    })
}

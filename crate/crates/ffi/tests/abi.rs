use std::ffi::{c_char, CStr, CString};
use std::ptr;

use cogdebias_ffi::*;

const INSTANCE: &str = r#"{"id":"t-1","domain":"finance","instruction":"Please classify the following economic phenomenon.","context":"Phenomenon: Wage growth cooled for a third month.","options":[{"label":"A","text":"Hawkish"},{"label":"B","text":"Dovish"}],"gold_label":"B","biased_target_label":"A"}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a library string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    cogdebias_string_free(p);
    s
}

fn last_error() -> String {
    let p = cogdebias_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn always_flag_mock() -> *mut CogdebiasBackend {
    let script = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/scripts/always_flag.json")).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { cogdebias_backend_new_mock(c(&script).as_ptr(), &mut handle) };
    assert_eq!(status, CogdebiasStatus::Ok);
    handle
}

#[test]
fn render_and_inject() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(cogdebias_render_control(c(INSTANCE).as_ptr(), &mut out), CogdebiasStatus::Ok);
        let control = take(out);
        assert!(control.ends_with("Option A: Hawkish\nOption B: Dovish\nAnswer:"));

        assert_eq!(cogdebias_inject(c(INSTANCE).as_ptr(), c("loss_aversion,anchoring").as_ptr(), &mut out), CogdebiasStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let cues: Vec<&serde_json::Value> = doc["segments"].as_array().unwrap().iter().filter(|s| s["kind"] == "cue").collect();
        assert_eq!(cues.len(), 2);

        assert_eq!(cogdebias_make_cue(c("bandwagon").as_ptr(), c(INSTANCE).as_ptr(), &mut out), CogdebiasStatus::Ok);
        assert_eq!(take(out), "Most people think the correct answer is Option A.");
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(cogdebias_inject(c(INSTANCE).as_ptr(), c("").as_ptr(), &mut out), CogdebiasStatus::InvalidArgument);
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(cogdebias_render_control(c("{").as_ptr(), &mut out), CogdebiasStatus::InvalidJson);
        assert_eq!(cogdebias_render_control(ptr::null(), &mut out), CogdebiasStatus::NullArgument);
        assert!(last_error().contains("instance_json"));
        assert_eq!(cogdebias_make_cue(c("herding").as_ptr(), c(INSTANCE).as_ptr(), &mut out), CogdebiasStatus::InvalidArgument);

        let mut handle = ptr::null_mut();
        assert_eq!(cogdebias_backend_new_simulator(1.5, 0.1, 0, &mut handle), CogdebiasStatus::InvalidArgument);
        assert!(handle.is_null());

        assert_eq!(cogdebias_render_control(c(INSTANCE).as_ptr(), &mut out), CogdebiasStatus::Ok);
        assert!(cogdebias_last_error().is_null());
        cogdebias_string_free(out);
        cogdebias_string_free(ptr::null_mut());
        cogdebias_backend_free(ptr::null_mut());
    }
}

#[test]
fn decisions_and_scores() {
    unsafe {
        let options = c(r#"[{"label":"A","text":"Hawkish"},{"label":"B","text":"Dovish"}]"#);
        let mut out = ptr::null_mut();
        assert_eq!(cogdebias_parse_decision(c("Answer: Option B").as_ptr(), options.as_ptr(), &mut out), CogdebiasStatus::Ok);
        assert_eq!(take(out), "B");
        assert_eq!(cogdebias_parse_decision(c("").as_ptr(), options.as_ptr(), &mut out), CogdebiasStatus::Ok);
        assert_eq!(take(out), "");

        let mut score = f64::NAN;
        assert_eq!(cogdebias_bias_score(30, 100, 10, 100, &mut score, &mut out), CogdebiasStatus::Ok);
        assert_eq!(score, 0.2);
        assert_eq!(take(out), "1/5");
        assert_eq!(cogdebias_bias_score(1, 1, 0, 0, &mut score, ptr::null_mut()), CogdebiasStatus::InvalidArgument);
        assert_eq!(cogdebias_bias_score(3, 2, 0, 1, &mut score, ptr::null_mut()), CogdebiasStatus::InvalidArgument);
    }
}

#[test]
fn sacd_and_strategies_through_a_handle() {
    unsafe {
        let backend = always_flag_mock();
        let mut control = ptr::null_mut();
        assert_eq!(cogdebias_render_control(c(INSTANCE).as_ptr(), &mut control), CogdebiasStatus::Ok);
        let prompt = c(&take(control));

        let mut out = ptr::null_mut();
        assert_eq!(cogdebias_run_sacd(backend, prompt.as_ptr(), 2, c("full").as_ptr(), &mut out), CogdebiasStatus::Ok);
        let trace: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(trace["iterations"].as_array().unwrap().len(), 2);
        assert_eq!(trace["termination"], "BudgetExhausted");

        assert_eq!(cogdebias_run_sacd(backend, prompt.as_ptr(), 0, c("full").as_ptr(), &mut out), CogdebiasStatus::InvalidArgument);
        assert_eq!(cogdebias_run_sacd(backend, prompt.as_ptr(), 1, c("partial").as_ptr(), &mut out), CogdebiasStatus::InvalidArgument);

        assert_eq!(cogdebias_run_strategy(backend, c("debate").as_ptr(), prompt.as_ptr(), 3, &mut out), CogdebiasStatus::Ok);
        let outcome: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(outcome["transcript"]["turns"].as_array().unwrap().len(), 7);
        assert_eq!(outcome["answer"], "Answer: Option A");

        assert_eq!(cogdebias_run_strategy(backend, c("few_shot").as_ptr(), prompt.as_ptr(), 3, &mut out), CogdebiasStatus::InvalidArgument);
        cogdebias_backend_free(backend);
    }
}

#[test]
fn simulator_experiment() {
    unsafe {
        let mut backend = ptr::null_mut();
        assert_eq!(cogdebias_backend_new_simulator(0.7, 0.1, 42, &mut backend), CogdebiasStatus::Ok);
        let data = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/finance.jsonl")).unwrap();
        let run = |workers: u32| {
            let mut out = ptr::null_mut();
            let status = cogdebias_run_experiment(backend, c(&data).as_ptr(), c("vanilla").as_ptr(), c("anchoring,multiple").as_ptr(), 3, workers, &mut out);
            assert_eq!(status, CogdebiasStatus::Ok);
            take(out)
        };
        let first = run(1);
        assert_eq!(first, run(8));
        let result: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(result["reports"].as_array().unwrap().len(), 2);

        let mut out = ptr::null_mut();
        let status = cogdebias_run_experiment(backend, c(&data).as_ptr(), c("vanilla").as_ptr(), c("").as_ptr(), 3, 1, &mut out);
        assert_eq!(status, CogdebiasStatus::InvalidArgument);
        cogdebias_backend_free(backend);
    }
}

//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line with its pinned tolerance before asserting.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cogdebias::bias::{inject, make_cue, render_control, BiasType, PromptDoc, SegmentKind, TaskInstance};
use cogdebias::cli::{cmd_run, ConfigArgs};
use cogdebias::evaluation::{
    bias_score, classify_error, Arm, Condition, Decision, ErrorCategory, TrialRecord,
};
use cogdebias::gateway::mock::{KeywordLabel, MockAction, MockRule, MockScript, ScriptedMock};
use cogdebias::gateway::{BiasedAgent, BiasedAgentConfig, CallParams, CallPurpose, Session};
use cogdebias::sacd::{run_sacd, SacdVariant, Termination};
use cogdebias::strategies::StrategyId;
use cogdebias::templates::Templates;

/// Pinned tolerances and budgets.
const SCORE_TOLERANCE: f64 = 0.0;
const BUDGET_WORKED_EXAMPLE: Duration = Duration::from_secs(1);
const BUDGET_METRIC_ORACLE: Duration = Duration::from_secs(5);
const BUDGET_GOLDEN: Duration = Duration::from_secs(10);
const BUDGET_SIMULATOR: Duration = Duration::from_secs(5);
const SIMULATOR_BAND: (f64, f64) = (0.52, 0.68);
/// Seed committed for the simulator criterion.
const SIMULATOR_SEED: u64 = 42;
/// Hits for that seed, N = 500 per arm, p = 0.7 / 0.1, from
/// tests/oracles/chacha_replay.py: 350 treatment, 43 control.
const SIMULATOR_EXPECTED: (u64, u64) = (350, 43);

fn verdict(criterion: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {criterion:>2} [{}] {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // written past libtest capture
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn record(id: usize, arm: Arm, decision: Decision) -> TrialRecord {
    TrialRecord {
        instance_id: format!("r{id:04}"),
        arm,
        strategy: StrategyId::Vanilla,
        prompt_digest: String::new(),
        raw_answer: String::new(),
        decision,
        target_label: "B".into(),
        gold_label: "A".into(),
        trace: None,
        iterations: vec![],
        transcript_ref: String::new(),
    }
}

fn treatment_arm() -> Arm {
    Arm::Treatment([BiasType::Anchoring].into())
}

/// Records with `hits` target picks, `unparsed` refusals, rest gold picks.
fn arm_records(arm: Arm, n: usize, hits: usize, unparsed: usize) -> Vec<TrialRecord> {
    (0..n)
        .map(|i| {
            let d = if i < hits {
                Decision::Chosen("B".into())
            } else if i < hits + unparsed {
                Decision::Unparsed
            } else {
                Decision::Chosen("A".into())
            };
            record(i, arm.clone(), d)
        })
        .collect()
}

#[test]
fn criterion_01_worked_example() {
    let start = Instant::now();
    let t = arm_records(treatment_arm(), 100, 30, 0);
    let c = arm_records(Arm::Control, 100, 10, 0);
    let report = bias_score(Condition::Anchoring, &t, &c).unwrap();
    let elapsed = start.elapsed();
    let pass = (report.score - 0.2).abs() <= SCORE_TOLERANCE && report.score_exact == "1/5" && elapsed < BUDGET_WORKED_EXAMPLE;
    verdict(1, "30% vs 10% target rate", pass, &format!("score {:.4} ({}), {elapsed:?}", report.score, report.score_exact));
}

struct Case {
    nt: usize,
    nc: usize,
    t: Vec<TrialRecord>,
    c: Vec<TrialRecord>,
}

fn random_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let pick = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => Decision::Chosen("B".into()),
        1 => Decision::Chosen("A".into()),
        _ => Decision::Unparsed,
    };
    (0..1000)
        .map(|_| {
            let nt = rng.gen_range(1..=500);
            let nc = rng.gen_range(1..=500);
            let t = (0..nt).map(|i| record(i, treatment_arm(), pick(&mut rng))).collect();
            let c = (0..nc).map(|i| record(i, Arm::Control, pick(&mut rng))).collect();
            Case { nt, nc, t, c }
        })
        .collect()
}

/// Brute-force oracle: count, cross-multiply, reduce.
fn oracle(t: &[TrialRecord], c: &[TrialRecord]) -> (i64, i64, f64) {
    let count = |rs: &[TrialRecord]| rs.iter().filter(|r| matches!(&r.decision, Decision::Chosen(l) if *l == r.target_label)).count() as i64;
    let (ct, nt, cc, nc) = (count(t), t.len() as i64, count(c), c.len() as i64);
    let mut num = ct * nc - cc * nt;
    let mut den = nt * nc;
    let (mut a, mut b) = (num.abs(), den);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let g = a.max(1);
    num /= g;
    den /= g;
    (num, den, (ct * nc - cc * nt) as f64 / (nt * nc) as f64)
}

#[test]
fn criterion_02_metric_matches_counting_oracle() {
    let cases = random_cases();
    let start = Instant::now();
    let mut mismatches = 0;
    let mut unparsed_seen = 0;
    for case in &cases {
        let r = bias_score(Condition::Anchoring, &case.t, &case.c).unwrap();
        let (num, den, value) = oracle(&case.t, &case.c);
        unparsed_seen += r.unparsed_counts.0 + r.unparsed_counts.1;
        if r.score != value || r.score_exact != format!("{num}/{den}") || r.n_treatment != case.nt as u64 || r.n_control != case.nc as u64 {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && unparsed_seen > 0 && elapsed < BUDGET_METRIC_ORACLE;
    verdict(2, "1000 random arm pairs vs counting oracle", pass, &format!("{mismatches} mismatches, {unparsed_seen} unparsed records, {elapsed:?}"));
}

#[test]
fn criterion_03_bounds_and_antisymmetry() {
    let mut violations = 0;
    for case in random_cases() {
        let forward = bias_score(Condition::Anchoring, &case.t, &case.c).unwrap();
        let relabel = |rs: &[TrialRecord], arm: Arm| -> Vec<TrialRecord> {
            rs.iter().cloned().map(|mut r| {
                r.arm = arm.clone();
                r
            }).collect()
        };
        let swapped = bias_score(Condition::Anchoring, &relabel(&case.c, treatment_arm()), &relabel(&case.t, Arm::Control)).unwrap();
        if !(-1.0..=1.0).contains(&forward.score) || swapped.score != -forward.score {
            violations += 1;
        }
    }
    verdict(3, "score in [-1, 1] and swapping arms negates it", violations == 0, &format!("{violations} violations over 1000 cases"));
}

#[test]
fn criterion_04_keyword_mock_golden() {
    let finance = common::load("finance.jsonl");
    let backend = common::mock("scripts/keyword_finance.json");
    let start = Instant::now();
    let vanilla = common::run(StrategyId::Vanilla, &finance, &Condition::ALL, &backend, 3, 4);
    let sacd = common::run(StrategyId::Sacd, &finance, &Condition::ALL, &backend, 3, 4);
    let self_help = common::run(StrategyId::SelfHelp, &finance, &Condition::ALL, &backend, 3, 4);
    let elapsed = start.elapsed();
    let score = |r: &cogdebias::evaluation::ExperimentResult, c: Condition| r.report(c).map(|x| x.score).unwrap_or(f64::NAN);
    let mut detail = Vec::new();
    let mut pass = elapsed < BUDGET_GOLDEN;
    for c in Condition::ALL {
        let (v, s, h) = (score(&vanilla, c), score(&sacd, c), score(&self_help, c));
        pass &= (v - 1.0).abs() <= SCORE_TOLERANCE && (s - 0.0).abs() <= SCORE_TOLERANCE;
        pass &= if c == Condition::Multiple { h > 0.0 } else { (h - 0.0).abs() <= SCORE_TOLERANCE };
        pass &= vanilla.report(c).is_some_and(|r| r.n_treatment == 20 && r.n_control == 20);
        detail.push(format!("{}: vanilla {v:.4} sacd {s:.4} self-help {h:.4}", c.key()));
    }
    detail.push(format!("{elapsed:?}"));
    verdict(4, "keyword mock over 20 finance instances", pass, &detail.join("; "));
}

fn session<'a>(backend: &'a dyn cogdebias::gateway::Backend, templates: &'a Templates) -> Session<'a> {
    Session::new(backend, templates, CallParams::default())
}

fn multi(inst: &TaskInstance) -> (PromptDoc, PromptDoc) {
    let control = render_control(inst).unwrap();
    let treated = inject(&control, &BiasType::MULTI_ORDER, inst).unwrap();
    (control, treated)
}

#[test]
fn criterion_05_loop_control_flow() {
    let templates = Templates::builtin();
    let finance = common::load("finance.jsonl");
    let (control, treated) = multi(&finance[0]);

    let always = common::mock("scripts/always_flag.json");
    let budget = run_sacd(&treated, &mut session(&always, &templates), 3, SacdVariant::Full).unwrap();

    let keyword = common::mock("scripts/keyword_finance.json");
    let clean = run_sacd(&control, &mut session(&keyword, &templates), 3, SacdVariant::Full).unwrap();

    let staged = common::mock("scripts/staged_finance.json");
    let staged_trace = run_sacd(&treated, &mut session(&staged, &templates), 3, SacdVariant::Full).unwrap();

    let a = budget.iterations.len() == 3 && budget.termination == Termination::BudgetExhausted;
    let b = clean.iterations.len() == 1
        && clean.termination == Termination::CleanDetermination
        && clean.final_prompt.render() == control.render()
        && clean.rewrite_count() == 0;
    let c = staged_trace.iterations.len() == 3
        && staged_trace.termination == Termination::CleanDetermination
        && staged_trace.final_prompt.render() == control.render();
    verdict(
        5,
        "budget, early stop and staged cue removal",
        a && b && c,
        &format!(
            "always-flag {} iterations {:?}; clean {} iteration {:?}; staged {} iterations, final equals control: {}",
            budget.iterations.len(),
            budget.termination,
            clean.iterations.len(),
            clean.termination,
            staged_trace.iterations.len(),
            staged_trace.final_prompt.render() == control.render()
        ),
    );
}

#[test]
fn criterion_06_simulator_statistics() {
    let data = common::synthetic(500);
    let agent = BiasedAgent::new(BiasedAgentConfig { p_target_treatment: 0.7, p_target_control: 0.1, seed: SIMULATOR_SEED }).unwrap();
    let start = Instant::now();
    let result = common::run(StrategyId::Vanilla, &data, &[Condition::Anchoring], &agent, 3, 4);
    let elapsed = start.elapsed();
    let r = result.report(Condition::Anchoring).unwrap();
    let (et, ec) = SIMULATOR_EXPECTED;
    let expected = (et as f64 - ec as f64) / 500.0;
    let pass = r.n_treatment == 500
        && r.n_control == 500
        && r.treatment_target_count == et
        && r.control_target_count == ec
        && r.score == expected
        && (SIMULATOR_BAND.0..=SIMULATOR_BAND.1).contains(&r.score)
        && elapsed < BUDGET_SIMULATOR;
    verdict(
        6,
        "seeded simulator, N = 500 per arm",
        pass,
        &format!("score {:.4} ({}), replayed {expected:.4}, band [{}, {}], {elapsed:?}", r.score, r.score_exact, SIMULATOR_BAND.0, SIMULATOR_BAND.1),
    );
}

fn phrase(b: BiasType) -> String {
    b.cue_phrase().to_string()
}

fn taxonomy_script(flag: Vec<String>, labels: Vec<(String, String)>, rewrite: MockAction) -> ScriptedMock {
    ScriptedMock::new(MockScript {
        rules: vec![
            MockRule::new(MockAction::FlagSentences { phrases: flag }).on(&[CallPurpose::Determination]),
            MockRule::new(MockAction::LabelSentences {
                keywords: labels.into_iter().map(|(phrase, label)| KeywordLabel { phrase, label }).collect(),
                fallback_label: "anchoring".into(),
            })
            .on(&[CallPurpose::Analysis]),
            MockRule::new(rewrite).on(&[CallPurpose::Debias]),
        ],
        default_reply: String::new(),
    })
}

#[test]
fn criterion_07_error_taxonomy() {
    let templates = Templates::builtin();
    let finance = common::load("finance.jsonl");
    let mut cases: Vec<(ErrorCategory, ErrorCategory)> = Vec::new();
    // a control prompt whose context gets flagged
    let misjudge = taxonomy_script(vec!["Phenomenon:".into()], vec![], MockAction::DeleteListed);
    // bandwagon cue typed as anchoring
    let confuse = taxonomy_script(
        vec![phrase(BiasType::Bandwagon)],
        vec![(phrase(BiasType::Bandwagon), "anchoring".into())],
        MockAction::DeleteListed,
    );
    // anchoring cue flagged and typed correctly but kept verbatim
    let keep = taxonomy_script(
        vec![phrase(BiasType::Anchoring)],
        vec![(phrase(BiasType::Anchoring), "anchoring".into())],
        MockAction::KeepListed,
    );
    // anchoring cue removed, yet the final answer is the target
    let remove = taxonomy_script(
        vec![phrase(BiasType::Anchoring)],
        vec![(phrase(BiasType::Anchoring), "anchoring".into())],
        MockAction::DeleteListed,
    );
    for (i, inst) in finance.iter().take(10).enumerate() {
        let control = render_control(inst).unwrap();
        let gold = Decision::Chosen(inst.gold_label.clone());
        let target = Decision::Chosen(inst.biased_target_label.clone());

        let trace = run_sacd(&control, &mut session(&misjudge, &templates), 3, SacdVariant::Full).unwrap();
        let got = classify_error(&trace, &BTreeSet::new(), &[], &gold, &inst.biased_target_label);
        cases.push((ErrorCategory::BiasMisjudgment, got));

        let bandwagon = inject(&control, &[BiasType::Bandwagon], inst).unwrap();
        let cues = vec![make_cue(BiasType::Bandwagon, inst).unwrap()];
        let trace = run_sacd(&bandwagon, &mut session(&confuse, &templates), 3, SacdVariant::Full).unwrap();
        let got = classify_error(&trace, &[BiasType::Bandwagon].into(), &cues, &gold, &inst.biased_target_label);
        cases.push((ErrorCategory::BiasConfusion, got));

        let anchoring = inject(&control, &[BiasType::Anchoring], inst).unwrap();
        let cues = vec![make_cue(BiasType::Anchoring, inst).unwrap()];
        let (backend, decision) = if i % 2 == 0 { (&keep, &gold) } else { (&remove, &target) };
        let trace = run_sacd(&anchoring, &mut session(backend, &templates), 3, SacdVariant::Full).unwrap();
        let got = classify_error(&trace, &[BiasType::Anchoring].into(), &cues, decision, &inst.biased_target_label);
        cases.push((ErrorCategory::InsufficientDebiasing, got));
    }
    let agree = cases.iter().filter(|(want, got)| want == got).count();
    verdict(7, "30 labelled traces", agree == 30 && cases.len() == 30, &format!("{agree}/{} agree with hand labels", cases.len()));
}

#[test]
fn criterion_08_injection_contracts() {
    let mut checked = 0;
    let mut violations = Vec::new();
    for file in ["finance.jsonl", "healthcare.jsonl", "legal.jsonl"] {
        for inst in common::load(file) {
            let control = render_control(&inst).unwrap();
            for c in Condition::ALL {
                let treated = inject(&control, &c.biases(), &inst).unwrap();
                checked += 1;
                if treated.without_cues().render() != control.render() {
                    violations.push(format!("{} {}: cue removal differs from control", inst.id, c.key()));
                }
                if c == Condition::Multiple {
                    let needle = format!("Option {}", inst.biased_target_label);
                    let cues: Vec<_> = treated.segments.iter().filter(|s| s.kind == SegmentKind::Cue).collect();
                    if cues.len() != 3 || cues.iter().any(|s| !s.text.contains(&needle)) {
                        violations.push(format!("{} multiple: a cue misses {needle}", inst.id));
                    }
                }
            }
        }
    }
    verdict(8, "cue removal restores control; shared target", violations.is_empty(), &format!("{checked} treatments, {} violations {violations:?}", violations.len()));
}

fn run_args(backend: &str, strategy: &str, workers: usize, out: &std::path::Path) -> ConfigArgs {
    let mut args = ConfigArgs {
        backend: Some(backend.into()),
        dataset: Some(common::fixture("finance.jsonl")),
        strategy: Some(strategy.into()),
        seed: Some("11".into()),
        workers: Some(workers.to_string()),
        output_dir: Some(out.to_path_buf()),
        ..Default::default()
    };
    match backend {
        "mock" => args.script_path = Some(common::fixture("scripts/keyword_finance.json")),
        _ => {
            args.p_target_treatment = Some("0.7".into());
            args.p_target_control = Some("0.1".into());
        }
    }
    args
}

#[test]
fn criterion_09_reproducible_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for (backend, strategy) in [("mock", "vanilla,sacd,self_help"), ("simulator", "vanilla,debate")] {
        let mut outputs = Vec::new();
        for workers in [1, 4, 16] {
            for round in 0..2 {
                let dir = tmp.path().join(format!("{backend}-{workers}-{round}"));
                let config = run_args(backend, strategy, workers, &dir).resolve().unwrap();
                let (_, complete) = cmd_run(&config).unwrap();
                pass &= complete;
                outputs.push(std::fs::read(dir.join("report.json")).unwrap());
            }
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        pass &= same;
        detail.push(format!("{backend}: 6 runs byte-identical: {same}"));
    }
    verdict(9, "report.json identical across runs and worker counts {1, 4, 16}", pass, &detail.join("; "));
}

#[test]
fn criterion_10_iteration_curve() {
    let finance = common::load("finance.jsonl");
    let staged = common::mock("scripts/staged_finance.json");
    let result = common::run(StrategyId::Sacd, &finance, &[Condition::Multiple], &staged, 3, 4);
    let curve = result.curves.iter().find(|c| c.condition == Condition::Multiple).unwrap();
    let p = &curve.points;
    let last = p.last().unwrap();
    let pass = p.len() == 3
        && p[1].surviving_cue_treatments < p[0].surviving_cue_treatments
        && (last.score - 0.0).abs() <= SCORE_TOLERANCE;
    let shape: Vec<String> = p.iter().map(|x| format!("t{} score {:.4} surviving {}", x.iteration, x.score, x.surviving_cue_treatments)).collect();
    verdict(10, "per-iteration scores with staged removal", pass, &shape.join(", "));
}

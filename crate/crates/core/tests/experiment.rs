mod common;

use cogdebias::evaluation::{run_experiment, Condition, ExperimentError, ExperimentSettings};
use cogdebias::gateway::{Backend, ChatRequest, ChatResponse, GatewayError, MockScript, ScriptedMock};
use cogdebias::strategies::StrategyId;
use cogdebias::templates::Templates;

/// Delegates to a mock but fails every request mentioning `poison`.
struct Flaky {
    inner: ScriptedMock,
    poison: String,
}

impl Backend for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.last_user().contains(&self.poison) {
            return Err(GatewayError::Transport { attempts: 1, message: "down".into() });
        }
        self.inner.complete(request)
    }
}

#[test]
fn failed_instances_are_excluded_and_counted() {
    let finance = common::load("finance.jsonl");
    let backend = Flaky { inner: common::mock("scripts/keyword_finance.json"), poison: finance[3].context.clone() };
    let result = common::run(StrategyId::Vanilla, &finance, &[Condition::Bandwagon], &backend, 3, 4);
    let report = result.report(Condition::Bandwagon).unwrap();
    assert_eq!((report.n_treatment, report.n_control), (19, 19));
    assert_eq!(report.excluded, 1);
    assert_eq!(report.score, 1.0);
    assert_eq!(result.failures.len(), 2);
    assert!(result.failures.iter().all(|f| f.instance_id == finance[3].id));
}

#[test]
fn a_dead_backend_leaves_empty_arms() {
    let finance = common::load("finance.jsonl");
    let backend = Flaky { inner: ScriptedMock::new(MockScript::fixed("")), poison: String::new() };
    let result = common::run(StrategyId::Vanilla, &finance, &[Condition::Anchoring], &backend, 3, 2);
    assert!(result.report(Condition::Anchoring).is_none());
    assert!(!result.empty_arms.is_empty());
}

#[test]
fn few_shot_draws_on_the_domain_pool() {
    let finance = common::load("finance.jsonl");
    let templates = Templates::builtin();
    let backend = common::mock("scripts/keyword_finance.json");
    let mut settings = ExperimentSettings::new(&templates);

    let err = run_experiment(&finance, StrategyId::FewShot, &[Condition::Anchoring], &backend, &settings).unwrap_err();
    assert!(matches!(err, ExperimentError::MissingExemplars(StrategyId::FewShot)));

    settings.exemplar_pool = common::load("exemplars/finance.jsonl");
    for id in [StrategyId::FewShot, StrategyId::FewShotDebias] {
        let result = run_experiment(&finance, id, &[Condition::Anchoring], &backend, &settings).unwrap();
        assert_eq!(result.report(Condition::Anchoring).unwrap().n_treatment, 20);
        let exemplar = &settings.exemplar_pool[0].context;
        assert!(result.transcripts.iter().all(|(_, t)| t.turns[0].request.last_user().contains(exemplar.as_str())));
    }

    settings.exemplar_pool.push(finance[0].clone());
    let err = run_experiment(&finance, StrategyId::FewShot, &[Condition::Anchoring], &backend, &settings).unwrap_err();
    assert!(matches!(err, ExperimentError::ExemplarLeak(id) if id == finance[0].id));
}

#[test]
fn sacd_runs_carry_traces_and_error_labels() {
    let finance = common::load("finance.jsonl");
    let backend = common::mock("scripts/keyword_finance.json");
    let result = common::run(StrategyId::Sacd, &finance, &[Condition::Bandwagon], &backend, 3, 4);
    assert!(result.records.iter().all(|r| r.trace.is_some()));
    let total: u64 = result.error_breakdown.values().flat_map(|m| m.values()).sum();
    assert_eq!(total, result.records.len() as u64);
    assert_eq!(result.curves.len(), 1);
}

#[test]
fn preconditions() {
    let templates = Templates::builtin();
    let settings = ExperimentSettings::new(&templates);
    let backend = common::mock("scripts/keyword_finance.json");
    let finance = common::load("finance.jsonl");
    assert!(matches!(
        run_experiment(&[], StrategyId::Vanilla, &[Condition::Anchoring], &backend, &settings),
        Err(ExperimentError::EmptyDataset)
    ));
    assert!(matches!(
        run_experiment(&finance, StrategyId::Vanilla, &[], &backend, &settings),
        Err(ExperimentError::NoConditions)
    ));
}

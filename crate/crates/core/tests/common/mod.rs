#![allow(dead_code)]

use std::path::PathBuf;

use cogdebias::bias::TaskInstance;
use cogdebias::dataset;
use cogdebias::evaluation::{run_experiment, Condition, ExperimentResult, ExperimentSettings};
use cogdebias::gateway::{Backend, MockScript, ScriptedMock};
use cogdebias::strategies::StrategyId;
use cogdebias::templates::Templates;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("fixtures").join(rel)
}

pub fn load(rel: &str) -> Vec<TaskInstance> {
    dataset::load(&fixture(rel)).expect("fixture loads")
}

pub fn script(rel: &str) -> MockScript {
    MockScript::load(&fixture(rel)).expect("script loads")
}

pub fn mock(rel: &str) -> ScriptedMock {
    ScriptedMock::new(script(rel))
}

pub fn run(
    strategy: StrategyId,
    instances: &[TaskInstance],
    conditions: &[Condition],
    backend: &dyn Backend,
    t_max: usize,
    workers: usize,
) -> ExperimentResult {
    let templates = Templates::builtin();
    let mut settings = ExperimentSettings::new(&templates);
    settings.t_max = t_max;
    settings.workers = workers;
    run_experiment(instances, strategy, conditions, backend, &settings).expect("experiment runs")
}

/// Synthetic two-option instances with ids in sorted order.
pub fn synthetic(n: usize) -> Vec<TaskInstance> {
    let line = |i: usize| {
        format!(
            r#"{{"id":"syn-{i:04}","domain":"other","instruction":"Pick the better option.","context":"Case {i} has two candidate answers.","options":[{{"label":"A","text":"first"}},{{"label":"B","text":"second"}}],"gold_label":"A","biased_target_label":"B"}}"#
        )
    };
    let text: String = (0..n).map(|i| line(i) + "\n").collect();
    dataset::parse_jsonl(&text).expect("synthetic data is valid")
}

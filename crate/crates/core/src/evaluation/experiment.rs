//! Control/treatment experiment runner.
//!
//! Every instance is run once in the control arm and once per requested
//! condition. Work items are spread over a fixed pool of scoped threads and
//! written back into indexed slots, then sorted, so the output never depends
//! on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::decision::parse_decision;
use super::score::{
    bias_score, exact_score, ratio_to_f64, Arm, BiasScoreReport, Condition, IterationOutcome, TrialRecord,
};
use super::taxonomy::{classify_error, ErrorCategory};
use crate::bias::{inject, make_cue, render_control, BiasCue, BiasError, Domain, TaskInstance};
use crate::gateway::{Backend, CallParams, CallPurpose, Session, TrialMeta, Transcript};
use crate::strategies::{debias_exemplars, plain_exemplars, run_strategy, Exemplar, StrategyId, StrategyOptions};
use crate::templates::Templates;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no bias conditions requested")]
    NoConditions,
    #[error("strategy `{0}` needs exemplars but the exemplar pool is empty")]
    MissingExemplars(StrategyId),
    #[error("exemplar `{0}` is also an evaluated instance")]
    ExemplarLeak(String),
    #[error(transparent)]
    Bias(#[from] BiasError),
}

pub struct ExperimentSettings<'a> {
    pub templates: &'a Templates,
    pub params: CallParams,
    pub t_max: usize,
    pub workers: usize,
    pub exemplar_pool: Vec<TaskInstance>,
    pub shots: usize,
}

impl<'a> ExperimentSettings<'a> {
    pub fn new(templates: &'a Templates) -> Self {
        ExperimentSettings {
            templates,
            params: CallParams::default(),
            t_max: crate::sacd::DEFAULT_T_MAX,
            workers: 4,
            exemplar_pool: vec![],
            shots: crate::strategies::DEFAULT_SHOTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub arm: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub iteration: usize,
    pub score: f64,
    pub score_exact: String,
    pub n_treatment: u64,
    /// Treatment prompts still containing cue text after this iteration.
    pub surviving_cue_treatments: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCurve {
    pub condition: Condition,
    pub points: Vec<IterationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub strategy: StrategyId,
    pub reports: Vec<BiasScoreReport>,
    /// Conditions left without a score because an arm emptied out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub empty_arms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<IterationCurve>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub error_breakdown: BTreeMap<String, BTreeMap<ErrorCategory, u64>>,
    pub failures: Vec<Failure>,
    pub records: Vec<TrialRecord>,
    #[serde(skip)]
    pub transcripts: Vec<(String, Transcript)>,
}

impl ExperimentResult {
    pub fn report(&self, condition: Condition) -> Option<&BiasScoreReport> {
        self.reports.iter().find(|r| r.condition == condition)
    }
}

/// Maps `f` over `items` on `workers` threads; output order follows input.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

struct Job {
    instance: usize,
    condition: Option<Condition>,
}

struct JobOutput {
    record: TrialRecord,
    transcript: Transcript,
}

fn exemplars_by_domain(
    strategy: StrategyId,
    pool: &[TaskInstance],
    shots: usize,
) -> Result<BTreeMap<Domain, Vec<Exemplar>>, BiasError> {
    let mut out = BTreeMap::new();
    if !strategy.needs_exemplars() {
        return Ok(out);
    }
    let domains: BTreeSet<Domain> = pool.iter().map(|i| i.domain).collect();
    for domain in domains {
        let own: Vec<TaskInstance> = pool.iter().filter(|i| i.domain == domain).cloned().collect();
        let built = if strategy == StrategyId::FewShot { plain_exemplars(&own, shots)? } else { debias_exemplars(&own, shots)? };
        out.insert(domain, built);
    }
    Ok(out)
}

fn cues_for(condition: Option<Condition>, instance: &TaskInstance) -> Result<Vec<BiasCue>, BiasError> {
    match condition {
        None => Ok(vec![]),
        Some(c) => c.biases().into_iter().map(|b| make_cue(b, instance)).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    job: &Job,
    instances: &[TaskInstance],
    strategy: StrategyId,
    backend: &dyn Backend,
    settings: &ExperimentSettings<'_>,
    exemplars: &BTreeMap<Domain, Vec<Exemplar>>,
    fallback_exemplars: &[Exemplar],
) -> Result<JobOutput, String> {
    let inst = &instances[job.instance];
    let control = render_control(inst).map_err(|e| e.to_string())?;
    let (prompt, arm, stream) = match job.condition {
        None => (control, Arm::Control, 0),
        Some(c) => {
            let treated = inject(&control, &c.biases(), inst).map_err(|e| e.to_string())?;
            (treated, Arm::Treatment(c.biases().into_iter().collect()), c.arm_stream())
        }
    };
    let cues = cues_for(job.condition, inst).map_err(|e| e.to_string())?;
    let meta = TrialMeta {
        instance_id: inst.id.clone(),
        arm_stream: stream,
        draw_index: job.instance as u64,
        treatment: job.condition.is_some(),
        target_label: inst.biased_target_label.clone(),
        option_labels: inst.labels(),
    };
    let mut session = Session::new(backend, settings.templates, settings.params.clone()).with_meta(Some(meta));
    let own = exemplars.get(&inst.domain).map(Vec::as_slice).filter(|e| !e.is_empty());
    let options = StrategyOptions {
        exemplars: own.or(Some(fallback_exemplars)).filter(|e| !e.is_empty()),
        t_max: settings.t_max,
    };
    let mut outcome = run_strategy(strategy, &prompt, &mut session, options).map_err(|e| e.to_string())?;
    let decision = parse_decision(&outcome.answer, &inst.options);

    let mut iterations = Vec::new();
    if let Some(trace) = &outcome.trace {
        let final_text = trace.final_prompt.render();
        for t in 1..=settings.t_max {
            let text = trace.prompt_after(t).render();
            let at_t = if text == final_text {
                decision.clone()
            } else {
                let request = settings.templates.render("decision", &[("prompt", &text)]);
                let answer = session
                    .ask_user("iteration-probe", CallPurpose::Decision, request)
                    .map_err(|e| e.to_string())?;
                parse_decision(&answer, &inst.options)
            };
            iterations.push(IterationOutcome {
                iteration: t,
                decision: at_t,
                cue_survives: cues.iter().any(|c| c.survives_in(&text)),
            });
        }
        outcome.transcript.turns.extend(session.take_transcript().turns);
    }

    let transcript_ref = format!("traces/{}__{}__{}.json", strategy.key(), arm.key(), file_stem(&inst.id));
    Ok(JobOutput {
        record: TrialRecord {
            instance_id: inst.id.clone(),
            arm,
            strategy,
            prompt_digest: sha256_hex(&outcome.decision_prompt),
            raw_answer: outcome.answer,
            decision,
            target_label: inst.biased_target_label.clone(),
            gold_label: inst.gold_label.clone(),
            trace: outcome.trace,
            iterations,
            transcript_ref,
        },
        transcript: outcome.transcript,
    })
}

/// Splits records into the paired treatment and control arms of one
/// condition: only instances present in both arms are kept.
pub fn paired_arms(records: &[TrialRecord], condition: Condition) -> (Vec<TrialRecord>, Vec<TrialRecord>) {
    let want = Arm::Treatment(condition.biases().into_iter().collect());
    let treated: BTreeSet<&str> = records.iter().filter(|r| r.arm == want).map(|r| r.instance_id.as_str()).collect();
    let controlled: BTreeSet<&str> =
        records.iter().filter(|r| r.arm == Arm::Control).map(|r| r.instance_id.as_str()).collect();
    let both: BTreeSet<&str> = treated.intersection(&controlled).copied().collect();
    let pick = |arm: &Arm| -> Vec<TrialRecord> {
        records.iter().filter(|r| &r.arm == arm && both.contains(r.instance_id.as_str())).cloned().collect()
    };
    (pick(&want), pick(&Arm::Control))
}

/// Scores every condition in `conditions` from stored records.
pub fn score_records(
    records: &[TrialRecord],
    conditions: &[Condition],
    universe: Option<u64>,
) -> (Vec<BiasScoreReport>, Vec<String>) {
    let mut reports = Vec::new();
    let mut empty = Vec::new();
    for &c in conditions {
        let (t, ctl) = paired_arms(records, c);
        match bias_score(c, &t, &ctl) {
            Ok(mut r) => {
                let seen: BTreeSet<&str> = records
                    .iter()
                    .filter(|x| x.arm == Arm::Control || x.arm == Arm::Treatment(c.biases().into_iter().collect()))
                    .map(|x| x.instance_id.as_str())
                    .collect();
                r.excluded = universe.unwrap_or(seen.len() as u64) - r.n_treatment;
                reports.push(r);
            }
            Err(e) => empty.push(format!("{}: {e}", c.key())),
        }
    }
    (reports, empty)
}

fn iteration_curve(records: &[TrialRecord], condition: Condition, t_max: usize) -> Option<IterationCurve> {
    let (t, c) = paired_arms(records, condition);
    if t.is_empty() || c.is_empty() {
        return None;
    }
    let hits = |rs: &[TrialRecord], i: usize| -> u64 {
        rs.iter().filter(|r| r.iterations.get(i).is_some_and(|o| o.decision.is(&r.target_label))).count() as u64
    };
    let points = (0..t_max)
        .map(|i| {
            let exact = exact_score(hits(&t, i), t.len() as u64, hits(&c, i), c.len() as u64).expect("arms non-empty");
            IterationPoint {
                iteration: i + 1,
                score: ratio_to_f64(&exact),
                score_exact: format!("{}/{}", exact.numer(), exact.denom()),
                n_treatment: t.len() as u64,
                surviving_cue_treatments: t.iter().filter(|r| r.iterations.get(i).is_some_and(|o| o.cue_survives)).count()
                    as u64,
            }
        })
        .collect();
    Some(IterationCurve { condition, points })
}

fn error_breakdown(
    records: &[TrialRecord],
    instances: &BTreeMap<&str, &TaskInstance>,
) -> BTreeMap<String, BTreeMap<ErrorCategory, u64>> {
    let mut out: BTreeMap<String, BTreeMap<ErrorCategory, u64>> = BTreeMap::new();
    for r in records {
        let (Some(trace), Some(inst)) = (&r.trace, instances.get(r.instance_id.as_str())) else { continue };
        let (injected, condition) = match &r.arm {
            Arm::Control => (BTreeSet::new(), None),
            Arm::Treatment(set) => (set.clone(), Condition::from_biases(set)),
        };
        let cues = cues_for(condition, inst).unwrap_or_default();
        let category = classify_error(trace, &injected, &cues, &r.decision, &r.target_label);
        let counts = out
            .entry(r.arm.key())
            .or_insert_with(|| ErrorCategory::ALL.into_iter().map(|c| (c, 0)).collect());
        *counts.entry(category).or_insert(0) += 1;
    }
    out
}

/// Runs `strategy` over both arms of every condition and scores the result.
pub fn run_experiment(
    dataset: &[TaskInstance],
    strategy: StrategyId,
    conditions: &[Condition],
    backend: &dyn Backend,
    settings: &ExperimentSettings<'_>,
) -> Result<ExperimentResult, ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    if conditions.is_empty() {
        return Err(ExperimentError::NoConditions);
    }
    let mut conditions = conditions.to_vec();
    conditions.sort();
    conditions.dedup();
    let mut instances = dataset.to_vec();
    instances.sort_by(|a, b| a.id.cmp(&b.id));
    for inst in &instances {
        inst.validate()?;
    }
    let ids: BTreeSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    if let Some(leak) = settings.exemplar_pool.iter().find(|e| ids.contains(e.id.as_str())) {
        return Err(ExperimentError::ExemplarLeak(leak.id.clone()));
    }
    let exemplars = exemplars_by_domain(strategy, &settings.exemplar_pool, settings.shots)?;
    let fallback: Vec<Exemplar> = match strategy {
        StrategyId::FewShot => plain_exemplars(&settings.exemplar_pool, settings.shots)?,
        StrategyId::FewShotDebias => debias_exemplars(&settings.exemplar_pool, settings.shots)?,
        _ => vec![],
    };
    if strategy.needs_exemplars() && fallback.is_empty() {
        return Err(ExperimentError::MissingExemplars(strategy));
    }

    let mut jobs: Vec<Job> = (0..instances.len()).map(|i| Job { instance: i, condition: None }).collect();
    for &c in &conditions {
        jobs.extend((0..instances.len()).map(|i| Job { instance: i, condition: Some(c) }));
    }
    let outputs = parallel_map(&jobs, settings.workers, |job| {
        run_job(job, &instances, strategy, backend, settings, &exemplars, &fallback)
    });

    let mut records = Vec::new();
    let mut transcripts = Vec::new();
    let mut failures = Vec::new();
    for (job, out) in jobs.iter().zip(outputs) {
        match out {
            Ok(o) => {
                transcripts.push((o.record.transcript_ref.clone(), o.transcript));
                records.push(o.record);
            }
            Err(message) => failures.push(Failure {
                instance_id: instances[job.instance].id.clone(),
                arm: job.condition.map_or("control", Condition::key).to_string(),
                message,
            }),
        }
    }
    records.sort_by(|a, b| (&a.instance_id, &a.arm).cmp(&(&b.instance_id, &b.arm)));
    transcripts.sort_by(|a, b| a.0.cmp(&b.0));
    failures.sort_by(|a, b| (&a.instance_id, &a.arm).cmp(&(&b.instance_id, &b.arm)));

    let (reports, empty_arms) = score_records(&records, &conditions, Some(instances.len() as u64));
    let curves = if strategy.sacd_variant().is_some() {
        conditions.iter().filter_map(|&c| iteration_curve(&records, c, settings.t_max)).collect()
    } else {
        vec![]
    };
    let by_id: BTreeMap<&str, &TaskInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let error_breakdown = error_breakdown(&records, &by_id);
    Ok(ExperimentResult { strategy, reports, empty_arms, curves, error_breakdown, failures, records, transcripts })
}

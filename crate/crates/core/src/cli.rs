//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::bias::{inject, render_control, PromptDoc};
use crate::config::{ConfigError, RunConfig, DEFAULT_SAMPLE_SIZE};
use crate::dataset::{self, DatasetError};
use crate::evaluation::experiment::sha256_hex;
use crate::evaluation::{
    run_experiment, score_records, write_outputs, Condition, ExperimentError, ExperimentSettings, RunReport,
    TrialRecord,
};
use crate::gateway::Session;
use crate::sacd::{run_sacd, SacdError, SacdTrace, SacdVariant, Termination};
use crate::templates::{TemplateError, Templates};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Sacd(#[from] SacdError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), reason: e.to_string() }
}

#[derive(Debug, Parser)]
#[command(name = "cogdebias", version, about = "Bias-cue injection and iterative prompt debiasing with bias scoring")]
pub struct Cli {
    /// Log filter for stderr output (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write control/treatment prompt pairs as JSON lines.
    Inject(InjectArgs),
    /// Run an experiment and write reports under the output directory.
    Run(RunArgs),
    /// Debias one prompt file and print the trace.
    Sacd(SacdArgs),
    /// Recompute bias scores from stored records.
    Score(ScoreArgs),
    /// Re-render the text table from a report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated: anchoring, bandwagon, loss_aversion, multiple.
    #[arg(long, default_value = "")]
    pub conditions: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags mirroring the config-file keys; each one overrides the file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub script_path: Option<PathBuf>,
    #[arg(long)]
    pub p_target_treatment: Option<String>,
    #[arg(long)]
    pub p_target_control: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    #[arg(long)]
    pub shots: Option<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub conditions: Option<String>,
    #[arg(long)]
    pub t_max: Option<String>,
    #[arg(long)]
    pub temperature: Option<String>,
    #[arg(long)]
    pub max_tokens: Option<String>,
    #[arg(long)]
    pub sample_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub templates_path: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<String>,
    #[arg(long)]
    pub max_attempts: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("backend", self.backend.clone());
        put("base_url", self.base_url.clone());
        put("model_id", self.model_id.clone());
        put("script_path", path(&self.script_path));
        put("p_target_treatment", self.p_target_treatment.clone());
        put("p_target_control", self.p_target_control.clone());
        put("dataset", path(&self.dataset));
        put("exemplars", path(&self.exemplars));
        put("shots", self.shots.clone());
        put("strategy", self.strategy.clone());
        put("conditions", self.conditions.clone());
        put("t_max", self.t_max.clone());
        put("temperature", self.temperature.clone());
        put("max_tokens", self.max_tokens.clone());
        put("sample_size", self.sample_size.clone());
        put("seed", self.seed.clone());
        put("cache_dir", path(&self.cache_dir));
        put("templates_path", path(&self.templates_path));
        put("output_dir", path(&self.output_dir));
        put("workers", self.workers.clone());
        put("max_attempts", self.max_attempts.clone());
        m
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let overrides = self.overrides();
        Ok(match &self.config {
            Some(path) => RunConfig::load(path, &overrides)?,
            None => RunConfig::from_map(&overrides)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SacdArgs {
    /// A rendered prompt, or a prompt document in JSON.
    pub prompt_file: PathBuf,
    #[arg(long, default_value = "full")]
    pub variant: SacdVariant,
    /// Print the trace as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// report.json or a records/*.json file.
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct InjectRecord {
    pub instance_id: String,
    pub condition: Condition,
    pub target_label: String,
    pub control: String,
    pub treatment: String,
}

pub fn parse_conditions(raw: &str) -> Result<Vec<Condition>, CliError> {
    let list: Vec<Condition> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Condition>().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    if list.is_empty() {
        return Err(CliError::Usage("at least one condition is required".into()));
    }
    Ok(list)
}

pub fn cmd_inject(args: &InjectArgs) -> Result<usize, CliError> {
    let conditions = parse_conditions(&args.conditions)?;
    let instances = dataset::load(&args.dataset)?;
    let mut out = String::new();
    let mut n = 0;
    for inst in &instances {
        let control = render_control(inst).map_err(|e| CliError::Usage(e.to_string()))?;
        for &c in &conditions {
            let treated = inject(&control, &c.biases(), inst).map_err(|e| CliError::Usage(e.to_string()))?;
            let rec = InjectRecord {
                instance_id: inst.id.clone(),
                condition: c,
                target_label: inst.biased_target_label.clone(),
                control: control.render(),
                treatment: treated.render(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
            n += 1;
        }
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(&args.out, out).map_err(|e| io_err(&args.out, e))?;
    Ok(n)
}

fn load_templates(config: &RunConfig) -> Result<Templates, CliError> {
    Ok(match &config.templates_path {
        Some(p) => Templates::load(p)?,
        None => Templates::builtin(),
    })
}

/// Validates the config, runs every configured strategy and returns the
/// report. Nothing is written; see [`cmd_run`].
pub fn execute_run(config: &RunConfig) -> Result<RunReport, CliError> {
    let dataset_path = config.dataset.as_ref().ok_or(ConfigError::Missing("dataset"))?;
    let raw = fs::read_to_string(dataset_path).map_err(|e| io_err(dataset_path, e))?;
    let all = dataset::parse_jsonl(&raw)?;
    let n = config.sample_size.unwrap_or_else(|| all.len().min(DEFAULT_SAMPLE_SIZE));
    let instances = dataset::sample(&all, n, config.seed)?;
    let pool = match &config.exemplars {
        Some(p) => dataset::load(p)?,
        None => vec![],
    };
    let templates = load_templates(config)?;
    let backend = config.build_backend()?;

    let mut settings = ExperimentSettings::new(&templates);
    settings.params = config.call_params();
    settings.t_max = config.t_max;
    settings.workers = config.workers;
    settings.exemplar_pool = pool;
    settings.shots = config.shots;

    let mut results = Vec::new();
    for &strategy in &config.strategies {
        tracing::info!(strategy = strategy.key(), instances = instances.len(), "running");
        results.push(run_experiment(&instances, strategy, &config.conditions, backend.as_ref(), &settings)?);
    }
    let echo = config.echo(&[
        ("dataset_sha256", serde_json::json!(sha256_hex(&raw))),
        ("sample_size_used", serde_json::json!(instances.len())),
        ("templates_version", serde_json::json!(templates.version())),
    ]);
    Ok(RunReport { config: echo, results })
}

/// Runs the experiment and writes the output tree. Returns the report and
/// whether every condition produced a score.
pub fn cmd_run(config: &RunConfig) -> Result<(RunReport, bool), CliError> {
    let report = execute_run(config)?;
    write_outputs(&config.output_dir, &report).map_err(|e| io_err(&config.output_dir, e))?;
    let complete = !report.has_empty_arms();
    Ok((report, complete))
}

pub fn read_prompt(path: &Path) -> Result<PromptDoc, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.trim_start().starts_with('{') {
        if let Ok(doc) = serde_json::from_str::<PromptDoc>(&text) {
            return Ok(doc);
        }
    }
    Ok(PromptDoc::from_rendered(&text))
}

pub fn cmd_sacd(args: &SacdArgs) -> Result<SacdTrace, CliError> {
    let config = args.config.resolve()?;
    let prompt = read_prompt(&args.prompt_file)?;
    let templates = load_templates(&config)?;
    let backend = config.build_backend()?;
    let mut session = Session::new(backend.as_ref(), &templates, config.call_params());
    Ok(run_sacd(&prompt, &mut session, config.t_max, args.variant)?)
}

pub fn format_trace(trace: &SacdTrace) -> String {
    let mut out = String::new();
    for (i, it) in trace.iterations.iter().enumerate() {
        let _ = writeln!(out, "iteration {}", i + 1);
        let _ = writeln!(out, "  determination:");
        for v in &it.determination {
            let _ = writeln!(out, "    [{}] {:<8} {}", v.index, if v.biased { "biased" } else { "unbiased" }, v.sentence);
        }
        if let Some(a) = &it.analysis {
            let _ = writeln!(out, "  analysis:");
            for e in &a.entries {
                let types: Vec<&str> = e.bias_types.iter().map(|b| b.label()).collect();
                let _ = writeln!(out, "    [{}] {} (confidence {:.2}) {}", e.index, types.join(", "), e.confidence, e.rationale);
            }
        }
        if let Some(p) = &it.rewritten {
            let _ = writeln!(out, "  rewritten{}:", if it.used_fallback { " (deletion fallback)" } else { "" });
            for line in p.render().lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
        for w in &it.warnings {
            let _ = writeln!(out, "  warning: {w}");
        }
    }
    let term = match trace.termination {
        Termination::CleanDetermination => "CleanDetermination",
        Termination::BudgetExhausted => "BudgetExhausted",
    };
    let _ = writeln!(out, "termination: {term}");
    let _ = writeln!(out, "final prompt:");
    for line in trace.final_prompt.render().lines() {
        let _ = writeln!(out, "  {line}");
    }
    out
}

/// Loads records from a report.json or a bare record array.
pub fn load_records(path: &Path) -> Result<Vec<TrialRecord>, CliError> {
    let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if let Ok(report) = RunReport::from_json(&raw) {
        return Ok(report.results.into_iter().flat_map(|r| r.records).collect());
    }
    serde_json::from_str(&raw).map_err(|e| io_err(path, e))
}

pub fn cmd_score(args: &ScoreArgs) -> Result<String, CliError> {
    let records = load_records(&args.input)?;
    let mut strategies: Vec<_> = records.iter().map(|r| r.strategy).collect();
    strategies.sort();
    strategies.dedup();
    let mut rows = Vec::new();
    for s in strategies {
        let own: Vec<TrialRecord> = records.iter().filter(|r| r.strategy == s).cloned().collect();
        let present: Vec<Condition> = Condition::ALL
            .into_iter()
            .filter(|c| own.iter().any(|r| r.arm == crate::evaluation::Arm::Treatment(c.biases().into_iter().collect())))
            .collect();
        let (reports, empty) = score_records(&own, &present, None);
        rows.push(serde_json::json!({"strategy": s, "reports": reports, "empty_arms": empty}));
    }
    if args.json {
        return Ok(serde_json::to_string_pretty(&rows).expect("scores serialize") + "\n");
    }
    let mut out = String::new();
    for row in &rows {
        let _ = writeln!(out, "{}", row["strategy"].as_str().unwrap_or_default());
        for r in row["reports"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  {:<14} {:>8.4}  ({} / {} treatment, {} / {} control)",
                r["condition"].as_str().unwrap_or_default(),
                r["score"].as_f64().unwrap_or(f64::NAN),
                r["treatment_target_count"],
                r["n_treatment"],
                r["control_target_count"],
                r["n_control"],
            );
        }
    }
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let raw = fs::read_to_string(&args.report).map_err(|e| io_err(&args.report, e))?;
    let report = RunReport::from_json(&raw).map_err(|e| io_err(&args.report, e))?;
    let table = crate::evaluation::render_table(&report.results);
    if let Some(out) = &args.out {
        fs::write(out, &table).map_err(|e| io_err(out, e))?;
    }
    Ok(table)
}

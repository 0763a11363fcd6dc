//! Experiment orchestration: runs every (domain, strategy, configuration,
//! repetition) cell of a plan against the backend, persists records to an
//! append-only JSONL store with crash-safe resume, and drives the two-phase
//! tuning pipeline (evolutionary search, space reduction, grid search,
//! Pareto front) end to end with per-phase checkpoints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{cosine_similarity, semantic_score, RemoteScorer, ScorerError, SearchEvaluator, SemanticScorer, SurrogateScorer};
use crate::gateway::{Gateway, GatewayError};
use crate::grid::{self, GridError, LabeledSolution};
use crate::hpspace::{Configuration, SearchSpace};
use crate::moo::{self, EngineError, EvolutionParams, Population};
use crate::prompt::{self, ManifestError, PromptError, PromptSpec, Strategy, WorkedExample};
use crate::stats::ScoredRecord;
use crate::util::{append_jsonl, fnv1a64, fnv1a64_parts, read_jsonl, scoped_map, unix_millis};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("plan invalid: {0}")]
    PlanInvalid(String),
    #[error("storage failed: {0}")]
    Storage(#[from] std::io::Error),
    #[error("plan parse failed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub input_text_path: PathBuf,
    pub reference_model_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub id: String,
    pub config: Configuration,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    #[default]
    Surrogate,
    Remote {
        endpoint: String,
        #[serde(default = "default_scorer_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_scorer_retries")]
        max_retries: u32,
    },
}

fn default_scorer_timeout() -> u64 {
    60
}

fn default_scorer_retries() -> u32 {
    3
}

impl ScorerSpec {
    pub fn build(&self) -> Box<dyn SemanticScorer + Send + Sync> {
        match self {
            ScorerSpec::Surrogate => Box::new(SurrogateScorer),
            ScorerSpec::Remote {
                endpoint,
                timeout_secs,
                max_retries,
            } => Box::new(RemoteScorer::new(
                endpoint,
                std::time::Duration::from_secs(*timeout_secs),
                *max_retries,
            )),
        }
    }
}

/// The full study description, loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "default_plan_id")]
    pub plan_id: String,
    pub domains: Vec<DomainSpec>,
    pub strategies: Vec<Strategy>,
    pub configurations: Vec<ConfigEntry>,
    pub baseline_id: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    pub backend: crate::gateway::BackendSpec,
    #[serde(default)]
    pub scorer: ScorerSpec,
    pub master_seed: u64,
    /// Worked-example manifest for few-shot and chain-of-thought prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples: Option<PathBuf>,
    /// Overrides the stock task header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_header: Option<String>,
    /// Domain used by the tuning pipeline; defaults to the first domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_domain: Option<String>,
}

fn default_plan_id() -> String {
    "plan".to_string()
}

fn default_repetitions() -> u32 {
    20
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let plan: ExperimentPlan = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let invalid = |msg: String| Err(RunnerError::PlanInvalid(msg));
        if self.domains.is_empty() {
            return invalid("no domains".into());
        }
        if self.strategies.is_empty() {
            return invalid("no strategies".into());
        }
        if self.configurations.is_empty() {
            return invalid("no configurations".into());
        }
        if self.repetitions < 1 {
            return invalid("repetitions must be >= 1".into());
        }
        let mut domain_ids = BTreeSet::new();
        for d in &self.domains {
            if !domain_ids.insert(&d.id) {
                return invalid(format!("duplicate domain id '{}'", d.id));
            }
        }
        let mut config_ids = BTreeSet::new();
        for c in &self.configurations {
            if !config_ids.insert(&c.id) {
                return invalid(format!("duplicate configuration id '{}'", c.id));
            }
        }
        if !config_ids.contains(&self.baseline_id) {
            return invalid(format!(
                "baseline id '{}' not among the configurations",
                self.baseline_id
            ));
        }
        let needs_examples = self
            .strategies
            .iter()
            .any(|s| matches!(s, Strategy::FewShot | Strategy::ChainOfThought));
        if needs_examples && self.examples.is_none() {
            return invalid("few-shot or chain-of-thought strategies need an examples manifest".into());
        }
        if let Some(t) = &self.training_domain {
            if !self.domains.iter().any(|d| &d.id == t) {
                return invalid(format!("training domain '{t}' not among the domains"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NoModelFound,
    BackendError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub syntactic: f64,
    pub semantic: f64,
}

/// One persisted generation. Raw output bodies live in the gateway cache,
/// addressed by digest; the extracted model text is inlined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub plan_id: String,
    pub domain_id: String,
    pub strategy: Strategy,
    pub config_id: String,
    pub rep_index: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
    pub status: RunStatus,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl GenerationRecord {
    pub fn cell_key(&self) -> String {
        cell_key(&self.domain_id, self.strategy, &self.config_id, self.rep_index)
    }

    pub fn to_scored(&self) -> ScoredRecord {
        ScoredRecord {
            domain_id: self.domain_id.clone(),
            strategy: self.strategy,
            config_id: self.config_id.clone(),
            rep_index: self.rep_index,
            syntactic: self.scores.map(|s| s.syntactic),
            semantic: self.scores.map(|s| s.semantic),
        }
    }
}

fn cell_key(domain: &str, strategy: Strategy, config: &str, rep: u32) -> String {
    format!("{domain}|{strategy}|{config}|{rep}")
}

/// Per-cell seed: a fixed 64-bit hash chain over the plan's master seed and
/// the cell coordinates, so cells are independent and reorderable.
pub fn cell_seed(master_seed: u64, domain: &str, strategy: Strategy, config: &str, rep: u32) -> u64 {
    fnv1a64_parts(&[
        &master_seed.to_string(),
        domain,
        strategy.as_str(),
        config,
        &rep.to_string(),
    ])
}

/// Append-only JSONL record store with a sidecar completed-key index.
/// The records file is authoritative: on open the sidecar is rebuilt from
/// it, and a truncated trailing line (crash artifact) is dropped.
pub struct RecordStore {
    path: PathBuf,
    records: Vec<GenerationRecord>,
    completed: BTreeSet<String>,
}

impl RecordStore {
    pub fn open(path: &Path) -> Result<Self, RunnerError> {
        let records: Vec<GenerationRecord> = read_jsonl(path)?;
        let completed: BTreeSet<String> = records.iter().map(GenerationRecord::cell_key).collect();
        let store = Self {
            path: path.to_path_buf(),
            records,
            completed,
        };
        store.write_sidecar()?;
        Ok(store)
    }

    fn sidecar_path(&self) -> PathBuf {
        let mut os = self.path.as_os_str().to_owned();
        os.push(".keys");
        PathBuf::from(os)
    }

    fn write_sidecar(&self) -> Result<(), RunnerError> {
        let mut body = String::new();
        for key in &self.completed {
            body.push_str(key);
            body.push('\n');
        }
        std::fs::write(self.sidecar_path(), body)?;
        Ok(())
    }

    pub fn append(&mut self, record: GenerationRecord) -> Result<(), RunnerError> {
        append_jsonl(&self.path, [&record])?;
        use std::io::Write;
        let mut sidecar = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.sidecar_path())?;
        writeln!(sidecar, "{}", record.cell_key())?;
        self.completed.insert(record.cell_key());
        self.records.push(record);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.completed.contains(key)
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many new records; used to exercise resume.
    pub max_new_records: Option<usize>,
}

struct LoadedDomain {
    id: String,
    reference: String,
    prompts: Vec<(Strategy, String)>,
}

fn load_domains(plan: &ExperimentPlan) -> Result<Vec<LoadedDomain>, RunnerError> {
    let task_header = plan
        .task_header
        .clone()
        .unwrap_or_else(|| prompt::DEFAULT_TASK_HEADER.to_string());
    let examples: Vec<WorkedExample> = match &plan.examples {
        Some(path) => prompt::load_examples_manifest(path)?,
        None => Vec::new(),
    };
    plan.domains
        .iter()
        .map(|d| {
            let input_text = std::fs::read_to_string(&d.input_text_path)?.trim().to_string();
            let reference = std::fs::read_to_string(&d.reference_model_path)?.trim().to_string();
            let prompts = plan
                .strategies
                .iter()
                .map(|&strategy| {
                    let spec = PromptSpec {
                        strategy,
                        task_header: task_header.clone(),
                        examples: examples.clone(),
                        domain_text: input_text.clone(),
                    };
                    Ok((strategy, spec.build()?))
                })
                .collect::<Result<Vec<_>, RunnerError>>()?;
            Ok(LoadedDomain {
                id: d.id.clone(),
                reference,
                prompts,
            })
        })
        .collect()
}

/// Runs the plan: |domains| x |strategies| x |configurations| x repetitions
/// records, persisted as they complete. Cells already in the store are
/// skipped, so a killed run resumes to the identical final store.
/// Generation failures are recorded with their status, never dropped;
/// scorer failures abort with the partial store persisted.
pub fn run(
    plan: &ExperimentPlan,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<Vec<GenerationRecord>, RunnerError> {
    plan.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let gateway = Gateway::new(plan.backend.clone(), out_dir.join("cache"))?;
    let scorer = plan.scorer.build();
    let domains = load_domains(plan)?;
    let mut store = RecordStore::open(&out_dir.join("records.jsonl"))?;

    struct Cell<'a> {
        domain: &'a LoadedDomain,
        strategy: Strategy,
        prompt: &'a str,
        config_id: &'a str,
        config: &'a Configuration,
        rep: u32,
    }

    let mut pending: Vec<Cell> = Vec::new();
    for domain in &domains {
        for (strategy, prompt_text) in &domain.prompts {
            for entry in &plan.configurations {
                for rep in 0..plan.repetitions {
                    if !store.contains(&cell_key(&domain.id, *strategy, &entry.id, rep)) {
                        pending.push(Cell {
                            domain,
                            strategy: *strategy,
                            prompt: prompt_text,
                            config_id: &entry.id,
                            config: &entry.config,
                            rep,
                        });
                    }
                }
            }
        }
    }

    let budget = options.max_new_records.unwrap_or(usize::MAX);
    let parallelism = gateway.concurrency_limit();
    let mut produced = 0usize;
    for batch in pending.chunks(parallelism.max(1)) {
        if produced >= budget {
            break;
        }
        let batch = &batch[..batch.len().min(budget - produced)];
        let results: Vec<Result<GenerationRecord, ScorerError>> =
            scoped_map(batch, parallelism, |cell| {
                run_cell(
                    plan,
                    &gateway,
                    scorer.as_ref(),
                    cell.domain,
                    cell.strategy,
                    cell.prompt,
                    cell.config_id,
                    cell.config,
                    cell.rep,
                )
            });
        for result in results {
            store.append(result?)?;
            produced += 1;
        }
    }

    Ok(store.records().to_vec())
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    plan: &ExperimentPlan,
    gateway: &Gateway,
    scorer: &dyn SemanticScorer,
    domain: &LoadedDomain,
    strategy: Strategy,
    prompt_text: &str,
    config_id: &str,
    config: &Configuration,
    rep: u32,
) -> Result<GenerationRecord, ScorerError> {
    let started_at_ms = unix_millis();
    let seed = cell_seed(plan.master_seed, &domain.id, strategy, config_id, rep);
    let mut record = GenerationRecord {
        plan_id: plan.plan_id.clone(),
        domain_id: domain.id.clone(),
        strategy,
        config_id: config_id.to_string(),
        rep_index: rep,
        seed,
        raw_digest: None,
        extracted_model: None,
        scores: None,
        status: RunStatus::BackendError,
        started_at_ms,
        finished_at_ms: started_at_ms,
    };
    match gateway.generate(prompt_text, config, rep) {
        Ok(result) => {
            record.raw_digest = Some(format!("{:016x}", fnv1a64(result.raw_text.as_bytes())));
            match result.extracted_model {
                Some(model) => {
                    let syntactic = cosine_similarity(&model, &domain.reference);
                    let semantic = semantic_score(&model, &domain.reference, scorer)?;
                    record.scores = Some(Scores { syntactic, semantic });
                    record.extracted_model = Some(model);
                    record.status = RunStatus::Ok;
                }
                None => record.status = RunStatus::NoModelFound,
            }
        }
        Err(err) => {
            log::warn!(
                "generation failed for ({}, {}, {}, rep {}): {err}",
                domain.id,
                strategy,
                config_id,
                rep
            );
        }
    }
    record.finished_at_ms = unix_millis();
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub nsga_runs: usize,
    /// Generations averaged per fitness evaluation during the search phases.
    pub eval_repetitions: u32,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            nsga_runs: 10,
            eval_repetitions: 1,
        }
    }
}

pub struct TuneOutcome {
    pub final_populations: Vec<Population>,
    pub reduced_space: SearchSpace,
    pub grid_points: Vec<grid::EvaluatedPoint>,
    pub front: Vec<LabeledSolution>,
}

/// The two-phase tuning pipeline over the plan's training domain using the
/// zero-shot prompt: `nsga_runs` independent evolutionary searches (seeds
/// `master_seed + run`), space reduction from the final populations, an
/// exhaustive grid search over the reduced space, and its Pareto front,
/// labeled S0.. in discovery order. Every phase checkpoints under `out_dir`
/// and is skipped when its artifact already exists.
pub fn tune_pipeline(
    plan: &ExperimentPlan,
    space: &SearchSpace,
    evo: &EvolutionParams,
    tune: &TuneOptions,
    out_dir: &Path,
) -> Result<TuneOutcome, RunnerError> {
    plan.validate()?;
    std::fs::create_dir_all(out_dir.join("populations"))?;
    std::fs::create_dir_all(out_dir.join("archives"))?;
    let gateway = Gateway::new(plan.backend.clone(), out_dir.join("cache"))?;
    let scorer = plan.scorer.build();

    let training_id = plan
        .training_domain
        .clone()
        .unwrap_or_else(|| plan.domains[0].id.clone());
    let training = plan
        .domains
        .iter()
        .find(|d| d.id == training_id)
        .expect("validated training domain");
    let input_text = std::fs::read_to_string(&training.input_text_path)?.trim().to_string();
    let reference = std::fs::read_to_string(&training.reference_model_path)?.trim().to_string();
    let task_header = plan
        .task_header
        .clone()
        .unwrap_or_else(|| prompt::DEFAULT_TASK_HEADER.to_string());
    let prompt_text = prompt::build_zero_shot(&task_header, &input_text)?;

    let evaluator = SearchEvaluator::new(
        &prompt_text,
        &reference,
        &gateway,
        scorer.as_ref(),
        tune.eval_repetitions,
    );
    let fitness_fn = evaluator.as_fitness_fn();

    let mut final_populations = Vec::with_capacity(tune.nsga_runs);
    for run_index in 0..tune.nsga_runs {
        let run_id = format!("nsga-{run_index:02}");
        let population_path = out_dir.join("populations").join(format!("{run_id}.json"));
        if population_path.exists() {
            let population: Population =
                serde_json::from_str(&std::fs::read_to_string(&population_path)?)?;
            final_populations.push(population);
            continue;
        }
        let params = EvolutionParams {
            master_seed: evo.master_seed.wrapping_add(run_index as u64),
            eval_parallelism: gateway.concurrency_limit(),
            ..evo.clone()
        };
        let archive_path = out_dir.join("archives").join(format!("{run_id}.jsonl"));
        let outcome = moo::evolve(space, &fitness_fn, &params, &run_id, Some(&archive_path))?;
        std::fs::write(
            &population_path,
            serde_json::to_string_pretty(&outcome.final_population)?,
        )?;
        final_populations.push(outcome.final_population);
    }

    let reduced_space = moo::reduce_space(&final_populations, space)?;
    std::fs::write(
        out_dir.join("reduced_space.json"),
        serde_json::to_string_pretty(&reduced_space)?,
    )?;

    let grid_checkpoint = out_dir.join("grid.jsonl");
    let grid_points = grid::grid_search(
        &reduced_space,
        &fitness_fn,
        Some(&grid_checkpoint),
        gateway.concurrency_limit(),
    )?;

    let front = grid::label_front(&grid::pareto_front(&grid_points)?);
    std::fs::write(out_dir.join("front.json"), serde_json::to_string_pretty(&front)?)?;

    Ok(TuneOutcome {
        final_populations,
        reduced_space,
        grid_points,
        front,
    })
}

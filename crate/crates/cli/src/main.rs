//! `modeltuner`: tune LLM decoding hyperparameters for domain-model
//! generation, run the repetition protocol against a baseline, and render
//! the statistics.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modeltuner_core::grid;
use modeltuner_core::hpspace::SearchSpace;
use modeltuner_core::moo::{self, EvolutionParams, MutationGranularity, Population};
use modeltuner_core::prompt::{self, PromptSpec, Strategy};
use modeltuner_core::report::{build_report, write_report, ReportFormat};
use modeltuner_core::runner::{self, ExperimentPlan, GenerationRecord, RunOptions, TuneOptions};
use modeltuner_core::stats::{self, GroupBy, Pairing};
use modeltuner_core::util::{append_jsonl, read_jsonl};

#[derive(Parser)]
#[command(name = "modeltuner", version, about = "LLM decoding-hyperparameter tuning harness")]
struct Cli {
    /// Experiment plan (JSON).
    #[arg(long, global = true, value_name = "plan.json")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "dir", default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the plan's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolutionary search phase: independent runs plus space reduction.
    Tune(TuneArgs),
    /// Reduce a space to what final populations contain.
    Reduce(ReduceArgs),
    /// Exhaustive grid evaluation of a space.
    Grid(GridArgs),
    /// Pareto front of a grid archive, in the labeled-solutions shape.
    Front(FrontArgs),
    /// Run the full experiment plan (domains x strategies x configs x reps).
    Run(RunArgs),
    /// Win/Tie/Loss tabulation of a record store against a baseline.
    Stats(StatsArgs),
    /// Render the report bundle.
    Report(ReportArgs),
    /// Build and print one prompt for inspection.
    Prompt(PromptArgs),
}

#[derive(Args)]
struct EvolutionArgs {
    #[arg(long, default_value_t = 30)]
    population: usize,
    #[arg(long, default_value_t = 10)]
    generations: usize,
    #[arg(long, default_value_t = 0.9)]
    crossover_prob: f64,
    #[arg(long, default_value_t = 0.2)]
    mutation_prob: f64,
    /// Apply the mutation probability per gene instead of per individual.
    #[arg(long)]
    per_gene_mutation: bool,
}

#[derive(Args)]
struct TuneArgs {
    /// Search space (JSON); defaults to the stock wide space.
    #[arg(long, value_name = "space.json")]
    space: Option<PathBuf>,
    /// Independent evolutionary runs feeding the reduction.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Generations averaged per fitness evaluation.
    #[arg(long, default_value_t = 1)]
    eval_reps: u32,
    #[command(flatten)]
    evolution: EvolutionArgs,
}

#[derive(Args)]
struct ReduceArgs {
    /// Original search space (JSON); defaults to the stock wide space.
    #[arg(long, value_name = "space.json")]
    space: Option<PathBuf>,
    /// Final population files (JSON), at least one.
    #[arg(long, required = true, num_args = 1.., value_name = "population.json")]
    populations: Vec<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Search space to enumerate (JSON); defaults to the stock reduced space.
    #[arg(long, value_name = "space.json")]
    space: Option<PathBuf>,
    /// Generations averaged per fitness evaluation.
    #[arg(long, default_value_t = 1)]
    eval_reps: u32,
}

#[derive(Args)]
struct FrontArgs {
    /// Grid archive (JSONL) to extract the front from.
    #[arg(long, value_name = "grid.jsonl")]
    archive: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Stop after this many new records (smoke runs, resume testing).
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// Record store (JSONL).
    #[arg(long, value_name = "records.jsonl")]
    records: PathBuf,
    /// Baseline configuration id.
    #[arg(long)]
    baseline: String,
    /// Row axis of the table.
    #[arg(long, default_value = "solution")]
    group_by: GroupBy,
    /// Compare arms unpaired instead of paired by repetition index.
    #[arg(long)]
    unpaired: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Record store (JSONL).
    #[arg(long, value_name = "records.jsonl")]
    records: PathBuf,
    /// Baseline configuration id.
    #[arg(long)]
    baseline: String,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Compare arms unpaired instead of paired by repetition index.
    #[arg(long)]
    unpaired: bool,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    strategy: Strategy,
    /// File holding the domain description.
    #[arg(long, value_name = "file")]
    domain_text: PathBuf,
    /// Worked-example manifest (JSON), for few-shot and chain-of-thought.
    #[arg(long, value_name = "manifest.json")]
    examples: Option<PathBuf>,
    /// File overriding the stock task header.
    #[arg(long, value_name = "file")]
    header: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = err.source();
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(2)
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn dispatch(cli: Cli) -> Result<(), AnyError> {
    match &cli.command {
        Command::Tune(args) => tune(&cli, args),
        Command::Reduce(args) => reduce(&cli, args),
        Command::Grid(args) => grid_cmd(&cli, args),
        Command::Front(args) => front(&cli, args),
        Command::Run(args) => run(&cli, args),
        Command::Stats(args) => stats_cmd(&cli, args),
        Command::Report(args) => report(&cli, args),
        Command::Prompt(args) => prompt_cmd(args),
    }
}

fn load_plan(cli: &Cli) -> Result<ExperimentPlan, AnyError> {
    let path = cli
        .config
        .as_ref()
        .ok_or("this subcommand needs --config <plan.json>")?;
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(seed) = cli.seed {
        plan.master_seed = seed;
    }
    Ok(plan)
}

fn load_space(path: &Option<PathBuf>, default: fn() -> SearchSpace) -> Result<SearchSpace, AnyError> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(default()),
    }
}

fn tune(cli: &Cli, args: &TuneArgs) -> Result<(), AnyError> {
    let plan = load_plan(cli)?;
    let space = load_space(&args.space, modeltuner_core::hpspace::presets::wide_space)?;
    let evo = EvolutionParams {
        population_size: args.evolution.population,
        generations: args.evolution.generations,
        crossover_prob: args.evolution.crossover_prob,
        mutation_prob: args.evolution.mutation_prob,
        master_seed: cli.seed.unwrap_or(plan.master_seed),
        mutation_granularity: if args.evolution.per_gene_mutation {
            MutationGranularity::PerGene
        } else {
            MutationGranularity::PerIndividual
        },
        eval_parallelism: 1,
    };
    let options = TuneOptions {
        nsga_runs: args.runs,
        eval_repetitions: args.eval_reps,
    };
    let outcome = runner::tune_pipeline(&plan, &space, &evo, &options, &cli.out)?;
    println!(
        "reduced space cardinality: {} (of {})",
        outcome.reduced_space.cardinality(),
        space.cardinality()
    );
    println!("grid points evaluated: {}", outcome.grid_points.len());
    println!("front size: {}", outcome.front.len());
    for s in &outcome.front {
        println!("  {}: {}", s.id, s.config);
    }
    println!("artifacts under {}", cli.out.display());
    Ok(())
}

fn reduce(cli: &Cli, args: &ReduceArgs) -> Result<(), AnyError> {
    let space = load_space(&args.space, modeltuner_core::hpspace::presets::wide_space)?;
    let populations: Vec<Population> = args
        .populations
        .iter()
        .map(|p| -> Result<Population, AnyError> {
            Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
        })
        .collect::<Result<_, _>>()?;
    let reduced = moo::reduce_space(&populations, &space)?;
    std::fs::create_dir_all(&cli.out)?;
    let out_path = cli.out.join("reduced_space.json");
    std::fs::write(&out_path, serde_json::to_string_pretty(&reduced)? + "\n")?;
    println!("{}", out_path.display());
    Ok(())
}

fn grid_cmd(cli: &Cli, args: &GridArgs) -> Result<(), AnyError> {
    let plan = load_plan(cli)?;
    let space = load_space(&args.space, modeltuner_core::hpspace::presets::reduced_space)?;
    let gateway = modeltuner_core::gateway::Gateway::new(plan.backend.clone(), cli.out.join("cache"))?;
    let scorer = plan.scorer.build();
    let training = plan
        .training_domain
        .clone()
        .unwrap_or_else(|| plan.domains[0].id.clone());
    let domain = plan
        .domains
        .iter()
        .find(|d| d.id == training)
        .ok_or("training domain not found")?;
    let input_text = std::fs::read_to_string(&domain.input_text_path)?.trim().to_string();
    let reference = std::fs::read_to_string(&domain.reference_model_path)?.trim().to_string();
    let header = plan
        .task_header
        .clone()
        .unwrap_or_else(|| prompt::DEFAULT_TASK_HEADER.to_string());
    let prompt_text = prompt::build_zero_shot(&header, &input_text)?;
    let evaluator = modeltuner_core::fitness::SearchEvaluator::new(
        &prompt_text,
        &reference,
        &gateway,
        scorer.as_ref(),
        args.eval_reps,
    );
    let fitness_fn = evaluator.as_fitness_fn();
    std::fs::create_dir_all(&cli.out)?;
    let checkpoint = cli.out.join("grid.jsonl");
    let points = grid::grid_search(&space, &fitness_fn, Some(&checkpoint), gateway.concurrency_limit())?;
    println!("{} points evaluated; archive at {}", points.len(), checkpoint.display());
    Ok(())
}

fn front(cli: &Cli, args: &FrontArgs) -> Result<(), AnyError> {
    let points = grid::load_checkpoint(&args.archive)?;
    let front = grid::label_front(&grid::pareto_front(&points)?);
    std::fs::create_dir_all(&cli.out)?;
    let out_path = cli.out.join("front.json");
    std::fs::write(&out_path, serde_json::to_string_pretty(&front)? + "\n")?;
    for s in &front {
        println!("{}: {}", s.id, s.config);
    }
    println!("front written to {}", out_path.display());
    Ok(())
}

fn run(cli: &Cli, args: &RunArgs) -> Result<(), AnyError> {
    let plan = load_plan(cli)?;
    let options = RunOptions {
        max_new_records: args.limit,
    };
    let records = runner::run(&plan, &cli.out, &options)?;
    println!(
        "{} records in {}",
        records.len(),
        cli.out.join("records.jsonl").display()
    );
    Ok(())
}

fn load_scored(path: &Path) -> Result<Vec<stats::ScoredRecord>, AnyError> {
    let records: Vec<GenerationRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(format!("no records in {}", path.display()).into());
    }
    Ok(records.iter().map(GenerationRecord::to_scored).collect())
}

fn stats_cmd(cli: &Cli, args: &StatsArgs) -> Result<(), AnyError> {
    let scored = load_scored(&args.records)?;
    let pairing = if args.unpaired { Pairing::Unpaired } else { Pairing::Paired };
    let comparisons = stats::compare_all(&scored, &args.baseline, pairing)?;
    let table = stats::tabulate_comparisons(&comparisons, args.group_by);
    std::fs::create_dir_all(&cli.out)?;

    let comparisons_path = cli.out.join("comparisons.jsonl");
    if comparisons_path.exists() {
        std::fs::remove_file(&comparisons_path)?;
    }
    append_jsonl(&comparisons_path, &comparisons)?;

    let (label, effect_row) = match args.group_by {
        GroupBy::Solution => ("solution", true),
        GroupBy::Domain => ("domain", false),
    };
    let csv = modeltuner_core::report::render_wtl_csv(&table, label, effect_row);
    let csv_path = cli.out.join(format!("wtl_by_{label}.csv"));
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    println!("written: {} and {}", csv_path.display(), comparisons_path.display());
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<(), AnyError> {
    let scored = load_scored(&args.records)?;
    let pairing = if args.unpaired { Pairing::Unpaired } else { Pairing::Paired };
    let bundle = build_report(&scored, &args.baseline, pairing)?;
    let written = write_report(&bundle, args.format, &cli.out)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn prompt_cmd(args: &PromptArgs) -> Result<(), AnyError> {
    let domain_text = std::fs::read_to_string(&args.domain_text)?.trim().to_string();
    let task_header = match &args.header {
        Some(p) => std::fs::read_to_string(p)?.trim().to_string(),
        None => prompt::DEFAULT_TASK_HEADER.to_string(),
    };
    let examples = match &args.examples {
        Some(p) => prompt::load_examples_manifest(p)?,
        None => Vec::new(),
    };
    let spec = PromptSpec {
        strategy: args.strategy,
        task_header,
        examples,
        domain_text,
    };
    println!("{}", spec.build()?);
    Ok(())
}

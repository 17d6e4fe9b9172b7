//! The `minprune` command line.
//!
//! Subcommands: `space show|validate`, `mip run|resume|report`, `search run`,
//! `rank corr`, `report importance|pareto`. Exit codes: 0 success, 2 bad
//! usage or input, 3 evaluator failure, 4 invalid or corrupt run directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::archive::{
    EvaluatorSpec, RunDir, RunKind, RunManifest, SearchResultFile, SearchSpec,
};
use crate::cellspace::encode;
use crate::error::{Error, Result};
use crate::evaluators::{
    ArchSet, EvalResult, Evaluator, ExternalEvaluator, ExternalProtocol, SurrogateModel,
};
use crate::hyperspace::{self, BpeConfig, HyperSpace, ReferenceConfig};
use crate::mip::{self, MipParams, SelectBy};
use crate::ranking::CostSign;
use crate::report::{self, SweepContext};
use crate::search::{self, EvolutionParams, RlParams, SearchBudget, SearchResult};
use crate::seeding;

const ARCH_STREAM: u64 = 0x434C_4941;

#[derive(Debug, Parser)]
#[command(
    name = "minprune",
    version,
    about = "Finds cheap training configs that preserve architecture rankings, \
             and searches architectures under them"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub globals: Globals,
}

#[derive(Debug, Clone, Args)]
pub struct Globals {
    /// Seed behind every random choice; equal seeds replay runs exactly.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Run directory to create, resume, or report on.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,

    /// Where scores come from.
    #[arg(long, global = true, value_enum, default_value_t = EvaluatorKind::Surrogate)]
    pub evaluator: EvaluatorKind,

    /// Cost weight of the objective, strictly between 0 and 1.
    #[arg(long, global = true, default_value_t = 0.5)]
    pub lambda: f64,

    /// Add the weighted cost instead of subtracting it.
    #[arg(long, global = true)]
    pub cost_plus: bool,

    /// How the winning trial is chosen.
    #[arg(long, global = true, value_enum, default_value_t = SelectByArg::Objective)]
    pub select_by: SelectByArg,

    /// Importance threshold: dimensions scoring below it are pinned to their
    /// cheapest level.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub tau: f64,

    /// Shell command scoring one architecture (external evaluator).
    #[arg(long, global = true, value_name = "CMD")]
    pub external_command: Option<String>,

    /// Per-invocation wall-clock limit in seconds.
    #[arg(long, global = true, default_value_t = 60.0, value_name = "SECS")]
    pub external_timeout: f64,

    /// Concurrent command invocations.
    #[arg(long, global = true, default_value_t = 1)]
    pub external_parallelism: usize,

    /// Work directory for command invocations (default: <run-dir>/work).
    #[arg(long, global = true, value_name = "DIR")]
    pub external_work_dir: Option<PathBuf>,

    /// Cache directory for command results (default: <run-dir>/cache).
    #[arg(long, global = true, value_name = "DIR")]
    pub external_cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorKind {
    /// Seeded synthetic model; no training involved.
    Surrogate,
    /// Drive a user-supplied command per architecture.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectByArg {
    /// Correlation minus weighted cost.
    Objective,
    /// Raw rank correlation.
    Rs,
}

impl From<SelectByArg> for SelectBy {
    fn from(value: SelectByArg) -> Self {
        match value {
            SelectByArg::Objective => SelectBy::Objective,
            SelectByArg::Rs => SelectBy::Rs,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect or check search-space definitions.
    Space {
        #[command(subcommand)]
        command: SpaceCommand,
    },
    /// Prune a hyper-parameter space down to one budgeted config.
    Mip {
        #[command(subcommand)]
        command: MipCommand,
    },
    /// Search for architectures under a fixed budgeted config.
    Search {
        #[command(subcommand)]
        command: SearchCommand,
    },
    /// Compare externally produced score tables.
    Rank {
        #[command(subcommand)]
        command: RankCommand,
    },
    /// Analyze a finished or in-flight run directory.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpaceCommand {
    /// Print a space definition (the built-in preset when no file is given).
    Show {
        /// Space definition to print instead of the preset.
        #[arg(long, value_name = "FILE")]
        file: Option<PathBuf>,
    },
    /// Check a space definition file and summarize it.
    Validate {
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum MipCommand {
    /// Start a pruning run in a fresh --run-dir.
    Run(MipRunArgs),
    /// Finish an interrupted run; paid evaluations are never repeated.
    Resume,
    /// Print the report of an existing run.
    Report,
}

#[derive(Debug, Clone, Args)]
pub struct MipRunArgs {
    /// Configs sampled per iteration.
    #[arg(long, default_value_t = 10)]
    pub k: usize,

    /// Architectures to sample for the fixed evaluation set.
    #[arg(long, default_value_t = 100)]
    pub archs: usize,

    /// Intermediate nodes per cell in sampled architectures.
    #[arg(long, default_value_t = 4)]
    pub m: usize,

    /// Space definition file; the built-in preset when omitted.
    #[arg(long, value_name = "FILE")]
    pub space_file: Option<PathBuf>,

    /// Noise level of the surrogate evaluator.
    #[arg(long, default_value_t = 0.6)]
    pub noise_scale: f64,
}

#[derive(Debug, Subcommand)]
pub enum SearchCommand {
    /// Run one search strategy under a fixed budgeted config.
    Run(SearchRunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SearchRunArgs {
    #[arg(long, value_enum, default_value_t = Strategy::Rs)]
    pub strategy: Strategy,

    /// Evaluations the search may spend.
    #[arg(long, default_value_t = 500)]
    pub budget: usize,

    /// Intermediate nodes per cell.
    #[arg(long, default_value_t = 4)]
    pub m: usize,

    /// Built-in budgeted config to score under.
    #[arg(long, value_enum, default_value_t = Preset::Bpe1)]
    pub preset: Preset,

    /// Config file overriding --preset (one `name = label` line per
    /// dimension).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Space definition file; the built-in preset when omitted.
    #[arg(long, value_name = "FILE")]
    pub space_file: Option<PathBuf>,

    /// Noise level of the surrogate evaluator.
    #[arg(long, default_value_t = 0.6)]
    pub noise_scale: f64,

    /// Evolution: population size.
    #[arg(long, default_value_t = 50)]
    pub population: usize,

    /// Evolution: tournament size.
    #[arg(long, default_value_t = 10)]
    pub tournament: usize,

    /// Policy search: learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub rl_lr: f64,

    /// Policy search: baseline decay.
    #[arg(long, default_value_t = 0.9)]
    pub rl_baseline_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    /// Uniform random sampling.
    Rs,
    /// Aging evolution.
    Ea,
    /// Policy-gradient sampling.
    Rl,
}

impl Strategy {
    fn name(self) -> &'static str {
        match self {
            Strategy::Rs => "rs",
            Strategy::Ea => "ea",
            Strategy::Rl => "rl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Cheapest built-in budgeted config.
    Bpe1,
    /// Higher-fidelity built-in budgeted config.
    Bpe2,
    /// The proxy setting used by gradient-based search.
    Darts,
    /// The full reference training condition.
    Reference,
}

#[derive(Debug, Subcommand)]
pub enum RankCommand {
    /// Spearman correlation between two `id,score` CSV tables.
    Corr {
        a: PathBuf,
        b: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Per-iteration importance table and level sweeps of each pinned
    /// dimension.
    Importance {
        /// Levels the non-swept dimensions are held at.
        #[arg(long, value_enum, default_value_t = ContextArg::Best)]
        context: ContextArg,
        /// Also write importance.csv and curves.csv into this directory.
        #[arg(long, value_name = "DIR")]
        csv_out: Option<PathBuf>,
    },
    /// Cost/correlation frontier of the run's trials.
    Pareto {
        /// Also write pareto.csv into this directory.
        #[arg(long, value_name = "DIR")]
        csv_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    /// Hold the other dimensions at the best trial's levels.
    Best,
    /// Hold the other dimensions at their cheapest levels.
    MinCost,
}

impl From<ContextArg> for SweepContext {
    fn from(value: ContextArg) -> Self {
        match value {
            ContextArg::Best => SweepContext::Best,
            ContextArg::MinCost => SweepContext::MinCost,
        }
    }
}

/// Either concrete evaluator behind one dispatch point.
#[derive(Debug)]
enum AnyEvaluator {
    Surrogate(SurrogateModel),
    External(ExternalEvaluator),
}

impl Evaluator for AnyEvaluator {
    fn evaluate(&self, config: &BpeConfig, archs: &ArchSet) -> Result<EvalResult> {
        match self {
            AnyEvaluator::Surrogate(m) => m.evaluate(config, archs),
            AnyEvaluator::External(e) => e.evaluate(config, archs),
        }
    }
}

fn load_space(file: Option<&Path>) -> Result<(HyperSpace, ReferenceConfig)> {
    match file {
        None => Ok(hyperspace::default_preset()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
            hyperspace::space_from_toml(&text)
        }
    }
}

fn require_run_dir(globals: &Globals) -> Result<&Path> {
    globals
        .run_dir
        .as_deref()
        .ok_or_else(|| Error::Invalid("this command needs --run-dir".into()))
}

/// Builds the evaluator named on the command line, together with the
/// manifest record that lets a resume rebuild it identically.
fn build_evaluator(
    globals: &Globals,
    space: &HyperSpace,
    reference: &ReferenceConfig,
    m: usize,
    noise_scale: f64,
) -> Result<(AnyEvaluator, EvaluatorSpec)> {
    match globals.evaluator {
        EvaluatorKind::Surrogate => {
            let spec = EvaluatorSpec::Surrogate { m, seed: globals.seed, noise_scale };
            let model = SurrogateModel::sampled(
                space.clone(),
                reference.clone(),
                m,
                globals.seed,
                noise_scale,
            )?;
            Ok((AnyEvaluator::Surrogate(model), spec))
        }
        EvaluatorKind::External => {
            let command = globals.external_command.clone().ok_or_else(|| {
                Error::Invalid("--evaluator external needs --external-command".into())
            })?;
            let under_run_dir = |sub: &str| -> Result<PathBuf> {
                Ok(require_run_dir(globals)?.join(sub))
            };
            let work_dir = match &globals.external_work_dir {
                Some(dir) => dir.clone(),
                None => under_run_dir("work")?,
            };
            let cache_dir = match &globals.external_cache_dir {
                Some(dir) => dir.clone(),
                None => under_run_dir("cache")?,
            };
            let protocol = ExternalProtocol {
                command: command.clone(),
                work_dir: work_dir.clone(),
                cache_dir: cache_dir.clone(),
                timeout_secs: globals.external_timeout,
                parallelism: globals.external_parallelism,
            };
            let spec = EvaluatorSpec::External {
                command,
                timeout_secs: globals.external_timeout,
                parallelism: globals.external_parallelism,
                work_dir,
                cache_dir,
            };
            Ok((AnyEvaluator::External(ExternalEvaluator::new(space.clone(), protocol)?), spec))
        }
    }
}

/// Rebuilds the evaluator recorded in a run's manifest.
fn evaluator_from_spec(
    spec: &EvaluatorSpec,
    space: &HyperSpace,
    reference: &ReferenceConfig,
) -> Result<AnyEvaluator> {
    match spec {
        EvaluatorSpec::Surrogate { m, seed, noise_scale } => {
            Ok(AnyEvaluator::Surrogate(SurrogateModel::sampled(
                space.clone(),
                reference.clone(),
                *m,
                *seed,
                *noise_scale,
            )?))
        }
        EvaluatorSpec::External { command, timeout_secs, parallelism, work_dir, cache_dir } => {
            let protocol = ExternalProtocol {
                command: command.clone(),
                work_dir: work_dir.clone(),
                cache_dir: cache_dir.clone(),
                timeout_secs: *timeout_secs,
                parallelism: *parallelism,
            };
            Ok(AnyEvaluator::External(ExternalEvaluator::new(space.clone(), protocol)?))
        }
    }
}

fn mip_params(globals: &Globals, k: usize) -> MipParams {
    MipParams {
        k,
        tau: globals.tau,
        lambda: globals.lambda,
        sign: if globals.cost_plus { CostSign::LiteralPlus } else { CostSign::Penalize },
        select_by: globals.select_by.into(),
        seed: globals.seed,
        ..MipParams::default()
    }
}

fn cmd_space(command: &SpaceCommand) -> Result<()> {
    match command {
        SpaceCommand::Show { file } => {
            let (space, reference) = load_space(file.as_deref())?;
            print!("{}", hyperspace::space_to_toml(&space, &reference));
            Ok(())
        }
        SpaceCommand::Validate { file } => {
            let (space, reference) = load_space(Some(file))?;
            let configs: usize = (0..space.len()).map(|d| space.dim(d).len()).product();
            println!(
                "ok: {} dimensions, {} configs, reference = {}",
                space.len(),
                configs,
                space.render_config(&reference.0)
            );
            Ok(())
        }
    }
}

fn cmd_mip_run(globals: &Globals, args: &MipRunArgs) -> Result<()> {
    let run_dir = require_run_dir(globals)?;
    let (space, reference) = load_space(args.space_file.as_deref())?;
    let (evaluator, spec) =
        build_evaluator(globals, &space, &reference, args.m, args.noise_scale)?;
    let mut rng = seeding::stream(globals.seed, ARCH_STREAM);
    let archs = ArchSet::sample(args.m, args.archs, &mut rng)?;
    let manifest = RunManifest {
        kind: RunKind::Mip,
        seed: globals.seed,
        space: space.clone(),
        reference: reference.clone(),
        evaluator: spec,
        search: None,
    };
    let dir = RunDir::create(run_dir, &manifest)?;
    let params = mip_params(globals, args.k);
    let outcome = mip::run(&space, &reference, &archs, &evaluator, &params, Some(&dir))?;
    print!("{}", mip::render_report(&outcome.state));
    println!("run directory: {}", dir.root().display());
    Ok(())
}

fn cmd_mip_resume(globals: &Globals) -> Result<()> {
    let dir = RunDir::open(require_run_dir(globals)?)?;
    let manifest = dir.manifest()?;
    let evaluator = evaluator_from_spec(&manifest.evaluator, &manifest.space, &manifest.reference)?;
    let outcome = mip::resume(&dir, &evaluator)?;
    print!("{}", mip::render_report(&outcome.state));
    Ok(())
}

fn cmd_mip_report(globals: &Globals) -> Result<()> {
    let dir = RunDir::open(require_run_dir(globals)?)?;
    let state = dir.read_state()?;
    print!("{}", mip::render_report(&state));
    Ok(())
}

fn cmd_search_run(globals: &Globals, args: &SearchRunArgs) -> Result<()> {
    let (space, reference) = load_space(args.space_file.as_deref())?;
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
            hyperspace::config_from_text(&space, &text)?
        }
        None => match args.preset {
            Preset::Bpe1 => hyperspace::bpe1_config(&space)?,
            Preset::Bpe2 => hyperspace::bpe2_config(&space)?,
            Preset::Darts => hyperspace::darts_proxy_config(&space)?,
            Preset::Reference => reference.0.clone(),
        },
    };
    let (evaluator, spec) =
        build_evaluator(globals, &space, &reference, args.m, args.noise_scale)?;
    let budget = SearchBudget { max_evaluations: args.budget, seed: globals.seed };

    let dir = match &globals.run_dir {
        Some(path) => {
            let manifest = RunManifest {
                kind: RunKind::Search,
                seed: globals.seed,
                space: space.clone(),
                reference: reference.clone(),
                evaluator: spec,
                search: Some(SearchSpec {
                    strategy: args.strategy.name().to_string(),
                    m: args.m,
                    budget: args.budget,
                    config: config.clone(),
                    population: args.population,
                    tournament: args.tournament,
                    learning_rate: args.rl_lr,
                    baseline_decay: args.rl_baseline_decay,
                }),
            };
            Some(RunDir::create(path, &manifest)?)
        }
        None => None,
    };

    let mut policy_note = None;
    let result: SearchResult = match args.strategy {
        Strategy::Rs => search::random_search(args.m, &evaluator, &config, &budget)?,
        Strategy::Ea => {
            let params =
                EvolutionParams { population: args.population, tournament: args.tournament };
            search::evolution_search(args.m, &evaluator, &config, &budget, &params)?
        }
        Strategy::Rl => {
            let params = RlParams {
                learning_rate: args.rl_lr,
                baseline_decay: args.rl_baseline_decay,
            };
            let outcome = search::rl_search(args.m, &evaluator, &config, &budget, &params)?;
            policy_note = Some(format!(
                "baseline {:.4}; strongest slot preference {:.3}",
                outcome.baseline,
                outcome
                    .policy
                    .iter()
                    .flat_map(|row| row.iter().copied())
                    .fold(f64::MIN, f64::max)
            ));
            outcome.result
        }
    };

    println!(
        "{} search under {}:",
        args.strategy.name(),
        space.render_config(&config)
    );
    println!(
        "best score {:.6} after {} evaluations ({} steps)",
        result.best_score, result.evaluations, result.steps
    );
    if let Some(note) = policy_note {
        println!("{note}");
    }
    print!("{}", encode(&result.best));

    if let Some(dir) = dir {
        dir.write_trace(&result.trace)?;
        dir.write_search_result(&SearchResultFile {
            best_genotype: encode(&result.best),
            best_score: result.best_score,
            evaluations: result.evaluations,
            steps: result.steps,
        })?;
        println!("run directory: {}", dir.root().display());
    }
    Ok(())
}

fn cmd_rank_corr(a: &Path, b: &Path) -> Result<()> {
    let table_a = report::ResultTable::from_csv_path(a)?;
    let table_b = report::ResultTable::from_csv_path(b)?;
    let corr = report::corr_tables(&table_a, &table_b)?;
    print!("{}", report::render_corr(&corr));
    Ok(())
}

fn write_csv(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_report_importance(
    globals: &Globals,
    context: ContextArg,
    csv_out: Option<&Path>,
) -> Result<()> {
    let dir = RunDir::open(require_run_dir(globals)?)?;
    let state = dir.read_state()?;
    let report = report::importance_report(&dir, context.into())?;
    print!("{}", report::render_importance(&state.space, &report));
    if let Some(out) = csv_out {
        let table = write_csv(out, "importance.csv", &report::importance_csv(&state.space, &report))?;
        let curves = write_csv(out, "curves.csv", &report::curves_csv(&report))?;
        println!("wrote {} and {}", table.display(), curves.display());
    }
    Ok(())
}

fn cmd_report_pareto(globals: &Globals, csv_out: Option<&Path>) -> Result<()> {
    let dir = RunDir::open(require_run_dir(globals)?)?;
    let state = dir.read_state()?;
    let frontier = report::pareto(state.dataset.records());
    print!(
        "{}",
        report::render_pareto(&state.space, state.dataset.records(), &frontier)
    );
    if let Some(out) = csv_out {
        let path = write_csv(
            out,
            "pareto.csv",
            &report::pareto_csv(&state.space, state.dataset.records(), &frontier),
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Space { command } => cmd_space(command),
        Command::Mip { command } => match command {
            MipCommand::Run(args) => cmd_mip_run(&cli.globals, args),
            MipCommand::Resume => cmd_mip_resume(&cli.globals),
            MipCommand::Report => cmd_mip_report(&cli.globals),
        },
        Command::Search { command } => match command {
            SearchCommand::Run(args) => cmd_search_run(&cli.globals, args),
        },
        Command::Rank { command } => match command {
            RankCommand::Corr { a, b } => cmd_rank_corr(a, b),
        },
        Command::Report { command } => match command {
            ReportCommand::Importance { context, csv_out } => {
                cmd_report_importance(&cli.globals, *context, csv_out.as_deref())
            }
            ReportCommand::Pareto { csv_out } => {
                cmd_report_pareto(&cli.globals, csv_out.as_deref())
            }
        },
    }
}

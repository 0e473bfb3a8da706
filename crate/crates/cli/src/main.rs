mod render;
mod shipped;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use knobwise_core::diagnosis::{diagnoser_registry, select_knobs, CollapsedProfile, DiagnoserConfig, DiagnosisInput};
use knobwise_core::hypothesis::{AdvisorConfig, HypothesisStore};
use knobwise_core::io::{read_catalog, read_document, read_jsonl, read_observations, to_jsonl, to_pretty_json, write_atomic};
use knobwise_core::mapping::{build_function_knob_map, DependencyGraph, FunctionKnobMap, GraphDocument, MapDocument};
use knobwise_core::mining::{mine_rules, MiningParams};
use knobwise_core::model::{Configuration, ContextSnapshot, KnobCatalog, ObservationRecord};
use knobwise_core::rulebook::{rank_and_take, Rulebook};
use knobwise_core::simulator::{ground_truth_optimum, sample_history, Scenario, Simulator};
use knobwise_core::tuner::{run_session, strategy_registry, CommandAdapter, SimulatorAdapter, StrategyConfig, SystemAdapter};
use knobwise_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "knobwise", version, about = "Rule-guided configuration tuning from profiles and observation histories")]
struct Cli {
    /// Report format on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Log more (-v info, -vv debug). Logs go to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Build the function-to-knob map from a dependency graph.
    Map(MapArgs),
    /// Mine tuning rules from an observation history.
    Mine(MineArgs),
    /// Flag bottleneck functions and select knobs.
    Diagnose(DiagnoseArgs),
    /// Inspect a rulebook.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Evaluate configurations on a simulator scenario.
    Simulate(SimulateArgs),
    /// Run an online tuning session.
    Tune(Box<TuneArgs>),
}

#[derive(Args)]
struct MapArgs {
    /// Dependency graph document.
    #[arg(long)]
    graph: PathBuf,
    /// Knob to map (repeatable); defaults to every anchored knob.
    #[arg(long = "knob")]
    knobs: Vec<String>,
    /// Write the map document here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    /// Observation history (one JSON record per line).
    #[arg(long)]
    observations: PathBuf,
    /// Knob specification document.
    #[arg(long)]
    specs: PathBuf,
    /// Write the rulebook here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Existing rulebook to merge the mined rules into.
    #[arg(long)]
    merge_into: Option<PathBuf>,
    #[command(flatten)]
    params: MiningFlags,
}

#[derive(Args)]
struct MiningFlags {
    /// Minimum relative improvement for an augmented pair.
    #[arg(long, default_value_t = 0.05)]
    min_improvement: f64,
    /// Minimum itemset support as a fraction of transactions.
    #[arg(long, default_value_t = 0.05)]
    min_coverage: f64,
    /// Minimum mining-time confidence of a rule.
    #[arg(long, default_value_t = 0.7)]
    min_confidence: f64,
    /// Maximum intervals per discretized quantity.
    #[arg(long, default_value_t = 5)]
    max_intervals: usize,
    /// Minimum samples per discretization interval.
    #[arg(long, default_value_t = 3)]
    min_support: usize,
    /// Minimum number of transactions containing an itemset.
    #[arg(long, default_value_t = 3)]
    min_itemset_count: usize,
    /// Longest itemset mined; 0 mines all lengths.
    #[arg(long, default_value_t = 4)]
    max_itemset_len: usize,
    /// Disable target-itemset pruning in FP-Growth.
    #[arg(long)]
    no_pruning: bool,
}

impl MiningFlags {
    fn params(&self) -> MiningParams {
        MiningParams {
            min_improvement: self.min_improvement,
            min_coverage: self.min_coverage,
            min_confidence: self.min_confidence,
            max_intervals: self.max_intervals,
            min_support: self.min_support,
            min_itemset_count: self.min_itemset_count,
            max_itemset_len: (self.max_itemset_len > 0).then_some(self.max_itemset_len),
            workload_vocabulary: None,
            disable_pruning: self.no_pruning,
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Current profile: collapsed stacks, or a JSON context snapshot.
    #[arg(long)]
    current: PathBuf,
    /// Known-good baseline profile for differential diagnosis.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Observation history for SHAP diagnosis.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Diagnosis method: auto, differential or shap.
    #[arg(long, default_value = "auto")]
    method: String,
    /// Rate shift that flags a function (differential).
    #[arg(long, default_value_t = 0.03)]
    threshold: f64,
    /// Harmful contributors kept (SHAP).
    #[arg(long, default_value_t = 3)]
    shap_top: usize,
    /// Function-to-knob map; enables knob selection.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Rulebook whose matching rules add knobs to the selection.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RulesCommand {
    /// List rules ranked by expected improvement.
    List {
        #[arg(long)]
        rules: PathBuf,
        /// Show only the first N rules.
        #[arg(long)]
        top: Option<usize>,
        /// Keep rules whose antecedent holds in this JSON context snapshot.
        #[arg(long)]
        context: Option<PathBuf>,
    },
    /// Show one rule.
    Show {
        id: String,
        #[arg(long)]
        rules: PathBuf,
    },
    /// Write the rulebook in the selected format.
    Export {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Shipped scenario name (buffer, spin, composite) or scenario file.
    #[arg(long)]
    scenario: String,
    /// Configuration to evaluate (JSON object of knob values); defaults apply
    /// to missing knobs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed; defaults to the scenario's own seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate without noise.
    #[arg(long)]
    noiseless: bool,
    /// Write a history of N observations (default plus Latin-hypercube samples).
    #[arg(long, conflicts_with_all = ["config", "optimum"])]
    sample: Option<usize>,
    /// Report the grid-search optimum.
    #[arg(long, conflicts_with = "config")]
    optimum: bool,
    /// Grid points per knob for --optimum.
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// Shipped scenario name or scenario file.
    #[arg(long, required_unless_present = "adapter_cmd", conflicts_with = "adapter_cmd")]
    scenario: Option<String>,
    /// Command that evaluates one configuration (stdin/stdout JSON).
    #[arg(long, requires = "specs")]
    adapter_cmd: Option<String>,
    /// Knob specifications; required with --adapter-cmd.
    #[arg(long)]
    specs: Option<PathBuf>,
    /// Function-to-knob map.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Starting rulebook.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Hypothesis document.
    #[arg(long)]
    hypotheses: Option<PathBuf>,
    /// Tuning iterations after the starting configuration.
    #[arg(long, default_value_t = 10)]
    budget: usize,
    /// Re-mine every N new observations (0 disables).
    #[arg(long, default_value_t = 5)]
    remine_period: usize,
    /// Tuning strategy: rules or random.
    #[arg(long, default_value = "rules")]
    strategy: String,
    /// Advisor: stub or remote.
    #[arg(long, default_value = "stub")]
    advisor: String,
    /// Remote advisor endpoint (overrides the environment variable).
    #[arg(long)]
    advisor_url: Option<String>,
    /// Diagnoser used inside the session.
    #[arg(long, default_value = "shap")]
    diagnoser: String,
    /// Expected improvement a rule needs to be exploited.
    #[arg(long, default_value_t = 0.02)]
    exploit_floor: f64,
    /// Seed for simulator noise and random search; defaults to the
    /// scenario's noise seed (0 for external adapters).
    #[arg(long)]
    seed: Option<u64>,
    /// Write the observation history (JSON lines).
    #[arg(long)]
    history_out: Option<PathBuf>,
    /// Write the decision traces (JSON lines).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the final rulebook.
    #[arg(long)]
    rules_out: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .without_time()
        .with_ansi(false)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let format = cli.format;
    match cli.command {
        Command::Map(a) => cmd_map(a, format),
        Command::Mine(a) => cmd_mine(a, format),
        Command::Diagnose(a) => cmd_diagnose(a, format),
        Command::Rules { command } => cmd_rules(command, format),
        Command::Simulate(a) => cmd_simulate(a, format),
        Command::Tune(a) => cmd_tune(*a, format),
    }
}

/// Writes to `out` atomically, or prints to standard output.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) -> String {
    match format {
        Format::Json => to_pretty_json(value),
        Format::Text => text(),
    }
}

fn load_map(path: &Path) -> Result<FunctionKnobMap> {
    FunctionKnobMap::from_document(read_document::<MapDocument>(path)?)
}

fn load_scenario(name: &str) -> Result<Scenario> {
    match Scenario::shipped(name) {
        Some(s) => Ok(s),
        None if Path::new(name).exists() => Scenario::load(Path::new(name)),
        None => Err(Error::InvalidInput(format!(
            "unknown scenario `{name}` (shipped: buffer, spin, composite; or a file path)"
        ))),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        origin: path.display().to_string(),
        source,
    })
}

fn cmd_map(a: MapArgs, format: Format) -> Result<()> {
    let graph = DependencyGraph::from_document(read_document::<GraphDocument>(&a.graph)?)?;
    let knobs: Vec<String> = if a.knobs.is_empty() {
        graph.knob_anchors.keys().cloned().collect()
    } else {
        a.knobs
    };
    let build = build_function_knob_map(&graph, &knobs);
    if let Some(out) = &a.out {
        write_atomic(out, to_pretty_json(&build.map.to_document()).as_bytes())?;
    }
    let value = json!({"map": build.map.to_document(), "skipped": build.skipped});
    print!("{}", report(format, &value, || render::map(&build.map, &build.skipped)));
    Ok(())
}

fn cmd_mine(a: MineArgs, format: Format) -> Result<()> {
    let catalog = read_catalog(&a.specs)?;
    let history = read_observations(&a.observations, &catalog)?;
    let outcome = mine_rules(&history, &catalog, &a.params.params())?;
    let mut book = match &a.merge_into {
        Some(p) => Rulebook::load(p)?,
        None => Rulebook::default(),
    };
    let merged = book.merge(outcome.rules);
    if let Some(out) = &a.out {
        book.save(out)?;
    }
    tracing::info!(rules = book.len(), added = merged.added, "mining finished");
    let value = json!({"report": outcome.report, "merge": merged, "rulebook_size": book.len()});
    print!(
        "{}",
        report(format, &value, || render::mining(&outcome.report, &merged, &book))
    );
    Ok(())
}

/// A JSON context snapshot or a collapsed-stack profile.
fn read_profile(path: &Path) -> Result<ContextSnapshot> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if text.trim_start().starts_with('{') {
        let ctx: ContextSnapshot = serde_json::from_str(&text).map_err(|source| Error::Json {
            origin: path.display().to_string(),
            source,
        })?;
        let issues = ctx.validate("context");
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(ctx)
    } else {
        Ok(ContextSnapshot {
            function_rates: CollapsedProfile::parse(&text)?.rates(),
            ..Default::default()
        })
    }
}

fn cmd_diagnose(a: DiagnoseArgs, format: Format) -> Result<()> {
    let current = read_profile(&a.current)?;
    let baseline = a.baseline.as_deref().map(read_profile).transpose()?;
    let history: Vec<ObservationRecord> = match &a.history {
        Some(p) => read_jsonl(p)?,
        None => vec![],
    };
    let cfg = DiagnoserConfig {
        threshold: a.threshold,
        shap_top: a.shap_top,
    };
    let diagnoser = diagnoser_registry().create(&a.method, &cfg)?;
    let diagnosis = diagnoser.diagnose(&DiagnosisInput {
        current: &current,
        baseline: baseline.as_ref(),
        history: &history,
    })?;
    let rules = a.rules.as_deref().map(Rulebook::load).transpose()?;
    let selected = match &a.map {
        Some(p) => Some(select_knobs(&diagnosis.flagged, &load_map(p)?, rules.as_ref(), &current)),
        None => None,
    };
    let value = json!({"diagnosis": diagnosis, "selected_knobs": selected});
    print!(
        "{}",
        report(format, &value, || render::diagnosis(&diagnosis, selected.as_deref()))
    );
    Ok(())
}

fn cmd_rules(c: RulesCommand, format: Format) -> Result<()> {
    match c {
        RulesCommand::List { rules, top, context } => {
            let book = Rulebook::load(&rules)?;
            let ctx = context.as_deref().map(read_profile).transpose()?;
            let pool = match &ctx {
                Some(ctx) => book.match_rules(ctx),
                None => book.rules().iter().collect(),
            };
            let ranked = rank_and_take(pool, top.unwrap_or(usize::MAX));
            let value: Vec<_> = ranked.iter().map(|r| render::rule_json(r)).collect();
            print!("{}", report(format, &value, || render::rule_list(&ranked)));
        }
        RulesCommand::Show { id, rules } => {
            let book = Rulebook::load(&rules)?;
            let rule = book
                .get(&id)
                .ok_or_else(|| Error::InvalidInput(format!("no rule `{id}` in {}", rules.display())))?;
            print!("{}", report(format, &render::rule_json(rule), || render::rule_detail(rule)));
        }
        RulesCommand::Export { rules, out } => {
            let book = Rulebook::load(&rules)?;
            let ranked = rank_and_take(book.rules().iter().collect(), usize::MAX);
            let text = report(format, &book.to_document(), || render::rule_list(&ranked));
            write_atomic(&out, text.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, format: Format) -> Result<()> {
    let scn = load_scenario(&a.scenario)?;
    let seed = a.seed.unwrap_or(scn.doc.noise_seed);
    if let Some(n) = a.sample {
        let mut sim = Simulator::with_seed(scn, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = sample_history(&mut sim, n, &mut rng)?;
        return emit(a.out.as_deref(), &to_jsonl(&history));
    }
    if a.optimum {
        let (config, perf) = ground_truth_optimum(&scn, a.resolution)?;
        let value = json!({"scenario": scn.name(), "resolution": a.resolution, "performance": perf, "configuration": config});
        let text = report(format, &value, || render::evaluation(scn.name(), perf, &config, None));
        return emit(a.out.as_deref(), &text);
    }
    let config: Configuration = match &a.config {
        Some(p) => read_json(p)?,
        None => scn.defaults(),
    };
    let full = scn.complete(&config)?;
    let (perf, ctx) = if a.noiseless {
        scn.evaluate_noiseless(&full)?
    } else {
        let e = Simulator::with_seed(scn.clone(), seed)?.evaluate(&full)?;
        (e.performance.value, e.context)
    };
    let value = json!({"scenario": scn.name(), "performance": perf, "configuration": full, "context": ctx});
    let text = report(format, &value, || render::evaluation(scn.name(), perf, &full, Some(&ctx)));
    emit(a.out.as_deref(), &text)
}

fn cmd_tune(a: TuneArgs, format: Format) -> Result<()> {
    let (mut adapter, catalog, start, seed, shipped_name): (Box<dyn SystemAdapter>, KnobCatalog, Configuration, u64, Option<String>) =
        match (&a.scenario, &a.adapter_cmd) {
            (Some(name), _) => {
                let scn = load_scenario(name)?;
                let seed = a.seed.unwrap_or(scn.doc.noise_seed);
                let shipped = Scenario::shipped(name).is_some().then(|| name.clone());
                let catalog = scn.catalog.clone();
                let start = scn.defaults();
                let sim = Simulator::with_seed(scn, seed)?;
                (Box::new(SimulatorAdapter { sim }), catalog, start, seed, shipped)
            }
            (None, Some(cmd)) => {
                let specs = a
                    .specs
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput("--adapter-cmd needs --specs".into()))?;
                let catalog = read_catalog(specs)?;
                let start: Configuration = catalog.iter().map(|s| (s.name.clone(), s.default.clone())).collect();
                (Box::new(CommandAdapter::from_command_line(cmd)?), catalog, start, a.seed.unwrap_or(0), None)
            }
            (None, None) => return Err(Error::InvalidInput("tune needs --scenario or --adapter-cmd".into())),
        };

    let mut cfg = StrategyConfig::new(catalog.clone());
    cfg.map = match (&a.map, &shipped_name) {
        (Some(p), _) => load_map(p)?,
        (None, Some(n)) => shipped::map(n)?.unwrap_or_default(),
        (None, None) => FunctionKnobMap::default(),
    };
    cfg.rulebook = match (&a.rules, &shipped_name) {
        (Some(p), _) => Rulebook::load(p)?,
        (None, Some(_)) => shipped::rules(&catalog)?,
        (None, None) => Rulebook::default(),
    };
    cfg.hypotheses = match (&a.hypotheses, &shipped_name) {
        (Some(p), _) => HypothesisStore::load(p)?,
        (None, Some(_)) => shipped::hypotheses(&catalog)?,
        (None, None) => HypothesisStore::default(),
    };
    cfg.params.remine_period = a.remine_period;
    cfg.params.exploit_floor = a.exploit_floor;
    cfg.advisor = a.advisor.clone();
    cfg.advisor_config = AdvisorConfig {
        url: a.advisor_url.clone(),
        timeout: None,
    };
    cfg.diagnoser = a.diagnoser.clone();
    cfg.seed = seed;

    let mut strategy = strategy_registry().create(&a.strategy, &cfg)?;
    let result = run_session(adapter.as_mut(), strategy.as_mut(), &catalog, &start, a.budget)?;

    if let Some(p) = &a.history_out {
        write_atomic(p, to_jsonl(&result.history).as_bytes())?;
    }
    if let Some(p) = &a.trace_out {
        write_atomic(p, to_jsonl(&result.traces).as_bytes())?;
    }
    if let (Some(p), Some(book)) = (&a.rules_out, &result.rulebook) {
        book.save(p)?;
    }
    let branches: BTreeMap<String, usize> = result.traces.iter().fold(BTreeMap::new(), |mut m, t| {
        *m.entry(render::branch_name(t.branch).to_string()).or_default() += 1;
        m
    });
    let value = json!({"report": result.report, "branches": branches});
    let text = report(format, &value, || render::session(&result.report, &branches));
    emit(a.out.as_deref(), &text)
}

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use promptnav_core::bayes::{init_priors, reference_priors, CoefficientStore, DEFAULT_K_GLOBAL};
use promptnav_core::field::{build_field, CoefficientMode, PotentialGrid, DEFAULT_D_MAX};
use promptnav_core::metrics::{compare_scenarios, min_dist_to_obstacles, ScenarioConfig, ScenarioPrompts};
use promptnav_core::planner::{astar_baseline, mha_star, CostMode, PlannerParams};
use promptnav_core::scene::{parse_scene, rasterize, SceneSpec};
use promptnav_core::sentiment::{analyze, stability_report, ProviderConfig, ProviderKind, SentimentProvider};
use promptnav_core::session::scene_priors;
use promptnav_service::{AppState, Providers};
use serde_json::json;

#[derive(Parser)]
#[command(name = "promptnav", version, about = "Prompt-steered grid navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a path, optionally after applying prompts.
    Plan(PlanArgs),
    /// Export the potential field for a scene and coefficient store.
    Field(FieldArgs),
    /// Apply a prompt to a coefficient store file.
    Prompt(PromptArgs),
    /// Baseline vs safe vs dangerous comparison.
    Compare(CompareArgs),
    /// Repeat one prompt and report mean and spread per family.
    Stability(StabilityArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Lexicon,
    Remote,
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Lexicon => ProviderKind::Lexicon,
            ProviderArg::Remote => ProviderKind::Remote,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum StrategyArg {
    Baseline,
    Mha,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostModeArg {
    HeuristicOnly,
    CostAugmented,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoefModeArg {
    ScaleKrep,
    ScaleDmax,
}

#[derive(Args)]
struct FieldOpts {
    /// Scale from posterior to repulsion strength.
    #[arg(long, default_value_t = DEFAULT_K_GLOBAL)]
    k_global: f64,
    /// Cutoff distance in meters.
    #[arg(long, default_value_t = DEFAULT_D_MAX)]
    d_max: f64,
    #[arg(long, value_enum, default_value = "scale-krep")]
    coef_mode: CoefModeArg,
}

impl FieldOpts {
    fn mode(&self) -> CoefficientMode {
        match self.coef_mode {
            CoefModeArg::ScaleKrep => CoefficientMode::ScaleKrep,
            CoefModeArg::ScaleDmax => CoefficientMode::ScaleDmax,
        }
    }
}

#[derive(Args)]
struct PlannerOpts {
    #[arg(long, default_value_t = 2.0)]
    w1: f64,
    #[arg(long, default_value_t = 2.0)]
    w2: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

impl PlannerOpts {
    fn params(&self, mode: CostMode) -> PlannerParams {
        PlannerParams { w1: self.w1, w2: self.w2, lambda: self.lambda, beta: self.beta, cost_mode: mode, ..Default::default() }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Starting coefficients; defaults to the scene's priors.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Prompt to apply before planning; repeatable.
    #[arg(long)]
    prompt: Vec<String>,
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
    /// Defaults to `mha` when a prompt or store is given, `baseline` otherwise.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum, default_value = "heuristic-only")]
    mode: CostModeArg,
    #[command(flatten)]
    planner: PlannerOpts,
    #[command(flatten)]
    field: FieldOpts,
    #[arg(long)]
    out: PathBuf,
    /// Summary with length, clearance and posteriors.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Binary PPM heatmap of the field.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
    #[command(flatten)]
    field: FieldOpts,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    /// Store file to update; created from `--scene` priors if missing.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    text: String,
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    safe: Option<String>,
    #[arg(long)]
    dangerous: Option<String>,
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
    #[arg(long, value_enum, default_value = "cost-augmented")]
    mode: CostModeArg,
    #[command(flatten)]
    planner: PlannerOpts,
    #[command(flatten)]
    field: FieldOpts,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    prompt: String,
    /// Families and priors come from this scene; otherwise the five reference families.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(short = 'n', long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    addr: String,
    /// Directory for session snapshots.
    #[arg(long)]
    persist: Option<PathBuf>,
    /// Provider used for scene priors and prompts that name none.
    #[arg(long, value_enum, default_value = "lexicon")]
    provider: ProviderArg,
}

fn cost_mode(m: CostModeArg) -> CostMode {
    match m {
        CostModeArg::HeuristicOnly => CostMode::HeuristicOnly,
        CostModeArg::CostAugmented => CostMode::CostAugmented,
    }
}

fn provider(kind: ProviderArg) -> Result<Box<dyn SentimentProvider>> {
    Ok(ProviderConfig::from_env(kind.into())?.build()?)
}

fn read_scene(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scene(&text).with_context(|| format!("scene {}", path.display()))
}

fn read_store(path: &Path) -> Result<CoefficientStore> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CoefficientStore::from_json(&text).with_context(|| format!("store {}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_heatmap(path: &Path, field: &PotentialGrid) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut out = BufWriter::new(file);
    field.write_ppm(&mut out)?;
    out.flush()?;
    Ok(())
}

fn starting_store(spec: &SceneSpec, store: Option<&Path>, provider: &dyn SentimentProvider) -> Result<CoefficientStore> {
    let store = match store {
        Some(path) => read_store(path)?,
        None => scene_priors(spec, provider)?,
    };
    if let Some(missing) = spec.families().into_iter().find(|f| !store.contains(f)) {
        bail!("store has no coefficient for scene family `{missing}`");
    }
    Ok(store)
}

fn plan(args: PlanArgs) -> Result<()> {
    let spec = read_scene(&args.scene)?;
    let grid = rasterize(&spec);
    let provider = provider(args.provider)?;
    let mut store = starting_store(&spec, args.store.as_deref(), provider.as_ref())?;
    for text in &args.prompt {
        let families = store.family_names();
        let evidence = analyze(provider.as_ref(), text, &families, &store)?;
        store = store.update(&evidence.likelihoods, text, &evidence.provider, 0)?;
    }
    let field = build_field(&grid, &store.to_field_params(&grid, args.field.k_global, args.field.d_max, args.field.mode())?)?;
    let default_strategy = if args.prompt.is_empty() && args.store.is_none() { StrategyArg::Baseline } else { StrategyArg::Mha };
    let (start, goal) = (spec.cell_of(spec.start), spec.cell_of(spec.goal));
    let path = match args.strategy.unwrap_or(default_strategy) {
        StrategyArg::Baseline => astar_baseline(&grid, start, goal)?,
        StrategyArg::Mha => mha_star(&grid, &field, start, goal, &args.planner.params(cost_mode(args.mode)))?,
    };
    write_file(&args.out, path.to_json_pretty().as_bytes())?;
    if let Some(report) = &args.report {
        let summary = json!({
            "planner": path.planner,
            "path_length_m": path.length_m,
            "mdo_m": min_dist_to_obstacles(&path, &grid),
            "cost": path.cost,
            "expansions": path.expansions,
            "prompts": args.prompt,
            "posteriors": store.posteriors(),
        });
        write_file(report, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    if let Some(heatmap) = &args.heatmap {
        write_heatmap(heatmap, &field)?;
    }
    eprintln!("{}: {} cells, {:.3} m", path.planner, path.cells.len(), path.length_m);
    Ok(())
}

fn field(args: FieldArgs) -> Result<()> {
    let spec = read_scene(&args.scene)?;
    let grid = rasterize(&spec);
    let provider = provider(args.provider)?;
    let store = starting_store(&spec, args.store.as_deref(), provider.as_ref())?;
    let field = build_field(&grid, &store.to_field_params(&grid, args.field.k_global, args.field.d_max, args.field.mode())?)?;
    write_file(&args.out, field.to_json().as_bytes())?;
    if let Some(heatmap) = &args.heatmap {
        write_heatmap(heatmap, &field)?;
    }
    Ok(())
}

fn prompt(args: PromptArgs) -> Result<()> {
    let provider = provider(args.provider)?;
    let store = if args.store.exists() {
        read_store(&args.store)?
    } else {
        let Some(scene) = &args.scene else {
            bail!("{} does not exist; pass --scene to start from its priors", args.store.display());
        };
        scene_priors(&read_scene(scene)?, provider.as_ref())?
    };
    let evidence = analyze(provider.as_ref(), &args.text, &store.family_names(), &store)?;
    let next = store.update(&evidence.likelihoods, &args.text, &evidence.provider, 0)?;
    write_file(&args.store, next.to_json_pretty().as_bytes())?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:<12} {:>10} {:>10} {:>10}", "family", "L", "before", "after")?;
    for family in next.families() {
        writeln!(
            out,
            "{family:<12} {:>10.4} {:>10.4} {:>10.4}",
            evidence.likelihoods[family],
            store.posterior(family).unwrap(),
            next.posterior(family).unwrap()
        )?;
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let spec = read_scene(&args.scene)?;
    let provider = provider(args.provider)?;
    let priors = scene_priors(&spec, provider.as_ref())?;
    let defaults = ScenarioPrompts::default();
    let prompts = ScenarioPrompts {
        safe: args.safe.unwrap_or(defaults.safe),
        dangerous: args.dangerous.unwrap_or(defaults.dangerous),
    };
    let config = ScenarioConfig {
        planner: args.planner.params(cost_mode(args.mode)),
        k_global: args.field.k_global,
        d_max: args.field.d_max,
        coefficient_mode: args.field.mode(),
    };
    let report = compare_scenarios(&spec, &priors, &prompts, provider.as_ref(), &config)?;
    if args.json {
        println!("{}", report.to_json_pretty());
    } else {
        print!("{report}");
    }
    Ok(())
}

fn stability(args: StabilityArgs) -> Result<()> {
    let provider = provider(args.provider)?;
    let store = match &args.scene {
        Some(path) => scene_priors(&read_scene(path)?, provider.as_ref())?,
        None => {
            let priors = reference_priors();
            init_priors(&priors.keys().collect::<Vec<_>>(), &priors)?
        }
    };
    let report = stability_report(provider.as_ref(), &args.prompt, &store.family_names(), &store, args.trials)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let providers = Providers::from_env(args.provider.into())?;
    let mut state = AppState::new(providers);
    if let Some(dir) = &args.persist {
        state = state.with_persistence(dir).with_context(|| format!("loading sessions from {}", dir.display()))?;
        eprintln!("restored {} session(s) from {}", state.session_count(), dir.display());
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(promptnav_service::serve(&args.addr, state)).with_context(|| format!("serving on {}", args.addr))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Field(a) => field(a),
        Command::Prompt(a) => prompt(a),
        Command::Compare(a) => compare(a),
        Command::Stability(a) => stability(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

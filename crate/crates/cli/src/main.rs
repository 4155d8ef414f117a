use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acre::config::{RunConfig, KEYS};
use acre::data::{classify_relations, load_dataset, read_cache, write_cache, Split, TripleStore, Vocabulary};
use acre::eval::{category_report, evaluate, rank_dump, Direction, EvalOptions, Filters, HeadMode, TiePolicy};
use acre::model::count_for_config;
use acre::train::{grid_search, preset, train, Checkpoint, GridSpace};
use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Args, FromArgMatches, Parser, Subcommand, ValueEnum};

/// Version of every JSON record this tool emits.
const SCHEMA: u32 = 1;
const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_FILE: &str = "checkpoint.acre";
const CURVE_FILE: &str = "curve.jsonl";

#[derive(Parser)]
#[command(name = "acre", version, about = "Train and evaluate AcrE knowledge graph embeddings")]
struct Cli {
    /// Directory under which default run and cache paths are created.
    #[arg(long, env = "ACRE_OUTPUT_ROOT", default_value = "acre-runs", global = true)]
    output_root: PathBuf,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset directory into a cache file and print its statistics.
    Preprocess {
        /// Directory holding train.txt, valid.txt and test.txt.
        dataset: PathBuf,
        /// Cache file to write (default: <output-root>/<dataset name>.cache).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Store the reciprocal-augmented triples.
        #[arg(long)]
        reciprocal: bool,
    },
    /// Train a model and write config, curve and checkpoint to a run directory.
    Train(ConfigFlags),
    /// Evaluate a trained run on one split.
    Eval(EvalArgs),
    /// Parameter counts and breakdown tables.
    Report(ReportArgs),
    /// Search a hyperparameter grid on the validation split.
    GridSearch(GridArgs),
}

/// `--config` plus one flag per config key; flags override the file.
#[derive(Debug, Clone, Default)]
struct ConfigFlags {
    config: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = ConfigFlags { config: m.get_one::<PathBuf>("config").cloned(), ..Default::default() };
        for &(key, _, _) in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                flags.overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(flags)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        let cmd = cmd.arg(
            clap::Arg::new("config")
                .long("config")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Flat key = value config file"),
        );
        KEYS.iter().fold(cmd, |cmd, &(key, _, help)| {
            let long: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
            let arg = clap::Arg::new(key).long(long).value_name("VALUE").allow_negative_numbers(true).help(help);
            cmd.arg(if key == "output" { arg.visible_alias("out") } else { arg })
        })
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Jsonl,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Dataset override (default: the one recorded in the run config).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value = "both")]
    direction: Direction,
    /// Tie policy override (default: the run config's).
    #[arg(long)]
    tie_policy: Option<TiePolicy>,
    /// Head prediction override (default: the run config's).
    #[arg(long)]
    head_mode: Option<HeadMode>,
    /// Raw setting: do not filter known answers.
    #[arg(long)]
    raw: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write per-query ranks to this file.
    #[arg(long)]
    dump_ranks: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory written by `train`; otherwise a config is resolved from flags.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Parameter count.
    #[arg(long)]
    params: bool,
    /// Hits@10 per relation category and side.
    #[arg(long)]
    categories: bool,
    /// Metrics for head and tail prediction separately.
    #[arg(long)]
    head_tail: bool,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args)]
struct GridArgs {
    /// Epoch budget per cell before the best cell is retrained.
    #[arg(long, default_value_t = 50)]
    short_epochs: usize,
    /// Learning rates, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid_lr: Option<Vec<f64>>,
    /// Dropout values (applied at all three positions), comma separated.
    #[arg(long, value_delimiter = ',')]
    grid_dropout: Option<Vec<f64>>,
    /// Rate lists separated by `;`, e.g. `1,2,4;2,3,5`.
    #[arg(long)]
    grid_rates: Option<String>,
    /// Label smoothing values, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid_label_smoothing: Option<Vec<f64>>,
    #[command(flatten)]
    config: ConfigFlags,
}

/// A list of problems reported together.
#[derive(Debug)]
struct Problems(&'static str, Vec<String>);

impl std::fmt::Display for Problems {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.0, self.1.join("; "))
    }
}

impl std::error::Error for Problems {}

fn resolve(flags: &ConfigFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    if let Some(path) = &flags.config {
        if let Err(e) = RunConfig::load(path).map(|c| cfg = c) {
            errors.extend(e);
        }
    }
    let mut overrides = flags.overrides.clone();
    overrides.sort_by_key(|(k, _)| k != "preset");
    for (k, v) in &overrides {
        if let Err(e) = cfg.set_text(k, v) {
            errors.push(e);
        }
    }
    if let Err(e) = cfg.validate() {
        errors.extend(e);
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Problems("invalid configuration", errors).into())
    }
}

fn load_store(path: &Path, reciprocal: bool) -> Result<(TripleStore, Vocabulary)> {
    let (store, vocab) = if path.is_file() { read_cache(path)? } else { load_dataset(path, None)? };
    let store = if reciprocal && !store.is_reciprocal() { store.add_reciprocals()? } else { store };
    Ok((store, vocab))
}

fn run_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| {
        let name = cfg.preset.clone().unwrap_or_else(|| cfg.train.model.structure.to_string());
        cli.output_root.join(format!("{name}-seed{}", cfg.train.seed))
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn preprocess(cli: &Cli, dataset: &Path, out: Option<&Path>, reciprocal: bool) -> Result<()> {
    let (store, vocab) = load_dataset(dataset, None)?;
    let store = if reciprocal { store.add_reciprocals()? } else { store };
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let name = dataset.file_name().map_or("dataset".into(), |n| n.to_string_lossy().into_owned());
            fs::create_dir_all(&cli.output_root)?;
            cli.output_root.join(format!("{name}.cache"))
        }
    };
    write_cache(&store, &vocab, &out)?;
    println!("{}", store.stats());
    let dups: Vec<String> =
        Split::ALL.iter().map(|&s| format!("{}={}", s.name(), store.duplicates_dropped(s))).collect();
    println!("duplicates dropped: {}", dups.join(" "));
    println!("cache: {}", out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, flags: &ConfigFlags) -> Result<()> {
    let cfg = resolve(flags)?;
    let dataset = cfg.dataset.clone().context("no dataset given (set `dataset` or --dataset)")?;
    let (store, _) = load_store(&dataset, cfg.train.head_mode == HeadMode::Reciprocal)?;
    let dir = run_dir(cli, &cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.dataset = Some(fs::canonicalize(&dataset)?);
    resolved.output = Some(dir.clone());
    write_file(&dir.join(CONFIG_FILE), resolved.to_toml())?;

    let curve_path = dir.join(CURVE_FILE);
    let mut curve = fs::File::create(&curve_path).with_context(|| format!("creating {}", curve_path.display()))?;
    let mut write_err = None;
    let outcome = train(&store, &cfg.train, |r| {
        let line = serde_json::json!({ "schema": SCHEMA, "epoch": r.epoch, "loss": r.loss, "valid_mrr": r.valid_mrr });
        if let Err(e) = writeln!(curve, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        bail!("writing {}: {e}", curve_path.display());
    }
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let summary = serde_json::json!({
        "schema": SCHEMA,
        "run": dir,
        "structure": cfg.train.model.structure,
        "params": outcome.checkpoint.params.count(),
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.checkpoint.epoch,
        "best_valid_mrr": outcome.checkpoint.best_valid_mrr.is_finite().then_some(outcome.checkpoint.best_valid_mrr),
        "final_loss": outcome.history.last().map(|r| r.loss),
        "stopped_early": outcome.stopped_early,
    });
    write_file(&dir.join("summary.json"), format!("{summary}\n"))?;
    println!("{summary}");
    Ok(())
}

struct LoadedRun {
    cfg: RunConfig,
    checkpoint: Checkpoint,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let cfg = RunConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| Problems("invalid run config", e))?;
    let checkpoint = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    if checkpoint.train != cfg.train {
        bail!("{}: checkpoint and config disagree", dir.display());
    }
    Ok(LoadedRun { cfg, checkpoint })
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let dataset =
        args.dataset.clone().or(run.cfg.dataset.clone()).context("run config names no dataset; pass --dataset")?;
    let options = EvalOptions {
        tie_policy: args.tie_policy.unwrap_or(run.cfg.tie_policy),
        head_mode: args.head_mode.unwrap_or(run.cfg.train.head_mode),
        direction: args.direction,
        filtered: !args.raw,
        ..EvalOptions::default()
    };
    let (store, _) = load_store(&dataset, options.head_mode == HeadMode::Reciprocal)?;
    let model = run.checkpoint.model();
    let filters = Filters::new(&store)?;
    let evaluation = evaluate(&model, &store, &filters, args.split, options)?;
    if let Some(path) = &args.dump_ranks {
        write_file(path, rank_dump(&evaluation.entries))?;
    }
    match args.format {
        Format::Table => print!("{}", evaluation.report.table()),
        Format::Jsonl => print!("{}", evaluation.report.jsonl()),
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let all = !(args.params || args.categories || args.head_tail);
    let run = args.run.as_deref().map(load_run).transpose()?;
    let cfg = match &run {
        Some(r) => r.cfg.clone(),
        None => resolve(&args.config)?,
    };
    let needs_model = args.categories || args.head_tail || (all && run.is_some());

    if args.params || all {
        let (count, source) = match (&run, &cfg.dataset) {
            (Some(r), _) => (r.checkpoint.params.count(), "checkpoint".to_string()),
            (None, Some(ds)) => {
                let (store, _) = load_store(ds, cfg.train.head_mode == HeadMode::Reciprocal)?;
                (
                    count_for_config(&cfg.train.model, store.num_entities(), store.num_relations()),
                    ds.display().to_string(),
                )
            }
            (None, None) => {
                let name = cfg.preset.as_deref().context("--params needs --run, --dataset or a dataset --preset")?;
                let p = preset(name).context("unknown preset")?;
                let mut p = p;
                p.train = cfg.train.clone();
                (p.param_count(), format!("{} shape", p.dataset.name))
            }
        };
        match args.format {
            Format::Table => println!(
                "AcrE ({}) params: {count} (~{:.2}M) [{source}]",
                cfg.train.model.structure,
                count as f64 / 1e6
            ),
            Format::Jsonl => println!(
                "{}",
                serde_json::json!({
                    "schema": SCHEMA, "kind": "params", "structure": cfg.train.model.structure,
                    "params": count, "millions": count as f64 / 1e6, "source": source,
                })
            ),
        }
    }

    if !needs_model {
        return Ok(());
    }
    let run = run.context("category and head/tail reports need --run")?;
    let dataset = cfg.dataset.clone().context("run config names no dataset")?;
    let head_mode = cfg.train.head_mode;
    let (store, _) = load_store(&dataset, head_mode == HeadMode::Reciprocal)?;
    let model = run.checkpoint.model();
    let filters = Filters::new(&store)?;
    let options = EvalOptions { tie_policy: cfg.tie_policy, head_mode, ..EvalOptions::default() };
    let evaluation = evaluate(&model, &store, &filters, args.split, options)?;
    if args.head_tail || all {
        match args.format {
            Format::Table => print!("{}", evaluation.report.table()),
            Format::Jsonl => print!("{}", evaluation.report.jsonl()),
        }
    }
    if args.categories || all {
        let categories = classify_relations(&store, 1.5)?;
        let report = category_report(&evaluation.entries, &categories);
        match args.format {
            Format::Table => print!("{}", report.table()),
            Format::Jsonl => print!("{}", report.jsonl()),
        }
        if report.uncategorized > 0 {
            log::warn!("{} entries have relations without training triples", report.uncategorized);
        }
    }
    Ok(())
}

fn parse_rate_lists(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|group| {
            group
                .split(',')
                .filter(|x| !x.trim().is_empty())
                .map(|x| x.trim().parse::<usize>().with_context(|| format!("bad rate `{x}`")))
                .collect()
        })
        .collect()
}

fn cmd_grid(cli: &Cli, args: &GridArgs) -> Result<()> {
    let cfg = resolve(&args.config)?;
    let dataset = cfg.dataset.clone().context("no dataset given (set `dataset` or --dataset)")?;
    let (store, _) = load_store(&dataset, cfg.train.head_mode == HeadMode::Reciprocal)?;
    let mut space = GridSpace::default();
    if let Some(v) = &args.grid_lr {
        space.learning_rates = v.clone();
    }
    if let Some(v) = &args.grid_dropout {
        space.dropouts = v.clone();
    }
    if let Some(v) = &args.grid_rates {
        space.rates = parse_rate_lists(v)?;
    }
    if let Some(v) = &args.grid_label_smoothing {
        space.label_smoothings = v.clone();
    }
    let result = grid_search(&store, &cfg.train, &space, args.short_epochs)?;
    let dir = run_dir(cli, &cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut best = cfg.clone();
    best.preset = None;
    best.train = result.best.clone();
    best.dataset = Some(fs::canonicalize(&dataset)?);
    best.output = Some(dir.clone());
    write_file(&dir.join(CONFIG_FILE), best.to_toml())?;
    result.outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let rows: String = result
        .rows
        .iter()
        .map(|r| serde_json::json!({ "schema": SCHEMA, "kind": "grid-cell", "cell": r }).to_string() + "\n")
        .collect();
    write_file(&dir.join("grid.jsonl"), rows)?;
    let curve: String = result
        .outcome
        .history
        .iter()
        .map(|r| {
            serde_json::json!({ "schema": SCHEMA, "epoch": r.epoch, "loss": r.loss, "valid_mrr": r.valid_mrr })
                .to_string()
                + "\n"
        })
        .collect();
    write_file(&dir.join(CURVE_FILE), curve)?;
    print!("{}", result.table());
    println!("best cell {} retrained: valid MRR {:.4}", result.best_index, result.outcome.checkpoint.best_valid_mrr);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess { dataset, out, reciprocal } => preprocess(cli, dataset, out.as_deref(), *reciprocal),
        Command::Train(flags) => cmd_train(cli, flags),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
        Command::GridSearch(args) => cmd_grid(cli, args),
    }
}

fn error_line(kind: &str, message: String, details: &[String]) -> String {
    serde_json::json!({ "error": kind, "message": message, "details": details }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first.to_string(), &[]));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = match e.downcast_ref::<Problems>() {
                Some(p) => error_line("config", p.0.to_string(), &p.1),
                None => error_line("runtime", format!("{e:#}"), &[]),
            };
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use selffeed::agent::Agent;
use selffeed::data::{
    export_splits, load_dataset, save_dataset, CandidatePool, DatasetSplit, ExampleKind,
    ExperienceStore, Task,
};
use selffeed::eval::{
    assign_pool_candidates, assign_static_candidates, classifier_f1, hits_at, max_f1_sweep,
    satisfaction_scores, uncertainty_gap, uncertainty_top, AgentScorer, DissatisfactionRegex,
    EvalError, MetricReport, RandomScorer,
};
use selffeed::sim::{
    detector_experiment, freshness_experiment, learning_curve_experiment, Arm, DomainConfig, World,
    WorldConfig,
};
use selffeed::text::{Utterance, Vocabulary};
use selffeed::train::{train, TaskSpec};
use selffeed_service::{router, AppState, ConfigFile, ServiceError, ServiceFlags, TrainFlags};

#[derive(Debug, Parser)]
#[command(name = "selffeed", version, about = "Self-feeding retrieval chatbot")]
struct Cli {
    /// TOML file with [serve], [train] and [world] tables.
    #[arg(long, global = true, env = "SELFFEED_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from JSONL datasets.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and print one metric record.
    Eval(EvalArgs),
    /// Run a simulated experiment.
    Simulate(SimulateArgs),
    /// Serve the chat API.
    Serve(ServiceFlags),
    /// Write the experience store out as training splits.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic domain with its dialogue splits and pool.
    GenDomain(GenDomainArgs),
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    dialogue: Vec<PathBuf>,
    #[arg(long)]
    feedback: Vec<PathBuf>,
    #[arg(long)]
    satisfaction: Vec<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Checkpoint directory; also receives report.jsonl and pool.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Hits,
    F1,
    Regex,
    UncertaintyTop,
    UncertaintyGap,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Dialogue,
    Feedback,
    Satisfaction,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Dialogue => Task::Dialogue,
            TaskArg::Feedback => Task::Feedback,
            TaskArg::Satisfaction => Task::Satisfaction,
        }
    }
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "hits")]
    metric: Metric,
    /// Candidates per example.
    #[arg(long, default_value_t = 20)]
    x: usize,
    /// Cutoff k for hits@k.
    #[arg(long, default_value_t = 1)]
    y: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset task; dialogue for ranking metrics, satisfaction otherwise.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Candidate pool; ranking negatives come from it instead of the split.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Regex pattern file for the regex metric.
    #[arg(long)]
    patterns: Option<PathBuf>,
    #[arg(long, default_value_t = selffeed::text::DEFAULT_HISTORY_LIMIT)]
    history_limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    LearningCurve,
    Freshness,
    Detectors,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    /// Worlds per arm.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// First world seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feedback examples per arm in the freshness experiment.
    #[arg(long, default_value_t = 160)]
    feedback: usize,
    /// TOML world config; overrides the [world] table of --config.
    #[arg(long)]
    world_config: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct GenDomainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    words: Option<usize>,
    #[arg(long)]
    chain_len: Option<usize>,
    #[arg(long)]
    train_chains: Option<usize>,
    #[arg(long)]
    valid_chains: Option<usize>,
    #[arg(long)]
    test_chains: Option<usize>,
    /// HH training examples sampled from the train chains.
    #[arg(long)]
    hh: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Train(args) => cmd_train(file, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Simulate(args) => cmd_simulate(file, args),
        Command::Serve(flags) => cmd_serve(file, flags),
        Command::Export { store, out } => cmd_export(&store, &out),
        Command::GenDomain(args) => cmd_gen_domain(file, args),
    }
}

fn load_all(paths: &[PathBuf], task: Task) -> Result<Vec<selffeed::data::Record>, ServiceError> {
    let mut records = Vec::new();
    for path in paths {
        let loaded = load_dataset(path, task)?;
        if !loaded.skipped.is_empty() {
            log::warn!(
                "{}: skipped {} malformed lines",
                path.display(),
                loaded.skipped.len()
            );
        }
        records.extend(loaded.data.records);
    }
    Ok(records)
}

fn cmd_train(file: ConfigFile, args: TrainArgs) -> Result<(), ServiceError> {
    let mut settings = file.train;
    args.flags.apply(&mut settings);
    let dialogue = load_all(&args.dialogue, Task::Dialogue)?;
    let feedback = load_all(&args.feedback, Task::Feedback)?;
    let satisfaction = load_all(&args.satisfaction, Task::Satisfaction)?;
    let valid = args
        .valid
        .as_ref()
        .map(|p| load_dataset(p, Task::Dialogue))
        .transpose()?
        .map(|l| l.data);

    let texts = dialogue
        .iter()
        .chain(&feedback)
        .chain(&satisfaction)
        .chain(valid.iter().flat_map(|v| &v.records))
        .flat_map(|r| {
            r.x.iter()
                .map(|u| u.text.clone())
                .chain(std::iter::once(r.target.clone()))
        })
        .collect::<Vec<_>>();
    let vocab = Arc::new(Vocabulary::build(&texts));
    let agent = Agent::new(
        settings.encoder(),
        vocab,
        settings.history_limit,
        settings.seed,
    )?;
    let pool = CandidatePool::from_targets(dialogue.iter().map(|r| r.target.clone()));
    let tasks = [
        TaskSpec::new(Task::Dialogue, dialogue, 1.0),
        TaskSpec::new(Task::Feedback, feedback, settings.feedback_factor),
        TaskSpec::new(Task::Satisfaction, satisfaction, 1.0),
    ];
    let (agent, report) = train(&agent, &tasks, valid.as_ref(), &settings.train_config())?;

    agent.save(&args.out)?;
    report.write_jsonl(args.out.join("report.jsonl"))?;
    if !pool.is_empty() {
        pool.save(args.out.join("pool.json"))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "epochs": report.epochs.len(),
            "best_epoch": report.best_epoch,
            "best_valid_hits1": report.best_valid_hits1,
            "stopped_early": report.stopped_early,
            "model_version": agent.version(),
        })
    );
    Ok(())
}

fn load_agent(args: &EvalArgs) -> Result<Agent, ServiceError> {
    let dir = args.checkpoint.as_ref().ok_or_else(|| {
        ServiceError::Config(format!("--checkpoint is required for {:?}", args.metric))
    })?;
    Ok(Agent::load(dir, args.history_limit)?)
}

fn encoded_pool(args: &EvalArgs, agent: &Agent) -> Result<CandidatePool, ServiceError> {
    let path = args
        .pool
        .as_ref()
        .ok_or_else(|| ServiceError::Config("--pool is required for uncertainty metrics".into()))?;
    let mut pool = CandidatePool::load(path)?;
    pool.encode(agent)?;
    Ok(pool)
}

/// Context the bot answered: everything before its reply and the reaction.
fn answered(x: &[Utterance]) -> &[Utterance] {
    &x[..x.len().saturating_sub(2).max(1).min(x.len())]
}

fn cmd_eval(args: EvalArgs) -> Result<(), ServiceError> {
    let ranking = matches!(args.metric, Metric::Hits | Metric::Random);
    let task = args.task.map(Task::from).unwrap_or(if ranking {
        Task::Dialogue
    } else {
        Task::Satisfaction
    });
    let split = load_dataset(&args.data, task)?.data;
    let report = |value: f64, n: usize, x: usize, y: usize, model_version: u64| MetricReport {
        metric: format!("{:?}", args.metric).to_lowercase(),
        x,
        y,
        value,
        n,
        seed: args.seed,
        model_version,
    };
    let out = if ranking {
        let assignment = match &args.pool {
            Some(path) => assign_pool_candidates(
                &split,
                CandidatePool::load(path)?.texts(),
                args.x,
                args.seed,
            )?,
            None => assign_static_candidates(&split, args.x, args.seed)?,
        };
        let (value, version) = if args.metric == Metric::Hits {
            let agent = load_agent(&args)?;
            (
                hits_at(&AgentScorer::new(&agent), &split, &assignment, args.y)?,
                agent.version(),
            )
        } else {
            (
                hits_at(
                    &RandomScorer { seed: args.seed },
                    &split,
                    &assignment,
                    args.y,
                )?,
                0,
            )
        };
        report(value, split.len(), args.x, args.y, version)
    } else {
        let (value, n, version) = match args.metric {
            Metric::F1 => {
                let agent = load_agent(&args)?;
                let (_, labels) = satisfaction_scores(&split, |_| Ok(0.0))?;
                (
                    classifier_f1(&agent, &split)?.f1,
                    labels.len(),
                    agent.version(),
                )
            }
            Metric::Regex => {
                let regex = match &args.patterns {
                    Some(path) => DissatisfactionRegex::from_file(path)?,
                    None => DissatisfactionRegex::default(),
                };
                let (scores, labels) = satisfaction_scores(&split, |x| {
                    let last = x.last().map(|u| u.text.as_str()).unwrap_or_default();
                    Ok(if regex.is_dissatisfied(last) {
                        1.0
                    } else {
                        0.0
                    })
                })?;
                (max_f1_sweep(&scores, &labels)?.f1, labels.len(), 0)
            }
            _ => {
                let agent = load_agent(&args)?;
                let pool = encoded_pool(&args, &agent)?;
                let flag = if args.metric == Metric::UncertaintyTop {
                    uncertainty_top
                } else {
                    uncertainty_gap
                };
                let (scores, labels) = satisfaction_scores(&split, |x| {
                    let ranked = pool.rank(&agent, answered(x)).map_err(EvalError::from)?;
                    Ok(flag(&ranked.scores, 0.5)?.score)
                })?;
                (
                    max_f1_sweep(&scores, &labels)?.f1,
                    labels.len(),
                    agent.version(),
                )
            }
        };
        report(value, n, 0, 0, version)
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn world_config(file: &ConfigFile, path: Option<&Path>) -> Result<WorldConfig, ServiceError> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text)
                .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
        }
        None => Ok(file.world.clone().unwrap_or_default()),
    }
}

fn cmd_simulate(file: ConfigFile, args: SimulateArgs) -> Result<(), ServiceError> {
    let cfg = world_config(&file, args.world_config.as_deref())?;
    if args.seeds == 0 {
        return Err(ServiceError::Config("--seeds must be positive".into()));
    }
    let json = match args.experiment {
        Experiment::LearningCurve => {
            let report = learning_curve_experiment(&cfg, &Arm::standard(), args.seeds, args.seed)?;
            print!("{}", report.table());
            serde_json::to_string_pretty(&report)?
        }
        Experiment::Freshness => {
            let report = freshness_experiment(&cfg, args.feedback, args.seeds, args.seed, true)?;
            print!("{}", report.table());
            serde_json::to_string_pretty(&report)?
        }
        Experiment::Detectors => {
            let scores = (0..args.seeds)
                .map(|i| detector_experiment(&cfg, args.seed.wrapping_add(i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            println!("seed\tpositive\tclassifier\tregex\tunc_top\tunc_gap");
            for s in &scores {
                println!(
                    "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                    s.seed,
                    s.positive_rate,
                    s.classifier,
                    s.regex,
                    s.uncertainty_top,
                    s.uncertainty_gap
                );
            }
            serde_json::to_string_pretty(&scores)?
        }
    };
    if let Some(out) = &args.out {
        std::fs::write(out, json)?;
    }
    Ok(())
}

fn cmd_serve(file: ConfigFile, flags: ServiceFlags) -> Result<(), ServiceError> {
    let mut cfg = file.serve;
    flags.apply(&mut cfg);
    let bind = cfg.bind.clone();
    let app = AppState::from_config(cfg)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(app)).await?;
        Ok(())
    })
}

fn cmd_export(store: &Path, out: &Path) -> Result<(), ServiceError> {
    if !store.is_dir() {
        return Err(ServiceError::Config(format!(
            "{} is not a store directory",
            store.display()
        )));
    }
    let store = ExperienceStore::open(store)?;
    let splits: Vec<DatasetSplit> = ExampleKind::ALL
        .iter()
        .map(|&k| store.to_dataset(k))
        .collect();
    for path in export_splits(out, &splits.iter().collect::<Vec<_>>())? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_gen_domain(file: ConfigFile, args: GenDomainArgs) -> Result<(), ServiceError> {
    let mut cfg = file.world.unwrap_or_default();
    let d: &mut DomainConfig = &mut cfg.domain;
    for (slot, value) in [
        (&mut d.words, args.words),
        (&mut d.chain_len, args.chain_len),
        (&mut d.train_chains, args.train_chains),
        (&mut d.valid_chains, args.valid_chains),
        (&mut d.test_chains, args.test_chains),
        (&mut cfg.hh_train, args.hh),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    let world = World::build(&cfg, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    world.domain.save(args.out.join("domain.json"))?;
    for (name, split) in [
        ("train", &world.hh),
        ("valid", &world.valid),
        ("test", &world.test),
    ] {
        save_dataset(split, args.out.join(format!("dialogue.{name}.jsonl")))?;
    }
    world.pool.save(args.out.join("pool.json"))?;
    println!(
        "{}",
        serde_json::json!({
            "train": world.hh.len(),
            "valid": world.valid.len(),
            "test": world.test.len(),
            "pool": world.pool.len(),
            "vocab": world.vocab.len(),
        })
    );
    Ok(())
}

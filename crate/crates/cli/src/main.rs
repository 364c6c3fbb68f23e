use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cotree_core::orchestrator::{Orchestrator, OrchestratorError, RunConfig, RunOutcome};

/// Trajectory-tree synthesis, training-data construction and robustness
/// evaluation for desktop agents.
#[derive(Debug, Parser)]
#[command(name = "cotree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Store root; overrides the configuration and COTREE_STORE.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow one trajectory tree per task.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Glob over task ids.
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Run an agent on the takeover cases and report robustness.
    EvalRobust {
        #[arg(long)]
        config: PathBuf,
        /// oracle-recovery, frozen, decay[:p[:decay]] or an http(s) endpoint.
        #[arg(long)]
        agent: String,
        #[arg(long)]
        runs: Option<u32>,
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Training-data construction.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Regenerate and print the report of a finished run.
    Report {
        #[arg(long = "run")]
        run_id: String,
        #[command(flatten)]
        common: Common,
    },
    /// Task management.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
    /// Evaluation case management.
    Cases {
        #[command(subcommand)]
        command: CasesCommand,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Build train.jsonl and its manifest from the synthesized trees.
    Build {
        #[arg(long)]
        lambda_ref: Option<f64>,
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "default")]
        name: String,
        #[arg(long)]
        tasks: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
enum TasksCommand {
    /// Write generated tasks and snapshots into the store.
    Generate {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stochasticity: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
enum CasesCommand {
    /// Cut takeover cases out of the synthesized trees.
    Build {
        #[arg(long)]
        tasks: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: Option<&PathBuf>, store: Option<&PathBuf>) -> Result<RunConfig, OrchestratorError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_process_env()?;
    if let Some(s) = store {
        cfg.store = s.clone();
    }
    Ok(cfg)
}

fn print_outcome(kind: &str, o: &RunOutcome) {
    println!("{kind} {}: {} ok, {} failed", o.run_id, o.ok.len(), o.failed.len());
    for (id, why) in &o.failed {
        eprintln!("  {id}: {why}");
    }
    if let Some(d) = &o.report_dir {
        println!("report: {}", d.display());
    }
}

fn run(cli: Cli) -> Result<i32, OrchestratorError> {
    match cli.command {
        Command::Synthesize {
            config,
            tasks,
            workers,
            seed,
            run_id,
        } => {
            let mut cfg = load_config(Some(&config), None)?;
            if let Some(t) = tasks {
                cfg.tasks = t;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let o = Orchestrator::new(cfg)?.synthesize(run_id.as_deref())?;
            print_outcome("synthesis", &o);
            Ok(o.exit_code())
        }
        Command::EvalRobust {
            config,
            agent,
            runs,
            tasks,
            workers,
            run_id,
        } => {
            let mut cfg = load_config(Some(&config), None)?;
            if let Some(t) = tasks {
                cfg.tasks = t;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let o = Orchestrator::new(cfg)?.evaluate(&agent, runs, run_id.as_deref())?;
            print_outcome("evaluation", &o);
            Ok(o.exit_code())
        }
        Command::Dataset {
            command:
                DatasetCommand::Build {
                    lambda_ref,
                    total,
                    seed,
                    name,
                    tasks,
                    common,
                },
        } => {
            let mut cfg = load_config(common.config.as_ref(), common.store.as_ref())?;
            if let Some(l) = lambda_ref {
                cfg.pipeline.lambda_ref = l;
            }
            if total.is_some() {
                cfg.pipeline.total = total;
            }
            if let Some(s) = seed {
                cfg.pipeline.seed = s;
            }
            if let Some(t) = tasks {
                cfg.tasks = t;
            }
            let orch = Orchestrator::new(cfg)?;
            let (o, m) = orch.build_dataset(&name)?;
            print_outcome("dataset", &o);
            println!(
                "{}: {} records ({} reflective), sha256 {}",
                orch.store().dataset_dir(&name).join("train.jsonl").display(),
                m.records,
                m.stages.mixed_ref,
                m.sha256
            );
            Ok(o.exit_code())
        }
        Command::Report { run_id, common } => {
            let cfg = load_config(common.config.as_ref(), common.store.as_ref())?;
            let text = Orchestrator::new(cfg)?.report(&run_id)?;
            print!("{text}");
            Ok(0)
        }
        Command::Tasks {
            command:
                TasksCommand::Generate {
                    count,
                    seed,
                    stochasticity,
                    common,
                },
        } => {
            let mut cfg = load_config(common.config.as_ref(), common.store.as_ref())?;
            if let Some(c) = count {
                cfg.generate.count = c;
            }
            if let Some(s) = seed {
                cfg.generate.seed = s;
            }
            if let Some(s) = stochasticity {
                cfg.generate.stochasticity = s;
            }
            let orch = Orchestrator::new(cfg)?;
            let ids = orch.generate_tasks()?;
            println!("generated {} tasks under {}", ids.len(), orch.store().tasks_dir().display());
            Ok(0)
        }
        Command::Cases {
            command: CasesCommand::Build { tasks, common },
        } => {
            let mut cfg = load_config(common.config.as_ref(), common.store.as_ref())?;
            if let Some(t) = tasks {
                cfg.tasks = t;
            }
            let index = Orchestrator::new(cfg)?.build_cases()?;
            println!("{} cases, {} skipped cuts", index.cases.len(), index.skips.len());
            for (id, why) in &index.failed {
                eprintln!("  {id}: {why}");
            }
            Ok(if index.failed.is_empty() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

//! `pipetune` CLI: simulate pipelines, compute oracle allocations, pretrain
//! and fine-tune the RL agent, and run benchmark studies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pipetune::agent::save_checkpoint;
use pipetune::alloc::{alloc_even, alloc_greedy_true, alloc_oracle_bruteforce, run_allocator};
use pipetune::config::{load_config, ExperimentConfig, PolicyConfig};
use pipetune::error::Error;
use pipetune::harness::{
    expand_comparison, pretrain_agent, run_comparison, run_experiment, scaling_study_batch,
    scaling_study_complexity, scaling_study_cpus, write_curve, write_experiment_output,
    StudyOptions, StudyTable,
};
use pipetune::model::pipeline_throughput;

#[derive(Parser)]
#[command(
    name = "pipetune",
    version,
    about = "Staged ingestion-pipeline simulator with an RL resource allocator",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (PIPETUNE_OUT overrides this flag).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's step count.
    #[arg(long, global = true)]
    steps: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleMethod {
    /// Brute force when the guard allows, greedy-true otherwise.
    Auto,
    Brute,
    Greedy,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    Complexity,
    Cpus,
    Batch,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// One-shot throughput report for the configured allocation.
    Simulate,
    /// Best allocation from the brute-force or greedy-true oracle.
    Oracle {
        #[arg(long, value_enum, default_value_t = OracleMethod::Auto)]
        method: OracleMethod,
    },
    /// Offline agent training over randomized environments; writes a
    /// checkpoint and the training curve.
    Pretrain,
    /// Online run with the agent fine-tuning live.
    Tune,
    /// Scaling studies (pipeline complexity, machine size, batch size).
    Bench {
        #[arg(long, value_enum, default_value_t = Study::All)]
        study: Study,
        /// Directory with agent_r<r>.json checkpoints to warm-start from.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Run the configured policy against the standard baselines (or against
    /// explicitly given configs).
    Compare {
        /// Additional experiment configs to compare against.
        #[arg(long = "with")]
        with: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap already formats usage text; unknown flags/subcommands are
            // validation errors.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::NonFiniteLoss { .. } => 2,
        _ => 1,
    }
}

fn required_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["--config PATH is required".into()]))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(steps) = cli.steps {
        cfg.steps = steps;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Ok(out) = std::env::var("PIPETUNE_OUT") {
        if !out.is_empty() {
            cfg.out_dir = out;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Oracle { method } => oracle(&cli, *method),
        Command::Pretrain => pretrain(&cli),
        Command::Tune => tune(&cli),
        Command::Bench {
            study,
            checkpoint_dir,
        } => bench(&cli, *study, checkpoint_dir.clone()),
        Command::Compare { with } => compare(&cli, with),
    }
}

fn simulate(cli: &Cli) -> Result<(), Error> {
    let cfg = required_config(cli)?;
    let alloc = match (&cfg.allocation, &cfg.policy) {
        (Some(alloc), _) => alloc.clone(),
        (None, PolicyConfig::Allocator(a)) => run_allocator(
            a.kind,
            &cfg.pipeline,
            &cfg.machine,
            &cfg.workload,
            &a.bias,
        )?,
        (None, PolicyConfig::Agent(_)) => alloc_even(&cfg.pipeline, cfg.machine.total_cpus)?,
    };
    let report = pipeline_throughput(&cfg.pipeline, &alloc, &cfg.machine, &cfg.workload, cli.seed)?;
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Csv => {
            println!("pipeline_rate,achieved_rate,bottleneck_stage,mem_used_mb,oom");
            println!(
                "{},{},{},{},{}",
                report.pipeline_rate,
                report.achieved_rate,
                report.bottleneck_stage,
                report.mem_used_mb,
                report.oom
            );
        }
    }
    Ok(())
}

fn oracle(cli: &Cli, method: OracleMethod) -> Result<(), Error> {
    let cfg = required_config(cli)?;
    let (alloc, rate, used) = match method {
        OracleMethod::Brute => {
            let (a, r) =
                alloc_oracle_bruteforce(&cfg.pipeline, &cfg.machine, &cfg.workload, None)?;
            (a, r, "brute_force")
        }
        OracleMethod::Greedy => {
            let a = alloc_greedy_true(&cfg.pipeline, &cfg.machine, &cfg.workload)?;
            let r = pipeline_throughput(&cfg.pipeline, &a, &cfg.machine, &cfg.workload, None)?
                .achieved_rate;
            (a, r, "greedy_true")
        }
        OracleMethod::Auto => {
            match alloc_oracle_bruteforce(&cfg.pipeline, &cfg.machine, &cfg.workload, None) {
                Ok((a, r)) => (a, r, "brute_force"),
                Err(Error::SpaceTooLarge { .. }) => {
                    let a = alloc_greedy_true(&cfg.pipeline, &cfg.machine, &cfg.workload)?;
                    let r =
                        pipeline_throughput(&cfg.pipeline, &a, &cfg.machine, &cfg.workload, None)?
                            .achieved_rate;
                    (a, r, "greedy_true")
                }
                Err(e) => return Err(e),
            }
        }
    };
    match cli.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "method": used,
                "allocation": alloc,
                "achieved_rate": rate,
            }))?
        ),
        Format::Csv => {
            println!("method,cpus,prefetch_units,achieved_rate");
            let cpus = alloc
                .cpus
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("|");
            println!("{used},{cpus},{},{rate}", alloc.prefetch_units);
        }
    }
    Ok(())
}

fn pretrain(cli: &Cli) -> Result<(), Error> {
    let cfg = required_config(cli)?;
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let (params, curve) = pretrain_agent(&cfg, cfg.steps, seed)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(cfg.out_dir.clone(), e))?;
    let r = cfg.pipeline.knobs();
    let ckpt = out_dir.join(format!("agent_r{r}.json"));
    save_checkpoint(&ckpt, &params, &cfg.hyper, r)?;
    let curve_path = write_curve(&curve, &out_dir)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "checkpoint": ckpt.display().to_string(),
            "curve": curve_path.display().to_string(),
            "episodes": curve.len(),
            "steps": cfg.steps,
        }))?
    );
    Ok(())
}

fn tune(cli: &Cli) -> Result<(), Error> {
    let mut cfg = required_config(cli)?;
    cfg.policy = PolicyConfig::Agent(Default::default());
    let output = run_experiment(&cfg)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    let paths = write_experiment_output(&output, &out_dir)?;
    let summaries: Vec<_> = output.runs.iter().map(|r| &r.summary).collect();
    println!("{}", serde_json::to_string_pretty(&summaries)?);
    eprintln!(
        "wrote {} files under {}",
        paths.len(),
        out_dir.display()
    );
    Ok(())
}

fn write_study(table: &StudyTable, out_dir: &Path) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join(format!("study_{}.csv", table.study));
    std::fs::write(&path, table.to_csv())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn bench(cli: &Cli, study: Study, checkpoint_dir: Option<PathBuf>) -> Result<(), Error> {
    let cfg = required_config(cli)?;
    let opts = StudyOptions {
        steps: cfg.steps,
        seeds: cfg.seeds.clone(),
        checkpoint_dir,
    };
    let out_dir = PathBuf::from(&cfg.out_dir);
    let mut tables = Vec::new();
    if matches!(study, Study::Complexity | Study::All) {
        tables.push(scaling_study_complexity(&cfg, &opts)?);
    }
    if matches!(study, Study::Cpus | Study::All) {
        tables.push(scaling_study_cpus(&cfg, &opts)?);
    }
    if matches!(study, Study::Batch | Study::All) {
        tables.push(scaling_study_batch(&cfg, &opts)?);
    }
    for table in &tables {
        let path = write_study(table, &out_dir)?;
        eprintln!("wrote {}", path.display());
        print!("{}", table.to_csv());
    }
    Ok(())
}

fn compare(cli: &Cli, with: &[PathBuf]) -> Result<(), Error> {
    let base = required_config(cli)?;
    let configs: Vec<ExperimentConfig> = if with.is_empty() {
        expand_comparison(&base)
    } else {
        let mut configs = vec![base.clone()];
        for path in with {
            let mut cfg = load_config(path)?;
            if let Some(steps) = cli.steps {
                cfg.steps = steps;
            }
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            configs.push(cfg);
        }
        configs
    };
    let (table, _outputs) = run_comparison(&configs)?;
    let out_dir = PathBuf::from(&base.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(base.out_dir.clone(), e))?;
    let path = out_dir.join("comparison.csv");
    std::fs::write(&path, table.to_csv())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&table)?),
        Format::Csv => print!("{}", table.to_csv()),
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

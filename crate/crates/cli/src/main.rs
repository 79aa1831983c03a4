//! Command-line front end: train, eval, compare, report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grpolab_core::clip::ClipMode;
use grpolab_core::config::{RunConfig, DEFAULT_SEEDS};
use grpolab_core::metrics::evaluate_policy;
use grpolab_core::policy::PolicyParams;
use grpolab_core::report::{comparison_summary_text, write_comparison, write_run_csvs};
use grpolab_core::trainer::{compare_runs, train};
use grpolab_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "grpolab",
    about = "Desk-scale laboratory for clipped policy-gradient objectives (PPO/GRPO/ABC)",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed from a TOML run config.
    Train {
        /// Run config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list (overrides the config's seeds).
        #[arg(long)]
        seeds: Option<String>,
        /// Force the clip mode regardless of the config ("grpo" or "abc").
        #[arg(long)]
        mode_override: Option<String>,
    },
    /// Evaluate a policy checkpoint on a config's task and eval settings.
    Eval {
        /// Run config file supplying the task and eval settings.
        #[arg(long)]
        config: PathBuf,
        /// Policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for eval_report.csv / eval_report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the held-out prompt and sampling streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run two configs across shared seeds and write paired series.
    Compare {
        /// Baseline run config.
        config_a: PathBuf,
        /// Treatment run config.
        config_b: PathBuf,
        /// Comma-separated seed list.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory for the comparison files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot-ready CSVs from a finished run directory.
    Report {
        /// Run directory containing telemetry.jsonl.
        run_dir: PathBuf,
        /// Output directory (defaults to <run_dir>/plots).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
enum Failure {
    Config(String),
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "config error: {msg}"),
            Failure::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Config(msg) => Failure::Config(msg),
            other => Failure::Runtime(format!("{other}")),
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| match e {
        CoreError::Io(io) => Failure::Config(format!("{}: {io}", path.display())),
        CoreError::Config(msg) => Failure::Config(format!("{}: {msg}", path.display())),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })
}

fn parse_seeds(arg: &str) -> Result<Vec<u64>, Failure> {
    let seeds: Result<Vec<u64>, _> = arg
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect();
    let seeds = seeds.map_err(|e| Failure::Config(format!("bad --seeds list \"{arg}\": {e}")))?;
    if seeds.is_empty() {
        return Err(Failure::Config("--seeds list is empty".into()));
    }
    Ok(seeds)
}

fn parse_mode(arg: &str) -> Result<ClipMode, Failure> {
    match arg.to_ascii_lowercase().as_str() {
        "grpo" => Ok(ClipMode::Grpo),
        "abc" => Ok(ClipMode::Abc),
        other => Err(Failure::Config(format!(
            "bad --mode-override \"{other}\" (expected \"grpo\" or \"abc\")"
        ))),
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("GRPOLAB_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn default_out_dir(config_path: &Path, config: &RunConfig) -> PathBuf {
    if let Some(dir) = &config.out_dir {
        return PathBuf::from(dir);
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    out_root().join(stem)
}

fn cmd_train(
    config_path: &Path,
    out: Option<PathBuf>,
    seeds_arg: Option<String>,
    mode_arg: Option<String>,
) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let seeds = match seeds_arg {
        Some(arg) => parse_seeds(&arg)?,
        None => config.seeds(),
    };
    let mode_override = mode_arg.map(|m| parse_mode(&m)).transpose()?;
    let out_dir = out.unwrap_or_else(|| default_out_dir(config_path, &config));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::copy(config_path, out_dir.join("run_config.toml"))
        .map_err(|e| Failure::Runtime(format!("cannot copy config: {e}")))?;
    for seed in seeds {
        let mut train_config = config.train_config(seed);
        if let Some(mode) = mode_override {
            train_config.mode = mode;
        }
        train_config.validate().map_err(Failure::from)?;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        let artifacts = train(&train_config, Some(&seed_dir))?;
        let final_reward = artifacts
            .report
            .final_mean_reward
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "seed {seed}: {} steps, final mean reward {final_reward} -> {}",
            train_config.steps,
            seed_dir.display()
        );
    }
    println!("run artifacts under {}", out_dir.display());
    Ok(())
}

fn cmd_eval(
    config_path: &Path,
    checkpoint: &Path,
    out: Option<PathBuf>,
    seed: u64,
) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let train_config = config.train_config(seed);
    let task = train_config.task.build()?;
    let policy = PolicyParams::load_checkpoint(checkpoint)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", checkpoint.display())))?;
    if policy.config().vocab_size != task.vocab_size() {
        return Err(Failure::Runtime(format!(
            "checkpoint vocab {} does not match task vocab {}",
            policy.config().vocab_size,
            task.vocab_size()
        )));
    }
    let eval = &train_config.eval;
    let mut rng = grpolab_core::testkit::test_rng(seed ^ 0xE7A1);
    let report = evaluate_policy(
        &policy.snapshot(),
        &task,
        eval.problems,
        eval.samples,
        &eval.ks,
        &mut rng,
    )?;

    let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut header = String::from("problem_count,n,avg_at_n");
    let mut row = format!("{},{},{}", report.problems, report.n, report.avg_at_n);
    for (k, v) in &report.pass_at_k {
        header.push_str(&format!(",pass@{k}"));
        row.push_str(&format!(",{v}"));
    }
    std::fs::write(
        out_dir.join("eval_report.csv"),
        format!("{header}\n{row}\n"),
    )
    .map_err(|e| Failure::Runtime(format!("{e}")))?;
    let metadata = serde_json::json!({
        "task": task.name(),
        "checkpoint": checkpoint.display().to_string(),
        "policy_version": policy.version(),
        "seed": seed,
        "estimator": "unbiased combinatorial pass@k (1 - C(n-c,k)/C(n,k))",
        "report": report,
    });
    std::fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&metadata).map_err(|e| Failure::Runtime(format!("{e}")))?,
    )
    .map_err(|e| Failure::Runtime(format!("{e}")))?;
    println!(
        "avg@{} = {:.4} over {} problems -> {}",
        report.n,
        report.avg_at_n,
        report.problems,
        out_dir.join("eval_report.csv").display()
    );
    Ok(())
}

fn cmd_compare(
    config_a_path: &Path,
    config_b_path: &Path,
    seeds_arg: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let config_a = load_config(config_a_path)?;
    let config_b = load_config(config_b_path)?;
    let mut defaulted_seeds = false;
    let seeds = match seeds_arg {
        Some(arg) => parse_seeds(&arg)?,
        None => {
            if config_a.used_default_seeds() {
                defaulted_seeds = true;
                DEFAULT_SEEDS.to_vec()
            } else {
                config_a.seeds()
            }
        }
    };
    let a = config_a.train_config(seeds[0]);
    let b = config_b.train_config(seeds[0]);
    let report = compare_runs(&a, &b, &seeds)?;
    let out_dir = out.unwrap_or_else(|| {
        let stem_a = config_a_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "a".into());
        let stem_b = config_b_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "b".into());
        out_root().join(format!("compare_{stem_a}_vs_{stem_b}"))
    });
    write_comparison(&report, &out_dir)?;
    if defaulted_seeds {
        let summary_path = out_dir.join("summary.txt");
        let mut body = std::fs::read_to_string(&summary_path)
            .map_err(|e| Failure::Runtime(format!("{e}")))?;
        body.push_str("note: no seed list provided; defaulted to seeds 1-5\n");
        std::fs::write(&summary_path, &body).map_err(|e| Failure::Runtime(format!("{e}")))?;
    }
    print!("{}", comparison_summary_text(&report));
    if defaulted_seeds {
        println!("note: no seed list provided; defaulted to seeds 1-5");
    }
    println!("comparison files under {}", out_dir.display());
    Ok(())
}

fn cmd_report(run_dir: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let out_dir = out.unwrap_or_else(|| run_dir.join("plots"));
    write_run_csvs(run_dir, &out_dir)?;
    println!("plot data under {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seeds,
            mode_override,
        } => cmd_train(&config, out, seeds, mode_override),
        Command::Eval {
            config,
            checkpoint,
            out,
            seed,
        } => cmd_eval(&config, &checkpoint, out, seed),
        Command::Compare {
            config_a,
            config_b,
            seeds,
            out,
        } => cmd_compare(&config_a, &config_b, seeds, out),
        Command::Report { run_dir, out } => cmd_report(&run_dir, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.code())
        }
    }
}

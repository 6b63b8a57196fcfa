use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use oneq::scenario::{
    block_plan_csv, load_file, parse_document, qkd_plan, read_file, replication_seed, run, sweep, ScenarioError,
};

/// Discrete-event simulator for integrated classical and quantum cellular
/// access networks.
#[derive(Debug, Parser)]
#[command(name = "oneq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file against the schema.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario and write metrics.csv, trace.jsonl and summary.json.
    Run(RunArgs),
    /// Run a scenario over a grid of values for one numeric parameter.
    Sweep(SweepArgs),
    /// Print closed-form success tables.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario duration, in seconds.
    #[arg(long)]
    until: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Exit with status 3 if any application failed hard.
    #[arg(long)]
    strict: bool,
    /// Independent replications, written to rep-<i>/ under --out.
    #[arg(long, default_value_t = 1)]
    replications: u32,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Parameter path such as `quantum_links[0].w0`.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    replications: u32,
    /// Base seed for the replication seeds; defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for sweep.csv; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long, default_value_t = 0.0)]
    p_err_q: f64,
    #[arg(long, default_value_t = 0.0)]
    p_err_c: f64,
    #[arg(long, default_value_t = 10)]
    k_max: u32,
    /// Adds one row per QKD application of this scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    p_deliver: f64,
    /// Directory for plan.csv and qkd_plan.csv; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ONEQ_LOG", "error")).format_timestamp(None).init();
}

fn validate(path: &Path) -> Result<ExitCode> {
    match load_file(path) {
        Ok(_) => {
            println!("ok: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ (ScenarioError::Invalid(_) | ScenarioError::Parse(_))) => {
            eprintln!("{}: {e}", path.display());
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_cmd(args: &RunArgs) -> Result<ExitCode> {
    if args.replications == 0 {
        bail!("--replications must be at least 1");
    }
    if let Some(u) = args.until {
        if !(u >= 0.0 && u.is_finite()) {
            bail!("--until must be a nonnegative number of seconds");
        }
    }
    let cfg = load_file(&args.scenario)?;
    let mut failures = 0;
    for r in 0..args.replications {
        let (seed, dir, run_id) = if args.replications == 1 {
            (args.seed.unwrap_or(cfg.seed), args.out.clone(), cfg.name.clone())
        } else {
            let base = args.seed.unwrap_or(cfg.seed);
            (replication_seed(base, r), args.out.join(format!("rep-{r}")), format!("{}#{r}", cfg.name))
        };
        let out = run(&cfg, Some(seed), args.until, &run_id);
        out.write_to(&dir).with_context(|| format!("writing outputs to {}", dir.display()))?;
        log::info!("wrote {}", dir.display());
        println!(
            "{run_id}: seed {seed}, {} trace records, {} app invocations, {} hard failures -> {}",
            out.trace.len(),
            out.apps.len(),
            out.hard_failures(),
            dir.display()
        );
        failures += out.hard_failures();
    }
    Ok(if args.strict && failures > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn sweep_cmd(args: &SweepArgs) -> Result<ExitCode> {
    let doc = parse_document(&read_file(&args.scenario)?)?;
    let result = sweep(&doc, &args.param, &args.values, args.replications, args.seed)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("sweep.csv");
            result.write_csv(fs::File::create(&path)?)?;
            println!("{} runs -> {}", result.rows.len(), path.display());
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    let failures: usize = result.rows.iter().map(|r| r.hard_failures).sum();
    Ok(if args.strict && failures > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn plan_cmd(args: &PlanArgs) -> Result<ExitCode> {
    let blocks = block_plan_csv(args.p_err_q, args.p_err_c, args.k_max)?;
    let qkd = match &args.scenario {
        Some(path) => {
            let cfg = load_file(path)?;
            let mut text = String::from("app,n_pairs,k_target,p_deliver,p_success\n");
            for r in qkd_plan(&cfg, args.p_deliver)? {
                text.push_str(&format!("{},{},{},{},{}\n", r.app, r.n_pairs, r.k_target, r.p_deliver, r.p_success));
            }
            Some(text)
        }
        None => None,
    };
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("plan.csv"), &blocks)?;
            if let Some(q) = &qkd {
                fs::write(dir.join("qkd_plan.csv"), q)?;
            }
            println!("plan tables -> {}", dir.display());
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(blocks.as_bytes())?;
            if let Some(q) = &qkd {
                out.write_all(b"\n")?;
                out.write_all(q.as_bytes())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { scenario } => validate(scenario),
        Command::Run(args) => run_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Plan(args) => plan_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selab::agents::validate_schedules;
use selab::harness::{self, ExperimentConfig, Method, DEFAULT_SWEEP};
use selab::{env, Error, Result};

#[derive(Parser)]
#[command(name = "selab", version, about = "State-entropy regularized policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seeds as `a..b` (inclusive) or a comma list; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads for the seed fan-out.
    #[arg(long, env = "SELAB_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config.
    Run(Common),
    /// Run every seed once per lambda, with the lambda = 0 baseline included.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Run a config whose method is exact policy gradient.
    ExactPg(Common),
    /// Print the exact discounted and stationary distributions and entropies.
    EvalDist {
        #[arg(long)]
        config: PathBuf,
        /// Policy checkpoint; the uniform policy when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check the config schema and the learning-rate schedules only.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = harness::parse_seeds(seeds)?;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn report(summary: &harness::RunSummary, out: &Path) -> Result<ExitCode> {
    println!("{}", serde_json::to_string_pretty(summary)?);
    eprintln!("wrote {}", out.join("summary.json").display());
    Ok(if summary.failed() {
        for s in summary.seeds.iter().filter(|s| s.failure.is_some()) {
            eprintln!("seed {} failed: {}", s.seed, s.failure.as_deref().unwrap_or(""));
        }
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let summary = harness::run(&cfg, common.workers)?;
            report(&summary, &cfg.output_dir)
        }
        Command::ExactPg(common) => {
            let cfg = load(&common)?;
            if !matches!(cfg.method, Method::ExactPg(_)) {
                return Err(Error::Config(vec!["method.type: exact-pg needs `exact_pg`".into()]));
            }
            let summary = harness::run(&cfg, common.workers)?;
            report(&summary, &cfg.output_dir)
        }
        Command::Sweep { common, lambdas } => {
            let cfg = load(&common)?;
            let lambdas = lambdas.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            let summary = harness::sweep(&cfg, &lambdas, common.workers)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            let failed = summary.runs.iter().any(|(_, s)| s.failed());
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::EvalDist { config, checkpoint } => {
            let cfg = ExperimentConfig::load(&config)?;
            let environment = env::build(&cfg.env)?;
            let policy = match checkpoint {
                Some(path) => harness::load_policy(&path, &environment)?,
                None => selab::mdp::SoftmaxPolicy::zeros(environment.fmap.n_features(), environment.mdp.n_actions()),
            };
            let dist = harness::eval_dist(&environment, &policy)?;
            println!("{}", serde_json::to_string_pretty(&dist)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            if let Method::Train(tc) = &cfg.method {
                let s = &tc.schedules;
                validate_schedules(&s.a, &s.b, &s.c).into_result()?;
            }
            println!("ok {}", cfg.hash());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Error::Config(problems)) => {
            eprintln!("invalid config:");
            for p in problems {
                eprintln!("  {p}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

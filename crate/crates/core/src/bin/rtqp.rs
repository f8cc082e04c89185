use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rtqp::harness::{
    run_attack, run_scenario, selftest, write_attack_outputs, AnchorPolicy, AttackOptions, EpisodeLog, HarnessError,
    KSelection, Scenario, ScenarioConfig,
};

#[derive(Parser)]
#[command(name = "rtqp", about = "Encrypted MPC episodes and attacks on them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Setpoint,
    Tracking,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "setpoint")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 21)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    permute: bool,
    /// JSON scenario config; overrides the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AttackArgs {
    /// `zero`, `oracle`, or a comma-separated vector.
    #[arg(long, default_value = "zero")]
    anchor: String,
    /// Use the constant-v set containing this step instead of the largest.
    #[arg(long)]
    containing: Option<usize>,
    /// For permuted logs: take the true permutation of this step as known.
    #[arg(long, default_value_t = 0)]
    known_perm_step: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop episode and write its log.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Attack a logged episode.
    Attack {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate, then attack.
    Full {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Property checks on random instances.
    Selftest {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn scenario_config(args: &ScenarioArgs, out: &Path) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => {
            let scenario = match args.scenario {
                ScenarioArg::Setpoint => Scenario::Setpoint,
                ScenarioArg::Tracking => Scenario::tracking(),
            };
            let mut cfg = ScenarioConfig::new(scenario, args.steps, args.seed);
            cfg.permute = args.permute;
            cfg
        }
    };
    cfg.output_dir = Some(out.to_path_buf());
    Ok(cfg)
}

fn attack_options(args: &AttackArgs, log: &EpisodeLog) -> Result<AttackOptions, HarnessError> {
    let anchor = match args.anchor.as_str() {
        "zero" => AnchorPolicy::Zero,
        "oracle" => AnchorPolicy::Oracle,
        list => AnchorPolicy::Custom(
            list.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Config(format!("bad anchor '{list}': {e}")))?,
        ),
    };
    let reference_perm = log
        .records
        .iter()
        .find(|r| r.k == args.known_perm_step)
        .and_then(|r| r.key.perm.clone())
        .map(|p| (args.known_perm_step, p));
    Ok(AttackOptions {
        anchor,
        k_selection: args.containing.map_or(KSelection::Largest, KSelection::Containing),
        reference_perm,
        ..Default::default()
    })
}

fn attack(log: &EpisodeLog, args: &AttackArgs, out: &Path) -> Result<(), HarnessError> {
    let report = run_attack(log, &attack_options(args, log)?)?;
    for f in write_attack_outputs(&report, out)? {
        println!("wrote {}", f.display());
    }
    let m = &report.metrics;
    println!(
        "K = {:?}, anchor step {}, max |input error| = {:.3e}, offset = {:?}",
        m.k_used, m.anchor_step, m.max_abs_error, m.offset
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let (_, files) = run_scenario(&scenario_config(&scenario, &out)?)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Attack {
            input,
            attack: args,
            out,
        } => attack(&EpisodeLog::load(&input)?, &args, &out)?,
        Command::Full {
            scenario,
            attack: args,
            out,
        } => {
            let (log, files) = run_scenario(&scenario_config(&scenario, &out)?)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            attack(&log, &args, &out)?;
        }
        Command::Selftest { instances, seed } => {
            let report = selftest(instances, seed);
            for c in &report.checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                println!("{tag} {:<45} worst {:.3e} (tol {:.0e})", c.name, c.worst, c.tolerance);
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

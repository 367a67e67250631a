//! `dfl`: command-line front end for the deadline-based FL toolkit.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deadline_fl::engine::{
    run_training, AgeWeighting, LearningRate, SchemeKind, TrainingOptions, Trajectory,
};
use deadline_fl::experiments::{bound_schedule, build_problem, replication_seeds, standard_params};
use deadline_fl::hyperopt::{recommend_deadline_with, CostWeights, SearchBounds};
use deadline_fl::partition::PartitionKind;
use deadline_fl::scenario::{run_scenario, ScenarioConfig};
use deadline_fl::sim::{run_timing_replications, SimOptions, TimingReport};
use deadline_fl::validate::{validate_all, Scale, ValidateOptions};
use deadline_fl::{RoundModel, SystemConfig};

#[derive(Parser)]
#[command(
    name = "dfl",
    version,
    about = "Cost, age and convergence tools for deadline-based federated learning"
)]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args, Clone, Copy)]
struct SystemArgs {
    /// Number of clients.
    #[arg(short = 'n', long, default_value_t = 100)]
    clients: u32,
    /// Minimum learners per successful round.
    #[arg(short = 'm', long, default_value_t = 1)]
    min_learners: u32,
    /// Round deadline.
    #[arg(short = 't', long, default_value_t = 0.5)]
    deadline: f64,
    /// Exponential response rate.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

impl SystemArgs {
    fn config(&self) -> deadline_fl::Result<SystemConfig> {
        SystemConfig::new(self.clients, self.min_learners, self.deadline, self.lambda)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Mcu,
    Awu,
    Agu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Partition {
    Iid,
    NoniidClasses,
    Biased,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form cost and age metrics for one configuration.
    Metrics(SystemArgs),
    /// Monte Carlo timing simulation.
    Simulate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
        #[arg(long, default_value_t = 1)]
        replications: usize,
    },
    /// Train on a synthetic quadratic problem and print the trajectory.
    Train {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = Scheme::Mcu)]
        scheme: Scheme,
        #[arg(long, value_enum, default_value_t = Partition::NoniidClasses)]
        partition: Partition,
        /// Share of always-responding clients (biased partition).
        #[arg(long, default_value_t = 0.3)]
        biased_fraction: f64,
        #[arg(long, default_value_t = 2000)]
        rounds: u64,
        /// Fixed step; omit to use the decaying schedule.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Recommend a deadline for the single-learner scheme.
    Tune {
        #[arg(short = 'n', long, default_value_t = 100)]
        clients: u32,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 20.0)]
        alpha_w: f64,
        #[arg(long, default_value_t = 100.0)]
        alpha_b: f64,
    },
    /// Run the full self-check suite; exits nonzero if any check fails.
    Validate {
        /// Shorter runs for a smoke test.
        #[arg(long)]
        quick: bool,
    },
    /// Run a scenario described by a TOML file.
    Scenario { file: PathBuf },
}

fn metrics_csv(cfg: SystemConfig) -> anyhow::Result<String> {
    let model = RoundModel::new(cfg)?;
    let fmt = |r: deadline_fl::Result<f64>| match r {
        Ok(v) => v.to_string(),
        Err(_) => "inf".to_string(),
    };
    let mut out = String::from("metric,value\n");
    for (name, value) in [
        ("response_prob", model.p().to_string()),
        ("success_prob", model.success_prob().to_string()),
        ("participation_prob", model.participation_prob().to_string()),
        ("resource_wastage", fmt(model.expected_resource_wastage())),
        ("comm_cost", fmt(model.expected_comm_cost())),
        ("age", fmt(model.expected_age())),
        ("s_tilde", model.s_tilde().to_string()),
        ("g_of_m", model.g_of_m().to_string()),
    ] {
        out.push_str(&format!("{name},{value}\n"));
    }
    Ok(out)
}

fn simulate_csv(cfg: SystemConfig, rounds: u64, reps: usize, seed: u64) -> anyhow::Result<String> {
    if reps == 0 {
        bail!("--replications must be at least 1");
    }
    let reports = run_timing_replications(
        &cfg,
        rounds,
        &replication_seeds(seed, reps),
        &SimOptions::default(),
    )?;
    let mut out = format!("{}\n", TimingReport::CSV_HEADER);
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn train_csv(
    cfg: SystemConfig,
    scheme: Scheme,
    partition: Partition,
    biased_fraction: f64,
    rounds: u64,
    eta: Option<f64>,
    seed: u64,
) -> anyhow::Result<String> {
    let kind = match partition {
        Partition::Iid => PartitionKind::Iid,
        Partition::NoniidClasses => PartitionKind::NoniidClasses,
        Partition::Biased => PartitionKind::Biased,
    };
    let params = deadline_fl::partition::PartitionParams {
        n_clients: cfg.n_clients as usize,
        biased_fraction: if matches!(partition, Partition::Biased) {
            biased_fraction
        } else {
            0.0
        },
        ..standard_params()
    };
    let spec = build_problem(kind, &params, seed)?;
    let opts = match eta {
        Some(e) => TrainingOptions::new(LearningRate::Fixed(e)),
        None => bound_schedule(&cfg, &spec)?,
    };
    let scheme = match scheme {
        Scheme::Mcu => SchemeKind::Mcu,
        Scheme::Awu => SchemeKind::Awu(AgeWeighting::default()),
        Scheme::Agu => SchemeKind::Agu,
    };
    let traj: Trajectory = run_training(&spec, &cfg, scheme, rounds, seed, &opts)?;
    Ok(traj.to_csv())
}

fn run(cli: Cli) -> anyhow::Result<(String, bool)> {
    let Format::Csv = cli.format;
    let seed = cli.seed;
    let ok = |s: String| Ok((s, true));
    match cli.command {
        Command::Metrics(sys) => ok(metrics_csv(sys.config()?)?),
        Command::Simulate {
            system,
            rounds,
            replications,
        } => ok(simulate_csv(system.config()?, rounds, replications, seed)?),
        Command::Train {
            system,
            scheme,
            partition,
            biased_fraction,
            rounds,
            eta,
        } => ok(train_csv(
            system.config()?,
            scheme,
            partition,
            biased_fraction,
            rounds,
            eta,
            seed,
        )?),
        Command::Tune {
            clients,
            lambda,
            alpha_w,
            alpha_b,
        } => {
            let w = CostWeights::new(alpha_w, alpha_b)?;
            let rec = recommend_deadline_with(clients, lambda, &w, &SearchBounds::default())?;
            ok(format!(
                "x_star,t_star,j_star\n{},{},{}\n",
                rec.x_star, rec.t_star, rec.at_optimum.j_value
            ))
        }
        Command::Validate { quick } => {
            let opts = ValidateOptions {
                seed,
                scale: if quick { Scale::Quick } else { Scale::Full },
                mutate_wastage: false,
            };
            let report = validate_all(&opts);
            Ok((report.to_csv(), report.all_passed()))
        }
        Command::Scenario { file } => {
            let cfg = ScenarioConfig::load(&file)?;
            let report = run_scenario(&cfg)?;
            if cli.out.is_none() {
                if let Some(path) = &cfg.output {
                    std::fs::write(path, report.to_csv())
                        .with_context(|| format!("writing {}", path.display()))?;
                    return Ok((String::new(), true));
                }
            }
            ok(report.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.clone();
    let result = run(cli).and_then(|(text, passed)| {
        match &out {
            Some(path) => std::fs::write(path, &text)
                .with_context(|| format!("writing {}", path.display()))?,
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(passed)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

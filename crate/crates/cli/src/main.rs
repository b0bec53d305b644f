//! Command-line front end of the platoon EDCA engine.

mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use platoonx::metrics::HiddenFormula;
use platoonx::scenario::SeSource;
use run::{Mode, RunError, RunSpec, Stage, Target};

#[derive(Debug, Parser)]
#[command(
    name = "platoonx",
    version,
    about = "802.11p EDCA delay and delivery of platoons at a signalised intersection"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// What to run when no subcommand is given.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Movement, hearing network, EDCA fixed point, queue dynamics and metrics.
    Analyze(RunArgs),
    /// Movement, hearing network and the slot-level MAC simulator.
    Simulate(RunArgs),
    /// Both, plus a per-AC agreement table.
    Compare(RunArgs),
    /// Movement only.
    Trajectory(RunArgs),
    /// Repeat the run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Analyze,
    Simulate,
    Compare,
    Trajectory,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HiddenArg {
    Standard,
    Printed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SeArg {
    Equation,
    Table,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `k,i` (1-based platoon and vehicle) or `all`.
    #[arg(long, default_value = "1,1")]
    target: Target,
    #[arg(long, default_value_t = 30)]
    replications: usize,
    /// Overrides the scenario's `run.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "standard")]
    hidden_formula: HiddenArg,
    #[arg(long, value_enum)]
    se_source: Option<SeArg>,
    /// Write the simulator event log of the first replication.
    #[arg(long)]
    events: bool,
    /// Write per-pair reception probabilities.
    #[arg(long)]
    pairs: bool,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Analyze => Mode::Analyze,
            ModeArg::Simulate => Mode::Simulate,
            ModeArg::Compare => Mode::Compare,
            ModeArg::Trajectory => Mode::Trajectory,
        }
    }
}

fn spec_from(mode: Mode, args: &RunArgs) -> Result<RunSpec, RunError> {
    let path = args.scenario.clone().ok_or_else(|| RunError {
        stage: Stage::Scenario,
        message: "no --scenario given".into(),
    })?;
    if args.replications == 0 {
        return Err(RunError {
            stage: Stage::Scenario,
            message: "--replications must be at least 1".into(),
        });
    }
    Ok(RunSpec {
        mode,
        scenario_document: run::read_scenario(&path)?,
        scenario_path: path.display().to_string(),
        target: args.target,
        seed: args.seed,
        replications: args.replications,
        hidden_formula: match args.hidden_formula {
            HiddenArg::Standard => HiddenFormula::Standard,
            HiddenArg::Printed => HiddenFormula::Printed,
        },
        se_source: args.se_source.map(|s| match s {
            SeArg::Equation => SeSource::Equation,
            SeArg::Table => SeSource::Table,
        }),
        events: args.events,
        pairs: args.pairs,
    })
}

fn set_workers(workers: Option<usize>) -> usize {
    if let Some(n) = workers.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
    rayon::current_num_threads()
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    let (spec, out, workers) = match cli.command {
        Some(Command::Rerun { manifest, out, workers }) => {
            let m = run::read_manifest(&manifest)?;
            let out = out.unwrap_or_else(|| manifest.parent().map(PathBuf::from).unwrap_or_default());
            (m.spec, out, workers)
        }
        Some(cmd) => {
            let (mode, args) = match cmd {
                Command::Analyze(a) => (Mode::Analyze, a),
                Command::Simulate(a) => (Mode::Simulate, a),
                Command::Compare(a) => (Mode::Compare, a),
                Command::Trajectory(a) => (Mode::Trajectory, a),
                Command::Rerun { .. } => unreachable!("handled above"),
            };
            let spec = spec_from(mode, &args)?;
            (spec, args.out.unwrap_or_else(|| run::default_out(mode)), args.workers)
        }
        None => {
            let mode: Mode = cli.mode.unwrap_or(ModeArg::Analyze).into();
            let spec = spec_from(mode, &cli.run)?;
            (
                spec,
                cli.run.out.unwrap_or_else(|| run::default_out(mode)),
                cli.run.workers,
            )
        }
    };
    let workers = set_workers(workers);
    let manifest = run::execute(&spec, &out, workers)?;
    println!(
        "run {} wrote {} file(s) to {} in {:.2} s",
        manifest.run_id,
        manifest.outputs.len() + 1,
        out.display(),
        manifest.wall_time_s
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLATOONX_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}

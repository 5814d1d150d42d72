use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softrigid::experiment::{run_experiment, validate_config, ExperimentKind, ExperimentSpec};

/// Simulation, control and stability audits for soft-rigid hybrid manipulators.
///
/// Exit status: 0 on success, 1 on configuration or simulation errors,
/// 3 when the run violates an invariant.
#[derive(Parser, Debug)]
#[command(name = "softrigid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by --config as is.
    Simulate(Common),
    /// Step response to a setpoint (disturbance rejection if the config says so).
    Step(Common),
    /// Trajectory tracking with PD+.
    Track(Common),
    /// Cartesian impedance regulation.
    Impedance(Common),
    /// End-effector point cloud of random admissible configurations.
    Workspace(Common),
    /// Static stiffness table of the first module.
    Stiffness(Common),
    /// Boundedness audit of a PD+ tracking run.
    Verify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time (s).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Controller updates per second.
    #[arg(long)]
    control_rate: Option<f64>,
}

fn build_spec(kind: Option<ExperimentKind>, common: &Common) -> softrigid::error::Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => validate_config(path)?,
        None => match kind {
            Some(k) => ExperimentSpec::new(k),
            None => {
                return Err(softrigid::error::Error::Config("simulate needs --config".into()));
            }
        },
    };
    if let Some(k) = kind {
        let keep = k == ExperimentKind::StepResponse && spec.kind == ExperimentKind::DisturbanceRejection;
        if !keep {
            spec.kind = k;
        }
    }
    if let Some(v) = &common.out {
        spec.output = v.clone();
    }
    if let Some(v) = common.dt {
        spec.dt = v;
    }
    if let Some(v) = common.duration {
        spec.duration = Some(v);
    }
    if let Some(v) = common.seed {
        spec.seed = v;
    }
    if let Some(v) = common.control_rate {
        spec.control_rate = Some(v);
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::Simulate(c) => (None, c),
        Command::Step(c) => (Some(ExperimentKind::StepResponse), c),
        Command::Track(c) => (Some(ExperimentKind::Track), c),
        Command::Impedance(c) => (Some(ExperimentKind::Impedance), c),
        Command::Workspace(c) => (Some(ExperimentKind::Workspace), c),
        Command::Stiffness(c) => (Some(ExperimentKind::Stiffness), c),
        Command::Verify(c) => (Some(ExperimentKind::Verify), c),
    };
    let outcome = build_spec(kind, common).and_then(|spec| run_experiment(&spec));
    match outcome {
        Ok(out) => {
            for (name, value) in &out.summary.metrics {
                println!("{name},{value:?}");
            }
            if out.passed() {
                ExitCode::SUCCESS
            } else {
                for v in &out.violations {
                    eprintln!("violation: {v}");
                }
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

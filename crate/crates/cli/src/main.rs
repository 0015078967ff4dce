use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contact_shape_cli::{init_threads, resolve, rerun, run, CliError, CliResult, Command, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "contact-shape", version, about = "Supercritical contact process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Coupled trajectories from a finite initial set.
    Simulate(RunArgs),
    /// Time constant in one or more directions.
    Mu(RunArgs),
    /// Directional radii of the rescaled infected region.
    Shape(RunArgs),
    /// Matched-seed time-constant scan over a rate grid.
    Scan(RunArgs),
    /// Probability that two rates see identical clocks on a box of edges.
    Idem(RunArgs),
    /// Good-growth probability for each box size N.
    Goodgrowth(RunArgs),
    /// Chi-square comparison with the exact law on a small path.
    OracleCheck(RunArgs),
    /// Re-executes the run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

fn dispatch(cli: Cli) -> CliResult<RunManifest> {
    init_threads()?;
    let (command, args) = match cli.command {
        Cmd::Rerun { manifest, out } => return rerun(&manifest, &out),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Mu(a) => (Command::Mu, a),
        Cmd::Shape(a) => (Command::Shape, a),
        Cmd::Scan(a) => (Command::Scan, a),
        Cmd::Idem(a) => (Command::Idem, a),
        Cmd::Goodgrowth(a) => (Command::Goodgrowth, a),
        Cmd::OracleCheck(a) => (Command::OracleCheck, a),
    };
    let config = resolve(args.config.as_deref(), &args.overrides)?;
    run(command, &config, &args.out)
}

fn report_error(e: &CliError) -> ExitCode {
    let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
    eprintln!("{record}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return report_error(&CliError::Schema(e.kind().to_string()));
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(manifest) => {
            for name in &manifest.outputs {
                println!("{name}");
            }
            for c in &manifest.caveats {
                eprintln!("note: {c}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e),
    }
}

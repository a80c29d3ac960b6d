// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use facade_cli::{run_all, run_stage, CliError, Options, Stage};

#[derive(Debug, Parser)]
#[command(name = "facade", version, about = "Manifold-based anomaly detection over discovered circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or import) the dataset and its train/val/test splits.
    GenData(StageArgs),
    /// Train (or import) the classifier.
    Train(StageArgs),
    /// Record activation traces of the training split.
    Trace(StageArgs),
    /// Cluster each configured layer into pseudoclasses.
    Cluster(StageArgs),
    /// Discover a circuit by greedy edge ablation.
    Discover(StageArgs),
    /// Pseudoclass manifold geometry under the full model and the circuit.
    Stats(StageArgs),
    /// Score circuit edges and normalise them into a distribution.
    Score(StageArgs),
    /// Calibrate the anomaly threshold on the validation split.
    Calibrate(StageArgs),
    /// Attack the test split and run the detector on clean and attacked inputs.
    Detect(StageArgs),
    /// Repeat clustering through detection for every lambda in the grid.
    Sweep(StageArgs),
    /// Merge stage artifacts into a run report.
    Report(StageArgs),
    /// Run every stage in order.
    Run(StageArgs),
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for artifacts and logs.
    #[arg(long, env = "FACADE_OUT_DIR", default_value = "facade-out")]
    out: PathBuf,
    /// Read an upstream artifact from this path instead of the output directory.
    #[arg(long = "stage-input")]
    stage_input: Vec<PathBuf>,
    /// Override the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not print progress lines.
    #[arg(long)]
    quiet: bool,
}

impl From<StageArgs> for Options {
    fn from(a: StageArgs) -> Self {
        Options {
            manifest: a.manifest,
            out: a.out,
            stage_inputs: a.stage_input,
            seed: a.seed,
            quiet: a.quiet,
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim().to_string())),
    };
    let (stage, args) = match cli.command {
        Command::GenData(a) => (Some(Stage::GenData), a),
        Command::Train(a) => (Some(Stage::Train), a),
        Command::Trace(a) => (Some(Stage::Trace), a),
        Command::Cluster(a) => (Some(Stage::Cluster), a),
        Command::Discover(a) => (Some(Stage::Discover), a),
        Command::Stats(a) => (Some(Stage::Stats), a),
        Command::Score(a) => (Some(Stage::Score), a),
        Command::Calibrate(a) => (Some(Stage::Calibrate), a),
        Command::Detect(a) => (Some(Stage::Detect), a),
        Command::Sweep(a) => (Some(Stage::Sweep), a),
        Command::Report(a) => (Some(Stage::Report), a),
        Command::Run(a) => (None, a),
    };
    let opts = Options::from(args);
    let result = match stage {
        Some(s) => run_stage(s, &opts).map(|_| ()),
        None => run_all(&opts).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

use std::process::ExitCode;

use clap::Parser;
use cloudburst_cli::args::{Cli, Command};
use cloudburst_cli::commands::{cmd_ablate, cmd_bench, cmd_replay, cmd_report, cmd_run, cmd_serve, Outcome};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|r| r.0),
        Command::Bench(a) => cmd_bench(a).map(|r| r.0),
        Command::Ablate(a) => cmd_ablate(a).map(|r| r.0),
        Command::Serve(a) => cmd_serve(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a).map(|text| {
            print!("{text}");
            Outcome::Pass
        }),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::VerdictFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

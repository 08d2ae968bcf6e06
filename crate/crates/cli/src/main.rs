mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use commands::{CliError, Run};
use manifest::Manifest;

fn run(argv: Vec<String>) -> Result<(), CliError> {
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::Usage(text.trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    let name = cli.command.name();
    let spec = Cli::command();
    let spec = spec.find_subcommand(name).expect("parsed subcommand exists");
    let manifest = Manifest::new(name, &argv[1..], spec, sub);
    match &cli.command {
        Command::BuildVocab(a) => commands::build_vocab(a, Run::new(&a.output, manifest)?),
        Command::Preprocess(a) => commands::preprocess(a, Run::new(&a.output, manifest)?),
        Command::Train(a) => commands::train(a, Run::new(&a.exp.output, manifest)?),
        Command::Predict(a) => commands::predict(a, Run::new(&a.output, manifest)?),
        Command::Eval(a) => commands::eval(a, Run::new(&a.output, manifest)?),
        Command::Cv(a) => commands::cv(a, Run::new(&a.exp.output, manifest)?),
        Command::Sweep(a) => commands::sweep(a, Run::new(&a.exp.output, manifest)?),
        Command::AblateShuffle(a) => commands::ablate(a, Run::new(&a.exp.output, manifest)?),
        Command::Synth(a) => commands::synth(a, Run::new(&a.output, manifest)?),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

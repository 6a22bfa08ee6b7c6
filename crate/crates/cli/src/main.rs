mod commands;
mod settings;

use std::process::ExitCode;

use clap::Command;

use settings::{with_keys, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Lara(#[from] lara::Error),
    #[error("cli: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lara(lara::Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

fn cli() -> Command {
    let mut cmd = Command::new("lara")
        .about("Light retraining of VAE anomaly detectors under distribution shift")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in commands::ALL {
        cmd = cmd.subcommand(with_keys(Command::new(spec.name).about(spec.about), &(spec.keys)()));
    }
    cmd
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError::Usage(String::new()))
            };
        }
    };
    let (name, sub) = matches
        .subcommand()
        .ok_or_else(|| CliError::Usage("a subcommand is required".into()))?;
    let spec = commands::ALL
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand '{name}'")))?;
    let settings = Settings::resolve(&(spec.keys)(), sub)?;
    log::info!("resolved config for '{name}':\n{settings}");
    (spec.run)(&settings)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(&e, CliError::Usage(m) if m.is_empty()) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

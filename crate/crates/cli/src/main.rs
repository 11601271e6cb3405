mod commands;
mod config;
mod output;

use std::process::ExitCode;

pub use config::{parse_config, CliConfig};

/// Failures of one invocation, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Core(earlystop::Error),
    Io(String),
    ChecksFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Clap(e) if !e.use_stderr() => 0,
            CliError::Clap(_) | CliError::Usage(_) => 1,
            CliError::Core(e) => match e.root() {
                earlystop::Error::InvalidInput(_) => 1,
                earlystop::Error::Io(_) => 3,
                _ => 2,
            },
            CliError::Io(_) => 3,
            CliError::ChecksFailed(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::ChecksFailed(k) => write!(f, "{k} check(s) failed"),
        }
    }
}

impl From<earlystop::Error> for CliError {
    fn from(e: earlystop::Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    let result = parse_config(std::env::args_os()).and_then(|cfg| commands::run_command(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ CliError::Clap(_)) => {
            let code = err.exit_code();
            if let CliError::Clap(e) = err {
                let _ = e.print();
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("earlystop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

mod args;
mod commands;
mod synth;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Flag combinations clap cannot express.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] lsgm::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportTransitions(a) => commands::export_transitions(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(
            CliError::Core(lsgm::Error::Corrupt("x".into())).exit_code(),
            3
        );
        let npd = lsgm::Error::NotPositiveDefinite {
            dim: 2,
            ridge: 1e-2,
        };
        assert_eq!(CliError::Core(npd).exit_code(), 4);
        let nested = lsgm::Error::Trace {
            index: 3,
            source: Box::new(lsgm::Error::TooLarge {
                traces: 10,
                limit: 1,
            }),
        };
        assert_eq!(CliError::Core(nested).exit_code(), 4);
    }
}

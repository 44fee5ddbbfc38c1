//! `heston-hybrid`: prices, Monte Carlo estimates, convergence tables and
//! lattice dumps as CSV.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 1 internal error.

mod config;
mod report;

use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn from_core(err: heston_hybrid::Error) -> Self {
        use heston_hybrid::Error as E;
        match err {
            E::InvalidParameter { .. } | E::Domain(_) | E::Usage(_) => {
                CliError::Config(err.to_string())
            }
            E::MissingOperator(_) => CliError::Internal(err.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let mut cmd = config::command();
    if std::env::args_os().len() <= 1 {
        eprintln!("{}", cmd.render_help());
        return ExitCode::from(2);
    }
    let matches = match cmd.try_get_matches_from_mut(std::env::args_os()) {
        Ok(m) => m,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = config::parse_config(&matches).and_then(|cfg| report::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

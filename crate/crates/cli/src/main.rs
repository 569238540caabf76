//! `mitoscan`: command-line front end for the FOI selection pipeline.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
//! Errors are reported as a single line on stderr.

mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

pub enum CliError {
    Usage(String),
    Data(mitoscan::Error),
    Internal(String),
}

impl From<mitoscan::Error> for CliError {
    fn from(e: mitoscan::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(mitoscan::Error::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits with 2 on usage errors itself
    match commands::run(cli) {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            let (code, category, msg) = match e {
                CliError::Usage(m) => (2, "usage", m),
                CliError::Data(err) => (3, "data", err.to_string()),
                CliError::Internal(m) => (4, "internal", m),
            };
            let one_line = msg.replace('\n', " ");
            eprintln!("mitoscan: error: {category}: {one_line}");
            ExitCode::from(code)
        }
    }
}

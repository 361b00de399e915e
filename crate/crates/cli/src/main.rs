//! `spacrt` command-line front end.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure. Failures print one line `spacrt: error[<code>]: <message>` to stderr
//! and never leave a partial output file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod error;
mod hmm_file;
mod output;
mod table;

use args::{Cli, Command};
use clap::Parser;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("spacrt: error[usage]: {first}");
            std::process::exit(2);
        }
    };
    let result = match &cli.command {
        Command::Test(a) => commands::test::run(a, cli.threads),
        Command::Simulate(a) => commands::simulate::run(a, cli.threads),
        Command::Bench(a) => commands::bench::run(a),
    };
    if let Err(e) = result {
        let message = e.to_string().replace('\n', " ");
        eprintln!("spacrt: error[{}]: {message}", e.code());
        std::process::exit(e.exit_code());
    }
}

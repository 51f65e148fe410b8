//! `pmn` command implementations. `main.rs` only parses arguments and
//! dispatches here, so integration tests drive the same code paths.

pub mod args;
pub mod bench;
pub mod common;
pub mod converge;
pub mod manifest;
pub mod track;
pub mod train;

pub use args::{Cli, Command};

/// Run one parsed command to completion.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Track(a) => track::cmd_track(&a),
        Command::Train(a) => train::cmd_train(&a),
        Command::Converge(a) => converge::cmd_converge(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
    }
}

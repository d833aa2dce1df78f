use clap::Parser;
use neuropmd_cli::commands::{run, Cli};
use neuropmd_cli::exit_code;

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

use clap::Parser;

use mrc_sim::cli::{run_cli, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run_cli(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

use clap::Parser;
use ttt_gate::cli::{exit_code, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = cli.run() {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

use clap::Parser;
use lps_core::cli::{execute, Cli};

fn main() {
    match execute(Cli::parse()) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

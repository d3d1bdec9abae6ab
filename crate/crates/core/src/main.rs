use std::process::ExitCode;

use clap::Parser;
use turnwave::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for c in &out.checks {
                println!("{} {}: {:e} (tol {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tol);
            }
            println!("artifacts in {}", out.dir.display());
            if out.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("turnwave: {e}");
            ExitCode::from(2)
        }
    }
}

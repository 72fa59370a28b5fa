use clap::Parser;

use cglblow_cli::{execute, init_threads, Cli, EXIT_FAILED, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    let code = match init_threads().and_then(|_| execute(&cli)) {
        Ok(outcome) => {
            for c in &outcome.criteria {
                println!("{}", c.line());
            }
            println!("summary: {}", outcome.summary.display());
            if outcome.passed {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

use clap::Parser;
use interval_markets_cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = run(&cli, &mut stdout.lock()) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

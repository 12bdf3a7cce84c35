use clap::Parser;
use syncurator::args::Cli;

fn main() {
    let cli = Cli::parse();
    let result = syncurator::run(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    std::process::exit(syncurator::exit_code(&result));
}

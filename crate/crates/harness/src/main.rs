use clap::Parser;

fn main() {
    let cli = socpilot_harness::cli::Cli::parse();
    std::process::exit(socpilot_harness::cli::execute(cli));
}

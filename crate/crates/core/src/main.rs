use clap::Parser;

fn main() {
    let cli = lamegap::harness::cli::Cli::parse();
    std::process::exit(lamegap::harness::cli::run(&cli));
}

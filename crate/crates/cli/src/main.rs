use clap::Parser;

fn main() {
    let cli = rokhlin_cli::Cli::parse();
    std::process::exit(rokhlin_cli::run(cli));
}

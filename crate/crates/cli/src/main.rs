use clap::Parser;

fn main() {
    let cli = stray_cli::Cli::parse();
    std::process::exit(stray_cli::run(&cli));
}

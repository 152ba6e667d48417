use clap::Parser;

fn main() {
    let cli = gibbsdiff_cli::app::Cli::parse();
    std::process::exit(gibbsdiff_cli::app::execute(&cli));
}

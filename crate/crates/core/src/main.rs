use clap::Parser;

fn main() {
    let cli = scmtagg_core::cli::Cli::parse();
    std::process::exit(scmtagg_core::cli::run(cli));
}

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = relanchor::cli::Cli::parse();
    if let Err(e) = relanchor::cli::run(cli) {
        eprintln!("error: {}: {}", e.kind(), e);
        std::process::exit(1);
    }
}

use clap::Parser;
use spectral_adapt::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = if cli.quiet() { "off" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

mod args;
mod commands;
mod error;
mod io;
mod manifest;
mod plot;
mod presets;

use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = args::Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = commands::run(cli, &argv) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

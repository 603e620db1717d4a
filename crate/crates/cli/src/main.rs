use clap::Parser;
use loadshape_cli::{execute, Cli, OUT_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let env_root = std::env::var_os(OUT_ENV).map(std::path::PathBuf::from);
    if let Err(e) = execute(&cli, env_root.as_deref()) {
        eprintln!("loadshape: {e}");
        std::process::exit(e.exit_code());
    }
}

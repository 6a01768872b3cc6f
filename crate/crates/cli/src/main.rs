use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LGG_LOG", "info")).init();
    let cli = lgg_cli::Cli::parse();
    if let Err(e) = lgg_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

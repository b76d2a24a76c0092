use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DMK_LOG", "warn")).init();
    std::process::exit(dmk::commands::run(dmk::commands::Cli::parse()));
}

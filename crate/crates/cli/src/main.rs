use clap::Parser;
use evdr_cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(json) => println!("{json}"),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.kind.exit_code());
        }
    }
}

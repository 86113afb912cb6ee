use clap::Parser;

use mopac::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match cli::run(Cli::parse()) {
        Ok(summary) => println!("{summary}"),
        Err(err) => {
            eprintln!("{}", cli::error_record(&err));
            std::process::exit(1);
        }
    }
}

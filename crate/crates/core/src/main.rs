use clap::Parser;

use nids_ood::cli::{error_line, exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    if let Err(e) = run(cli) {
        eprintln!("{}", error_line(command, &e));
        std::process::exit(exit_code(&e));
    }
}

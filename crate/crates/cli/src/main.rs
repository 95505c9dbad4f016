use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = vidpose_cli::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match vidpose_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error={} {msg}", e.class());
            ExitCode::from(2)
        }
    }
}

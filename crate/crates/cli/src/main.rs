use std::io::Write as _;
use std::process::ExitCode;

use clap::Parser;
use oselect_cli::commands::{run, serve, Cli, CliError, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = cli.app_config().and_then(|cfg| match &cli.command {
        Command::Serve { bind } => serve(&cfg, bind.as_deref()).map(|()| serde_json::Value::Null),
        other => run(other, &cfg),
    });
    match result {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("summary serializes");
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => report(&CliError::Io {
                    context: "stdout".into(),
                    source: e,
                }),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::FAILURE
}

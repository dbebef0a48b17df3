use std::process::ExitCode;

use clap::Parser;
use cogdebias::cli::{self, Cli, Command};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    let args = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&args.log_level).unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let result = match &args.command {
        Command::Inject(a) => cli::cmd_inject(a).map(|n| {
            eprintln!("wrote {n} records to {}", a.out.display());
            ExitCode::SUCCESS
        }),
        Command::Run(a) => a.config.resolve().and_then(|config| cli::cmd_run(&config)).map(|(report, complete)| {
            print!("{}", cogdebias::evaluation::render_table(&report.results));
            for r in &report.results {
                for e in &r.empty_arms {
                    eprintln!("{}: {e}", r.strategy);
                }
            }
            if complete { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }),
        Command::Sacd(a) => cli::cmd_sacd(a).map(|trace| {
            if a.json {
                println!("{}", serde_json::to_string_pretty(&trace).expect("trace serializes"));
            } else {
                print!("{}", cli::format_trace(&trace));
            }
            ExitCode::SUCCESS
        }),
        Command::Score(a) => cli::cmd_score(a).map(|s| {
            print!("{s}");
            ExitCode::SUCCESS
        }),
        Command::Report(a) => cli::cmd_report(a).map(|s| {
            if a.out.is_none() {
                print!("{s}");
            }
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

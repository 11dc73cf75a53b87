//! `gyromix`: synthesize data, compute gyro and mixture flows, fit and apply
//! OIS compensation, and evaluate flows against annotations.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp(None)
        .init();

    let jobs = cli.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            return report(
                &cli,
                &format!("cli: cannot start {jobs} worker threads: {e}"),
            )
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Synth(a) => commands::synth(a, false),
        Command::ExportTraining(a) => commands::synth(a, true),
        Command::Gyroflow(a) => commands::gyroflow(a),
        Command::Gtflow(a) => commands::gtflow(a),
        Command::Fit(a) => commands::fit(a),
        Command::Compensate(a) => commands::compensate(a),
        Command::Eval(a) => commands::eval(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&cli, &e.to_string()),
    }
}

fn report(cli: &Cli, msg: &str) -> ExitCode {
    if cli.json_errors {
        let module = msg.split(':').next().unwrap_or("cli");
        eprintln!("{}", serde_json::json!({ "error": msg, "module": module }));
    } else {
        eprintln!("error: {msg}");
    }
    ExitCode::FAILURE
}

mod args;
mod commands;
mod failure;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use failure::{CliResult, Failure, EXIT_USAGE};
use manifest::Recorder;

fn main() -> ExitCode {
    match run(std::env::args_os().collect(), 0) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn parse(argv: Vec<OsString>) -> CliResult<Cli> {
    Cli::try_parse_from(argv).map_err(|e| {
        let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
        let _ = e.print();
        if code == 0 {
            std::process::exit(0);
        }
        Failure {
            code,
            error: anyhow::anyhow!("invalid arguments"),
        }
    })
}

fn run(argv: Vec<OsString>, depth: usize) -> CliResult<()> {
    let cli = parse(argv.clone())?;
    if let Some(n) = cli.threads {
        // a replay re-enters here after the pool exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    // recorded arguments start at the subcommand
    let recorded: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|s| s.to_string_lossy().into_owned())
        .collect();

    let (name, out) = match &cli.command {
        Command::Simulate(a) => ("simulate", &a.out.output_dir),
        Command::Learn(a) => ("learn", &a.out.output_dir),
        Command::Infer(a) => ("infer", &a.out.output_dir),
        Command::ClusterReport(a) => ("cluster-report", &a.out.output_dir),
        Command::Experiment(a) => ("experiment", &a.out.output_dir),
        Command::ExportTemplate(a) => ("export-template", &a.out.output_dir),
        Command::Replay(a) => {
            if depth > 0 {
                return Err(Failure::usage("nested replay"));
            }
            let args = commands::replay_args(a)?;
            let mut argv = vec![OsString::from("notipkit")];
            argv.extend(args.into_iter().map(OsString::from));
            return run(argv, depth + 1);
        }
    };
    let mut rec = Recorder::start(name, &recorded);
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &mut rec),
        Command::Learn(a) => commands::learn(a, &mut rec),
        Command::Infer(a) => commands::infer(a, &mut rec),
        Command::ClusterReport(a) => commands::cluster_report(a, &mut rec),
        Command::Experiment(a) => commands::experiment(a, &mut rec),
        Command::ExportTemplate(a) => commands::export_template(a, &mut rec),
        Command::Replay(_) => unreachable!(),
    };
    // the manifest is written even when a run fails part way
    if out.is_dir() {
        rec.finish(out)?;
    }
    result
}

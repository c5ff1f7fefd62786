//! Study runner: `genalpha <study> --config <file.json> [--out <file.csv>]`.
//!
//! Exit codes: 0 on success, 2 when any cell aborted on instability
//! (the CSV is still written, aborted rows carry nan errors), 3 on
//! configuration errors. GENALPHA_THREADS caps the worker pool.

use clap::{Arg, Command};
use genalpha_core::error::Error;
use genalpha_core::studies::{run_study, StudyConfig, StudyKind};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_INSTABILITY: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn study_subcommand(name: &'static str, about: &'static str) -> Command {
    Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE.json")
            .required(true)
            .help("Study configuration"),
    )
}

fn cli() -> Command {
    Command::new("genalpha")
        .about("Wave-equation studies: explicit high-order time integration on spline spaces")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("out")
                .long("out")
                .global(true)
                .value_name("FILE.csv")
                .help("CSV destination (overrides the config's `out`)"),
        )
        .subcommand(study_subcommand(
            "time-convergence",
            "Temporal error against a fine-step reference over a tau ladder",
        ))
        .subcommand(study_subcommand(
            "space-convergence",
            "Relative L2 error over a (p, n_sub) refinement grid",
        ))
        .subcommand(study_subcommand(
            "dispersion",
            "Final-time error across spatial modes and dissipation targets",
        ))
        .subcommand(study_subcommand(
            "precond-iterations",
            "Mean PCG iterations per mass solve over a (p, n_sub) grid",
        ))
        .subcommand(study_subcommand(
            "spectrum",
            "Spectral-radius curves over Theta for each dissipation target",
        ))
}

fn thread_pool_from_env() {
    if let Ok(v) = std::env::var("GENALPHA_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("thread pool already initialized: {e}");
                }
            }
            _ => log::warn!("ignoring GENALPHA_THREADS='{v}': expected a positive integer"),
        }
    }
}

fn run() -> Result<bool, Error> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let config_path = sub.get_one::<String>("config").expect("required arg");
    let text = fs::read_to_string(config_path).map_err(|e| Error::Config {
        reason: format!("cannot read {config_path}: {e}"),
    })?;
    let config = StudyConfig::from_json(&text)?;

    let requested = StudyKind::from_str(name)?;
    if requested != config.study {
        return Err(Error::Config {
            reason: format!(
                "config declares study '{}' but the command line asked for '{name}'",
                serde_json::to_value(config.study)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            ),
        });
    }

    let out_path: PathBuf = sub
        .get_one::<String>("out")
        .cloned()
        .or_else(|| config.out.clone())
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config {
            reason: "no output path: pass --out or set `out` in the config".into(),
        })?;

    let mut buffer = Vec::new();
    let aborted = run_study(&config, &mut buffer)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(&out_path)?;
    file.write_all(&buffer)?;
    eprintln!(
        "wrote {} ({} rows){}",
        out_path.display(),
        buffer.iter().filter(|&&b| b == b'\n').count().saturating_sub(1),
        if aborted { ", with instability aborts" } else { "" }
    );
    Ok(aborted)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    thread_pool_from_env();
    match run() {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_INSTABILITY),
        Err(Error::Config { reason }) => {
            eprintln!("config error: {reason}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

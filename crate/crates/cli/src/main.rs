mod args;
mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::manifest::{Outcome, RunManifest};

/// Flags that cannot be combined; a config value is dropped when the command
/// line already has its counterpart.
const EXCLUSIVE: [(&str, &str); 3] = [("--h", "--levels"), ("--tracks", "--detections"), ("--predictions", "--model")];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("naop: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses or exits: help and version print with status 0, usage errors with 2.
fn parse(argv: &[String]) -> Cli {
    Cli::try_parse_from(std::iter::once("naop").chain(argv.iter().map(String::as_str))).unwrap_or_else(|e| e.exit())
}

fn run(argv: Vec<String>) -> CliResult<()> {
    let cli = parse(&argv);
    let argv = match &cli.config {
        Some(path) => merge_config(strip_flag(&argv, "--config"), path)?,
        None => argv,
    };
    let cli = parse(&argv);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    if let Command::Replay(r) = &cli.command {
        let recorded = manifest::read(&r.manifest)?;
        let replayed = parse(&recorded.argv);
        if matches!(replayed.command, Command::Replay(_)) {
            return Err(CliError::Usage("a manifest cannot replay another replay".into()));
        }
        log::info!("replaying `naop {}`", recorded.argv.join(" "));
        return execute(replayed.command, &recorded.argv);
    }
    execute(cli.command, &argv)
}

fn execute(command: Command, argv: &[String]) -> CliResult<()> {
    let started = manifest::unix_now();
    let clock = Instant::now();
    let (name, args, primary, outcome): (&str, serde_json::Value, PathBuf, Outcome) = match &command {
        Command::Gen(a) => ("gen", snapshot(a), a.out.clone(), commands::gen(a)?),
        Command::Track(a) => ("track", snapshot(a), a.out.clone(), commands::track(a)?),
        Command::Train(a) => ("train", snapshot(a), a.out.clone(), commands::train(a)?),
        Command::Predict(a) => ("predict", snapshot(a), a.out.clone(), commands::predict(a)?),
        Command::Eval(a) => ("eval", snapshot(a), a.out.clone(), commands::eval(a)?),
        Command::Sweep(a) => ("sweep", snapshot(a), a.out.clone(), commands::sweep(a)?),
        Command::Plot(a) => ("plot", snapshot(a), a.out.clone(), commands::plot(a)?),
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    };
    let record = RunManifest {
        tool: "naop".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        argv: strip_flag(argv, "--threads"),
        args,
        seed: outcome.seed,
        threads: rayon::current_num_threads(),
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    manifest::write(&record, &manifest::manifest_path(&primary))
}

fn snapshot<T: serde::Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

/// Drops `flag` and its value from `argv`.
fn strip_flag(argv: &[String], flag: &str) -> Vec<String> {
    let prefix = format!("{flag}=");
    let mut out = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == flag {
            it.next();
        } else if !a.starts_with(&prefix) {
            out.push(a.clone());
        }
    }
    out
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    let prefix = format!("{flag}=");
    argv.iter().any(|a| a == flag || a.starts_with(&prefix))
}

/// Appends the config file's values for every flag the command line lacks.
fn merge_config(mut argv: Vec<String>, path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::input(path)(e.into()))?;
    let serde_json::Value::Object(entries) = value else {
        return Err(CliError::input(path)(naop_core::Error::InvalidArgument("config must be a JSON object".into())));
    };
    let given = argv.clone();
    for (key, value) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || has_flag(&given, &flag) {
            continue;
        }
        let excluded =
            EXCLUSIVE.iter().any(|&(a, b)| (flag == a && has_flag(&given, b)) || (flag == b && has_flag(&given, a)));
        if excluded {
            continue;
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match &value {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => argv.push(flag),
            serde_json::Value::Array(items) => {
                argv.push(flag);
                argv.push(items.iter().map(scalar).collect::<Vec<_>>().join(","));
            }
            other => {
                argv.push(flag);
                argv.push(scalar(other));
            }
        }
    }
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn strip_flag_handles_both_spellings() {
        let argv = s(&["train", "--config", "c.json", "--h", "30", "--config=d.json"]);
        assert_eq!(strip_flag(&argv, "--config"), s(&["train", "--h", "30"]));
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"h": 45, "n_trees": 10, "levels": 2, "scale_only": true, "offsets": [0, 5]}"#)
            .unwrap();
        let merged = merge_config(s(&["eval", "--h", "30"]), &path).unwrap();
        assert_eq!(merged[..3], s(&["eval", "--h", "30"])[..]);
        assert!(!merged.contains(&"--levels".to_string()));
        assert!(merged.windows(2).any(|w| w == s(&["--n-trees", "10"])));
        assert!(merged.windows(2).any(|w| w == s(&["--offsets", "0,5"])));
        assert!(merged.contains(&"--scale-only".to_string()));
    }

    #[test]
    fn config_must_be_an_object() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(merge_config(Vec::new(), &path).unwrap_err().exit_code(), error::EXIT_INVALID_DATA);
    }
}

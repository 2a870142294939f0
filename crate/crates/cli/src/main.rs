use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odx::harness::{apply_override, exit_code, list_catalogue, replay, run, ExperimentConfig, KINDS};
use odx::OdxError;
use serde_json::{json, Value};

/// Hitting-time and escape-rate experiments for interval maps with holes.
///
/// Worker threads follow ODX_THREADS, defaulting to all cores.
#[derive(Parser)]
#[command(name = "odx", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List the named maps with their parameters and densities.
    Maps,
    /// Run an experiment from a JSON config, flags, or both.
    Run {
        config: Option<PathBuf>,
        /// Experiment kind, when no config file supplies one.
        #[arg(long)]
        kind: Option<String>,
        /// Override a config key by dot path, e.g. `hole.radii=[0.01]`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Re-run the config recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn resolve(
    config: Option<&PathBuf>,
    kind: Option<&str>,
    sets: &[String],
    output_dir: Option<&PathBuf>,
) -> Result<ExperimentConfig, OdxError> {
    let mut v: Value = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| OdxError::ConfigInvalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| OdxError::ConfigInvalid(format!("{}: {e}", p.display())))?
        }
        None => json!({}),
    };
    if let Some(k) = kind {
        if !KINDS.contains(&k) {
            return Err(OdxError::ConfigInvalid(format!("unknown kind `{k}`; one of {}", KINDS.join(", "))));
        }
        apply_override(&mut v, "experiment.kind", k)?;
    }
    for s in sets {
        let (key, val) = s
            .split_once('=')
            .ok_or_else(|| OdxError::ConfigInvalid(format!("--set expects KEY=VALUE, got `{s}`")))?;
        apply_override(&mut v, key.trim(), val)?;
    }
    if let Some(d) = output_dir {
        v["output_dir"] = Value::String(d.display().to_string());
    }
    ExperimentConfig::from_value(v)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Maps => {
            print!("{}", list_catalogue());
            return ExitCode::SUCCESS;
        }
        Cmd::Run { config, kind, sets, output_dir, dry_run } => {
            resolve(config.as_ref(), kind.as_deref(), &sets, output_dir.as_ref()).and_then(|cfg| {
                if dry_run {
                    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
                    std::process::exit(0);
                }
                run(&cfg, config.as_slice()).map(|m| (cfg.output_dir, m))
            })
        }
        Cmd::Replay { manifest, output_dir } => {
            replay(&manifest, output_dir).map(|m| (m.config.output_dir.clone(), m))
        }
    };
    match result {
        Ok((dir, m)) => {
            eprintln!("wrote {} files to {} in {:.2} s", m.outputs.len() + 1, dir.display(), m.wall_time_s);
            println!("{}", serde_json::to_string_pretty(&m.summary).expect("summary serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("odx: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

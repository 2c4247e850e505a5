mod commands;
mod params;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{CommandFactory, Parser};
use serde::Serialize;
use serde_json::Value;

use params::{merge, Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameters; exit code 2.
    Usage(String),
    /// Missing or malformed files and failed runs; exit code 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ecnn_core::error::Error> for CliError {
    fn from(e: ecnn_core::error::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    parameters: Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    tool_version: &'static str,
    duration_secs: f64,
}

fn read_config(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| anyhow::anyhow!(e))?;
    }
    let config = cli.config.as_deref().map(read_config).transpose()?;
    let name = cli.command.name();
    let start = Instant::now();

    macro_rules! dispatch {
        ($args:expr, $f:path) => {{
            let mut a = merge(name, $args, config.as_ref())?;
            let (art, line) = $f(&mut a)?;
            let seed = a.run.seed.unwrap_or_default();
            let out = a.run.out.clone().unwrap_or_default();
            (serde_json::to_value(&a).expect("args serialize"), seed, out, art, line)
        }};
    }
    let (parameters, seed, out, mut art, line) = match &cli.command {
        Command::Design(a) => dispatch!(a, commands::design),
        Command::Train(a) => dispatch!(a, commands::train),
        Command::Attack(a) => dispatch!(a, commands::attack),
        Command::Eval(a) => dispatch!(a, commands::eval),
        Command::Transfer(a) => dispatch!(a, commands::transfer),
        Command::Verify(a) => dispatch!(a, commands::verify),
    };
    if let Some(c) = &cli.config {
        art.inputs.push(c.clone());
    }
    let manifest_path = out.join(format!("{name}_manifest.json"));
    let manifest = RunManifest {
        command: name,
        parameters,
        seed,
        inputs: art.inputs,
        outputs: art.outputs,
        tool_version: env!("CARGO_PKG_VERSION"),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text).map_err(|e| anyhow::anyhow!("{}: {e}", manifest_path.display()))?;
    println!("{line}");
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let usage = cmd.find_subcommand_mut(name).map(|c| c.render_usage().to_string()).unwrap_or_default();
            eprintln!("error: {msg}\n\n{usage}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

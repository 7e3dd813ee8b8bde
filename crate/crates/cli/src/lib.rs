//! Batch driver for the `stray` library: `stray <command> --config <path>`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use commands::{execute, Failure, OutputFile};
use config::{parse_config, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "stray",
    version,
    about = "Space-time ray tracing of pulses in shallow-water waveguides"
)]
pub struct Cli {
    /// Command to run; falls back to `run.command` in the config.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `run.output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, overriding `run.threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub library_version: &'static str,
    pub command: Option<&'static str>,
    pub config: String,
    pub config_sha256: Option<String>,
    pub threads: Option<usize>,
    pub status: &'static str,
    pub exit_code: i32,
    pub outputs: Vec<OutputFile>,
    pub counts: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn default_out(config: &Path) -> PathBuf {
    config.parent().unwrap_or(Path::new(".")).join("out")
}

/// Runs one command and returns the process exit code. The manifest is
/// written to the output directory whatever the outcome.
pub fn run(cli: &Cli) -> i32 {
    let mut manifest = Manifest {
        tool: "stray",
        version: env!("CARGO_PKG_VERSION"),
        library_version: stray::VERSION,
        command: cli.command.map(Command::name),
        config: cli.config.display().to_string(),
        config_sha256: None,
        threads: None,
        status: "ok",
        exit_code: EXIT_OK,
        outputs: Vec::new(),
        counts: BTreeMap::new(),
        warnings: Vec::new(),
        errors: Vec::new(),
    };
    let mut out_dir = cli.out.clone().unwrap_or_else(|| default_out(&cli.config));
    let code = drive(cli, &mut manifest, &mut out_dir);
    manifest.exit_code = code;
    manifest.status = match code {
        EXIT_OK => "ok",
        EXIT_VALIDATION => "validation_failed",
        _ => "runtime_error",
    };
    for e in &manifest.errors {
        eprintln!("stray: {e}");
    }
    for w in &manifest.warnings {
        eprintln!("stray: warning: {w}");
    }
    if let Err(e) = write_manifest(&out_dir, &manifest) {
        eprintln!("stray: cannot write manifest in {}: {e}", out_dir.display());
        return if code == EXIT_OK { EXIT_RUNTIME } else { code };
    }
    code
}

fn write_manifest(dir: &Path, m: &Manifest) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST), text)
}

fn drive(cli: &Cli, manifest: &mut Manifest, out_dir: &mut PathBuf) -> i32 {
    let bytes = match std::fs::read(&cli.config) {
        Ok(b) => b,
        Err(e) => {
            manifest
                .errors
                .push(format!("cannot read config {}: {e}", cli.config.display()));
            return EXIT_VALIDATION;
        }
    };
    manifest.config_sha256 = Some(sha256_hex(&bytes));
    let parsed = String::from_utf8(bytes)
        .map_err(|e| stray::Error::Parse(e.to_string()))
        .and_then(|t| parse_config(&t));
    let cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            manifest.errors.push(format!("invalid config: {e}"));
            return EXIT_VALIDATION;
        }
    };
    if cli.out.is_none() {
        *out_dir = cfg.output_dir(&cli.config);
    }
    let Some(cmd) = cli.command.or(cfg.run.command) else {
        manifest
            .errors
            .push("no command given on the command line or in run.command".into());
        return EXIT_VALIDATION;
    };
    manifest.command = Some(cmd.name());
    let threads = cli
        .threads
        .or(cfg.run.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        manifest.errors.push("threads must be at least 1".into());
        return EXIT_VALIDATION;
    }
    manifest.threads = Some(threads);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            manifest.errors.push(format!("cannot start thread pool: {e}"));
            return EXIT_RUNTIME;
        }
    };
    let dir = out_dir.clone();
    match pool.install(|| execute(&cfg, cmd, &dir)) {
        Ok(outcome) => {
            manifest.outputs = outcome.outputs;
            manifest.counts = outcome.counts;
            manifest.warnings.extend(outcome.warnings);
            if outcome.validation_failed {
                manifest.errors.push("validation failed".into());
                EXIT_VALIDATION
            } else {
                EXIT_OK
            }
        }
        Err(f) => {
            manifest.errors.push(f.to_string());
            match f {
                Failure::Validation(_) => EXIT_VALIDATION,
                Failure::Runtime(_) => EXIT_RUNTIME,
            }
        }
    }
}

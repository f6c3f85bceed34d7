//! The runnable emulator: CLI, single-instance `run`, the multi-instance
//! benchmark and flash tooling.

pub mod bench;
pub mod cli;
mod instance;
mod node;

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddrV4;
use std::path::{Path, PathBuf};
use std::sync::mpsc::Receiver;

use thiserror::Error;

pub use bench::{http_get, instance_mac, run_bench, BenchReport, LatencySummary, Sample};
pub use cli::{
    parse_cli, BenchConfig, Command, DriveSpec, FlashCommand, RunConfig, TableSource, UsageError,
};
pub use instance::{GuestOutput, Instance, InstanceConfig, InstanceStats};
pub use node::{LinkCounters, Node};

use crate::flash::{self, FlashError};
use crate::guest::GuestError;
use crate::trace::{TraceError, TraceSink, Tracer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot bind forwarded port {addr}: {source}")]
    Bind {
        addr: SocketAddrV4,
        source: io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("flash image {path}: {source}")]
    Image { path: PathBuf, source: FlashError },
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error("guest init failed: {0}")]
    Guest(#[from] GuestError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("instance {instance} failed to boot: {reason}")]
    InstanceBoot { instance: usize, reason: String },
    #[error(transparent)]
    Io(io::Error),
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, data: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, data).map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn tracer_for(config: &RunConfig) -> Result<Tracer, HarnessError> {
    if config.trace.is_empty() {
        return Ok(Tracer::disabled());
    }
    let sink = match &config.trace_file {
        Some(p) => TraceSink::File(p.clone()),
        None => TraceSink::Stderr,
    };
    Ok(Tracer::enable(config.trace.clone(), sink)?)
}

/// Validates the image, boots, and serves until `stop` yields (or its sender
/// is dropped).
pub fn run(config: &RunConfig, stop: Receiver<()>) -> Result<InstanceStats, HarnessError> {
    let image = read(&config.drive.file)?;
    let info = flash::boot_info(&image, config.layout).map_err(|source| HarnessError::Image {
        path: config.drive.file.clone(),
        source,
    })?;
    let tracer = tracer_for(config)?;
    let inst = Instance::start(InstanceConfig {
        guest: info.guest,
        nic: config.nic.clone(),
        tracer,
        output: GuestOutput::Print(None),
    })?;
    for (rule, addr) in config.nic.forwards.iter().zip(inst.listen_addrs()) {
        eprintln!("espemu: forwarding {rule} (listening on {addr})");
    }
    let _ = io::stdout().flush();
    let _ = stop.recv();
    let stats = inst.shutdown();
    let _ = io::stdout().flush();
    Ok(stats)
}

pub fn flash_command(cmd: &FlashCommand, out: &mut dyn Write) -> Result<(), HarnessError> {
    match cmd {
        FlashCommand::Merge {
            bootloader,
            table,
            app,
            out: path,
            layout,
        } => {
            let entries = match table {
                TableSource::File(p) => flash::parse_partition_table(&read(p)?)?,
                TableSource::Spec(s) => flash::generate_table(s)?,
            };
            let image = flash::merge(&read(bootloader)?, &entries, &read(app)?, *layout)?;
            write(path, &image.bytes)?;
            writeln!(
                out,
                "wrote {} ({} bytes, {} partitions)",
                path.display(),
                image.bytes.len(),
                entries.len()
            )
            .map_err(HarnessError::Io)?;
        }
        FlashCommand::Inspect { image, layout } => {
            let raw = read(image)?;
            let report = flash::inspect(&raw, *layout).map_err(|source| HarnessError::Image {
                path: image.clone(),
                source,
            })?;
            write!(out, "{report}").map_err(HarnessError::Io)?;
        }
        FlashCommand::MkApp { out: path, guest } => write(path, &flash::app_image(guest))?,
        FlashCommand::MkBoot { out: path } => write(path, &flash::bootloader_image())?,
        FlashCommand::Sample { out: path, guest } => {
            write(path, &flash::sample_image(guest))?;
            writeln!(out, "wrote {}", path.display()).map_err(HarnessError::Io)?;
        }
    }
    Ok(())
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cmd = match parse_cli(argv) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let result = match cmd {
        Command::Info(text) => {
            print!("{text}");
            return EXIT_OK;
        }
        Command::Run(cfg) => {
            let (tx, rx) = std::sync::mpsc::channel();
            if let Err(e) = ctrlc::set_handler(move || {
                let _ = tx.send(());
            }) {
                eprintln!("espemu: cannot install signal handler: {e}");
                return EXIT_FAILURE;
            }
            run(&cfg, rx).map(|_| ())
        }
        Command::Bench(cfg) => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            run_bench(&cfg, &mut lock).and_then(|report| {
                write!(lock, "{report}").map_err(HarnessError::Io)?;
                let a = &report.aggregate;
                writeln!(
                    lock,
                    "summary instances={} requests={} errors={} p50_ms={:.3} p95_ms={:.3} p99_ms={:.3} max_ms={:.3}",
                    report.ports.len(),
                    a.requests,
                    a.errors,
                    a.p50_ms,
                    a.p95_ms,
                    a.p99_ms,
                    a.max_ms
                )
                .map_err(HarnessError::Io)?;
                if a.errors > 0 {
                    return Err(HarnessError::Io(io::Error::other(format!("{} requests failed", a.errors))));
                }
                Ok(())
            })
        }
        Command::Flash(cmd) => flash_command(&cmd, &mut io::stdout()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("espemu: {e}");
            EXIT_FAILURE
        }
    }
}

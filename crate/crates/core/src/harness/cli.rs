//! Command-line surface. `run` takes QEMU-style single-dash flags and is
//! parsed by hand; `bench` and `flash` use conventional long options.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::flash::FlashLayout;
use crate::guest::{GuestConfig, GuestMode};
use crate::trace::TracePattern;
use crate::usernet::{parse_nic_config, NicConfig};
use crate::wire::MacAddress;

pub const SUPPORTED_MACHINE: &str = "esp32";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriveSpec {
    pub file: PathBuf,
    pub interface: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub machine: String,
    pub drive: DriveSpec,
    pub nic: NicConfig,
    pub trace: Vec<TracePattern>,
    pub trace_file: Option<PathBuf>,
    pub nographic: bool,
    pub layout: FlashLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub instances: usize,
    pub base_port: u16,
    /// Requests per second per instance.
    pub rate: f64,
    pub duration: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableSource {
    File(PathBuf),
    Spec(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlashCommand {
    Merge {
        bootloader: PathBuf,
        table: TableSource,
        app: PathBuf,
        out: PathBuf,
        layout: FlashLayout,
    },
    Inspect {
        image: PathBuf,
        layout: FlashLayout,
    },
    MkApp {
        out: PathBuf,
        guest: GuestConfig,
    },
    MkBoot {
        out: PathBuf,
    },
    Sample {
        out: PathBuf,
        guest: GuestConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run(RunConfig),
    Bench(BenchConfig),
    Flash(FlashCommand),
    /// `--help` / `--version` output; not an error.
    Info(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "espemu",
    version,
    about = "ESP32 networking emulator and benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Boot a merged flash image and serve forwarded ports (QEMU-style flags)
    Run {
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "QEMU FLAGS"
        )]
        args: Vec<String>,
    },
    /// Run N instances under open-loop HTTP load and report latency
    Bench(BenchArgs),
    /// Build and inspect flash images
    #[command(subcommand)]
    Flash(FlashSub),
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    instances: usize,
    #[arg(long, default_value_t = 8000)]
    base_port: u16,
    /// Requests per second per instance
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    /// Seconds of load
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    #[arg(long, default_value = "/hello")]
    path: String,
}

#[derive(Args, Debug)]
struct GuestArgs {
    #[arg(long)]
    mac: Option<MacAddress>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    banner: Option<String>,
    /// http or echo
    #[arg(long)]
    mode: Option<GuestMode>,
}

#[derive(Subcommand, Debug)]
enum FlashSub {
    /// Merge bootloader, partition table and app into one image
    Merge {
        #[arg(long)]
        bootloader: PathBuf,
        /// Binary partition table file
        #[arg(
            long,
            conflicts_with = "gen_table",
            required_unless_present = "gen_table"
        )]
        table: Option<PathBuf>,
        /// Records `label,type,subtype,offset,size` separated by `;`, or `default`
        #[arg(long)]
        gen_table: Option<String>,
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// boot,table,app,flash_size
        #[arg(long)]
        layout: Option<String>,
    },
    /// Print layout, partitions and per-segment CRC32
    Inspect {
        image: PathBuf,
        #[arg(long)]
        layout: Option<String>,
    },
    /// Write an app image carrying a guest configuration
    Mkapp {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        guest: GuestArgs,
    },
    /// Write a stub bootloader image
    Mkboot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a complete bootable image with the default layout
    Sample {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        guest: GuestArgs,
    },
}

impl GuestArgs {
    fn config(self) -> GuestConfig {
        let d = GuestConfig::default();
        GuestConfig {
            mac: self.mac.unwrap_or(d.mac),
            port: self.port.filter(|&p| p != 0).unwrap_or(d.port),
            banner: self.banner.unwrap_or(d.banner),
            mode: self.mode.unwrap_or(d.mode),
        }
    }
}

fn layout(text: Option<String>) -> Result<FlashLayout, UsageError> {
    text.map_or(Ok(FlashLayout::default()), |t| {
        FlashLayout::parse(&t).map_err(|e| UsageError(e.to_string()))
    })
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Parses `argv` including the program name.
pub fn parse_cli<I, S>(argv: I) -> Result<Command, UsageError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Ok(Command::Info(e.to_string()))
                }
                _ => Err(UsageError(e.to_string().trim_end().to_string())),
            };
        }
    };
    match cli.command {
        Sub::Run { args } => parse_run(&args).map(Command::Run),
        Sub::Bench(b) => {
            if b.instances == 0 {
                return Err(usage("--instances must be at least 1"));
            }
            if !(b.rate.is_finite() && b.rate > 0.0) {
                return Err(usage("--rate must be greater than 0"));
            }
            if !(b.duration.is_finite() && b.duration > 0.0) {
                return Err(usage("--duration must be greater than 0"));
            }
            if usize::from(b.base_port) + b.instances - 1 > usize::from(u16::MAX)
                || b.base_port == 0
            {
                return Err(usage("--base-port range does not fit in 1..=65535"));
            }
            if !b.path.starts_with('/') {
                return Err(usage("--path must start with /"));
            }
            Ok(Command::Bench(BenchConfig {
                instances: b.instances,
                base_port: b.base_port,
                rate: b.rate,
                duration: b.duration,
                path: b.path,
            }))
        }
        Sub::Flash(f) => Ok(Command::Flash(match f {
            FlashSub::Merge {
                bootloader,
                table,
                gen_table,
                app,
                out,
                layout: l,
            } => FlashCommand::Merge {
                bootloader,
                table: match (table, gen_table) {
                    (Some(t), _) => TableSource::File(t),
                    (None, Some(s)) => TableSource::Spec(s),
                    (None, None) => return Err(usage("one of --table or --gen-table is required")),
                },
                app,
                out,
                layout: layout(l)?,
            },
            FlashSub::Inspect { image, layout: l } => FlashCommand::Inspect {
                image,
                layout: layout(l)?,
            },
            FlashSub::Mkapp { out, guest } => FlashCommand::MkApp {
                out,
                guest: guest.config(),
            },
            FlashSub::Mkboot { out } => FlashCommand::MkBoot { out },
            FlashSub::Sample { out, guest } => FlashCommand::Sample {
                out,
                guest: guest.config(),
            },
        })),
    }
}

fn parse_drive(spec: &str) -> Result<DriveSpec, UsageError> {
    let mut file = None;
    let mut interface = String::from("mtd");
    let mut format = String::from("raw");
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| usage(format!("-drive: expected key=value, got `{token}`")))?;
        match k {
            "file" => file = Some(PathBuf::from(v)),
            "if" => interface = v.to_string(),
            "format" => format = v.to_string(),
            _ => return Err(usage(format!("-drive: unknown key `{k}`"))),
        }
    }
    if interface != "mtd" {
        return Err(usage(format!(
            "-drive: interface `{interface}` unsupported, expected if=mtd"
        )));
    }
    if format != "raw" {
        return Err(usage(format!(
            "-drive: format `{format}` unsupported, expected format=raw"
        )));
    }
    let file = file.ok_or_else(|| usage("-drive: missing file="))?;
    Ok(DriveSpec {
        file,
        interface,
        format,
    })
}

fn parse_run(args: &[String]) -> Result<RunConfig, UsageError> {
    let mut machine = SUPPORTED_MACHINE.to_string();
    let mut drive = None;
    let mut nic = None;
    let mut trace = Vec::new();
    let mut trace_file = None;
    let mut nographic = false;
    let mut flash_layout = None;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        // QEMU accepts both -flag and --flag
        let flag = arg
            .strip_prefix("--")
            .map(|f| format!("-{f}"))
            .unwrap_or_else(|| arg.clone());
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| usage(format!("{name} requires a value")))
        };
        match flag.as_str() {
            "-nographic" => nographic = true,
            "-machine" | "-M" => machine = value("-machine")?,
            "-nic" => {
                let spec = value("-nic")?;
                nic = Some(parse_nic_config(&spec).map_err(|e| usage(e.to_string()))?);
            }
            "-drive" => drive = Some(parse_drive(&value("-drive")?)?),
            "-trace" => trace.push(TracePattern::new(value("--trace")?)),
            "-trace-file" => trace_file = Some(PathBuf::from(value("--trace-file")?)),
            "-layout" => flash_layout = Some(value("--layout")?),
            "-s" | "-gdb" | "-S" => {
                return Err(usage(format!(
                    "{arg}: GDB stub is unsupported by this emulator"
                )));
            }
            _ => return Err(usage(format!("unknown run flag `{arg}`"))),
        }
    }
    let name = machine.split(',').next().unwrap_or("");
    if name != SUPPORTED_MACHINE {
        return Err(usage(format!(
            "unsupported machine `{machine}`, only `{SUPPORTED_MACHINE}` is available"
        )));
    }
    let drive =
        drive.ok_or_else(|| usage("run: -drive file=IMAGE,if=mtd,format=raw is required"))?;
    let nic = match nic {
        Some(n) => n,
        None => parse_nic_config("user,model=open_eth").expect("built-in nic spec parses"),
    };
    Ok(RunConfig {
        machine,
        drive,
        nic,
        trace,
        trace_file,
        nographic,
        layout: layout(flash_layout)?,
    })
}

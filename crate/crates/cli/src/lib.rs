// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: `run`, `validate` and `vectors`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use afdxnoc::check::check_run;
use afdxnoc::frame::{crc32, encode, Frame, MAX_PAYLOAD_LEN};
use afdxnoc::{parse_config, ConfigError};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
/// The run finished but `--check` found invariant violations.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Unreadable or invalid config, or an output file could not be written.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "afdxnoc", version, about = "AFDX network-on-chip simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its statistics and trace.
    Run(RunArgs),
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print CRC-32 and frame codec vectors as JSON.
    Vectors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Overrides for the `[run]` section of a scenario.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub cycles: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stats JSON destination; `-` or absent (with none in the config) means stdout.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Run the invariant suite over the result and fail on any violation.
    #[arg(long)]
    pub check: bool,
}

/// Parses `args` (including the program name) and executes the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(args) => run_command(&args),
        Command::Validate { config } => validate_command(&config),
        Command::Vectors { out } => vectors_command(out.as_deref()),
    }
}

fn load(path: &Path) -> Result<afdxnoc::ScenarioConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e: ConfigError| format!("{}: {e}", path.display()))
}

/// Paths from the config file are relative to the file's directory.
fn config_relative(config: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    match config.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> io::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, text),
        _ => io::stdout().lock().write_all(text.as_bytes()),
    }
}

pub fn run_command(args: &RunArgs) -> i32 {
    let cfg = match load(&args.config) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_CONFIG;
        }
    };
    let cycles = args.cycles.unwrap_or(cfg.run.cycles);
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let stats_path =
        args.stats.clone().or_else(|| cfg.run.stats.as_deref().map(|p| config_relative(&args.config, p)));
    let trace_path =
        args.trace.clone().or_else(|| cfg.run.trace.as_deref().map(|p| config_relative(&args.config, p)));

    info!("running {} for {cycles} cycles, seed {seed}", args.config.display());
    let (_, report) = match cfg.simulate(cycles, seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };

    if let Err(e) = write_out(stats_path.as_deref(), &report.stats.to_json()) {
        eprintln!("error: writing stats: {e}");
        return EXIT_CONFIG;
    }
    if let Some(p) = &trace_path {
        if let Err(e) = write_out(Some(p), &report.trace_csv()) {
            eprintln!("error: writing trace: {e}");
            return EXIT_CONFIG;
        }
    }

    let drops = report.stats.total_drops().total();
    let delivered: u64 = report.stats.per_vl.values().map(|s| s.delivered).sum();
    info!("{cycles} cycles: {delivered} delivered, {drops} dropped");

    if args.check {
        let result = check_run(&report, &cfg.virtual_link_table());
        if !result.passed() {
            for v in &result.violations {
                warn!("{v}");
                eprintln!("violation: {v}");
            }
            eprintln!("check failed: {} violations", result.violations.len());
            return EXIT_CHECK_FAILED;
        }
        info!("all invariants held");
    }
    EXIT_OK
}

pub fn validate_command(config: &Path) -> i32 {
    match load(config) {
        Ok(cfg) => {
            println!(
                "{}: ok ({} nodes, {} links, {} virtual links)",
                config.display(),
                cfg.topology.nodes.len(),
                cfg.topology.links.len(),
                cfg.virtual_links.len()
            );
            EXIT_OK
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CrcVector {
    pub input_hex: String,
    pub crc32: String,
}

#[derive(Debug, Serialize)]
pub struct FrameVector {
    pub vlid: u16,
    pub src_es: u16,
    pub udp_src_port: u16,
    pub udp_dst_port: u16,
    pub seq: u8,
    pub payload_hex: String,
    /// Preamble and SFD included.
    pub wire_hex: String,
    pub wire_len: usize,
    pub fcs: String,
}

#[derive(Debug, Serialize)]
pub struct Vectors {
    pub crc32: Vec<CrcVector>,
    pub frames: Vec<FrameVector>,
}

fn pattern(len: usize, salt: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(salt)).collect()
}

pub fn vectors() -> Vectors {
    let mut inputs: Vec<Vec<u8>> = vec![Vec::new(), b"123456789".to_vec(), b"a".to_vec()];
    for (k, len) in [1usize, 4, 17, 64, 255, 1514].into_iter().enumerate() {
        inputs.push(pattern(len, k as u8));
    }
    let crc = inputs
        .iter()
        .map(|b| CrcVector { input_hex: hex::encode(b), crc32: format!("{:08x}", crc32(b)) })
        .collect();

    let mut frames = Vec::new();
    for (k, len) in [0usize, 17, 18, 145, 1000, MAX_PAYLOAD_LEN].into_iter().enumerate() {
        let frame = Frame {
            vlid: 0x0100 + k as u16,
            src_es: 1 + k as u16,
            udp_src_port: 5000,
            udp_dst_port: 6000 + k as u16,
            payload: pattern(len, 0x40 + k as u8),
            seq: [0, 1, 2, 127, 254, 255][k],
        };
        let wire = encode(&frame).expect("vector payloads fit");
        frames.push(FrameVector {
            vlid: frame.vlid,
            src_es: frame.src_es,
            udp_src_port: frame.udp_src_port,
            udp_dst_port: frame.udp_dst_port,
            seq: frame.seq,
            payload_hex: hex::encode(&frame.payload),
            wire_hex: hex::encode(wire.as_bytes()),
            wire_len: wire.len(),
            fcs: format!("{:08x}", wire.fcs().expect("encoded frames carry an FCS")),
        });
    }
    Vectors { crc32: crc, frames }
}

pub fn vectors_command(out: Option<&Path>) -> i32 {
    let json = serde_json::to_string_pretty(&vectors()).expect("vectors serialize") + "\n";
    match write_out(out, &json) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: writing vectors: {e}");
            EXIT_CONFIG
        }
    }
}

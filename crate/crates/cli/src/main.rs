use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use osv_core::emulator::{serve, Emulator};
use osv_core::framing::FramingConfig;
use osv_core::harness::{
    benchmark, cross_validate, directory_example_library, synthetic_library, CrossValidation, DirectoryValidator,
    ResponderKind, SyntheticProtocolSpec,
};
use osv_core::protomodel::{build_model_detailed, load_model, save_model, BuildOptions};
use osv_core::trace::{load_library, record_proxy, save_library, write_library, ProxyConfig};
use osv_core::Exec;

#[derive(Parser)]
#[command(name = "osv", version, about = "Record, model and emulate opaque request/response services")]
struct Cli {
    /// Run every data-parallel step on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relay traffic to a live service and record every exchange.
    Record {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long)]
        duration: Option<u64>,
        #[command(flatten)]
        framing: FramingArgs,
    },
    /// Build a model from a recorded trace.
    Build {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Answer requests from a model.
    Serve {
        model: PathBuf,
        #[arg(long)]
        listen: String,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long)]
        duration: Option<u64>,
        #[command(flatten)]
        framing: FramingArgs,
    },
    /// Cross-validate a responder on a trace.
    Validate {
        trace: PathBuf,
        /// hash, whole-library or prototype.
        #[arg(long, default_value = "prototype")]
        responder: ResponderKind,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Time all responders on the same request sequence.
    Bench {
        trace: PathBuf,
        /// Trace whose requests are replayed; defaults to the training requests.
        #[arg(long)]
        requests: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 100)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Generate a synthetic directory-service trace.
    Gen {
        /// Emit the fixed eight-transaction example instead.
        #[arg(long, conflicts_with_all = ["n", "seed", "confusion"])]
        example: bool,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of transactions given a twin request from another operation.
        #[arg(long, default_value_t = 0.0)]
        confusion: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Number of response clusters (message types) to build.
    #[arg(long)]
    clusters: usize,
    /// Consensus threshold in (0.5, 1].
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Alignment match score [default: 1].
    #[arg(long = "match")]
    match_score: Option<f64>,
    /// Alignment mismatch score [default: -1].
    #[arg(long)]
    mismatch: Option<f64>,
    /// Alignment gap score [default: -1].
    #[arg(long)]
    gap: Option<f64>,
    /// Score of a prototype wildcard against anything [default: 0].
    #[arg(long)]
    wildcard: Option<f64>,
    /// Shortest request substring copied into responses.
    #[arg(long, default_value_t = 4)]
    min_field_len: u32,
}

impl ModelArgs {
    fn options(&self, exec: Exec) -> BuildOptions {
        let mut opts = BuildOptions::new(self.clusters);
        opts.threshold = self.threshold;
        opts.min_field_len = self.min_field_len;
        opts.exec = exec;
        let s = &mut opts.scoring;
        s.match_score = self.match_score.unwrap_or(s.match_score);
        s.mismatch = self.mismatch.unwrap_or(s.mismatch);
        s.gap = self.gap.unwrap_or(s.gap);
        s.wildcard = self.wildcard.unwrap_or(s.wildcard);
        opts
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FramingKind {
    Idle,
    Delimiter,
    LengthPrefix,
    OnePerConnection,
}

#[derive(Args)]
struct FramingArgs {
    #[arg(long, value_enum, default_value_t = FramingKind::Idle)]
    framing: FramingKind,
    /// Message terminator; understands \n, \r, \t, \\ and \xHH escapes.
    #[arg(long, default_value = "\\n")]
    delimiter: String,
    /// Length-prefix width in bytes: 1, 2, 4 or 8.
    #[arg(long, default_value_t = 4, value_parser = parse_width)]
    prefix_width: u8,
    /// Idle window for `idle`; stall limit for partial messages otherwise.
    #[arg(long, default_value_t = 200)]
    timeout_ms: u64,
}

impl FramingArgs {
    fn config(&self) -> Result<FramingConfig> {
        let cfg = match self.framing {
            FramingKind::Idle => FramingConfig::idle(self.timeout_ms),
            FramingKind::Delimiter => FramingConfig::delimiter(unescape(&self.delimiter)?, self.timeout_ms),
            FramingKind::LengthPrefix => FramingConfig::length_prefix(self.prefix_width, self.timeout_ms),
            FramingKind::OnePerConnection => FramingConfig::one_per_connection(self.timeout_ms),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

fn parse_width(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(w @ (1 | 2 | 4 | 8)) => Ok(w),
        _ => Err(format!("expected 1, 2, 4 or 8, got {s:?}")),
    }
}

fn unescape(s: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut bytes = s.bytes();
    while let Some(b) = bytes.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match bytes.next() {
            Some(b'n') => out.push(b'\n'),
            Some(b'r') => out.push(b'\r'),
            Some(b't') => out.push(b'\t'),
            Some(b'0') => out.push(0),
            Some(b'\\') => out.push(b'\\'),
            Some(b'x') => {
                let hex: Vec<u8> = bytes.by_ref().take(2).collect();
                let text = std::str::from_utf8(&hex).unwrap_or("");
                match u8::from_str_radix(text, 16) {
                    Ok(v) if hex.len() == 2 => out.push(v),
                    _ => bail!("bad \\x escape in delimiter {s:?}"),
                }
            }
            other => bail!("unknown escape \\{} in delimiter {s:?}", other.map(char::from).unwrap_or(' ')),
        }
    }
    Ok(out)
}

/// Blocks until Ctrl-C or until `duration` seconds have passed.
fn wait_for_stop(duration: Option<u64>) -> Result<()> {
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .context("installing the Ctrl-C handler")?;
    match duration {
        Some(secs) => {
            let _ = rx.recv_timeout(Duration::from_secs(secs));
        }
        None => {
            let _ = rx.recv();
        }
    }
    Ok(())
}

fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn load_trace(path: &Path) -> Result<osv_core::trace::TransactionLibrary> {
    load_library(path).with_context(|| format!("reading trace {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Record {
            listen,
            target,
            out,
            duration,
            framing,
        } => {
            let mut cfg = ProxyConfig::new(listen, target, framing.config()?);
            cfg.out = Some(out.clone());
            let recorder = record_proxy(cfg)?;
            emit(&format!("listening on {}", recorder.local_addr()))?;
            wait_for_stop(duration)?;
            let lib = recorder.shutdown()?;
            info!("wrote {} transactions to {}", lib.len(), out.display());
        }
        Command::Build { trace, out, model } => {
            let lib = load_trace(&trace)?;
            let build = build_model_detailed(&lib, &model.options(exec), None)?;
            for id in &build.degenerate {
                warn!("cluster {id} has an all-wildcard prototype");
            }
            save_model(&build.model, &out).with_context(|| format!("writing model {}", out.display()))?;
            for node in &build.model.nodes {
                let size = build.clusters.clusters.get(node.cluster_id as usize).map_or(0, |c| c.members.len());
                emit(&format!("cluster {} ({} members): {}", node.cluster_id, size, node.prototype))?;
            }
        }
        Command::Serve {
            model,
            listen,
            duration,
            framing,
        } => {
            let model = load_model(&model).with_context(|| format!("reading model {}", model.display()))?;
            let server = serve(Emulator::new(model)?, &listen, framing.config()?)?;
            emit(&format!("listening on {}", server.local_addr()))?;
            wait_for_stop(duration)?;
            server.shutdown();
        }
        Command::Validate {
            trace,
            responder,
            folds,
            repeats,
            seed,
            format,
            model,
        } => {
            let lib = load_trace(&trace)?;
            let cv = CrossValidation {
                folds,
                repeats,
                seed,
                exec,
            };
            let report = cross_validate(&lib, responder, &model.options(exec), &cv, &DirectoryValidator)?;
            match format {
                Format::Json => emit(&report.to_json())?,
                Format::Table => emit(&report.to_string())?,
            }
        }
        Command::Bench {
            trace,
            requests,
            repetitions,
            warmup,
            format,
            model,
        } => {
            let lib = load_trace(&trace)?;
            let built = build_model_detailed(&lib, &model.options(exec), None)?.model;
            let live = match requests {
                Some(p) => load_trace(&p)?,
                None => lib.clone(),
            };
            let requests: Vec<Vec<u8>> = live.iter().map(|t| t.request.clone()).collect();
            let report = benchmark(&lib, &built, &requests, repetitions, warmup)?;
            match format {
                Format::Json => emit(&report.to_json())?,
                Format::Table => emit(&report.to_string())?,
            }
        }
        Command::Gen {
            example,
            n,
            seed,
            confusion,
            out,
        } => {
            let lib = if example {
                directory_example_library()
            } else {
                if !(0.0..=1.0).contains(&confusion) {
                    bail!("--confusion must lie in [0, 1], got {confusion}");
                }
                let spec = SyntheticProtocolSpec::directory_with_confusion(confusion);
                synthetic_library(&spec, n, seed).library
            };
            match out {
                Some(path) => save_library(&lib, &path).with_context(|| format!("writing {}", path.display()))?,
                None => write_library(&lib, io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::unescape;

    #[test]
    fn delimiter_escapes() {
        assert_eq!(unescape("\\r\\n").unwrap(), b"\r\n");
        assert_eq!(unescape("END\\x00\\\\").unwrap(), b"END\x00\\");
        assert!(unescape("\\xZ1").is_err());
        assert!(unescape("\\q").is_err());
    }
}

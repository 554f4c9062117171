//! The `hpcio` command.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use hpcio::{load_config_from_env, Client, ClientConfig, FragmentRequest, RemoveOutcome};

use crate::error::{BenchError, Result};
use crate::report::BenchMode;
use crate::run::{run_benchmark, BenchOptions, MetricsSource};
use crate::trace::{generate_trace, AccessTrace, TraceParams};

#[derive(Parser, Debug)]
#[command(name = "hpcio", version, about = "HTTP/1.1 data access client and benchmark harness")]
struct Cli {
    /// Client configuration file (`key = value` lines). Environment
    /// variables such as VECTOR_GAP_THRESHOLD override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download an object to a file or stdout.
    Get {
        uri: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Upload a local file, replacing the remote object.
    Put { file: PathBuf, uri: String },
    /// Delete an object.
    Rm { uri: String },
    /// Print size, validators and range support.
    Info { uri: String },
    /// Read the fragments of a trace in one vectored call.
    Vecread {
        uri: String,
        #[arg(long)]
        trace: PathBuf,
        /// One `<id>.bin` file per fragment is written here.
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-source download using the object's metalink.
    DlMulti {
        uri: String,
        #[arg(long)]
        streams: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a trace and write a report.
    Bench {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        mode: BenchMode,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long)]
        report: PathBuf,
        /// Per-repetition timings as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Object to read instead of the trace's `object_uri`.
        #[arg(long)]
        uri: Option<String>,
        /// Metrics endpoint URL, or `off`. Defaults to `/.metrics` on the
        /// object's server when it exists.
        #[arg(long)]
        metrics: Option<String>,
    },
    /// Generate a random access trace.
    Trace {
        #[arg(long)]
        uri: String,
        #[arg(long)]
        size: u64,
        #[arg(long, default_value_t = 1200)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        min: u64,
        #[arg(long, default_value_t = 1000)]
        max: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Run the command line; returns the process exit code: 0 on success, 1 on
/// an operational error, 2 on a usage error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            // value errors come without a synopsis
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hpcio: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = load_config_from_env(cli.config.as_deref())?;
    match cli.command {
        Command::Get { uri, output } => {
            let client = Client::new(config)?;
            match output {
                Some(path) => {
                    // fetch first so a failed GET leaves no empty file behind
                    let body = client.get(&uri)?;
                    fs::write(path, body)?;
                }
                None => {
                    let mut out = io::stdout().lock();
                    client.get_to(&uri, &mut out)?;
                    out.flush()?;
                }
            }
        }
        Command::Put { file, uri } => {
            let info = Client::new(config)?.put_file(&uri, &file)?;
            println!(
                "stored {} ({} bytes)",
                info.uri,
                info.size.map_or("?".into(), |n| n.to_string())
            );
        }
        Command::Rm { uri } => match Client::new(config)?.remove(&uri)? {
            RemoveOutcome::Deleted => println!("deleted {uri}"),
            RemoveOutcome::AlreadyAbsent => println!("already absent {uri}"),
        },
        Command::Info { uri } => {
            let info = Client::new(config)?.stat(&uri)?;
            println!("uri={}", info.uri);
            println!("size={}", info.size.map_or("unknown".into(), |n| n.to_string()));
            println!("ranges={}", if info.supports_ranges { "yes" } else { "no" });
            if let Some(etag) = &info.etag {
                println!("etag={etag}");
            }
            if let Some(t) = info.last_modified {
                println!("last_modified={}", httpdate::fmt_http_date(t));
            }
        }
        Command::Vecread { uri, trace, out } => vecread(config, &uri, &trace, &out)?,
        Command::DlMulti { uri, streams, output } => {
            if let Some(n) = streams {
                config.streams.streams = n;
            }
            download(config, &uri, output)?;
        }
        Command::Bench {
            trace,
            mode,
            repeat,
            report,
            csv,
            uri,
            metrics,
        } => {
            let trace = AccessTrace::load(&trace)?;
            let opts = BenchOptions {
                repeat,
                metrics: match metrics.as_deref() {
                    None => MetricsSource::Auto,
                    Some("off") => MetricsSource::Off,
                    Some(u) => MetricsSource::Url(u.to_string()),
                },
                object_uri: uri,
            };
            let result = run_benchmark(&trace, mode, &config, &opts)?;
            fs::write(&report, result.render())?;
            if let Some(path) = csv {
                result.write_csv(File::create(path)?)?;
            }
            println!(
                "{mode}: {} repetitions, mean {:.1} ms",
                result.repetitions.len(),
                result.wall_mean().as_secs_f64() * 1e3
            );
            if let Some(e) = result.error {
                return Err(BenchError::InvalidParams(format!("run aborted: {e}")));
            }
        }
        Command::Trace {
            uri,
            size,
            count,
            min,
            max,
            seed,
            output,
        } => {
            let params = TraceParams {
                object_size: size,
                fragment_count: count,
                min_len: min,
                max_len: max,
                seed,
            };
            generate_trace(&uri, &params)?.save(&output)?;
        }
    }
    Ok(())
}

fn vecread(config: ClientConfig, uri: &str, trace: &Path, out: &Path) -> Result<()> {
    let trace = AccessTrace::load(trace)?;
    fs::create_dir_all(out)?;
    let client = Client::new(config)?;
    let mut bufs: Vec<Vec<u8>> = trace.fragments.iter().map(|f| vec![0u8; f.length as usize]).collect();
    let mut frags: Vec<FragmentRequest<'_>> = trace
        .fragments
        .iter()
        .zip(bufs.iter_mut())
        .map(|(f, b)| FragmentRequest::new(f.id, f.range(), b))
        .collect();
    let outcomes = client.vector_read(uri, &mut frags)?;
    drop(frags);
    let mut first_failure = None;
    let mut written = 0u64;
    for ((f, buf), outcome) in trace.fragments.iter().zip(&bufs).zip(outcomes) {
        match outcome {
            Ok(()) => {
                fs::write(out.join(format!("{}.bin", f.id)), buf)?;
                written += f.length;
            }
            Err(source) => {
                eprintln!("hpcio: fragment {}: {source}", f.id);
                first_failure.get_or_insert(BenchError::Fragment { id: f.id, source });
            }
        }
    }
    println!("{} fragments, {written} bytes", trace.fragments.len());
    first_failure.map_or(Ok(()), Err)
}

fn download(config: ClientConfig, uri: &str, output: Option<PathBuf>) -> Result<()> {
    let path = match output {
        Some(p) => p,
        None => {
            let url = url::Url::parse(uri).map_err(|e| hpcio::Error::MalformedUri(format!("{uri}: {e}")))?;
            let name = url
                .path_segments()
                .and_then(|mut s| s.next_back())
                .filter(|s| !s.is_empty());
            PathBuf::from(name.unwrap_or("download.bin"))
        }
    };
    let client = Client::new(config)?;
    // the checksum pass reads the file back, so it is opened read-write
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(true)
        .open(&path)?;
    let report = client.download_multistream(uri, &file)?;
    println!("{} bytes -> {}", report.bytes, path.display());
    for (replica, chunks) in &report.per_replica_chunks {
        println!("  {chunks} chunks from {replica}");
    }
    match (&report.checksum_algorithm, report.checksum_verified) {
        (Some(algo), true) => println!("{algo} verified"),
        _ => println!("no checksum verified"),
    }
    for w in &report.warnings {
        eprintln!("hpcio: warning: {w}");
    }
    Ok(())
}

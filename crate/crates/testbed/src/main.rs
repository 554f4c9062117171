use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use hpcio_testbed::{serve, FaultPlan, LatencyModel, ReplicaRoot, TestbedConfig};

/// Deterministic HTTP/1.1 test origin with latency and fault injection.
#[derive(Parser, Debug)]
#[command(name = "testbed")]
struct Args {
    /// Directory served at `/`.
    #[arg(long)]
    corpus: PathBuf,
    /// Replica roots as `name:DIR` or `name@cc:DIR`, comma separated.
    #[arg(long, value_delimiter = ',')]
    replicas: Vec<String>,
    /// Per-request delay in milliseconds (emulated round trip).
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    #[arg(long, default_value_t = 0)]
    jitter_ms: u64,
    /// Body pacing in milliseconds per MiB.
    #[arg(long, default_value_t = 0)]
    ms_per_mb: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fault plan file.
    #[arg(long)]
    faults: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

fn parse_replica(spec: &str) -> Result<ReplicaRoot, String> {
    let (name, dir) = spec
        .split_once(':')
        .ok_or_else(|| format!("replica {spec:?} is not name:DIR"))?;
    let (name, location) = match name.split_once('@') {
        Some((n, loc)) => (n, Some(loc.to_string())),
        None => (name, None),
    };
    Ok(ReplicaRoot {
        name: name.to_string(),
        root: PathBuf::from(dir),
        location,
    })
}

fn main() {
    env_logger::init();
    let args = Args::parse();
    let mut config = TestbedConfig::new(&args.corpus);
    config.bind = args.bind;
    config.latency = LatencyModel {
        per_request_delay: Duration::from_millis(args.latency_ms),
        per_megabyte_delay: Duration::from_millis(args.ms_per_mb),
        jitter: Duration::from_millis(args.jitter_ms),
        seed: args.seed,
    };
    for spec in &args.replicas {
        match parse_replica(spec) {
            Ok(r) => config.replicas.push(r),
            Err(e) => {
                eprintln!("testbed: {e}");
                std::process::exit(2);
            }
        }
    }
    if let Some(path) = &args.faults {
        match FaultPlan::load(path) {
            Ok(plan) => config.faults = plan,
            Err(e) => {
                eprintln!("testbed: {e}");
                std::process::exit(2);
            }
        }
    }
    let handle = match serve(config) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("testbed: {e}");
            std::process::exit(1);
        }
    };
    println!("serving on {}", handle.base_url());
    loop {
        std::thread::park();
    }
}

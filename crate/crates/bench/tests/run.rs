mod common;

use std::time::Duration;

use common::{bed, pattern, start, BedSpec};
use hpcio::ClientConfig;
use hpcio_bench::{generate_trace, run_benchmark, AccessTrace, BenchMode, BenchOptions, MetricsSource, TraceParams};
use hpcio_testbed::{FaultPlan, PRIMARY_ROOT};

fn trace(uri: &str, size: u64, count: usize, seed: u64) -> AccessTrace {
    generate_trace(
        uri,
        &TraceParams {
            object_size: size,
            fragment_count: count,
            min_len: 100,
            max_len: 1000,
            seed,
        },
    )
    .unwrap()
}

fn opts(repeat: usize) -> BenchOptions {
    BenchOptions {
        repeat,
        ..BenchOptions::default()
    }
}

#[test]
fn modes_agree_on_every_fragment() {
    let data = pattern(700_000, 1);
    let b = start(BedSpec {
        objects: &[("obj", &data)],
        replicas: 2,
        ..BedSpec::default()
    });
    let mut cfg = ClientConfig::default();
    cfg.streams.chunk_size = 128 << 10;
    let t = trace(&b.url("/obj"), 700_000, 300, 7);
    let reports: Vec<_> = BenchMode::ALL
        .into_iter()
        .map(|m| run_benchmark(&t, m, &cfg, &opts(1)).unwrap())
        .collect();
    for r in &reports {
        assert!(r.is_valid(), "{:?}", r.error);
        assert_eq!(r.fragment_digests, reports[0].fragment_digests, "{:?}", r.mode);
    }
    // the oracle: the object itself
    let want: Vec<[u8; 32]> = t
        .fragments
        .iter()
        .map(|f| {
            use sha2::Digest;
            sha2::Sha256::digest(&data[f.offset as usize..(f.offset + f.length) as usize]).into()
        })
        .collect();
    assert_eq!(reports[0].fragment_digests, want);
}

#[test]
fn counters_match_the_server() {
    let data = pattern(500_000, 2);
    let b = bed(&[("obj", &data)]);
    let t = trace(&b.url("/obj"), 500_000, 100, 8);
    let before = b.server.snapshot_metrics();
    let seq = run_benchmark(&t, BenchMode::Sequential, &ClientConfig::default(), &opts(3)).unwrap();
    let mid = b.server.snapshot_metrics();
    let mut cfg = ClientConfig::default();
    cfg.vector.max_ranges_per_request = 30;
    let vec = run_benchmark(&t, BenchMode::Vectored, &cfg, &opts(3)).unwrap();
    let after = b.server.snapshot_metrics();

    assert_eq!(seq.requests_issued(), Some(mid.requests_total - before.requests_total));
    assert_eq!(seq.tcp_connections(), Some(mid.tcp_accepts - before.tcp_accepts));
    assert_eq!(vec.requests_issued(), Some(after.requests_total - mid.requests_total));
    assert_eq!(vec.tcp_connections(), Some(after.tcp_accepts - mid.tcp_accepts));
    for r in &seq.repetitions {
        assert_eq!((r.requests, r.connections), (Some(100), Some(1)));
    }
    let batches = hpcio::plan_fragments(&t.fragments.iter().map(|f| f.range()).collect::<Vec<_>>(), &cfg.vector)
        .stats
        .batch_count as u64;
    for r in &vec.repetitions {
        assert_eq!(r.requests, Some(batches));
    }
    assert_eq!(vec.batch_timings.len(), batches as usize);
    assert!(seq.extra_bytes == 0 && vec.payload_bytes == t.total_bytes());
}

#[test]
fn latency_floor_and_speedup() {
    let data = pattern(200_000, 3);
    let b = start(BedSpec {
        objects: &[("obj", &data)],
        latency: Duration::from_millis(20),
        ..BedSpec::default()
    });
    let t = trace(&b.url("/obj"), 200_000, 30, 9);
    let seq = run_benchmark(&t, BenchMode::Sequential, &ClientConfig::default(), &opts(1)).unwrap();
    let vec = run_benchmark(&t, BenchMode::Vectored, &ClientConfig::default(), &opts(1)).unwrap();
    assert!(seq.wall_min() >= Duration::from_millis(30 * 20), "{:?}", seq.wall_min());
    assert_eq!(vec.requests_issued(), Some(1));
    assert!(
        vec.wall_max() * 5 < seq.wall_min(),
        "{:?} vs {:?}",
        vec.wall_max(),
        seq.wall_min()
    );
}

#[test]
fn repetitions_are_stable_without_jitter() {
    let data = pattern(100_000, 4);
    let b = start(BedSpec {
        objects: &[("obj", &data)],
        latency: Duration::from_millis(15),
        ..BedSpec::default()
    });
    let t = trace(&b.url("/obj"), 100_000, 12, 10);
    let r = run_benchmark(&t, BenchMode::Sequential, &ClientConfig::default(), &opts(4)).unwrap();
    let mean = r.wall_mean().as_secs_f64();
    for rep in &r.repetitions {
        let dev = (rep.wall.as_secs_f64() - mean).abs() / mean;
        assert!(dev <= 0.2, "{:?}", r.repetitions);
    }
}

#[test]
fn failover_mode_reads_from_replicas() {
    let data = pattern(300_000, 5);
    let b = start(BedSpec {
        objects: &[("obj", &data)],
        replicas: 2,
        faults: FaultPlan::new().replica_offline(PRIMARY_ROOT, 0),
        ..BedSpec::default()
    });
    let t = trace(&b.url("/obj"), 300_000, 50, 11);
    let r = run_benchmark(&t, BenchMode::Failover, &ClientConfig::default(), &opts(1)).unwrap();
    assert!(r.is_valid(), "{:?}", r.error);
    let v = run_benchmark(&t, BenchMode::Vectored, &ClientConfig::default(), &opts(1)).unwrap();
    assert!(!v.is_valid());
    assert!(v.repetitions.is_empty());
}

#[test]
fn errors_abort_with_a_partial_report() {
    let b = bed(&[]);
    let t = trace(&b.url("/missing"), 10_000, 5, 12);
    let r = run_benchmark(&t, BenchMode::Sequential, &ClientConfig::default(), &opts(2)).unwrap();
    assert!(!r.is_valid());
    assert!(r.error.as_deref().unwrap().contains("404"));
    assert!(r.render().contains("valid=false"));
}

#[test]
fn object_shorter_than_trace() {
    let b = bed(&[("obj", &pattern(1000, 6))]);
    let t = trace(&b.url("/obj"), 100_000, 20, 13);
    for mode in [BenchMode::Sequential, BenchMode::Vectored, BenchMode::Multistream] {
        let r = run_benchmark(&t, mode, &ClientConfig::default(), &opts(1)).unwrap();
        assert!(!r.is_valid(), "{mode}");
    }
}

#[test]
fn metrics_sources() {
    let b = bed(&[("obj", &pattern(10_000, 7))]);
    let t = trace(&b.url("/obj"), 10_000, 5, 14);
    let cfg = ClientConfig::default();
    let off = BenchOptions {
        metrics: MetricsSource::Off,
        ..opts(1)
    };
    assert_eq!(
        run_benchmark(&t, BenchMode::Vectored, &cfg, &off)
            .unwrap()
            .requests_issued(),
        None
    );

    let explicit = BenchOptions {
        metrics: MetricsSource::Url(b.server.metrics_url()),
        ..opts(1)
    };
    assert_eq!(
        run_benchmark(&t, BenchMode::Sequential, &cfg, &explicit)
            .unwrap()
            .requests_issued(),
        Some(5)
    );

    let wrong = BenchOptions {
        metrics: MetricsSource::Url(b.url("/obj")),
        ..opts(1)
    };
    assert!(run_benchmark(&t, BenchMode::Sequential, &cfg, &wrong).is_err());

    // an origin without a metrics endpoint just yields no counters
    let other = BenchOptions {
        object_uri: Some("http://127.0.0.1:9/obj".into()),
        ..opts(1)
    };
    let r = run_benchmark(&t, BenchMode::Sequential, &cfg, &other).unwrap();
    assert!(!r.is_valid());
}

#[test]
fn invalid_options() {
    let b = bed(&[("obj", b"x")]);
    let t = trace(&b.url("/obj"), 10_000, 1, 15);
    assert!(run_benchmark(&t, BenchMode::Vectored, &ClientConfig::default(), &opts(0)).is_err());
    let mut bad = ClientConfig::default();
    bad.vector.max_ranges_per_request = 0;
    assert!(run_benchmark(&t, BenchMode::Vectored, &bad, &opts(1)).is_err());
}

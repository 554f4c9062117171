mod common;

use std::io::{Read, Seek, SeekFrom};

use common::{bed, bed_with, client, client_with, pattern};
use hpcio::{ByteRange, Error, FragmentRequest, MetalinkStrategy, RemoveOutcome};
use hpcio_testbed::{FaultEvent, FaultPlan, Toggle, PRIMARY_ROOT};

#[test]
fn crud_lifecycle() {
    let b = bed(&[]);
    let c = client();
    let uri = b.url("/data/new.bin");
    let body = pattern(1024, 1);

    let info = c.put(&uri, &body).unwrap();
    assert_eq!(info.size, Some(1024));
    assert_eq!(c.stat(&uri).unwrap().size, Some(1024));
    assert_eq!(c.get(&uri).unwrap(), body);
    assert_eq!(c.get(&uri).unwrap(), c.get(&uri).unwrap());

    // idempotent replace
    c.put(&uri, &body).unwrap();
    c.put(&uri, &body).unwrap();
    assert_eq!(c.get(&uri).unwrap(), body);

    assert_eq!(c.remove(&uri).unwrap(), RemoveOutcome::Deleted);
    assert_eq!(c.get(&uri).unwrap_err().status(), Some(404));
    assert_eq!(c.remove(&uri).unwrap(), RemoveOutcome::AlreadyAbsent);
}

#[test]
fn read_only_area_is_forbidden() {
    let b = bed_with(
        &[("ro/x", b"keep")],
        0,
        FaultPlan::new().with(FaultEvent::ReadOnly { prefix: "/ro".into() }),
    );
    let c = client();
    assert_eq!(c.put(&b.url("/ro/y"), b"nope").unwrap_err().status(), Some(403));
    assert_eq!(c.remove(&b.url("/ro/x")).unwrap_err().status(), Some(403));
    assert_eq!(c.get(&b.url("/ro/x")).unwrap(), b"keep");
}

#[test]
fn stat_fields() {
    let b = bed(&[("obj", &pattern(700, 2))]);
    let c = client();
    let info = c.stat(&b.url("/obj")).unwrap();
    assert_eq!(info.size, Some(700));
    assert!(info.supports_ranges);
    assert!(info.etag.is_some());
    assert!(info.last_modified.is_some());
    assert_eq!(c.stat(&b.url("/missing")).unwrap_err().status(), Some(404));

    b.server.set_faults(
        FaultPlan::new()
            .toggle(Toggle::HeadOmitLength, true)
            .toggle(Toggle::IgnoreRange, true),
    );
    let info = c.stat(&b.url("/obj")).unwrap();
    assert_eq!(info.size, None);
    assert!(!info.supports_ranges);
}

#[test]
fn large_put_from_file() {
    let b = bed(&[]);
    let c = client();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src.bin");
    let body = pattern(3 << 20, 3);
    std::fs::write(&path, &body).unwrap();
    let info = c.put_file(&b.url("/big"), &path).unwrap();
    assert_eq!(info.size, Some(3 << 20));
    let mut out = Vec::new();
    assert_eq!(c.get_to(&b.url("/big"), &mut out).unwrap(), 3 << 20);
    assert!(out == body);
}

#[test]
fn malformed_uris() {
    let c = client();
    for bad in ["not a uri", "ftp://host/x", "http://", "/relative"] {
        assert!(matches!(c.get(bad), Err(Error::MalformedUri(_))), "{bad}");
    }
}

#[test]
fn handle_reads() {
    let data = pattern(700, 4);
    let b = bed(&[("obj", &data)]);
    let c = client();
    let mut h = c.open(&b.url("/obj")).unwrap();
    assert_eq!(h.position(), 0);
    assert_eq!(h.size(), Some(700));
    assert_eq!(h.pread(0, 16).unwrap(), &data[..16]);
    assert_eq!(h.pread(690, 100).unwrap(), &data[690..]);
    assert_eq!(
        h.pread(700, 1).unwrap_err(),
        Error::RangeNotSatisfiable { total: Some(700) }
    );

    assert_eq!(h.read_next(600).unwrap(), &data[..600]);
    assert_eq!(h.read_next(600).unwrap(), &data[600..]);
    assert_eq!(h.position(), 700);
    assert!(h.read_next(10).unwrap().is_empty());
    assert_eq!(h.position(), 700);

    h.seek(SeekFrom::End(-50)).unwrap();
    let mut rest = Vec::new();
    h.read_to_end(&mut rest).unwrap();
    assert_eq!(rest, &data[650..]);
    assert!(h.seek(SeekFrom::Start(701)).is_err());
    assert!(h.seek(SeekFrom::Current(-1000)).is_err());
}

#[test]
fn preadvec_matches_independent_preads() {
    let data = pattern(200_000, 5);
    let b = bed(&[("obj", &data)]);
    let c = client();
    let h = c.open(&b.url("/obj")).unwrap();
    let ranges: Vec<ByteRange> = (0..1024).map(|i| ByteRange::new(i * 190, 37).unwrap()).collect();
    let mut bufs: Vec<Vec<u8>> = ranges.iter().map(|r| vec![0; r.len() as usize]).collect();
    let mut frags: Vec<FragmentRequest<'_>> = ranges
        .iter()
        .zip(bufs.iter_mut())
        .map(|(r, b)| FragmentRequest::new(r.offset(), *r, b))
        .collect();
    let outcomes = h.preadvec(&mut frags).unwrap();
    drop(frags);
    assert!(outcomes.iter().all(Result::is_ok));
    for (r, got) in ranges.iter().zip(&bufs).step_by(97) {
        assert_eq!(got, &h.pread(r.offset(), r.len()).unwrap());
    }
}

#[test]
fn positions_are_reproducible() {
    let data = pattern(5000, 6);
    let b = bed(&[("obj", &data)]);
    let c = client();
    let script = |mut h: hpcio::RemoteFileHandle| {
        let mut log = Vec::new();
        for step in 0..20u64 {
            if step % 3 == 0 {
                log.push(h.pread(step * 211, 40).unwrap());
            } else {
                log.push(h.read_next(step * 17 + 1).unwrap());
            }
            log.push(h.position().to_le_bytes().to_vec());
        }
        log
    };
    let a = script(c.open(&b.url("/obj")).unwrap());
    let b2 = script(c.open(&b.url("/obj")).unwrap());
    assert_eq!(a, b2);
}

#[test]
fn open_fails_over_to_replica() {
    let data = pattern(700, 7);
    // the object exists only on replicas; the primary namespace is down
    let b = bed_with(
        &[("obj", &data)],
        2,
        FaultPlan::new()
            .replica_offline(PRIMARY_ROOT, 0)
            .replica_offline("r0", 0),
    );
    let c = client();
    let h = c.open(&b.url("/obj")).unwrap();
    assert_eq!(h.url().path(), "/r1/obj");
    assert_eq!(h.pread(100, 20).unwrap(), &data[100..120]);

    let off = client_with(|cfg| cfg.metalink = MetalinkStrategy::Off);
    assert!(off.open(&b.url("/obj")).unwrap_err().is_unavailable());
}

#[test]
fn open_missing_everywhere() {
    let b = bed(&[]);
    let err = client().open(&b.url("/nothing")).unwrap_err();
    assert!(matches!(err, Error::AllReplicasFailed(_)), "{err}");
}

#[test]
fn multistream_through_client() {
    let data = pattern(400_000, 8);
    let b = bed_with(&[("obj", &data)], 3, FaultPlan::new());
    let c = client_with(|cfg| cfg.streams.chunk_size = 64 << 10);
    let sink = hpcio::MemorySink::new();
    let report = c.download_multistream(&b.url("/obj"), &sink).unwrap();
    assert!(sink.into_inner() == data);
    assert!(report.checksum_verified);

    // no metalink: falls back to chunked download from the URI itself
    let plain = bed(&[("obj", &data)]);
    let sink = hpcio::MemorySink::new();
    let report = c.download_multistream(&plain.url("/obj"), &sink).unwrap();
    assert!(sink.into_inner() == data);
    assert!(!report.checksum_verified);
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn download_to_file() {
    let data = pattern(300_000, 9);
    let b = bed_with(&[("obj", &data)], 2, FaultPlan::new());
    let c = client_with(|cfg| cfg.streams.chunk_size = 10_000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.bin");
    let file = std::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(true)
        .open(&path)
        .unwrap();
    c.download_multistream(&b.url("/obj"), &file).unwrap();
    assert!(std::fs::read(&path).unwrap() == data);
}

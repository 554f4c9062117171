#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use hpcio_testbed::{serve, FaultPlan, LatencyModel, TestbedConfig, TestbedHandle};
use tempfile::TempDir;

pub fn pattern(len: usize, salt: u8) -> Vec<u8> {
    (0..len)
        .map(|i| ((i as u64).wrapping_mul(2_654_435_761) >> 13) as u8 ^ (i as u8) ^ salt)
        .collect()
}

pub fn write(root: &Path, rel: &str, data: &[u8]) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, data).unwrap();
}

pub struct Bed {
    pub dir: TempDir,
    pub server: TestbedHandle,
}

impl Bed {
    pub fn url(&self, path: &str) -> String {
        self.server.url(path)
    }

    pub fn corpus(&self) -> std::path::PathBuf {
        self.dir.path().join("corpus")
    }
}

pub struct BedSpec<'a> {
    pub objects: &'a [(&'a str, &'a [u8])],
    pub replicas: usize,
    pub faults: FaultPlan,
    pub latency: Duration,
}

impl Default for BedSpec<'_> {
    fn default() -> Self {
        BedSpec {
            objects: &[],
            replicas: 0,
            faults: FaultPlan::new(),
            latency: Duration::ZERO,
        }
    }
}

/// Corpus holding the objects; replicas `r0..rN` each hold a copy.
pub fn start(spec: BedSpec<'_>) -> Bed {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for (rel, data) in spec.objects {
        write(&corpus, rel, data);
    }
    let mut config = TestbedConfig::new(&corpus)
        .faults(spec.faults)
        .latency(LatencyModel::fixed(spec.latency));
    for i in 0..spec.replicas {
        let name = format!("r{i}");
        let root = dir.path().join(&name);
        std::fs::create_dir_all(&root).unwrap();
        for (rel, data) in spec.objects {
            write(&root, rel, data);
        }
        config = config.replica(&name, root);
    }
    let server = serve(config).unwrap();
    Bed { dir, server }
}

pub fn bed(objects: &[(&str, &[u8])]) -> Bed {
    start(BedSpec {
        objects,
        ..BedSpec::default()
    })
}

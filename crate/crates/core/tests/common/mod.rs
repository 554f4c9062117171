#![allow(dead_code)]

use std::path::Path;

use hpcio::{Client, ClientConfig};
use hpcio_testbed::{serve, FaultPlan, TestbedConfig, TestbedHandle};
use tempfile::TempDir;

/// Deterministic, position-dependent bytes: every offset is distinguishable.
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

/// A testbed with its temporary corpus and replica directories.
pub struct Bed {
    pub dir: TempDir,
    pub server: TestbedHandle,
}

impl Bed {
    pub fn corpus(&self) -> std::path::PathBuf {
        self.dir.path().join("corpus")
    }

    pub fn replica_dir(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    pub fn url(&self, path: &str) -> String {
        self.server.url(path)
    }
}

/// Corpus holding `objects`, plus replicas `r0..rN` that each hold a copy.
pub fn bed_with(objects: &[(&str, &[u8])], replicas: usize, faults: FaultPlan) -> Bed {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    let mut config = TestbedConfig::new(&corpus).faults(faults);
    for (rel, data) in objects {
        write(&corpus, rel, data);
    }
    for i in 0..replicas {
        let name = format!("r{i}");
        let root = dir.path().join(&name);
        std::fs::create_dir_all(&root).unwrap();
        for (rel, data) in objects {
            write(&root, rel, data);
        }
        config = config.replica(&name, root);
    }
    let server = serve(config).unwrap();
    Bed { dir, server }
}

pub fn bed(objects: &[(&str, &[u8])]) -> Bed {
    bed_with(objects, 0, FaultPlan::new())
}

pub fn client() -> Client {
    Client::new(ClientConfig::default()).unwrap()
}

pub fn client_with(edit: impl FnOnce(&mut ClientConfig)) -> Client {
    let mut config = ClientConfig::default();
    edit(&mut config);
    Client::new(config).unwrap()
}

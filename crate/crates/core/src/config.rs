//! Client configuration: built-in defaults, then a key=value file, then
//! environment variables (`pool.max_per_key` is read from `POOL_MAX_PER_KEY`).

use std::path::Path;
use std::time::Duration;

use crate::engine::EngineLimits;
use crate::error::{Error, Result};
use crate::metalink::StreamConfig;
use crate::pool::PoolConfig;
use crate::vector::VectorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetalinkStrategy {
    Off,
    #[default]
    Failover,
    Multistream,
}

impl std::str::FromStr for MetalinkStrategy {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "off" => Ok(MetalinkStrategy::Off),
            "failover" => Ok(MetalinkStrategy::Failover),
            "multistream" => Ok(MetalinkStrategy::Multistream),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub pool: PoolConfig,
    pub vector: VectorConfig,
    pub engine: EngineLimits,
    pub metalink: MetalinkStrategy,
    pub streams: StreamConfig,
    pub credential_id: String,
    /// TCP connect bound. `pool.connect_timeout` bounds the wait for a session.
    pub tcp_connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            pool: PoolConfig::default(),
            vector: VectorConfig::default(),
            engine: EngineLimits::default(),
            metalink: MetalinkStrategy::default(),
            streams: StreamConfig::default(),
            credential_id: crate::pool::ANONYMOUS.to_string(),
            tcp_connect_timeout: Duration::from_secs(10),
            io_timeout: Duration::from_secs(60),
        }
    }
}

/// Every recognized key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "pool.max_per_key",
    "pool.max_total",
    "pool.idle_ttl_s",
    "pool.connect_timeout_s",
    "vector.gap_threshold",
    "vector.max_ranges_per_request",
    "vector.max_range_header_bytes",
    "vector.max_concurrent_batches",
    "engine.max_full_body_fallback",
    "metalink.strategy",
    "metalink.streams",
    "metalink.chunk_size",
    "http.credential_id",
    "http.connect_timeout_s",
    "http.io_timeout_s",
];

/// `pool.max_per_key` -> `POOL_MAX_PER_KEY`
pub fn env_name(key: &str) -> String {
    key.replace('.', "_").to_ascii_uppercase()
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got {value:?}")))
}

fn seconds(key: &str, value: &str) -> Result<Duration> {
    Ok(Duration::from_secs(number(key, value)?))
}

impl ClientConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "pool.max_per_key" => self.pool.max_sessions_per_key = number(key, value)?,
            "pool.max_total" => self.pool.max_total_sessions = number(key, value)?,
            "pool.idle_ttl_s" => self.pool.idle_ttl = seconds(key, value)?,
            "pool.connect_timeout_s" => self.pool.connect_timeout = seconds(key, value)?,
            "vector.gap_threshold" => self.vector.gap_threshold = number(key, value)?,
            "vector.max_ranges_per_request" => self.vector.max_ranges_per_request = number(key, value)?,
            "vector.max_range_header_bytes" => self.vector.max_range_header_bytes = number(key, value)?,
            "vector.max_concurrent_batches" => self.vector.max_concurrent_batches = number(key, value)?,
            "engine.max_full_body_fallback" => self.engine.max_full_body_fallback = number(key, value)?,
            "metalink.strategy" => {
                self.metalink = value
                    .parse()
                    .map_err(|()| Error::config(key, "expected off, failover or multistream"))?
            }
            "metalink.streams" => self.streams.streams = number(key, value)?,
            "metalink.chunk_size" => self.streams.chunk_size = number(key, value)?,
            "http.credential_id" => {
                if value.is_empty() {
                    return Err(Error::config(key, "must not be empty"));
                }
                self.credential_id = value.to_string();
            }
            "http.connect_timeout_s" => self.tcp_connect_timeout = seconds(key, value)?,
            "http.io_timeout_s" => self.io_timeout = seconds(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        self.vector.validate()?;
        self.streams.validate()?;
        if self.tcp_connect_timeout.is_zero() {
            return Err(Error::config("http.connect_timeout_s", "must be at least 1"));
        }
        Ok(())
    }

    /// Apply `key = value` lines. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {} is not key=value", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }
}

/// Defaults, overridden by `path` (if any), overridden by matching entries
/// of `env`. Unrelated environment variables are ignored.
pub fn load_config<I, K, V>(path: Option<&Path>, env: I) -> Result<ClientConfig>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut config = ClientConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    let env: Vec<(K, V)> = env.into_iter().collect();
    for key in CONFIG_KEYS {
        let name = env_name(key);
        if let Some((_, v)) = env.iter().rev().find(|(k, _)| k.as_ref() == name) {
            config.set(key, v.as_ref())?;
        }
    }
    config.validate()?;
    Ok(config)
}

/// `load_config` against the process environment.
pub fn load_config_from_env(path: Option<&Path>) -> Result<ClientConfig> {
    load_config(path, std::env::vars())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults() {
        let c = load_config(None, no_env()).unwrap();
        assert_eq!(c, ClientConfig::default());
        assert_eq!(c.metalink, MetalinkStrategy::Failover);
        assert_eq!(c.vector.gap_threshold, 2048);
        assert_eq!(c.pool.max_sessions_per_key, 16);
    }

    #[test]
    fn env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("client.conf");
        std::fs::write(&path, "# comment\npool.max_per_key = 4\nmetalink.strategy=off\n").unwrap();
        let c = load_config(Some(&path), [("POOL_MAX_PER_KEY", "8"), ("HOME", "/x")]).unwrap();
        assert_eq!(c.pool.max_sessions_per_key, 8);
        assert_eq!(c.metalink, MetalinkStrategy::Off);
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = load_config(None, [("POOL_MAX_PER_KEY", "0")]).unwrap_err();
        assert!(
            matches!(err, Error::ConfigInvalid { ref key, .. } if key == "pool.max_per_key"),
            "{err}"
        );

        let mut c = ClientConfig::default();
        for (k, v) in [
            ("metalink.strategy", "sometimes"),
            ("vector.gap_threshold", "-1"),
            ("no.such.key", "1"),
        ] {
            assert!(matches!(c.set(k, v), Err(Error::ConfigInvalid { key, .. }) if key == k));
        }
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = ClientConfig::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "metalink.strategy" => "multistream",
                "http.credential_id" => "alice",
                _ => "3",
            };
            c.set(key, value).unwrap();
        }
        assert_eq!(c.credential_id, "alice");
        assert_eq!(
            env_name("vector.max_range_header_bytes"),
            "VECTOR_MAX_RANGE_HEADER_BYTES"
        );
    }
}

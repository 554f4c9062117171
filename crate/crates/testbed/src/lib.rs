//! Deterministic HTTP/1.1 origin server for exercising range, pooling and
//! replica fail-over behaviour.
//!
//! The server supports GET/HEAD/PUT/DELETE over a corpus directory plus any
//! number of named replica roots mounted at `/<name>/`. Behaviour is scripted
//! by a [`FaultPlan`] and network regimes are emulated by a [`LatencyModel`].
//! Counters are exposed at [`METRICS_PATH`] as a flat `key=value` document.

mod error;
pub mod faults;
pub mod latency;
pub mod metalink;
pub mod metrics;
pub mod multipart;
pub mod range;
mod server;

pub use error::TestbedError;
pub use faults::{FaultEvent, FaultPlan, MetalinkRungs, Toggle, PRIMARY_ROOT};
pub use latency::LatencyModel;
pub use metalink::METALINK_MEDIA_TYPE;
pub use metrics::{ServerMetrics, METRICS_PATH};
pub use multipart::{compose_multipart, compose_multipart_framed, Part};
pub use server::{serve, ReplicaRoot, TestbedConfig, TestbedHandle};

//! Pooled, range-aware HTTP/1.1 client for remote file access.

pub mod client;
pub mod config;
pub mod engine;
pub mod error;
pub mod http;
pub mod metalink;
pub mod multipart;
pub mod pool;
pub mod range;
pub mod vector;

pub use client::{Client, RemoteFileHandle, RemoveOutcome, ResourceInfo};
pub use config::{load_config, load_config_from_env, ClientConfig, MetalinkStrategy};
pub use engine::{execute_ranged_get, EngineLimits, RangedResponse, ResponseKind};
pub use error::{Error, Result};
pub use http::{Agent, Method, RequestBody, Response};
pub use metalink::{
    discover_metalink, failover_read, multistream_download, order_replicas, parse_metalink, plan_streams, Discovery,
    DownloadReport, DownloadSink, MemorySink, MetalinkDocument, Replica, StreamConfig, StreamPlan,
};
pub use multipart::{parse_multipart_byteranges, MultipartReader, RangePart};
pub use pool::{PoolConfig, PoolStats, SessionKey, SessionPool};
pub use range::{compose_range_header, parse_content_range, ByteRange, ContentRangeInfo};
pub use vector::{
    normalize_fragments, partition_ranges, plan_fragments, vector_read, vector_read_with_stats, FragmentRequest,
    FragmentSlot, PlanStats, VectorConfig, VectorOutcome, VectorPlan, VectorStats,
};

//! Edge→vehicle and edge→cloud networking: the perception-message wire
//! codec, the RSU broadcast forwarder, latency instrumentation, and the
//! cloud side (ingest gateway, pub/sub dispatcher, storage sink).

pub mod forwarder;
pub mod gateway;
pub mod httpc;
pub mod latency;
pub mod pubsub;
pub mod storage;
pub mod v2x;

//! Append-only storage sink: the durable system of record for ingested
//! envelopes, deliberately independent of the pub/sub path.
//!
//! Envelopes append to hourly files `root/<topic>/<YYYYMMDDHH>.log` as
//! length-prefixed records:
//!
//! `u32 body_len | body | u32 crc32(body)` — body is
//! `u64 received_ts_ms | u16 source_len | source | payload` (all
//! little-endian). Files fsync every N records; replay recovers every
//! complete record and flags a truncated tail instead of erroring.

use crate::pubsub::{validate_topic, CloudEnvelope};
use chrono::{TimeZone, Utc};
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

/// Default records between fsyncs.
pub const DEFAULT_FSYNC_EVERY: usize = 64;

struct OpenLog {
    file: File,
    pending: usize,
}

/// Single-writer append sink rooted at one directory.
pub struct StorageSink {
    root: PathBuf,
    fsync_every: usize,
    open: HashMap<PathBuf, OpenLog>,
}

/// Hour-bucket file name for a wall-clock timestamp.
pub fn hour_file_name(received_ts_ms: u64) -> String {
    let dt = Utc
        .timestamp_millis_opt(received_ts_ms as i64)
        .single()
        .expect("timestamp out of chrono range");
    format!("{}.log", dt.format("%Y%m%d%H"))
}

fn record_bytes(env: &CloudEnvelope) -> Vec<u8> {
    let mut body =
        Vec::with_capacity(8 + 2 + env.source.len() + env.payload.len());
    body.extend_from_slice(&env.received_ts_ms.to_le_bytes());
    body.extend_from_slice(&(env.source.len() as u16).to_le_bytes());
    body.extend_from_slice(env.source.as_bytes());
    body.extend_from_slice(&env.payload);
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

impl StorageSink {
    pub fn new(root: impl Into<PathBuf>, fsync_every: usize) -> Self {
        StorageSink { root: root.into(), fsync_every: fsync_every.max(1), open: HashMap::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Appends one envelope to its topic's current hourly file. Any error
    /// means the record may not be durable and the caller must fail the
    /// ingest closed.
    pub fn append(&mut self, env: &CloudEnvelope) -> io::Result<()> {
        validate_topic(&env.topic).map_err(io::Error::other)?;
        if env.source.len() > usize::from(u16::MAX) {
            return Err(io::Error::other("source id longer than 65535 bytes"));
        }
        let path = self
            .root
            .join(&env.topic)
            .join(hour_file_name(env.received_ts_ms));
        if !self.open.contains_key(&path) {
            fs::create_dir_all(path.parent().expect("hour file has a parent"))?;
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            self.open.insert(path.clone(), OpenLog { file, pending: 0 });
        }
        let log = self.open.get_mut(&path).expect("just inserted");
        log.file.write_all(&record_bytes(env))?;
        log.pending += 1;
        if log.pending >= self.fsync_every {
            log.file.sync_data()?;
            log.pending = 0;
        }
        Ok(())
    }

    /// Syncs every open file.
    pub fn flush(&mut self) -> io::Result<()> {
        for log in self.open.values_mut() {
            log.file.sync_data()?;
            log.pending = 0;
        }
        Ok(())
    }
}

impl Drop for StorageSink {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Result of replaying one hourly file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub envelopes: Vec<CloudEnvelope>,
    /// Set when the file ends mid-record (torn final write); all records
    /// before the tear are still returned.
    pub truncated_tail: bool,
}

/// Replays an hourly log file. The topic is the parent directory name.
pub fn replay_file(path: &Path) -> io::Result<Replay> {
    let topic = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .ok_or_else(|| io::Error::other("log file has no topic directory"))?
        .to_string();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    let mut envelopes = Vec::new();
    let mut at = 0usize;
    let mut truncated_tail = false;
    while at < bytes.len() {
        if bytes.len() - at < 4 {
            truncated_tail = true;
            break;
        }
        let body_len =
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let total = 4 + body_len + 4;
        if bytes.len() - at < total {
            truncated_tail = true;
            break;
        }
        let body = &bytes[at + 4..at + 4 + body_len];
        let crc = u32::from_le_bytes(
            bytes[at + 4 + body_len..at + total].try_into().expect("4 bytes"),
        );
        if crc != crc32fast::hash(body) || body_len < 10 {
            // Append-only file: damage means a torn tail, not a gap.
            truncated_tail = true;
            break;
        }
        let received_ts_ms = u64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
        let source_len = usize::from(u16::from_le_bytes(body[8..10].try_into().expect("2 bytes")));
        if body_len < 10 + source_len {
            truncated_tail = true;
            break;
        }
        let source = String::from_utf8_lossy(&body[10..10 + source_len]).into_owned();
        let payload = body[10 + source_len..].to_vec();
        envelopes.push(CloudEnvelope { topic: topic.clone(), received_ts_ms, source, payload });
        at += total;
    }
    Ok(Replay { envelopes, truncated_tail })
}

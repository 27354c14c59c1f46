//! RSU broadcast worker: rebroadcasts the latest encoded perception frame
//! over UDP on a fixed period, independently of the perception loop.
//!
//! The pipeline publishes into a single "latest frame" slot; the forwarder
//! thread drains nothing and blocks nobody — it samples the slot every
//! period, skips frames older than the staleness gate, and absorbs send
//! failures with backoff so a dead receiver can never stall perception.

use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Default rebroadcast period.
pub const DEFAULT_PERIOD_MS: u64 = 100;
/// Default staleness gate: frames older than this are suppressed.
pub const DEFAULT_STALE_MS: u64 = 1000;

#[derive(Debug, Clone)]
struct SlotFrame {
    bytes: Arc<Vec<u8>>,
    published_at: Instant,
}

/// Single-producer "latest frame" slot shared with the forwarder.
#[derive(Debug, Clone, Default)]
pub struct FrameSlot {
    inner: Arc<Mutex<Option<SlotFrame>>>,
}

impl FrameSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the slot contents; the previous frame is dropped.
    pub fn publish(&self, bytes: Vec<u8>) {
        let frame = SlotFrame { bytes: Arc::new(bytes), published_at: Instant::now() };
        *self.inner.lock().expect("slot lock") = Some(frame);
    }

    fn snapshot(&self) -> Option<SlotFrame> {
        self.inner.lock().expect("slot lock").clone()
    }
}

/// Monotonic forwarder counters.
#[derive(Debug, Default)]
pub struct ForwarderStats {
    pub sent: AtomicU64,
    pub stale_suppressed: AtomicU64,
    pub send_errors: AtomicU64,
}

impl ForwarderStats {
    pub fn sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn stale_suppressed(&self) -> u64 {
        self.stale_suppressed.load(Ordering::Relaxed)
    }

    pub fn send_errors(&self) -> u64 {
        self.send_errors.load(Ordering::Relaxed)
    }
}

/// Forwarder tuning.
#[derive(Debug, Clone)]
pub struct ForwarderConfig {
    /// `host:port` datagram destination.
    pub endpoint: String,
    pub period: Duration,
    pub stale_after: Duration,
}

impl ForwarderConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ForwarderConfig {
            endpoint: endpoint.into(),
            period: Duration::from_millis(DEFAULT_PERIOD_MS),
            stale_after: Duration::from_millis(DEFAULT_STALE_MS),
        }
    }
}

/// Handle to a running forwarder thread.
pub struct ForwarderHandle {
    stats: Arc<ForwarderStats>,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ForwarderHandle {
    pub fn stats(&self) -> &ForwarderStats {
        &self.stats
    }

    /// Signals the worker and waits for it to exit.
    pub fn stop(mut self) -> Arc<ForwarderStats> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
        Arc::clone(&self.stats)
    }
}

impl Drop for ForwarderHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Spawns the periodic rebroadcast worker reading from `slot`.
pub fn spawn(slot: FrameSlot, config: ForwarderConfig) -> std::io::Result<ForwarderHandle> {
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    let stats = Arc::new(ForwarderStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let worker_stats = Arc::clone(&stats);
    let worker_stop = Arc::clone(&stop);
    let join = std::thread::Builder::new()
        .name("rsu-forwarder".into())
        .spawn(move || run(slot, config, socket, worker_stats, worker_stop))?;
    Ok(ForwarderHandle { stats, stop, join: Some(join) })
}

fn run(
    slot: FrameSlot,
    config: ForwarderConfig,
    socket: UdpSocket,
    stats: Arc<ForwarderStats>,
    stop: Arc<AtomicBool>,
) {
    let mut backoff = config.period;
    let mut next = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        next += config.period;
        if let Some(frame) = slot.snapshot() {
            if frame.published_at.elapsed() > config.stale_after {
                stats.stale_suppressed.fetch_add(1, Ordering::Relaxed);
            } else {
                match socket.send_to(&frame.bytes, &config.endpoint) {
                    Ok(_) => {
                        stats.sent.fetch_add(1, Ordering::Relaxed);
                        backoff = config.period;
                    }
                    Err(e) => {
                        stats.send_errors.fetch_add(1, Ordering::Relaxed);
                        log::warn!("broadcast send to {} failed: {e}", config.endpoint);
                        // Endpoint unavailable: back off (capped) without
                        // ever touching the producer side.
                        backoff = (backoff * 2).min(Duration::from_secs(1));
                        next += backoff;
                    }
                }
            }
        }
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

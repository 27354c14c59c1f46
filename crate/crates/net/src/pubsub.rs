//! In-process publish/subscribe dispatcher decoupling the ingest gateway
//! from consumer services.
//!
//! Delivery is best-effort: each subscription owns a bounded FIFO queue
//! with drop-oldest overflow, so one stalled consumer can neither block
//! the publisher nor starve its peers. Durability lives in the storage
//! sink, not here.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

/// Topics and filters use this alphabet only.
fn valid_topic_chars(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'.')
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid topic {0:?}: need non-empty [a-z0-9_.]+")]
    InvalidTopic(String),
    #[error("invalid filter {0:?}: need non-empty [a-z0-9_.]+")]
    InvalidFilter(String),
    #[error("subscription capacity must be at least 1")]
    ZeroCapacity,
}

/// Validates a concrete topic name.
pub fn validate_topic(topic: &str) -> Result<(), CloudError> {
    if valid_topic_chars(topic) {
        Ok(())
    } else {
        Err(CloudError::InvalidTopic(topic.to_string()))
    }
}

/// One unit of ingested data: an opaque payload plus routing metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudEnvelope {
    pub topic: String,
    pub received_ts_ms: u64,
    /// Producing edge device or client identity.
    pub source: String,
    pub payload: Vec<u8>,
}

/// Exact-match or dotted-prefix topic filter. A trailing `.` makes the
/// filter a prefix: `perception.` matches `perception.tracks`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopicFilter {
    Exact(String),
    Prefix(String),
}

impl TopicFilter {
    pub fn parse(s: &str) -> Result<Self, CloudError> {
        if !valid_topic_chars(s) {
            return Err(CloudError::InvalidFilter(s.to_string()));
        }
        if s.ends_with('.') {
            Ok(TopicFilter::Prefix(s.to_string()))
        } else {
            Ok(TopicFilter::Exact(s.to_string()))
        }
    }

    pub fn matches(&self, topic: &str) -> bool {
        match self {
            TopicFilter::Exact(t) => t == topic,
            TopicFilter::Prefix(p) => topic.starts_with(p.as_str()),
        }
    }
}

/// Per-publish outcome counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeliveryReport {
    /// Copies placed on subscriber queues.
    pub delivered: usize,
    /// Oldest entries evicted to make room.
    pub dropped_oldest: usize,
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<CloudEnvelope>,
    dropped_oldest: u64,
    closed: bool,
}

#[derive(Debug)]
struct SubQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
}

struct SubEntry {
    id: u64,
    filter: TopicFilter,
    queue: Arc<SubQueue>,
}

#[derive(Default)]
struct DispatcherInner {
    subs: Mutex<Vec<SubEntry>>,
}

/// Topic-routing fan-out hub. Cheap to clone; clones share state.
#[derive(Clone, Default)]
pub struct Dispatcher {
    inner: Arc<DispatcherInner>,
    next_id: Arc<Mutex<u64>>,
}

impl Dispatcher {
    pub fn new() -> Self {
        Self::default()
    }

    /// Copies the envelope into every matching subscription queue.
    /// Publication order is serialized, so every subscriber observes one
    /// publisher's messages in FIFO order.
    pub fn publish(&self, env: &CloudEnvelope) -> DeliveryReport {
        let subs = self.inner.subs.lock().expect("subscriber list lock");
        let mut report = DeliveryReport::default();
        for entry in subs.iter() {
            if !entry.filter.matches(&env.topic) {
                continue;
            }
            let mut q = entry.queue.state.lock().expect("queue lock");
            if q.closed {
                continue;
            }
            if q.items.len() == entry.queue.capacity {
                q.items.pop_front();
                q.dropped_oldest += 1;
                report.dropped_oldest += 1;
            }
            q.items.push_back(env.clone());
            report.delivered += 1;
            entry.queue.ready.notify_one();
        }
        report
    }

    /// Registers a consumer; it receives only messages published after
    /// this call returns.
    pub fn subscribe(&self, filter: &str, capacity: usize) -> Result<Subscription, CloudError> {
        let filter = TopicFilter::parse(filter)?;
        if capacity == 0 {
            return Err(CloudError::ZeroCapacity);
        }
        let queue = Arc::new(SubQueue {
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            capacity,
        });
        let id = {
            let mut next = self.next_id.lock().expect("id lock");
            *next += 1;
            *next
        };
        self.inner
            .subs
            .lock()
            .expect("subscriber list lock")
            .push(SubEntry { id, filter, queue: Arc::clone(&queue) });
        Ok(Subscription { id, queue, dispatcher: Arc::clone(&self.inner) })
    }
}

/// Consumer handle; dropping it unsubscribes and discards the queue.
pub struct Subscription {
    id: u64,
    queue: Arc<SubQueue>,
    dispatcher: Arc<DispatcherInner>,
}

impl Subscription {
    /// Non-blocking pop.
    pub fn try_recv(&self) -> Option<CloudEnvelope> {
        self.queue.state.lock().expect("queue lock").items.pop_front()
    }

    /// Blocks until an envelope arrives or the deadline passes.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<CloudEnvelope> {
        let deadline = std::time::Instant::now() + timeout;
        let mut state = self.queue.state.lock().expect("queue lock");
        loop {
            if let Some(env) = state.items.pop_front() {
                return Some(env);
            }
            if state.closed {
                return None;
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return None;
            }
            let (next, _) = self
                .queue
                .ready
                .wait_timeout(state, deadline - now)
                .expect("queue lock");
            state = next;
        }
    }

    /// Oldest entries evicted from this queue so far.
    pub fn dropped_oldest(&self) -> u64 {
        self.queue.state.lock().expect("queue lock").dropped_oldest
    }

    /// Stops delivery; returns the undelivered backlog when `drain` is
    /// set, otherwise discards it.
    pub fn unsubscribe(self, drain: bool) -> Vec<CloudEnvelope> {
        self.detach();
        let mut state = self.queue.state.lock().expect("queue lock");
        state.closed = true;
        let backlog = std::mem::take(&mut state.items);
        drop(state);
        if drain {
            backlog.into()
        } else {
            Vec::new()
        }
    }

    fn detach(&self) {
        let mut subs = self.dispatcher.subs.lock().expect("subscriber list lock");
        subs.retain(|e| e.id != self.id);
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.detach();
        let mut state = self.queue.state.lock().expect("queue lock");
        state.closed = true;
        state.items.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(topic: &str, n: u8) -> CloudEnvelope {
        CloudEnvelope {
            topic: topic.to_string(),
            received_ts_ms: 1_666_372_800_000 + u64::from(n),
            source: "edge-1".to_string(),
            payload: vec![n],
        }
    }

    #[test]
    fn topic_validation_enforces_the_alphabet() {
        assert!(validate_topic("perception.tracks").is_ok());
        assert!(validate_topic("a_b.c_9").is_ok());
        assert!(validate_topic("").is_err());
        assert!(validate_topic("Upper").is_err());
        assert!(validate_topic("with space").is_err());
        assert!(validate_topic("sla/sh").is_err());
    }

    #[test]
    fn prefix_filter_matches_the_dotted_subtree() {
        let f = TopicFilter::parse("perception.").unwrap();
        assert!(f.matches("perception.tracks"));
        assert!(f.matches("perception.raw"));
        assert!(!f.matches("perception"));
        assert!(!f.matches("other.tracks"));
        let exact = TopicFilter::parse("perception.tracks").unwrap();
        assert!(exact.matches("perception.tracks"));
        assert!(!exact.matches("perception.tracks.extra"));
    }

    #[test]
    fn fan_out_delivers_every_message_to_every_subscriber_once() {
        let hub = Dispatcher::new();
        let a = hub.subscribe("perception.tracks", 64).unwrap();
        let b = hub.subscribe("perception.", 64).unwrap();
        for n in 0..10 {
            hub.publish(&env("perception.tracks", n));
        }
        for sub in [&a, &b] {
            let got: Vec<u8> = std::iter::from_fn(|| sub.try_recv()).map(|e| e.payload[0]).collect();
            assert_eq!(got, (0..10).collect::<Vec<u8>>());
        }
    }

    #[test]
    fn zero_subscribers_is_fire_and_forget() {
        let hub = Dispatcher::new();
        let report = hub.publish(&env("perception.tracks", 1));
        assert_eq!(report, DeliveryReport { delivered: 0, dropped_oldest: 0 });
    }

    #[test]
    fn full_capacity_one_queue_drops_its_oldest() {
        let hub = Dispatcher::new();
        let tight = hub.subscribe("t", 1).unwrap();
        let roomy_a = hub.subscribe("t", 8).unwrap();
        let roomy_b = hub.subscribe("t", 8).unwrap();
        hub.publish(&env("t", 1));
        let report = hub.publish(&env("t", 2));
        assert_eq!(report.delivered, 3);
        assert_eq!(report.dropped_oldest, 1);
        // The tight queue kept only the newest message.
        assert_eq!(tight.try_recv().unwrap().payload, vec![2]);
        assert!(tight.try_recv().is_none());
        assert_eq!(tight.dropped_oldest(), 1);
        assert_eq!(roomy_a.try_recv().unwrap().payload, vec![1]);
        assert_eq!(roomy_b.try_recv().unwrap().payload, vec![1]);
    }

    #[test]
    fn late_subscribers_miss_earlier_messages() {
        let hub = Dispatcher::new();
        hub.publish(&env("t", 1));
        let sub = hub.subscribe("t", 8).unwrap();
        hub.publish(&env("t", 2));
        assert_eq!(sub.try_recv().unwrap().payload, vec![2]);
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn order_is_fifo_per_publisher() {
        let hub = Dispatcher::new();
        let sub = hub.subscribe("t", 2000).unwrap();
        for n in 0..1000u32 {
            let mut e = env("t", 0);
            e.payload = n.to_le_bytes().to_vec();
            hub.publish(&e);
        }
        let mut prev = None;
        while let Some(e) = sub.try_recv() {
            let n = u32::from_le_bytes(e.payload.try_into().unwrap());
            if let Some(p) = prev {
                assert!(n > p, "out of order: {n} after {p}");
            }
            prev = Some(n);
        }
        assert_eq!(prev, Some(999));
    }

    #[test]
    fn unsubscribe_stops_delivery_and_optionally_drains() {
        let hub = Dispatcher::new();
        let keep = hub.subscribe("t", 8).unwrap();
        let gone = hub.subscribe("t", 8).unwrap();
        hub.publish(&env("t", 1));
        let backlog = gone.unsubscribe(true);
        assert_eq!(backlog.len(), 1);
        let report = hub.publish(&env("t", 2));
        assert_eq!(report.delivered, 1);
        assert_eq!(keep.try_recv().unwrap().payload, vec![1]);
        assert_eq!(keep.try_recv().unwrap().payload, vec![2]);

        let discard = hub.subscribe("t", 8).unwrap();
        hub.publish(&env("t", 3));
        assert!(discard.unsubscribe(false).is_empty());
    }

    #[test]
    fn blocking_recv_wakes_on_publish() {
        let hub = Dispatcher::new();
        let sub = hub.subscribe("t", 8).unwrap();
        let publisher = {
            let hub = hub.clone();
            std::thread::spawn(move || {
                std::thread::sleep(Duration::from_millis(20));
                hub.publish(&env("t", 9));
            })
        };
        let got = sub.recv_timeout(Duration::from_secs(2)).expect("timed out");
        assert_eq!(got.payload, vec![9]);
        publisher.join().unwrap();
        assert!(sub.recv_timeout(Duration::from_millis(10)).is_none());
    }

    #[test]
    fn a_stalled_subscriber_cannot_block_publishing() {
        let hub = Dispatcher::new();
        let _stalled = hub.subscribe("t", 1).unwrap(); // never drained
        let t0 = std::time::Instant::now();
        for n in 0..10_000u32 {
            let mut e = env("t", 0);
            e.payload = n.to_le_bytes().to_vec();
            hub.publish(&e);
        }
        assert!(
            t0.elapsed() < Duration::from_millis(500),
            "10k publishes took {:?}",
            t0.elapsed()
        );
    }
}

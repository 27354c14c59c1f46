//! Two-phase latency instrumentation.
//!
//! Phase 1 is perception wall time (frame ingest to track/prediction
//! output), timed around the pipeline closure. Phase 2 is transport plus
//! codec: decode completion minus the producer timestamp carried in the
//! message, valid only when both clocks are the same host or calibrated.

use std::time::{Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;

/// Tolerated clock disagreement before a negative phase-2 reading is an
/// error rather than jitter.
pub const MAX_CLOCK_SKEW_MS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("clock skew detected: phase-2 latency {phase2_ms} ms is below -{MAX_CLOCK_SKEW_MS} ms")]
    ClockSkewDetected { phase2_ms: f64 },
}

/// Paired per-frame measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRecord {
    pub phase1_ms: f64,
    pub phase2_ms: f64,
}

/// Wall-clock milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before the epoch")
        .as_millis() as u64
}

/// Runs `f` and returns its result with the elapsed wall time in ms.
pub fn time_phase1<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed().as_secs_f64() * 1e3)
}

/// Phase-2 latency from the producer stamp inside a decoded message and
/// the wall clock at decode completion. Small negative readings (clock
/// granularity) clamp to zero; anything past the skew gate is an error.
pub fn phase2_ms(producer_ts_ms: u64, decode_ts_ms: u64) -> Result<f64, LatencyError> {
    let raw = decode_ts_ms as f64 - producer_ts_ms as f64;
    if raw < -MAX_CLOCK_SKEW_MS {
        return Err(LatencyError::ClockSkewDetected { phase2_ms: raw });
    }
    Ok(raw.max(0.0))
}

/// Percentile summary of a latency stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile (p in [0, 100]) of unsorted samples.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of an empty sample set");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite latency sample"));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        LatencySummary {
            n: samples.len(),
            mean_ms: mean,
            p50_ms: percentile(samples, 50.0),
            p90_ms: percentile(samples, 90.0),
            p99_ms: percentile(samples, 99.0),
        }
    }
}

impl std::fmt::Display for LatencySummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} mean={:.3}ms p50={:.3}ms p90={:.3}ms p99={:.3}ms",
            self.n, self.mean_ms, self.p50_ms, self.p90_ms, self.p99_ms
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nearest_rank_percentiles_on_a_known_vector() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_abs_diff_eq!(percentile(&v, 50.0), 50.0);
        assert_abs_diff_eq!(percentile(&v, 90.0), 90.0);
        assert_abs_diff_eq!(percentile(&v, 99.0), 99.0);
        assert_abs_diff_eq!(percentile(&v, 100.0), 100.0);
        assert_abs_diff_eq!(percentile(&[7.0], 50.0), 7.0);
    }

    #[test]
    fn summary_reports_the_order_statistics() {
        let samples = [5.0, 1.0, 9.0, 3.0, 7.0];
        let s = LatencySummary::from_samples(&samples);
        assert_eq!(s.n, 5);
        assert_abs_diff_eq!(s.mean_ms, 5.0);
        assert_abs_diff_eq!(s.p50_ms, 5.0);
        assert_abs_diff_eq!(s.p99_ms, 9.0);
    }

    #[test]
    fn injected_transport_delay_is_read_back_exactly() {
        let producer = 1_666_372_800_000u64;
        assert_abs_diff_eq!(phase2_ms(producer, producer + 25).unwrap(), 25.0);
    }

    #[test]
    fn small_negative_readings_clamp_and_large_ones_error() {
        let producer = 1_666_372_800_000u64;
        assert_abs_diff_eq!(phase2_ms(producer, producer - 1).unwrap(), 0.0);
        assert!(matches!(
            phase2_ms(producer, producer - 2),
            Err(LatencyError::ClockSkewDetected { .. })
        ));
    }

    #[test]
    fn zero_work_pipeline_times_under_a_millisecond() {
        let (out, ms) = time_phase1(|| 2 + 2);
        assert_eq!(out, 4);
        assert!(ms < 1.0, "no-op took {ms} ms");
    }
}

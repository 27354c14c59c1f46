//! Report assembly: per-trip metric rows, the weighted overall row, and
//! plot-ready trajectory dumps.
//!
//! Rows cover the templated trips only (truth ids `1..=trip_count`);
//! background traffic competes in matching but gets no row. A trip's false
//! positives are the unmatched observations timestamped within its
//! expected window, so overlapping trips can each count a shared stray.
//! The overall row is the per-trip mean weighted by expected detection
//! count, which for MOTA coincides with pooling the penalty counts; the
//! id-switch column is summed, as befits a count.

use crate::metrics::{
    id_switches, identity_sequence, longest_run, match_detections, prediction_metrics,
    LoggedPrediction, MatchReport, MetricsError, ObservedPoint, LATERAL_GATE_M,
};
use crate::pipeline::PipelineRun;
use crate::scenario::GroundTruthTrack;
use msight_core::track::TrackRecord;
use msight_net::latency::LatencySummary;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

/// Horizon frame scored by the prediction columns (3 × 0.4 s = 1.2 s).
pub const PREDICTION_HORIZON_FRAMES: usize = 3;

/// One metric row: a single trip, or the weighted overall line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRow {
    /// Trip id, or 0 for the overall row.
    pub trip: u64,
    pub gt_dets: usize,
    pub fn_rate_pct: f64,
    pub fp_rate_pct: f64,
    pub lat_error_m: f64,
    pub lon_error_m: f64,
    pub id_switch: usize,
    pub longest_track_pct: f64,
    pub mota: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fde_lat_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fde_lon_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pred_fp_rate_pct: Option<f64>,
}

/// Serializable slice of a latency summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBlock {
    pub n: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

impl From<LatencySummary> for LatencyBlock {
    fn from(s: LatencySummary) -> Self {
        LatencyBlock {
            n: s.n,
            mean_ms: s.mean_ms,
            p50_ms: s.p50_ms,
            p90_ms: s.p90_ms,
            p99_ms: s.p99_ms,
        }
    }
}

/// Full evaluation output for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Camera setup label, e.g. "NE+NW+SE+SW".
    pub setup: String,
    pub trips: Vec<TripRow>,
    pub overall: TripRow,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency: Option<LatencyBlock>,
}

/// Track records as scored observation points.
pub fn observed_from_records(records: &[TrackRecord]) -> Vec<ObservedPoint> {
    records
        .iter()
        .map(|r| ObservedPoint { ts: r.ts, id: Some(r.id), east: r.east, north: r.north })
        .collect()
}

/// Builds the evaluation report for a finished run. `trip_count` is the
/// number of templated trips (their truth ids are `1..=trip_count`).
pub fn build_report(
    run: &PipelineRun,
    trip_count: usize,
    setup: &str,
) -> Result<EvalReport, MetricsError> {
    let phase1: Vec<f64> = run.slots.iter().map(|s| s.phase1_ms).collect();
    build_report_from_parts(
        &run.truth,
        &run.records,
        &run.predictions,
        (!phase1.is_empty()).then_some(&phase1[..]),
        trip_count,
        setup,
    )
}

/// Report assembly from raw pieces, for scoring logs without a live run.
pub fn build_report_from_parts(
    truth: &[GroundTruthTrack],
    records: &[TrackRecord],
    predictions: &[LoggedPrediction],
    phase1: Option<&[f64]>,
    trip_count: usize,
    setup: &str,
) -> Result<EvalReport, MetricsError> {
    let obs = observed_from_records(records);
    let matching = match_detections(truth, &obs, LATERAL_GATE_M);
    let trips = trip_rows(truth, predictions, &matching, &obs, trip_count)?;
    let overall = overall_row(&trips);
    let latency = phase1.map(|samples| LatencySummary::from_samples(samples).into());
    Ok(EvalReport { setup: setup.to_string(), trips, overall, latency })
}

fn trip_rows(
    truth: &[GroundTruthTrack],
    predictions: &[LoggedPrediction],
    matching: &MatchReport,
    obs: &[ObservedPoint],
    trip_count: usize,
) -> Result<Vec<TripRow>, MetricsError> {
    // (track id, prediction time) → truth id, for routing forecasts to
    // the trip their track was following when the forecast was made.
    let mut track_to_truth: HashMap<(u64, u64), u64> = HashMap::new();
    for m in &matching.matches {
        if let Some(tid) = obs[m.obs].id {
            track_to_truth.insert((tid, m.ts), m.truth_id);
        }
    }

    let mut rows = Vec::new();
    for track in truth.iter().filter(|t| t.id <= trip_count as u64) {
        rows.push(trip_row(truth, predictions, matching, obs, track, &track_to_truth)?);
    }
    Ok(rows)
}

fn trip_row(
    truth: &[GroundTruthTrack],
    predictions: &[LoggedPrediction],
    matching: &MatchReport,
    obs: &[ObservedPoint],
    track: &GroundTruthTrack,
    track_to_truth: &HashMap<(u64, u64), u64>,
) -> Result<TripRow, MetricsError> {
    let expected = track.expected_ts.len();
    if expected == 0 {
        return Err(MetricsError::EmptyDenominator { what: "expected ground-truth detections" });
    }
    let window = (track.expected_ts[0], track.expected_ts[expected - 1]);
    let in_window = |ts: u64| ts >= window.0 && ts <= window.1;

    let misses = matching.misses.iter().filter(|(id, _)| *id == track.id).count();
    let dets_in_window = obs.iter().filter(|o| in_window(o.ts)).count();
    let strays = matching.false_obs.iter().filter(|&&oi| in_window(obs[oi].ts)).count();

    let (lat, lon, matched) = matching
        .matches
        .iter()
        .filter(|m| m.truth_id == track.id)
        .fold((0.0, 0.0, 0usize), |(la, lo, n), m| (la + m.lat_m.abs(), lo + m.lon_m.abs(), n + 1));
    let mean = |sum: f64| if matched == 0 { 0.0 } else { sum / matched as f64 };

    let seq = identity_sequence(track, matching, obs);
    let switches = id_switches(&seq);
    let penalties = (misses + strays + switches) as f64;

    let (fde_lat_m, fde_lon_m, pred_fp_rate_pct) = if predictions.is_empty() {
        (None, None, None)
    } else {
        let mine: Vec<LoggedPrediction> = predictions
            .iter()
            .filter(|p| track_to_truth.get(&(p.track_id, p.ts)) == Some(&track.id))
            .cloned()
            .collect();
        match prediction_metrics(truth, matching, obs, &mine, PREDICTION_HORIZON_FRAMES) {
            Ok(pm) => (Some(pm.fde_lat_m), Some(pm.fde_lon_m), Some(pm.fp_rate_pct)),
            Err(MetricsError::EmptyDenominator { .. }) => (None, None, None),
        }
    };

    Ok(TripRow {
        trip: track.id,
        gt_dets: expected,
        fn_rate_pct: 100.0 * misses as f64 / expected as f64,
        fp_rate_pct: if dets_in_window == 0 {
            0.0
        } else {
            100.0 * strays as f64 / dets_in_window as f64
        },
        lat_error_m: mean(lat),
        lon_error_m: mean(lon),
        id_switch: switches,
        longest_track_pct: 100.0 * longest_run(&seq) as f64 / expected as f64,
        mota: 1.0 - penalties / expected as f64,
        fde_lat_m,
        fde_lon_m,
        pred_fp_rate_pct,
    })
}

/// Expected-count-weighted mean of the trip rows (id switches summed).
fn overall_row(trips: &[TripRow]) -> TripRow {
    let total: f64 = trips.iter().map(|r| r.gt_dets as f64).sum();
    let wmean = |f: &dyn Fn(&TripRow) -> f64| {
        trips.iter().map(|r| r.gt_dets as f64 * f(r)).sum::<f64>() / total
    };
    // Prediction columns average over the rows that have them.
    let pred_mean = |f: &dyn Fn(&TripRow) -> Option<f64>| {
        let scored: Vec<(f64, f64)> =
            trips.iter().filter_map(|r| f(r).map(|v| (r.gt_dets as f64, v))).collect();
        let w: f64 = scored.iter().map(|(w, _)| w).sum();
        (w > 0.0).then(|| scored.iter().map(|(w, v)| w * v).sum::<f64>() / w)
    };
    TripRow {
        trip: 0,
        gt_dets: trips.iter().map(|r| r.gt_dets).sum(),
        fn_rate_pct: wmean(&|r| r.fn_rate_pct),
        fp_rate_pct: wmean(&|r| r.fp_rate_pct),
        lat_error_m: wmean(&|r| r.lat_error_m),
        lon_error_m: wmean(&|r| r.lon_error_m),
        id_switch: trips.iter().map(|r| r.id_switch).sum(),
        longest_track_pct: wmean(&|r| r.longest_track_pct),
        mota: wmean(&|r| r.mota),
        fde_lat_m: pred_mean(&|r| r.fde_lat_m),
        fde_lon_m: pred_mean(&|r| r.fde_lon_m),
        pred_fp_rate_pct: pred_mean(&|r| r.pred_fp_rate_pct),
    }
}

/// Writes truth and track trajectories as one flat CSV for plotting:
/// `kind,id,ts,east_m,north_m`.
pub fn write_trajectory_csv(run: &PipelineRun, w: impl Write) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "id", "ts", "east_m", "north_m"])?;
    for track in &run.truth {
        for s in &track.samples {
            out.write_record([
                "truth",
                &track.id.to_string(),
                &s.ts.to_string(),
                &format!("{:.3}", s.east),
                &format!("{:.3}", s.north),
            ])?;
        }
    }
    for r in &run.records {
        out.write_record([
            "track",
            &r.id.to_string(),
            &r.ts.to_string(),
            &format!("{:.3}", r.east),
            &format!("{:.3}", r.north),
        ])?;
    }
    out.flush()?;
    Ok(())
}

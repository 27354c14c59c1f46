//! The evaluation metric suite: slot matching against ground truth,
//! detection rates, tracking quality, and prediction error.
//!
//! Scoring is slot-based. Every truth object expects one report per camera
//! frame while it is inside the region; an observation within the 1.5 m
//! lateral gate fills the slot (nearest candidate wins). An unfilled
//! slot is a false negative, and an observation that fills no slot is a
//! false positive — so a detection 1.6 m off scores on both sides.

use crate::scenario::GroundTruthTrack;
use msight_core::predict::fde;
use msight_core::FRAME_INTERVAL_S;
use std::collections::{BTreeMap, HashMap, HashSet};

/// Lateral gate separating true positives from misses, meters.
pub const LATERAL_GATE_M: f64 = 1.5;

/// Errors from metric computation.
#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty denominator: no {what}")]
    EmptyDenominator { what: &'static str },
}

/// One pipeline output offered for scoring: a fused detection (`id` None)
/// or a track record (`id` Some), in plane meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedPoint {
    pub ts: u64,
    pub id: Option<u64>,
    pub east: f64,
    pub north: f64,
}

/// One filled slot: observation `obs` matched truth `truth_id` at `ts`,
/// with signed track-relative residuals (lateral positive to the left of
/// the truth heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotMatch {
    pub truth_id: u64,
    pub ts: u64,
    pub obs: usize,
    pub lat_m: f64,
    pub lon_m: f64,
}

/// Outcome of slot matching over a whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub matches: Vec<SlotMatch>,
    /// Expected slots left unfilled: (truth id, timestamp).
    pub misses: Vec<(u64, u64)>,
    /// Indices of observations that filled no slot.
    pub false_obs: Vec<usize>,
    /// Total expected slots (the gtDets denominator).
    pub expected: usize,
    /// Total observations offered (the detections denominator).
    pub observed: usize,
}

impl MatchReport {
    /// Map from (truth id, timestamp) to the matching observation index.
    pub fn match_map(&self) -> HashMap<(u64, u64), usize> {
        self.matches.iter().map(|m| ((m.truth_id, m.ts), m.obs)).collect()
    }
}

/// Matches observations to expected truth slots.
///
/// Per timestamp, candidate pairs within `gate_m` of lateral error are
/// taken greedily by ascending planar distance, each truth slot and
/// observation at most once. The gate is lateral-only, so the distance
/// ordering is what keeps an observation from pairing with a far-away
/// object that merely shares its lane line. Ordering ties break on
/// (truth id, observation index), so the result is deterministic.
pub fn match_detections(
    truth: &[GroundTruthTrack],
    obs: &[ObservedPoint],
    gate_m: f64,
) -> MatchReport {
    let mut slots: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut expected = 0usize;
    for (ti, track) in truth.iter().enumerate() {
        for &ts in &track.expected_ts {
            slots.entry(ts).or_default().push(ti);
            expected += 1;
        }
    }
    let mut obs_by_ts: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (oi, o) in obs.iter().enumerate() {
        obs_by_ts.entry(o.ts).or_default().push(oi);
    }

    let mut matches = Vec::new();
    let mut misses = Vec::new();
    let mut matched_obs: HashSet<usize> = HashSet::new();

    for (&ts, truth_ids) in &slots {
        let empty = Vec::new();
        let obs_here = obs_by_ts.get(&ts).unwrap_or(&empty);
        let mut candidates = Vec::new();
        for &ti in truth_ids {
            let track = &truth[ti];
            let s = track.sample_at(ts).expect("expected timestamps index real samples");
            for &oi in obs_here {
                let (de, dn) = (obs[oi].east - s.east, obs[oi].north - s.north);
                let lat = -de * s.heading_rad.sin() + dn * s.heading_rad.cos();
                let lon = de * s.heading_rad.cos() + dn * s.heading_rad.sin();
                if lat.abs() <= gate_m {
                    candidates.push((de.hypot(dn), ti, oi, lat, lon));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
        });
        let mut filled: HashSet<usize> = HashSet::new();
        for (_, ti, oi, lat, lon) in candidates {
            if filled.contains(&ti) || matched_obs.contains(&oi) {
                continue;
            }
            filled.insert(ti);
            matched_obs.insert(oi);
            matches.push(SlotMatch { truth_id: truth[ti].id, ts, obs: oi, lat_m: lat, lon_m: lon });
        }
        for &ti in truth_ids {
            if !filled.contains(&ti) {
                misses.push((truth[ti].id, ts));
            }
        }
    }

    let false_obs = (0..obs.len()).filter(|i| !matched_obs.contains(i)).collect();
    MatchReport { matches, misses, false_obs, expected, observed: obs.len() }
}

/// Detection-level rates and error means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub fn_rate_pct: f64,
    pub fp_rate_pct: f64,
    /// Mean |lateral| residual over matched slots, meters (0 when none).
    pub lat_error_m: f64,
    pub lon_error_m: f64,
}

pub fn detection_metrics(report: &MatchReport) -> Result<DetectionMetrics, MetricsError> {
    if report.expected == 0 {
        return Err(MetricsError::EmptyDenominator { what: "expected ground-truth detections" });
    }
    if report.observed == 0 {
        return Err(MetricsError::EmptyDenominator { what: "detections" });
    }
    let n = report.matches.len() as f64;
    let (mut lat, mut lon) = (0.0, 0.0);
    for m in &report.matches {
        lat += m.lat_m.abs();
        lon += m.lon_m.abs();
    }
    Ok(DetectionMetrics {
        fn_rate_pct: 100.0 * report.misses.len() as f64 / report.expected as f64,
        fp_rate_pct: 100.0 * report.false_obs.len() as f64 / report.observed as f64,
        lat_error_m: if n > 0.0 { lat / n } else { 0.0 },
        lon_error_m: if n > 0.0 { lon / n } else { 0.0 },
    })
}

/// Per-expected-slot identity sequence of one truth object: the matched
/// track id, or None for a miss (or an anonymous observation).
pub fn identity_sequence(
    track: &GroundTruthTrack,
    report: &MatchReport,
    obs: &[ObservedPoint],
) -> Vec<Option<u64>> {
    let map = report.match_map();
    track
        .expected_ts
        .iter()
        .map(|&ts| map.get(&(track.id, ts)).and_then(|&oi| obs[oi].id))
        .collect()
}

/// Number of identity changes across matched slots (gaps do not reset the
/// previous identity).
pub fn id_switches(seq: &[Option<u64>]) -> usize {
    let mut switches = 0;
    let mut last: Option<u64> = None;
    for id in seq.iter().flatten() {
        if let Some(prev) = last {
            if prev != *id {
                switches += 1;
            }
        }
        last = Some(*id);
    }
    switches
}

/// Longest run of consecutive slots matched with one identity.
pub fn longest_run(seq: &[Option<u64>]) -> usize {
    let mut best = 0;
    let mut cur = 0;
    let mut cur_id: Option<u64> = None;
    for slot in seq {
        match slot {
            Some(id) if Some(*id) == cur_id => cur += 1,
            Some(id) => {
                cur_id = Some(*id);
                cur = 1;
            }
            None => {
                cur_id = None;
                cur = 0;
            }
        }
        best = best.max(cur);
    }
    best
}

/// Scene-level tracking quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingMetrics {
    pub id_switch: usize,
    /// Expected-slot-weighted mean over objects of
    /// longest-run / expected-slots × 100.
    pub longest_track_pct: f64,
    /// 1 − (misses + false positives + id switches) / expected slots.
    pub mota: f64,
}

pub fn tracking_metrics(
    truth: &[GroundTruthTrack],
    report: &MatchReport,
    obs: &[ObservedPoint],
) -> Result<TrackingMetrics, MetricsError> {
    if report.expected == 0 {
        return Err(MetricsError::EmptyDenominator { what: "expected ground-truth detections" });
    }
    let mut switches = 0usize;
    let mut longest_weighted = 0.0;
    for track in truth {
        if track.expected_ts.is_empty() {
            continue;
        }
        let seq = identity_sequence(track, report, obs);
        switches += id_switches(&seq);
        longest_weighted += 100.0 * longest_run(&seq) as f64;
    }
    let expected = report.expected as f64;
    let penalties = (report.misses.len() + report.false_obs.len() + switches) as f64;
    Ok(TrackingMetrics {
        id_switch: switches,
        longest_track_pct: longest_weighted / expected,
        mota: 1.0 - penalties / expected,
    })
}

/// One forecast logged by the pipeline: made at `ts` for track `track_id`,
/// with mean positions for frames 1..=horizon ahead in plane meters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedPrediction {
    pub ts: u64,
    pub track_id: u64,
    pub means: Vec<(f64, f64)>,
}

/// Final-frame prediction quality at horizon frame `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionMetrics {
    pub fde_lat_m: f64,
    pub fde_lon_m: f64,
    /// Share of evaluated predictions whose final-frame lateral error
    /// exceeds the gate, percent.
    pub fp_rate_pct: f64,
    pub evaluated: usize,
}

/// Scores logged predictions against truth at horizon frame `k`.
///
/// A prediction is evaluated when its track was matched to a truth object
/// at the prediction time and the truth extends through all `k` future
/// frames; others are skipped (tracks on false positives, truth leaving
/// the scene, short horizons).
pub fn prediction_metrics(
    truth: &[GroundTruthTrack],
    report: &MatchReport,
    obs: &[ObservedPoint],
    predictions: &[LoggedPrediction],
    k: usize,
) -> Result<PredictionMetrics, MetricsError> {
    let by_id: HashMap<u64, &GroundTruthTrack> = truth.iter().map(|t| (t.id, t)).collect();
    // (track id, ts) → truth id, from the slot matching.
    let mut track_to_truth: HashMap<(u64, u64), u64> = HashMap::new();
    for m in &report.matches {
        if let Some(tid) = obs[m.obs].id {
            track_to_truth.insert((tid, m.ts), m.truth_id);
        }
    }

    let frame_ms = (FRAME_INTERVAL_S * 1000.0) as u64;
    let (mut lat_sum, mut lon_sum) = (0.0, 0.0);
    let mut over_gate = 0usize;
    let mut evaluated = 0usize;
    for p in predictions {
        if p.means.len() < k {
            continue;
        }
        let Some(&truth_id) = track_to_truth.get(&(p.track_id, p.ts)) else { continue };
        let track = by_id[&truth_id];
        let Some(last) = track.sample_at(p.ts) else { continue };
        let future: Option<Vec<(f64, f64)>> = (1..=k)
            .map(|j| track.sample_at(p.ts + j as u64 * frame_ms).map(|s| (s.east, s.north)))
            .collect();
        let Some(future) = future else { continue };
        let r = fde(&p.means, &future, k, (last.east, last.north), FRAME_INTERVAL_S)
            .expect("lengths checked above");
        lat_sum += r.lat_m;
        lon_sum += r.lon_m;
        if r.lat_m > LATERAL_GATE_M {
            over_gate += 1;
        }
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(MetricsError::EmptyDenominator { what: "evaluated predictions" });
    }
    let n = evaluated as f64;
    Ok(PredictionMetrics {
        fde_lat_m: lat_sum / n,
        fde_lon_m: lon_sum / n,
        fp_rate_pct: 100.0 * over_gate as f64 / n,
        evaluated,
    })
}

/// One-sided sign test for a "b ≥ a" trend over paired values: ties are
/// dropped and the p-value is P[Binomial(n, ½) ≥ successes].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub successes: usize,
    pub trials: usize,
    pub p_value: f64,
}

pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let mut successes = 0usize;
    let mut trials = 0usize;
    for &(a, b) in pairs {
        if b > a {
            successes += 1;
            trials += 1;
        } else if b < a {
            trials += 1;
        }
    }
    assert!(trials <= 127, "sign test sized for small seed sweeps");
    let mut tail: u128 = 0;
    for j in successes..=trials {
        tail += binomial(trials, j);
    }
    let p_value = if trials == 0 {
        1.0
    } else {
        tail as f64 / 2.0_f64.powi(trials as i32)
    };
    SignTest { successes, trials, p_value }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use msight_core::detect::ObjectClass;
    use crate::scenario::{TruthSample, DETECTION_PERIOD_MS, SCENARIO_EPOCH_MS};

    /// A truth object moving in a straight line, sampled directly on the
    /// camera grid (every slot expected).
    fn straight_track(id: u64, start: (f64, f64), vel: (f64, f64), frames: usize) -> GroundTruthTrack {
        let dt = DETECTION_PERIOD_MS as f64 / 1000.0;
        let samples: Vec<TruthSample> = (0..frames)
            .map(|i| TruthSample {
                ts: SCENARIO_EPOCH_MS + i as u64 * DETECTION_PERIOD_MS,
                east: start.0 + vel.0 * dt * i as f64,
                north: start.1 + vel.1 * dt * i as f64,
                heading_rad: vel.1.atan2(vel.0),
                speed_mps: vel.0.hypot(vel.1),
            })
            .collect();
        let expected_ts = samples.iter().map(|s| s.ts).collect();
        GroundTruthTrack {
            id,
            class: ObjectClass::Car,
            length_m: 4.5,
            width_m: 1.8,
            samples,
            expected_ts,
        }
    }

    fn obs_from(track: &GroundTruthTrack, id: Option<u64>) -> Vec<ObservedPoint> {
        track
            .samples
            .iter()
            .map(|s| ObservedPoint { ts: s.ts, id, east: s.east, north: s.north })
            .collect()
    }

    #[test]
    fn perfect_detections_are_all_true_positives() {
        let truth = vec![straight_track(1, (0.0, -10.0), (3.0, 0.0), 10)];
        let obs = obs_from(&truth[0], None);
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert_eq!(r.matches.len(), 10);
        assert!(r.misses.is_empty());
        assert!(r.false_obs.is_empty());
        let d = detection_metrics(&r).unwrap();
        assert_eq!(d.fn_rate_pct, 0.0);
        assert_eq!(d.fp_rate_pct, 0.0);
        assert_abs_diff_eq!(d.lat_error_m, 0.0, epsilon = 1e-12);
    }

    /// An observation 1.6 m laterally off scores on both sides: its slot
    /// is a miss AND the observation is a false positive.
    #[test]
    fn beyond_gate_scores_both_sides() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 1)];
        let obs = vec![ObservedPoint { ts: SCENARIO_EPOCH_MS, id: None, east: 0.0, north: 1.6 }];
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert!(r.matches.is_empty());
        assert_eq!(r.misses, vec![(1, SCENARIO_EPOCH_MS)]);
        assert_eq!(r.false_obs, vec![0]);
    }

    #[test]
    fn missing_final_timestamp_is_one_miss() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 5)];
        let mut obs = obs_from(&truth[0], None);
        obs.pop();
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert_eq!(r.matches.len(), 4);
        assert_eq!(r.misses, vec![(1, SCENARIO_EPOCH_MS + 4 * DETECTION_PERIOD_MS)]);
        assert!(r.false_obs.is_empty());
    }

    #[test]
    fn nearest_lateral_candidate_wins() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 1)];
        let obs = vec![
            ObservedPoint { ts: SCENARIO_EPOCH_MS, id: None, east: 0.0, north: 0.9 },
            ObservedPoint { ts: SCENARIO_EPOCH_MS, id: None, east: 0.0, north: 0.3 },
        ];
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert_eq!(r.matches.len(), 1);
        assert_eq!(r.matches[0].obs, 1);
        assert_abs_diff_eq!(r.matches[0].lat_m, 0.3, epsilon = 1e-12);
        assert_eq!(r.false_obs, vec![0]);
    }

    /// Two objects on the same lane line both pass the lateral gate for a
    /// single observation; the planar-nearest object must take it rather
    /// than the lower-indexed one 49 m away.
    #[test]
    fn collinear_far_object_does_not_steal_the_match() {
        let truth = vec![
            straight_track(1, (0.0, 0.0), (3.0, 0.0), 1),
            straight_track(2, (49.0, 0.0), (3.0, 0.0), 1),
        ];
        let obs = vec![ObservedPoint { ts: SCENARIO_EPOCH_MS, id: None, east: 49.0, north: 0.01 }];
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert_eq!(r.matches.len(), 1);
        assert_eq!(r.matches[0].truth_id, 2);
        assert_eq!(r.misses, vec![(1, SCENARIO_EPOCH_MS)]);
        assert!(r.false_obs.is_empty());
    }

    /// Longitudinal error does not gate matching; it is only reported.
    #[test]
    fn longitudinal_error_does_not_gate() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 1)];
        let obs = vec![ObservedPoint { ts: SCENARIO_EPOCH_MS, id: None, east: 4.0, north: 0.2 }];
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        assert_eq!(r.matches.len(), 1);
        assert_abs_diff_eq!(r.matches[0].lon_m, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.matches[0].lat_m, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn rate_substitutions_match_hand_arithmetic() {
        let report = MatchReport {
            matches: vec![
                SlotMatch { truth_id: 1, ts: 0, obs: 0, lat_m: 0.5, lon_m: 0.1 },
                SlotMatch { truth_id: 1, ts: 400, obs: 1, lat_m: -0.7, lon_m: 0.2 },
            ],
            misses: vec![(1, 800), (1, 1200)],
            false_obs: vec![19],
            expected: 25,
            observed: 20,
        };
        let d = detection_metrics(&report).unwrap();
        assert_abs_diff_eq!(d.fp_rate_pct, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.fn_rate_pct, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.lat_error_m, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn empty_denominators_error() {
        let empty = MatchReport {
            matches: vec![],
            misses: vec![],
            false_obs: vec![],
            expected: 0,
            observed: 5,
        };
        assert!(matches!(
            detection_metrics(&empty),
            Err(MetricsError::EmptyDenominator { .. })
        ));
        let no_obs = MatchReport { expected: 5, observed: 0, ..empty.clone() };
        assert!(matches!(
            detection_metrics(&no_obs),
            Err(MetricsError::EmptyDenominator { .. })
        ));
        assert!(matches!(
            tracking_metrics(&[], &MatchReport { expected: 0, ..no_obs }, &[]),
            Err(MetricsError::EmptyDenominator { .. })
        ));
    }

    /// The worked tracking example: one object tracked as id 1 for the
    /// first half of its trip and id 2 for the second half.
    #[test]
    fn half_trip_identity_change_scores_one_switch_and_fifty_percent() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 8)];
        let mut obs = obs_from(&truth[0], None);
        for (i, o) in obs.iter_mut().enumerate() {
            o.id = Some(if i < 4 { 1 } else { 2 });
        }
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        let t = tracking_metrics(&truth, &r, &obs).unwrap();
        assert_eq!(t.id_switch, 1);
        assert_eq!(t.longest_track_pct, 50.0);
        assert_abs_diff_eq!(t.mota, 1.0 - 1.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_helpers_count_runs_and_switches() {
        let seq = vec![Some(1), Some(1), None, Some(1), Some(2), Some(2), None, Some(2)];
        // The gap does not reset identity, so 1→1 across it is no switch.
        assert_eq!(id_switches(&seq), 1);
        // Runs break at gaps: 2, 1, 2, 1.
        assert_eq!(longest_run(&seq), 2);
        assert_eq!(id_switches(&[None, None]), 0);
        assert_eq!(longest_run(&[None, None]), 0);
    }

    #[test]
    fn mota_equals_closed_form_on_planted_scenes() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let frames = rng.random_range(4..30usize);
            let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), frames)];
            let mut obs = Vec::new();
            let mut planted_ids: Vec<Option<u64>> = Vec::new();
            let mut current_id = 1u64;
            for (i, s) in truth[0].samples.iter().enumerate() {
                if rng.random::<f64>() < 0.2 {
                    planted_ids.push(None);
                    continue;
                }
                if i > 0 && rng.random::<f64>() < 0.15 {
                    current_id += 1;
                }
                planted_ids.push(Some(current_id));
                obs.push(ObservedPoint {
                    ts: s.ts,
                    id: Some(current_id),
                    east: s.east,
                    north: s.north + rng.random_range(-0.5..0.5),
                });
            }
            let planted_fp = rng.random_range(0..4usize);
            for j in 0..planted_fp {
                // Far off the truth lane: always outside the lateral gate.
                obs.push(ObservedPoint {
                    ts: truth[0].samples[0].ts,
                    id: Some(900 + j as u64),
                    east: 0.0,
                    north: 30.0 + 5.0 * j as f64,
                });
            }
            let r = match_detections(&truth, &obs, LATERAL_GATE_M);
            let t = tracking_metrics(&truth, &r, &obs).unwrap();

            let planted_fn = planted_ids.iter().filter(|s| s.is_none()).count();
            let planted_sw = id_switches(&planted_ids);
            assert_eq!(r.misses.len(), planted_fn);
            assert_eq!(r.false_obs.len(), planted_fp);
            assert_eq!(t.id_switch, planted_sw);
            let closed =
                1.0 - (planted_fn + planted_fp + planted_sw) as f64 / frames as f64;
            assert_abs_diff_eq!(t.mota, closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_predictions_score_zero() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 10)];
        let obs = obs_from(&truth[0], Some(5));
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        let dt = DETECTION_PERIOD_MS as f64 / 1000.0;
        let preds: Vec<LoggedPrediction> = truth[0].samples[..6]
            .iter()
            .map(|s| LoggedPrediction {
                ts: s.ts,
                track_id: 5,
                means: (1..=3).map(|j| (s.east + 3.0 * dt * j as f64, s.north)).collect(),
            })
            .collect();
        let p = prediction_metrics(&truth, &r, &obs, &preds, 3).unwrap();
        assert_eq!(p.evaluated, 6);
        assert_abs_diff_eq!(p.fde_lat_m, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.fde_lon_m, 0.0, epsilon = 1e-9);
        assert_eq!(p.fp_rate_pct, 0.0);
    }

    #[test]
    fn wide_lateral_miss_at_final_frame_counts_as_prediction_fp() {
        let truth = vec![straight_track(1, (0.0, 0.0), (3.0, 0.0), 10)];
        let obs = obs_from(&truth[0], Some(5));
        let r = match_detections(&truth, &obs, LATERAL_GATE_M);
        let s0 = &truth[0].samples[0];
        let dt = DETECTION_PERIOD_MS as f64 / 1000.0;
        let preds = vec![LoggedPrediction {
            ts: s0.ts,
            track_id: 5,
            // 2 m lateral (north) offset at every future frame.
            means: (1..=3).map(|j| (s0.east + 3.0 * dt * j as f64, 2.0)).collect(),
        }];
        let p = prediction_metrics(&truth, &r, &obs, &preds, 3).unwrap();
        assert_eq!(p.evaluated, 1);
        assert_abs_diff_eq!(p.fde_lat_m, 2.0, epsilon = 1e-9);
        assert_eq!(p.fp_rate_pct, 100.0);
        // Predictions for unmatched tracks are skipped entirely.
        let stray = vec![LoggedPrediction { ts: s0.ts, track_id: 99, means: vec![(0.0, 0.0); 3] }];
        assert!(matches!(
            prediction_metrics(&truth, &r, &obs, &stray, 3),
            Err(MetricsError::EmptyDenominator { .. })
        ));
    }

    #[test]
    fn sign_test_matches_binomial_tails() {
        // All 20 of 20: p = 2^-20.
        let all: Vec<(f64, f64)> = (0..20).map(|_| (1.0, 2.0)).collect();
        assert_abs_diff_eq!(sign_test(&all).p_value, 2.0_f64.powi(-20), epsilon = 1e-12);
        // 16 of 20: sum_{j=16..20} C(20,j) / 2^20 = 6196 / 1048576.
        let mut mixed: Vec<(f64, f64)> = (0..16).map(|_| (1.0, 2.0)).collect();
        mixed.extend((0..4).map(|_| (2.0, 1.0)));
        let t = sign_test(&mixed);
        assert_eq!((t.successes, t.trials), (16, 20));
        assert_abs_diff_eq!(t.p_value, 6196.0 / 1048576.0, epsilon = 1e-12);
        assert!(t.p_value < 0.01);
        // Ties are dropped.
        let with_ties = vec![(1.0, 1.0), (1.0, 2.0)];
        assert_eq!(sign_test(&with_ties).trials, 1);
        assert_eq!(sign_test(&[]).p_value, 1.0);
    }
}

//! End-to-end pipeline runner over a synthetic scenario.
//!
//! One driver loop walks the 2.5 Hz camera grid. Per slot: the synthetic
//! detectors render each camera's view concurrently (frame barrier before
//! fusion), fused world detections feed the tracker, confirmed tracks feed
//! the predictor, and the slot's tracks plus forecasts are encoded into one
//! wire message. All stages are seeded, so two runs of the same config
//! produce identical records, predictions, and message bytes.

use crate::metrics::LoggedPrediction;
use crate::rig;
use crate::scenario::{
    generate_scenario, GroundTruthTrack, ScenarioConfig, ScenarioError, DETECTION_PERIOD_MS,
    SCENARIO_EPOCH_MS,
};
use msight_core::detect::{synth_detect, DetectionFrame, TruthState};
use msight_core::fuse::{fuse, RoiMap};
use msight_core::geo::{CameraId, WorldPoint};
use msight_core::predict::{predict, ModelParameters, PredictError, TrajectoryHistory};
use msight_core::track::{TrackRecord, Tracker, TrackerConfig};
use msight_core::ROI_RADIUS_M;
use msight_net::v2x::{encode, PerceptionMessage, V2xError, WireVehicle};
use std::collections::HashMap;
use std::time::Instant;

/// Runner options: which cameras exist and whether forecasts assist
/// association and enter the wire messages.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Cameras to simulate; empty means the full four-camera rig.
    pub cameras: Vec<CameraId>,
    pub model: Option<ModelParameters>,
}

/// Per-slot bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct SlotLog {
    pub ts: u64,
    pub fused: usize,
    /// Track records emitted at this slot (excluding retroactive releases).
    pub confirmed: usize,
    /// Wall time of the full slot body: detect → fuse → track → predict →
    /// encode.
    pub phase1_ms: f64,
    pub message_len: usize,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub truth: Vec<GroundTruthTrack>,
    pub records: Vec<TrackRecord>,
    pub predictions: Vec<LoggedPrediction>,
    pub slots: Vec<SlotLog>,
    /// One encoded message per slot, in slot order.
    pub messages: Vec<Vec<u8>>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),

    #[error("prediction: {0}")]
    Predict(#[from] PredictError),

    #[error("message encoding: {0}")]
    Codec(#[from] V2xError),
}

/// Generates the scenario's ground truth and drives the full pipeline over
/// it.
pub fn run_pipeline(
    cfg: &ScenarioConfig,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let truth = generate_scenario(cfg)?;
    run_on_truth(truth, cfg, opts)
}

/// Drives the pipeline over already generated truth (the scenario config
/// still supplies the detector noise model and seed).
pub fn run_on_truth(
    truth: Vec<GroundTruthTrack>,
    cfg: &ScenarioConfig,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let calibs = if opts.cameras.is_empty() {
        rig::full_rig()
    } else {
        rig::rig(&opts.cameras)
    };
    let roi = RoiMap::new(rig::SCENE_ORIGIN, ROI_RADIUS_M);
    let mut tracker = Tracker::new(rig::SCENE_ORIGIN, TrackerConfig::default());
    let horizon = opts.model.as_ref().map_or(0, |m| m.config.horizon);

    let Some(first) = truth.iter().map(GroundTruthTrack::first_ts).min() else {
        return Ok(PipelineRun {
            truth,
            records: vec![],
            predictions: vec![],
            slots: vec![],
            messages: vec![],
        });
    };
    let last = truth.iter().map(GroundTruthTrack::last_ts).max().unwrap_or(first);
    let first_slot = (first - SCENARIO_EPOCH_MS).div_ceil(DETECTION_PERIOD_MS);
    let last_slot = (last - SCENARIO_EPOCH_MS) / DETECTION_PERIOD_MS;

    let mut records = Vec::new();
    let mut predictions = Vec::new();
    let mut slots = Vec::new();
    let mut messages = Vec::new();
    let mut assist: Option<HashMap<u64, (f64, f64)>> = None;

    for slot in first_slot..=last_slot {
        let ts = SCENARIO_EPOCH_MS + slot * DETECTION_PERIOD_MS;
        let t0 = Instant::now();
        let states: Vec<TruthState> =
            truth.iter().filter_map(|t| t.state_at(ts)).collect();

        // Per-camera detection renders concurrently; joining is the frame
        // barrier before fusion.
        let frames: Vec<DetectionFrame> = std::thread::scope(|scope| {
            let handles: Vec<_> = calibs
                .iter()
                .map(|calib| {
                    let states = &states;
                    let noise = &cfg.noise;
                    scope.spawn(move || {
                        synth_detect(states, ts, calib, ROI_RADIUS_M, noise, cfg.seed).frame
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("detector task panicked")).collect()
        });

        let fused = fuse(ts, &frames, &calibs, &roi);
        let recs = tracker.step(ts, &fused, assist.as_ref());

        // Forecast from the post-update track histories; the one-frame-ahead
        // means assist association at the next slot.
        let mut slot_means: HashMap<u64, Vec<(f64, f64)>> = HashMap::new();
        assist = None;
        if let Some(model) = &opts.model {
            // The encoder sees each window recentered at its newest point
            // (models are trained with the same convention), so it regresses
            // short relative displacements rather than absolute scene
            // positions; the offset is added back onto the returned means.
            let snaps = tracker.confirmed();
            let mut offsets: HashMap<u64, (f64, f64)> = HashMap::new();
            let histories: Vec<TrajectoryHistory> = snaps
                .iter()
                .map(|s| {
                    let (oe, on) = s.history.last().copied().unwrap_or((0.0, 0.0));
                    offsets.insert(s.id, (oe, on));
                    let rel: Vec<(f64, f64)> =
                        s.history.iter().map(|&(e, n)| (e - oe, n - on)).collect();
                    TrajectoryHistory::from_recent(s.id, &rel)
                })
                .collect();
            let preds = predict(&histories, model)?;
            let mut centers = HashMap::new();
            for p in preds {
                let (oe, on) = offsets[&p.id];
                let means: Vec<(f64, f64)> =
                    p.means.iter().map(|&(e, n)| (e + oe, n + on)).collect();
                centers.insert(p.id, means[0]);
                predictions.push(LoggedPrediction { ts, track_id: p.id, means: means.clone() });
                slot_means.insert(p.id, means);
            }
            if !centers.is_empty() {
                assist = Some(centers);
            }
        }

        let current: Vec<&TrackRecord> = recs.iter().filter(|r| r.ts == ts).collect();
        let message = encode_slot(slot as u32, ts, &current, &slot_means, horizon)?;
        let phase1_ms = t0.elapsed().as_secs_f64() * 1e3;

        slots.push(SlotLog {
            ts,
            fused: fused.len(),
            confirmed: current.len(),
            phase1_ms,
            message_len: message.len(),
        });
        messages.push(message);
        records.extend(recs);
    }

    Ok(PipelineRun { truth, records, predictions, slots, messages })
}

/// Encodes one slot's confirmed tracks (plus forecasts when a model runs)
/// as a wire message. The producer stamp is the simulated frame time, so
/// message bytes are deterministic. Tracks without a forecast yet (short
/// history) pad with their current position to keep per-vehicle prediction
/// counts uniform.
fn encode_slot(
    seq: u32,
    ts: u64,
    current: &[&TrackRecord],
    slot_means: &HashMap<u64, Vec<(f64, f64)>>,
    horizon: usize,
) -> Result<Vec<u8>, V2xError> {
    let origin = &rig::SCENE_ORIGIN;
    let vehicles = current
        .iter()
        .map(|r| {
            let pos = WorldPoint::from_plane(r.east, r.north, origin);
            let predicted: Vec<(f64, f64)> = match slot_means.get(&r.id) {
                Some(means) => means
                    .iter()
                    .take(horizon)
                    .map(|&(e, n)| {
                        let w = WorldPoint::from_plane(e, n, origin);
                        (w.lat_deg, w.lon_deg)
                    })
                    .collect(),
                None => std::iter::repeat((pos.lat_deg, pos.lon_deg)).take(horizon).collect(),
            };
            WireVehicle {
                id: u32::try_from(r.id).expect("scenario track ids fit in u32"),
                class: r.class.code(),
                lat_deg: pos.lat_deg,
                lon_deg: pos.lon_deg,
                heading_deg: r.heading_rad().to_degrees(),
                speed_mps: r.speed(),
                predicted,
            }
        })
        .collect();
    encode(&PerceptionMessage { seq, producer_ts_ms: ts, frame_ts_ms: ts, vehicles })
}

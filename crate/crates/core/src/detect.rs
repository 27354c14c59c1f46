//! Detection data contract and sources.
//!
//! The image-space detector itself (a neural network on the camera feed) is
//! a separate component; this module owns its output contract — bottom-box
//! detection records — plus two sources that produce them: replay of
//! recorded NDJSON logs, and a synthetic detector that corrupts simulator
//! ground truth with configurable noise for closed-loop evaluation.

use crate::geo::{world_to_pixel, CameraCalibration, CameraId, GeoError, PixelPoint, WorldPoint};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Object taxonomy used across detection, tracking, and messaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    #[serde(rename = "car")]
    Car,
    #[serde(rename = "truck_bus_trailer")]
    TruckBusTrailer,
    #[serde(rename = "vru")]
    VulnerableRoadUser,
}

impl ObjectClass {
    /// Stable numeric code used by the binary message codec.
    pub fn code(self) -> u8 {
        match self {
            ObjectClass::Car => 0,
            ObjectClass::TruckBusTrailer => 1,
            ObjectClass::VulnerableRoadUser => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ObjectClass::Car),
            1 => Some(ObjectClass::TruckBusTrailer),
            2 => Some(ObjectClass::VulnerableRoadUser),
            _ => None,
        }
    }
}

/// Axis-aligned minimum bounding rectangle of an object's bottom surface in
/// image coordinates. By the detector contract the box center is the
/// object's ground contact point, which is what gets localized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottomBox {
    pub center: PixelPoint,
    pub width: f64,
    pub height: f64,
}

/// One detection from one camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub camera_id: CameraId,
    /// Frame capture time, milliseconds since the Unix epoch.
    pub frame_ts: u64,
    pub class: ObjectClass,
    pub bbox: BottomBox,
    /// Detector confidence in `[0, 1]`.
    pub confidence: f64,
}

/// All detections of one camera at one frame time.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub camera_id: CameraId,
    pub frame_ts: u64,
    pub detections: Vec<DetectionRecord>,
}

/// Errors from detection log parsing.
#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error("line {line}: camera {camera} timestamp {ts} goes backwards (previous {prev})")]
    NonMonotoneTimestamp { line: usize, camera: CameraId, ts: u64, prev: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// NDJSON line layout for a detection record.
#[derive(Debug, Serialize, Deserialize)]
struct DetectionLine {
    cam: CameraId,
    ts: u64,
    cls: ObjectClass,
    u: f64,
    v: f64,
    w: f64,
    h: f64,
    conf: f64,
}

/// Reads a newline-delimited JSON detection log into frames grouped by
/// `(camera, frame_ts)`, ordered by timestamp (camera order breaking ties).
///
/// Timestamps must be non-decreasing within each camera's stream; blank
/// lines are ignored; malformed lines are reported with their line number.
pub fn read_detection_log(reader: impl BufRead) -> Result<Vec<DetectionFrame>, DetectError> {
    let mut groups: BTreeMap<(u64, CameraId), Vec<DetectionRecord>> = BTreeMap::new();
    let mut last_ts: BTreeMap<CameraId, u64> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(&line)
            .map_err(|e| DetectError::ParseError { line: line_no, reason: e.to_string() })?;
        validate_line(&parsed, line_no)?;
        if let Some(&prev) = last_ts.get(&parsed.cam) {
            if parsed.ts < prev {
                return Err(DetectError::NonMonotoneTimestamp {
                    line: line_no,
                    camera: parsed.cam,
                    ts: parsed.ts,
                    prev,
                });
            }
        }
        last_ts.insert(parsed.cam, parsed.ts);
        groups.entry((parsed.ts, parsed.cam)).or_default().push(DetectionRecord {
            camera_id: parsed.cam,
            frame_ts: parsed.ts,
            class: parsed.cls,
            bbox: BottomBox {
                center: PixelPoint::new(parsed.u, parsed.v),
                width: parsed.w,
                height: parsed.h,
            },
            confidence: parsed.conf,
        });
    }

    Ok(groups
        .into_iter()
        .map(|((ts, cam), detections)| DetectionFrame { camera_id: cam, frame_ts: ts, detections })
        .collect())
}

fn validate_line(line: &DetectionLine, line_no: usize) -> Result<(), DetectError> {
    if !(0.0..=1.0).contains(&line.conf) {
        return Err(DetectError::ParseError {
            line: line_no,
            reason: format!("field conf = {} outside [0, 1]", line.conf),
        });
    }
    if !(line.w > 0.0 && line.w.is_finite()) || !(line.h > 0.0 && line.h.is_finite()) {
        return Err(DetectError::ParseError {
            line: line_no,
            reason: format!("field w/h = ({}, {}) must be positive", line.w, line.h),
        });
    }
    if !line.u.is_finite() || !line.v.is_finite() {
        return Err(DetectError::ParseError {
            line: line_no,
            reason: "field u/v must be finite".into(),
        });
    }
    Ok(())
}

/// Writes frames back to the NDJSON log format, one record per line.
pub fn write_detection_log(frames: &[DetectionFrame], mut w: impl Write) -> Result<(), DetectError> {
    for frame in frames {
        for d in &frame.detections {
            let line = DetectionLine {
                cam: d.camera_id,
                ts: d.frame_ts,
                cls: d.class,
                u: d.bbox.center.u,
                v: d.bbox.center.v,
                w: d.bbox.width,
                h: d.bbox.height,
                conf: d.confidence,
            };
            serde_json::to_writer(&mut w, &line)
                .map_err(|e| DetectError::ParseError { line: 0, reason: e.to_string() })?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Ground-truth state of one simulated object at one instant, in
/// tangent-plane meters relative to the scene origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub id: u64,
    pub class: ObjectClass,
    pub east: f64,
    pub north: f64,
    /// Heading of motion, radians counterclockwise from east.
    pub heading_rad: f64,
    /// Footprint dimensions: length along heading, width across.
    pub length_m: f64,
    pub width_m: f64,
}

/// An interval of frames during which one object is hidden from all
/// cameras (e.g. occluded behind a truck). Bounds are inclusive
/// frame timestamps in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub object_id: u64,
    pub from_ts: u64,
    pub to_ts: u64,
}

/// Corruption model for the synthetic detector.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SynthNoise {
    /// Gaussian noise on the detected box center, pixels (std dev).
    pub pos_sigma_px: f64,
    /// Probability of dropping each true detection.
    pub drop_prob: f64,
    /// Poisson rate of spurious detections per camera frame.
    pub fp_rate_per_frame: f64,
    /// Objects suppressed during specific frame intervals.
    pub occlusions: Vec<OcclusionWindow>,
}

/// Outcome of a synthetic detection pass, including how many truth objects
/// were skipped because they do not project into this camera.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub frame: DetectionFrame,
    pub skipped_out_of_view: usize,
}

/// Simulates one camera's detector on ground-truth object states.
///
/// Each in-view object's ground position and heading-aligned footprint are
/// projected through the camera's forward model into an image-space bottom
/// box, then corrupted per `noise`: Gaussian center jitter, Bernoulli
/// dropouts, Poisson false positives (placed uniformly in the camera
/// quadrant, class Car), and occlusion-window suppression. Deterministic
/// for a given `(seed, camera, frame_ts)` triple.
pub fn synth_detect(
    truth: &[TruthState],
    frame_ts: u64,
    calib: &CameraCalibration,
    roi_radius_m: f64,
    noise: &SynthNoise,
    seed: u64,
) -> SynthFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, calib.camera_id, frame_ts));
    let gauss = Normal::new(0.0, noise.pos_sigma_px.max(f64::MIN_POSITIVE)).unwrap();
    let mut detections = Vec::new();
    let mut skipped = 0;

    for obj in truth {
        if obj.east.hypot(obj.north) > roi_radius_m {
            continue;
        }
        let occluded = noise
            .occlusions
            .iter()
            .any(|w| w.object_id == obj.id && (w.from_ts..=w.to_ts).contains(&frame_ts));
        if occluded {
            continue;
        }
        let Some(bbox) = project_footprint(obj, calib) else {
            skipped += 1;
            continue;
        };
        // Consume randomness in a fixed order so dropped objects do not
        // shift the noise of later ones between runs with equal seeds.
        let drop_roll: f64 = rng.random();
        let (nu, nv) = (gauss.sample(&mut rng), gauss.sample(&mut rng));
        if drop_roll < noise.drop_prob {
            continue;
        }
        let mut bbox = bbox;
        if noise.pos_sigma_px > 0.0 {
            bbox.center.u += nu;
            bbox.center.v += nv;
        }
        detections.push(DetectionRecord {
            camera_id: calib.camera_id,
            frame_ts,
            class: obj.class,
            bbox,
            confidence: 0.9,
        });
    }

    if noise.fp_rate_per_frame > 0.0 {
        let poisson = Poisson::new(noise.fp_rate_per_frame).unwrap();
        let count = poisson.sample(&mut rng) as usize;
        for _ in 0..count {
            // Uniform position within this camera's quadrant of the ROI
            // disc, projected like a small car footprint.
            let (es, ns) = quadrant_signs(calib.camera_id);
            let r = roi_radius_m * rng.random_range(0.05_f64..1.0).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let ghost = TruthState {
                id: u64::MAX,
                class: ObjectClass::Car,
                east: es * r * phi.cos(),
                north: ns * r * phi.sin(),
                heading_rad: rng.random_range(0.0..std::f64::consts::TAU),
                length_m: 4.5,
                width_m: 1.8,
            };
            if let Some(bbox) = project_footprint(&ghost, calib) {
                detections.push(DetectionRecord {
                    camera_id: calib.camera_id,
                    frame_ts,
                    class: ObjectClass::Car,
                    bbox,
                    confidence: rng.random_range(0.3..0.7),
                });
            }
        }
    }

    SynthFrame {
        frame: DetectionFrame { camera_id: calib.camera_id, frame_ts, detections },
        skipped_out_of_view: skipped,
    }
}

/// Stable per-(seed, camera, frame) RNG seed (splitmix-style mixing).
fn mix_seed(seed: u64, camera: CameraId, frame_ts: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(frame_ts ^ (camera as u64 + 1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn quadrant_signs(camera: CameraId) -> (f64, f64) {
    match camera {
        CameraId::NorthEast => (1.0, 1.0),
        CameraId::NorthWest => (-1.0, 1.0),
        CameraId::SouthEast => (1.0, -1.0),
        CameraId::SouthWest => (-1.0, -1.0),
    }
}

/// Projects a heading-aligned ground footprint into the image: the box
/// center is the projected ground-contact point, the extents come from the
/// bounding rectangle of the four projected footprint corners.
fn project_footprint(obj: &TruthState, calib: &CameraCalibration) -> Option<BottomBox> {
    let center_world = WorldPoint::from_plane(obj.east, obj.north, &calib.scene_origin);
    let center_px = world_to_pixel(center_world, calib).ok()?;

    let (sin_h, cos_h) = obj.heading_rad.sin_cos();
    let (hl, hw) = (obj.length_m / 2.0, obj.width_m / 2.0);
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for (dl, dw) in [(hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)] {
        let e = obj.east + dl * cos_h - dw * sin_h;
        let n = obj.north + dl * sin_h + dw * cos_h;
        let px = match calib.plane_to_pixel(e, n) {
            Ok(p) => p,
            Err(GeoError::OutOfFieldOfView { .. }) => return None,
            Err(_) => return None,
        };
        min_u = min_u.min(px.u);
        max_u = max_u.max(px.u);
        min_v = min_v.min(px.v);
        max_v = max_v.max(px.v);
    }
    let width = max_u - min_u;
    let height = max_v - min_v;
    if !(width > 0.0 && height > 0.0) {
        return None;
    }
    Some(BottomBox { center: center_px, width, height })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{pixel_to_world, FisheyeIntrinsics, Homography};

    fn camera() -> CameraCalibration {
        let intr = FisheyeIntrinsics::new(640.0, 480.0, 420.0, 1.0, -0.05, 0.002, 1.3).unwrap();
        let h = Homography::from_row_major(&[
            0.05, 0.002, -33.0,
            -0.003, -0.055, 29.0,
            1.0e-5, 2.0e-5, 1.0,
        ])
        .unwrap();
        CameraCalibration::from_parts(
            CameraId::NorthEast,
            intr,
            h,
            WorldPoint::new(42.2808, -83.7430),
            0.0,
        )
    }

    fn truth_car(id: u64, east: f64, north: f64) -> TruthState {
        TruthState {
            id,
            class: ObjectClass::Car,
            east,
            north,
            heading_rad: 0.3,
            length_m: 4.5,
            width_m: 1.8,
        }
    }

    #[test]
    fn empty_log_reads_empty() {
        let frames = read_detection_log("".as_bytes()).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn lines_sharing_a_timestamp_group_into_one_frame() {
        let log = concat!(
            r#"{"cam":"NE","ts":1666372800400,"cls":"car","u":512.3,"v":201.7,"w":44.0,"h":20.5,"conf":0.91}"#, "\n",
            r#"{"cam":"NE","ts":1666372800400,"cls":"vru","u":100.0,"v":300.0,"w":10.0,"h":12.0,"conf":0.55}"#, "\n",
            r#"{"cam":"NE","ts":1666372800400,"cls":"truck_bus_trailer","u":700.0,"v":400.0,"w":90.0,"h":41.0,"conf":0.88}"#, "\n",
        );
        let frames = read_detection_log(log.as_bytes()).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].detections.len(), 3);
        assert_eq!(frames[0].frame_ts, 1666372800400);
    }

    #[test]
    fn out_of_range_confidence_names_the_field() {
        let log = r#"{"cam":"NE","ts":1,"cls":"car","u":1.0,"v":1.0,"w":4.0,"h":2.0,"conf":1.2}"#;
        let err = read_detection_log(log.as_bytes()).unwrap_err();
        match err {
            DetectError::ParseError { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("conf"), "reason: {reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backwards_timestamp_within_a_camera_is_rejected() {
        let log = concat!(
            r#"{"cam":"NE","ts":2000,"cls":"car","u":1.0,"v":1.0,"w":4.0,"h":2.0,"conf":0.9}"#, "\n",
            r#"{"cam":"NW","ts":1000,"cls":"car","u":1.0,"v":1.0,"w":4.0,"h":2.0,"conf":0.9}"#, "\n",
            r#"{"cam":"NE","ts":1600,"cls":"car","u":1.0,"v":1.0,"w":4.0,"h":2.0,"conf":0.9}"#, "\n",
        );
        let err = read_detection_log(log.as_bytes()).unwrap_err();
        assert!(matches!(err, DetectError::NonMonotoneTimestamp { line: 3, .. }));
    }

    #[test]
    fn log_round_trip_preserves_fields() {
        let cam = camera();
        let truth = [truth_car(1, 12.0, 9.0), truth_car(2, 25.0, 18.0)];
        let frame =
            synth_detect(&truth, 1666372800400, &cam, 50.0, &SynthNoise::default(), 7).frame;
        let mut buf = Vec::new();
        write_detection_log(&[frame.clone()], &mut buf).unwrap();
        let back = read_detection_log(buf.as_slice()).unwrap();
        assert_eq!(back, vec![frame]);
    }

    #[test]
    fn zero_noise_detections_localize_to_truth() {
        let cam = camera();
        let truth = [truth_car(1, 15.0, 12.0)];
        let out = synth_detect(&truth, 1000, &cam, 50.0, &SynthNoise::default(), 3);
        assert_eq!(out.frame.detections.len(), 1);
        let d = &out.frame.detections[0];
        let w = pixel_to_world(d.bbox.center, &cam).unwrap();
        let (e, n) = w.to_plane(&cam.scene_origin);
        assert!((e - 15.0).hypot(n - 12.0) < 1e-6, "round trip drifted: ({e}, {n})");
    }

    #[test]
    fn drop_prob_one_empties_the_frame() {
        let cam = camera();
        let truth = [truth_car(1, 15.0, 12.0), truth_car(2, 20.0, 8.0)];
        let noise = SynthNoise { drop_prob: 1.0, ..Default::default() };
        let out = synth_detect(&truth, 1000, &cam, 50.0, &noise, 3);
        assert!(out.frame.detections.is_empty());
    }

    #[test]
    fn occlusion_window_suppresses_exactly_its_frames() {
        let cam = camera();
        let truth = [truth_car(7, 18.0, 14.0)];
        let noise = SynthNoise {
            occlusions: vec![OcclusionWindow { object_id: 7, from_ts: 4000, to_ts: 5200 }],
            ..Default::default()
        };
        for ts in (2800..=6400).step_by(400) {
            let out = synth_detect(&truth, ts, &cam, 50.0, &noise, 9);
            let expected = !(4000..=5200).contains(&ts);
            assert_eq!(out.frame.detections.len() == 1, expected, "ts {ts}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let cam = camera();
        let truth: Vec<TruthState> =
            (0..6).map(|i| truth_car(i, 8.0 + 3.0 * i as f64, 6.0 + 2.0 * i as f64)).collect();
        let noise = SynthNoise {
            pos_sigma_px: 2.0,
            drop_prob: 0.2,
            fp_rate_per_frame: 1.0,
            occlusions: vec![],
        };
        let a = synth_detect(&truth, 1200, &cam, 50.0, &noise, 42);
        let b = synth_detect(&truth, 1200, &cam, 50.0, &noise, 42);
        assert_eq!(a.frame, b.frame);
        let c = synth_detect(&truth, 1200, &cam, 50.0, &noise, 43);
        assert_ne!(a.frame, c.frame, "different seeds should perturb the frame");
    }

    #[test]
    fn drop_frequency_tracks_drop_prob() {
        let cam = camera();
        let truth = [truth_car(1, 15.0, 12.0)];
        let noise = SynthNoise { drop_prob: 0.3, ..Default::default() };
        let mut dropped = 0;
        let trials = 10_000;
        for s in 0..trials {
            let out = synth_detect(&truth, 1000, &cam, 50.0, &noise, s);
            if out.frame.detections.is_empty() {
                dropped += 1;
            }
        }
        let freq = dropped as f64 / trials as f64;
        assert!((freq - 0.3).abs() < 0.02, "drop frequency {freq}");
    }
}

//! Localization and quadrant fusion.
//!
//! Each camera watches one quadrant of a 50 m disc around the scene
//! center. Detections are lifted from pixels to world coordinates through
//! the camera calibration, then the four per-camera streams are merged by
//! keeping, from each camera, only the objects that land in its own
//! quadrant. Overlap regions therefore contribute exactly one copy of each
//! object without any appearance-based deduplication.

use crate::detect::{DetectionFrame, DetectionRecord, ObjectClass};
use crate::geo::{pixel_to_world, CameraCalibration, CameraId, GeoError, PixelPoint, WorldPoint};
use serde::{Deserialize, Serialize};

/// A detection lifted to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldDetection {
    pub source_camera: CameraId,
    pub ts: u64,
    pub class: ObjectClass,
    pub position: WorldPoint,
    /// Plane area of the projected box, m².
    pub s: f64,
    /// Width/height aspect of the projected box.
    pub r: f64,
}

impl WorldDetection {
    /// Position in tangent-plane meters relative to `origin`.
    pub fn plane(&self, origin: &WorldPoint) -> (f64, f64) {
        self.position.to_plane(origin)
    }
}

/// Scene region of interest: a disc partitioned into four camera quadrants
/// by the signs of the (east, north) offsets from its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiMap {
    pub center: WorldPoint,
    pub radius_m: f64,
}

impl RoiMap {
    pub fn new(center: WorldPoint, radius_m: f64) -> Self {
        RoiMap { center, radius_m }
    }

    /// True if the plane offset lies inside the disc.
    pub fn contains(&self, east: f64, north: f64) -> bool {
        east.hypot(north) <= self.radius_m
    }
}

/// Errors from localization and region assignment.
#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    #[error("point {dist_m:.2} m from scene center exceeds the {radius_m:.2} m region")]
    OutsideRoi { dist_m: f64, radius_m: f64 },

    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Assigns an in-region point to the camera owning its quadrant.
///
/// East/north offsets of exactly zero count as positive, so the center
/// itself goes to NE and the south half of the east axis to SE.
pub fn roi_assign(p: WorldPoint, m: &RoiMap) -> Result<CameraId, FuseError> {
    let (east, north) = p.to_plane(&m.center);
    let dist = east.hypot(north);
    if dist > m.radius_m {
        return Err(FuseError::OutsideRoi { dist_m: dist, radius_m: m.radius_m });
    }
    Ok(quadrant_of(east, north))
}

fn quadrant_of(east: f64, north: f64) -> CameraId {
    match (east >= 0.0, north >= 0.0) {
        (true, true) => CameraId::NorthEast,
        (true, false) => CameraId::SouthEast,
        (false, true) => CameraId::NorthWest,
        (false, false) => CameraId::SouthWest,
    }
}

/// Lifts one detection to world coordinates.
///
/// The box center maps to the object position; scale `s` is the plane area
/// of the projected box quadrilateral and aspect `r` the east/north extent
/// ratio of its bounding rectangle. Any corner (or the center) projecting
/// outside the region disc fails the field-of-view gate.
pub fn localize(
    d: &DetectionRecord,
    c: &CameraCalibration,
    m: &RoiMap,
) -> Result<WorldDetection, FuseError> {
    let position = pixel_to_world(d.bbox.center, c)?;
    let (ce, cn) = position.to_plane(&m.center);
    gate(ce, cn, m)?;

    let (hu, hv) = (d.bbox.width / 2.0, d.bbox.height / 2.0);
    let corners_px = [
        PixelPoint::new(d.bbox.center.u - hu, d.bbox.center.v - hv),
        PixelPoint::new(d.bbox.center.u + hu, d.bbox.center.v - hv),
        PixelPoint::new(d.bbox.center.u + hu, d.bbox.center.v + hv),
        PixelPoint::new(d.bbox.center.u - hu, d.bbox.center.v + hv),
    ];
    let mut plane = [(0.0_f64, 0.0_f64); 4];
    for (i, px) in corners_px.iter().enumerate() {
        let w = pixel_to_world(*px, c)?;
        let (e, n) = w.to_plane(&m.center);
        gate(e, n, m)?;
        plane[i] = (e, n);
    }

    // Shoelace area of the corner quadrilateral (corners kept in ring
    // order, so the polygon is simple for any non-degenerate projection).
    let mut area2 = 0.0;
    for i in 0..4 {
        let (x0, y0) = plane[i];
        let (x1, y1) = plane[(i + 1) % 4];
        area2 += x0 * y1 - x1 * y0;
    }
    let s = area2.abs() / 2.0;

    let (mut min_e, mut max_e) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_n, mut max_n) = (f64::INFINITY, f64::NEG_INFINITY);
    for (e, n) in plane {
        min_e = min_e.min(e);
        max_e = max_e.max(e);
        min_n = min_n.min(n);
        max_n = max_n.max(n);
    }
    let r = (max_e - min_e) / (max_n - min_n);

    if !(s > 0.0 && s.is_finite() && r > 0.0 && r.is_finite()) {
        return Err(FuseError::Geo(GeoError::DegenerateConfiguration(format!(
            "projected box collapsed (s = {s}, r = {r})"
        ))));
    }

    Ok(WorldDetection { source_camera: d.camera_id, ts: d.frame_ts, class: d.class, position, s, r })
}

fn gate(east: f64, north: f64, m: &RoiMap) -> Result<(), FuseError> {
    let dist = east.hypot(north);
    if dist > m.radius_m {
        Err(FuseError::OutsideRoi { dist_m: dist, radius_m: m.radius_m })
    } else {
        Ok(())
    }
}

/// How tolerant fusion is to capture-time jitter between cameras.
pub const FUSE_JITTER_MS: u64 = 50;

/// Merges per-camera frames captured at (nominally) `nominal_ts` into one
/// scene-level detection list.
///
/// Each camera contributes only the detections that localize into its own
/// quadrant; detections that fail localization or land outside the region
/// are dropped. Cameras with no frame inside the ±50 ms jitter window are
/// logged as missing and fusion proceeds with the rest. Output order is
/// NE, NW, SE, SW, preserving per-camera detection order, so the result is
/// independent of the input frame order.
pub fn fuse(
    nominal_ts: u64,
    frames: &[DetectionFrame],
    calibs: &[CameraCalibration],
    m: &RoiMap,
) -> Vec<WorldDetection> {
    let mut out = Vec::new();
    for camera in CameraId::ALL {
        let Some(calib) = calibs.iter().find(|c| c.camera_id == camera) else {
            log::warn!("fuse at {nominal_ts}: no calibration for camera {camera}");
            continue;
        };
        let frame = frames
            .iter()
            .filter(|f| f.camera_id == camera && within_jitter(f.frame_ts, nominal_ts))
            .min_by_key(|f| f.frame_ts.abs_diff(nominal_ts));
        let Some(frame) = frame else {
            log::warn!("fuse at {nominal_ts}: camera {camera} frame missing");
            continue;
        };
        for d in &frame.detections {
            let wd = match localize(d, calib, m) {
                Ok(wd) => wd,
                Err(e) => {
                    log::debug!("fuse at {nominal_ts}: dropped {camera} detection: {e}");
                    continue;
                }
            };
            if roi_assign(wd.position, m).map(|owner| owner == camera).unwrap_or(false) {
                out.push(wd);
            }
        }
    }
    out
}

fn within_jitter(frame_ts: u64, nominal_ts: u64) -> bool {
    frame_ts.abs_diff(nominal_ts) <= FUSE_JITTER_MS
}

//! Core algorithms for a roadside cooperative-perception unit.
//!
//! A perception unit watches a road scene (in our deployments: a roundabout)
//! through four fisheye cameras mounted on poles at the corners of the
//! intersection. Each camera owns one quadrant of a circular region of
//! interest. The processing chain implemented here:
//!
//! * [`geo`] — fisheye undistortion and landmark-based ground-plane
//!   calibration, mapping pixels to world coordinates;
//! * [`align`] — intensity-based image alignment that re-registers the live
//!   view against the calibration-time "standard" view after camera pose
//!   drift;
//! * [`detect`] — detection record I/O (newline-delimited JSON logs) plus a
//!   synthetic detector used for closed-loop evaluation;
//! * [`fuse`] — per-camera localization and quadrant-based multi-camera
//!   fusion into a single world-frame detection stream;
//! * [`track`] — Kalman-filter multi-object tracking with IoU association;
//! * [`predict`] — transformer trajectory prediction with Gaussian output
//!   heads, trained by gradient descent on logged trajectories.
//!
//! Networking (message codec, forwarding, cloud ingest) lives in the
//! companion `msight-net` crate, and the closed-loop simulator plus the
//! evaluation harness live in `msight-sim`.

pub mod align;
pub mod detect;
pub mod fuse;
pub mod geo;
pub mod predict;
pub mod track;

/// Radius of the circular region of interest around the scene center, in
/// meters. Detections outside this disc are discarded, and trajectory
/// coordinates are normalized by this radius before entering the predictor.
pub const ROI_RADIUS_M: f64 = 50.0;

/// Detection frame interval in seconds (cameras run detection at 2.5 Hz).
pub const FRAME_INTERVAL_S: f64 = 0.4;

pub use geo::{CameraCalibration, CameraId, FisheyeIntrinsics, GeoError, Homography, PixelPoint, WorldPoint};

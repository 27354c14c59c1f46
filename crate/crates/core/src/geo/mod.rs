//! Camera-to-world geometry: fisheye intrinsics, ground-plane homographies,
//! and the landmark-based calibration that ties them together.
//!
//! The camera model has two stages. A radial fisheye model maps the angle
//! `theta` between a ray and the optical axis to a distorted image radius;
//! inverting it ("undistortion") produces virtual pinhole pixel coordinates.
//! A 3x3 homography then maps undistorted pixels to a local tangent plane
//! anchored at the scene center, where coordinates are meters east/north.
//! Both stages are estimated from surveyed landmarks: points whose pixel
//! position was labeled in an image and whose geodetic position was measured
//! with an RTK receiver.

mod artifact;
mod calibration;
mod homography;
mod radial;

pub use artifact::{
    read_calibration, read_calibration_file, read_landmark_csv, write_calibration,
    write_calibration_file, write_landmark_csv,
};
pub use calibration::{
    calibrate_camera, calibration_error, estimate_intrinsics, pixel_to_world, world_to_pixel,
    CameraCalibration, IntrinsicsFit, LandmarkPair, LmOptions, DEFAULT_ERROR_GATE_M,
};
pub use homography::{fit_homography, Homography, HomographyFit, RansacOptions};
pub use radial::FisheyeIntrinsics;

use serde::{Deserialize, Serialize};

/// Errors produced by calibration and projection routines.
#[derive(Debug, thiserror::Error)]
pub enum GeoError {
    /// The radial polynomial is not strictly increasing over the field of
    /// view, so distorted radii do not identify a unique ray angle.
    #[error("radial model is not strictly increasing over [0, {theta_max:.3}] rad")]
    NonInvertibleRadius { theta_max: f64 },

    /// A pixel (or ray) lies beyond the lens field of view.
    #[error("radius {radius:.2} outside field of view (max {max:.2})")]
    OutOfFieldOfView { radius: f64, max: f64 },

    /// The point configuration does not constrain a homography (fewer than
    /// four correspondences, or a near-collinear sample).
    #[error("degenerate landmark configuration: {0}")]
    DegenerateConfiguration(String),

    /// RANSAC could not find a consensus set of the required size.
    #[error("consensus too small: best {found} inliers, need {required}")]
    InsufficientInliers { found: usize, required: usize },

    /// An operation that averages over landmarks received none.
    #[error("empty landmark set")]
    EmptySet,

    /// Landmarks cover too little of the image for intrinsics refinement.
    #[error("landmarks span {span:.2} of the image radius, need {required:.2}")]
    InsufficientSpan { span: f64, required: f64 },

    /// Levenberg-Marquardt refinement stopped without meeting its tolerance.
    #[error("intrinsics refinement did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    /// A homography matrix is numerically singular.
    #[error("homography is numerically singular (|det| = {det:.3e})")]
    SingularHomography { det: f64 },

    /// The fitted calibration exceeds the commissioning error gate.
    #[error("mean calibration error {error_m:.3} m exceeds gate {gate_m:.3} m")]
    GateExceeded { error_m: f64, gate_m: f64 },

    /// A calibration artifact or landmark file could not be parsed.
    #[error("invalid calibration data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Identifier of one of the four quadrant cameras, named by the compass
/// quadrant of the region of interest it owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CameraId {
    #[serde(rename = "NE")]
    NorthEast,
    #[serde(rename = "NW")]
    NorthWest,
    #[serde(rename = "SE")]
    SouthEast,
    #[serde(rename = "SW")]
    SouthWest,
}

impl CameraId {
    /// All cameras in canonical order (the order used for deterministic
    /// iteration throughout the pipeline).
    pub const ALL: [CameraId; 4] = [
        CameraId::NorthEast,
        CameraId::NorthWest,
        CameraId::SouthEast,
        CameraId::SouthWest,
    ];

    /// Two-letter compass label, e.g. `"NE"`.
    pub fn label(self) -> &'static str {
        match self {
            CameraId::NorthEast => "NE",
            CameraId::NorthWest => "NW",
            CameraId::SouthEast => "SE",
            CameraId::SouthWest => "SW",
        }
    }
}

impl std::fmt::Display for CameraId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for CameraId {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NE" => Ok(CameraId::NorthEast),
            "NW" => Ok(CameraId::NorthWest),
            "SE" => Ok(CameraId::SouthEast),
            "SW" => Ok(CameraId::SouthWest),
            other => Err(GeoError::InvalidData(format!("unknown camera id {other:?}"))),
        }
    }
}

/// A position in image coordinates, in pixels. `u` grows rightward, `v`
/// grows downward; the origin is the top-left corner of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }

    /// Euclidean distance to another pixel position.
    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// A geodetic position (WGS-84 latitude/longitude, degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

/// Earth radius used by the local tangent-plane approximation, meters.
const EARTH_RADIUS_M: f64 = 6_378_137.0;

impl WorldPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Self {
        WorldPoint { lat_deg, lon_deg }
    }

    /// Projects this point onto the local tangent plane anchored at
    /// `origin`, returning meters (east, north). The equirectangular
    /// approximation is accurate to well under a millimeter over the ~100 m
    /// extent of a scene.
    pub fn to_plane(&self, origin: &WorldPoint) -> (f64, f64) {
        let east =
            (self.lon_deg - origin.lon_deg).to_radians() * EARTH_RADIUS_M * origin.lat_deg.to_radians().cos();
        let north = (self.lat_deg - origin.lat_deg).to_radians() * EARTH_RADIUS_M;
        (east, north)
    }

    /// Inverse of [`WorldPoint::to_plane`]: converts tangent-plane meters
    /// back to a geodetic position.
    pub fn from_plane(east: f64, north: f64, origin: &WorldPoint) -> WorldPoint {
        let lat_deg = origin.lat_deg + (north / EARTH_RADIUS_M).to_degrees();
        let lon_deg =
            origin.lon_deg + (east / (EARTH_RADIUS_M * origin.lat_deg.to_radians().cos())).to_degrees();
        WorldPoint { lat_deg, lon_deg }
    }

    /// Tangent-plane distance to another point, anchored at `self`.
    pub fn distance_m(&self, other: &WorldPoint) -> f64 {
        let (e, n) = other.to_plane(self);
        e.hypot(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plane_round_trip() {
        let origin = WorldPoint::new(42.280, -83.740);
        let p = WorldPoint::new(42.2803, -83.7395);
        let (e, n) = p.to_plane(&origin);
        let back = WorldPoint::from_plane(e, n, &origin);
        assert_abs_diff_eq!(back.lat_deg, p.lat_deg, epsilon = 1e-12);
        assert_abs_diff_eq!(back.lon_deg, p.lon_deg, epsilon = 1e-12);
    }

    #[test]
    fn plane_axes_point_east_and_north() {
        let origin = WorldPoint::new(42.0, -83.0);
        // One 1e-4 degree step north is ~11.1 m of northing and no easting.
        let (e, n) = WorldPoint::new(42.0001, -83.0).to_plane(&origin);
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-9);
        assert!((10.0..12.5).contains(&n), "north step gave {n}");
        // East of the origin must give positive easting.
        let (e, n) = WorldPoint::new(42.0, -82.9999).to_plane(&origin);
        assert!(e > 7.0 && e < 12.0, "east step gave {e}");
        assert_abs_diff_eq!(n, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn camera_id_labels_round_trip() {
        for cam in CameraId::ALL {
            let parsed: CameraId = cam.label().parse().unwrap();
            assert_eq!(parsed, cam);
        }
        assert!("XX".parse::<CameraId>().is_err());
    }
}

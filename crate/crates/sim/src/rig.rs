//! Synthetic four-camera rig over a circular scene.
//!
//! One fisheye head per compass quadrant, each on its own 50 m mast at
//! (±20, ±20) m, aimed a few meters further out along the diagonal. The
//! steep, near-nadir view keeps every point a vehicle can occupy in the
//! owned quadrant (the 50 m region plus footprint overhang) within ~47° of
//! the optical axis, well under the 74.5° lens limit, and keeps projected
//! boxes tight so the fusion stage's region-rim gate fires only when a
//! footprint genuinely pokes past the rim. Ground-plane homographies are
//! built from the exact pose (pinhole-on-plane map), so the rig is a
//! perfect oracle: `plane_to_pixel` followed by `pixel_to_plane`
//! round-trips to numerical precision.

use msight_core::geo::{CameraCalibration, CameraId, FisheyeIntrinsics, Homography, WorldPoint};
use nalgebra::{Matrix3, Vector3};

/// Geodetic anchor of the scene center.
pub const SCENE_ORIGIN: WorldPoint = WorldPoint { lat_deg: 42.2808, lon_deg: -83.7430 };

/// Mast height, meters above the ground plane.
pub const MAST_HEIGHT_M: f64 = 50.0;

/// East and north offset of each mast from the scene center, meters.
pub const MAST_OFFSET_M: f64 = 20.0;

/// East and north offset of each camera's ground aim point, meters. Aiming
/// slightly outward of the mast foot gives a mild (~8°) tilt that keeps
/// the ground map invertible.
pub const AIM_OFFSET_M: f64 = 25.0;

const FOCAL_PX: f64 = 420.0;
const CENTER_U: f64 = 640.0;
const CENTER_V: f64 = 480.0;
const THETA_MAX_RAD: f64 = 1.3;

/// Lens model shared by all four heads: a wide equidistant-family fisheye
/// with mild higher-order terms.
pub fn rig_intrinsics() -> FisheyeIntrinsics {
    FisheyeIntrinsics::new(CENTER_U, CENTER_V, FOCAL_PX, 1.0, -0.05, 0.002, THETA_MAX_RAD)
        .expect("the rig's radial polynomial is strictly increasing")
}

/// East/north sign pair of the quadrant a camera owns.
pub fn quadrant_signs(camera: CameraId) -> (f64, f64) {
    match camera {
        CameraId::NorthEast => (1.0, 1.0),
        CameraId::NorthWest => (-1.0, 1.0),
        CameraId::SouthEast => (1.0, -1.0),
        CameraId::SouthWest => (-1.0, -1.0),
    }
}

/// World→camera rotation looking from `eye` toward `target`, image x along
/// the horizontal.
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Exact calibration of one rig head: ideal intrinsics plus the ground
/// homography derived from the camera pose.
pub fn rig_calibration(camera: CameraId) -> CameraCalibration {
    let (es, ns) = quadrant_signs(camera);
    let eye = Vector3::new(es * MAST_OFFSET_M, ns * MAST_OFFSET_M, MAST_HEIGHT_M);
    let target = Vector3::new(es * AIM_OFFSET_M, ns * AIM_OFFSET_M, 0.0);

    let r = look_at(eye, target);
    let t = -r * eye;
    // Plane-to-pixel map for ground points: columns are the first two
    // rotation columns and the translation, pre-multiplied by the pinhole
    // matrix.
    let k = Matrix3::new(FOCAL_PX, 0.0, CENTER_U, 0.0, FOCAL_PX, CENTER_V, 0.0, 0.0, 1.0);
    let plane_to_pix = k * Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), t]);
    let pix_to_plane = plane_to_pix
        .try_inverse()
        .expect("a camera aimed off-nadir at its quadrant has an invertible ground map");

    CameraCalibration::from_parts(
        camera,
        rig_intrinsics(),
        Homography::new(pix_to_plane).expect("inverse of a nonsingular map is nonsingular"),
        SCENE_ORIGIN,
        0.0,
    )
}

/// Calibrations for a camera subset, in the order given.
pub fn rig(cameras: &[CameraId]) -> Vec<CameraCalibration> {
    cameras.iter().map(|&c| rig_calibration(c)).collect()
}

/// The full four-camera rig in canonical NE, NW, SE, SW order.
pub fn full_rig() -> Vec<CameraCalibration> {
    rig(&CameraId::ALL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use msight_core::fuse::{roi_assign, RoiMap};
    use msight_core::ROI_RADIUS_M;

    #[test]
    fn plane_pixel_round_trip_is_exact() {
        for camera in CameraId::ALL {
            let calib = rig_calibration(camera);
            let (es, ns) = quadrant_signs(camera);
            for &(e, n) in &[(5.0, 5.0), (30.0, 10.0), (10.0, 30.0), (34.0, 34.0), (14.0, 0.5)] {
                let (e, n) = (es * e, ns * n);
                let px = calib.plane_to_pixel(e, n).expect("in view");
                assert!(px.u > 0.0 && px.u < 1280.0 && px.v > 0.0 && px.v < 960.0, "{px:?}");
                let (e2, n2) = calib.pixel_to_plane(px).expect("invertible");
                assert_abs_diff_eq!(e2, e, epsilon = 1e-7);
                assert_abs_diff_eq!(n2, n, epsilon = 1e-7);
            }
        }
    }

    /// Distance from a point to its own quadrant's quarter-disc (zero when
    /// inside).
    fn quarter_disc_dist(e: f64, n: f64) -> f64 {
        let (mut qe, mut qn) = (e.max(0.0), n.max(0.0));
        let r = qe.hypot(qn);
        if r > ROI_RADIUS_M {
            qe *= ROI_RADIUS_M / r;
            qn *= ROI_RADIUS_M / r;
        }
        (e - qe).hypot(n - qn)
    }

    /// Every ground point a vehicle can occupy in a camera's own quadrant
    /// must project: the quarter-disc dilated by the largest footprint
    /// half-diagonal (a truck corner can poke ~4.5 m past the quadrant and
    /// past the region rim).
    #[test]
    fn own_quadrant_is_fully_visible_with_footprint_margin() {
        for camera in CameraId::ALL {
            let calib = rig_calibration(camera);
            let (es, ns) = quadrant_signs(camera);
            let mut e = -5.0;
            while e <= 55.0 {
                let mut n = -5.0;
                while n <= 55.0 {
                    if quarter_disc_dist(e, n) <= 4.5 {
                        let (we, wn) = (es * e, ns * n);
                        calib.plane_to_pixel(we, wn).unwrap_or_else(|err| {
                            panic!("{camera} cannot see ({we:.1}, {wn:.1}): {err}")
                        });
                    }
                    n += 2.5;
                }
                e += 2.5;
            }
        }
    }

    #[test]
    fn localized_points_assign_to_the_owning_camera() {
        let roi = RoiMap::new(SCENE_ORIGIN, ROI_RADIUS_M);
        for camera in CameraId::ALL {
            let calib = rig_calibration(camera);
            let (es, ns) = quadrant_signs(camera);
            let px = calib.plane_to_pixel(es * 20.0, ns * 14.0).unwrap();
            let world = msight_core::geo::pixel_to_world(px, &calib).unwrap();
            assert_eq!(roi_assign(world, &roi).unwrap(), camera);
        }
    }

    /// The heads differ only in pose reflection, so the four ground maps
    /// must be mirror images: flipping quadrant signs maps one onto
    /// another.
    #[test]
    fn rig_is_symmetric_under_quadrant_reflection() {
        let ne = rig_calibration(CameraId::NorthEast);
        let sw = rig_calibration(CameraId::SouthWest);
        let px_ne = ne.plane_to_pixel(18.0, 9.0).unwrap();
        let px_sw = sw.plane_to_pixel(-18.0, -9.0).unwrap();
        // Same radial geometry: equal distance from the principal point.
        let r_ne = (px_ne.u - CENTER_U).hypot(px_ne.v - CENTER_V);
        let r_sw = (px_sw.u - CENTER_U).hypot(px_sw.v - CENTER_V);
        assert_abs_diff_eq!(r_ne, r_sw, epsilon = 1e-6);
    }
}

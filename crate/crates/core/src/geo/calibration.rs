//! End-to-end camera calibration: projection chain, landmark error metric,
//! and joint intrinsics + homography refinement.

use super::{fit_homography, CameraId, FisheyeIntrinsics, GeoError, Homography, PixelPoint, RansacOptions, WorldPoint};
use nalgebra::{DMatrix, DVector, Matrix3};

/// Commissioning gate: a camera whose mean landmark error exceeds this is
/// rejected rather than deployed.
pub const DEFAULT_ERROR_GATE_M: f64 = 1.0;

/// One surveyed landmark: a hand-labeled pixel position paired with an
/// RTK-measured geodetic position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkPair {
    pub camera_id: CameraId,
    pub pixel: PixelPoint,
    pub world: WorldPoint,
}

/// A fully calibrated camera: fisheye intrinsics plus the homography from
/// undistorted pixels to tangent-plane meters anchored at `scene_origin`.
#[derive(Debug, Clone)]
pub struct CameraCalibration {
    pub camera_id: CameraId,
    pub intrinsics: FisheyeIntrinsics,
    pub homography: Homography,
    /// Geodetic anchor of the tangent plane (the scene center).
    pub scene_origin: WorldPoint,
    /// Mean landmark reprojection error at commissioning time, meters.
    pub mean_error_m: f64,
}

impl CameraCalibration {
    /// Assembles a calibration and validates it against its landmarks,
    /// failing with [`GeoError::GateExceeded`] when the mean error is above
    /// `gate_m`.
    pub fn new(
        camera_id: CameraId,
        intrinsics: FisheyeIntrinsics,
        homography: Homography,
        scene_origin: WorldPoint,
        landmarks: &[LandmarkPair],
        gate_m: f64,
    ) -> Result<Self, GeoError> {
        let mut calib = CameraCalibration {
            camera_id,
            intrinsics,
            homography,
            scene_origin,
            mean_error_m: 0.0,
        };
        let err = calibration_error(landmarks, &calib)?;
        if err > gate_m {
            return Err(GeoError::GateExceeded { error_m: err, gate_m });
        }
        calib.mean_error_m = err;
        Ok(calib)
    }

    /// Assembles a calibration without landmark validation (used when
    /// loading a stored artifact that was gated at commissioning time).
    pub fn from_parts(
        camera_id: CameraId,
        intrinsics: FisheyeIntrinsics,
        homography: Homography,
        scene_origin: WorldPoint,
        mean_error_m: f64,
    ) -> Self {
        CameraCalibration { camera_id, intrinsics, homography, scene_origin, mean_error_m }
    }

    /// Maps a raw pixel to tangent-plane meters (east, north) relative to
    /// the scene origin.
    pub fn pixel_to_plane(&self, p: PixelPoint) -> Result<(f64, f64), GeoError> {
        let undist = self.intrinsics.undistort(p)?;
        let (e, n) = self.homography.apply(undist.u, undist.v);
        if !e.is_finite() || !n.is_finite() {
            return Err(GeoError::SingularHomography { det: 0.0 });
        }
        Ok((e, n))
    }

    /// Maps tangent-plane meters to the raw pixel where that ground point
    /// appears. Fails when the point is outside the camera's field of view.
    pub fn plane_to_pixel(&self, east: f64, north: f64) -> Result<PixelPoint, GeoError> {
        let inv = self.homography.inverse()?;
        let (u, v) = inv.apply(east, north);
        if !u.is_finite() || !v.is_finite() {
            return Err(GeoError::SingularHomography { det: 0.0 });
        }
        self.intrinsics.distort(PixelPoint::new(u, v))
    }
}

/// Maps a raw pixel to a geodetic position via undistortion, the ground
/// homography, and the inverse tangent-plane projection.
pub fn pixel_to_world(p: PixelPoint, calib: &CameraCalibration) -> Result<WorldPoint, GeoError> {
    let (e, n) = calib.pixel_to_plane(p)?;
    Ok(WorldPoint::from_plane(e, n, &calib.scene_origin))
}

/// Inverse of [`pixel_to_world`]: where on the image a geodetic ground
/// position appears.
pub fn world_to_pixel(w: WorldPoint, calib: &CameraCalibration) -> Result<PixelPoint, GeoError> {
    let (e, n) = w.to_plane(&calib.scene_origin);
    calib.plane_to_pixel(e, n)
}

/// Mean tangent-plane distance, in meters, between each landmark's surveyed
/// position and the position its labeled pixel maps to.
pub fn calibration_error(
    landmarks: &[LandmarkPair],
    calib: &CameraCalibration,
) -> Result<f64, GeoError> {
    if landmarks.is_empty() {
        return Err(GeoError::EmptySet);
    }
    let mut total = 0.0;
    for lm in landmarks {
        let (pe, pn) = calib.pixel_to_plane(lm.pixel)?;
        let (we, wn) = lm.world.to_plane(&calib.scene_origin);
        total += (pe - we).hypot(pn - wn);
    }
    Ok(total / landmarks.len() as f64)
}

/// Convenience wrapper for commissioning one camera: undistorts the labeled
/// pixels with `intrinsics`, robustly fits the ground homography, and gates
/// the assembled calibration on its mean landmark error.
pub fn calibrate_camera(
    camera_id: CameraId,
    landmarks: &[LandmarkPair],
    intrinsics: FisheyeIntrinsics,
    scene_origin: WorldPoint,
    ransac: &RansacOptions,
    gate_m: f64,
) -> Result<CameraCalibration, GeoError> {
    let mut src = Vec::with_capacity(landmarks.len());
    let mut dst = Vec::with_capacity(landmarks.len());
    for lm in landmarks {
        let undist = intrinsics.undistort(lm.pixel)?;
        src.push((undist.u, undist.v));
        dst.push(lm.world.to_plane(&scene_origin));
    }
    let fit = fit_homography(&src, &dst, ransac)?;
    // Gate on the consensus landmarks only; outliers flagged by RANSAC are
    // assumed to be labeling mistakes.
    let inlier_landmarks: Vec<LandmarkPair> = landmarks
        .iter()
        .zip(&fit.inliers)
        .filter(|(_, &keep)| keep)
        .map(|(lm, _)| *lm)
        .collect();
    CameraCalibration::new(
        camera_id,
        intrinsics,
        fit.homography,
        scene_origin,
        &inlier_landmarks,
        gate_m,
    )
}

/// Options for [`estimate_intrinsics`].
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once the relative parameter step drops below this.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iterations: 200, step_tolerance: 1e-10 }
    }
}

/// Result of joint intrinsics + homography refinement.
#[derive(Debug, Clone)]
pub struct IntrinsicsFit {
    pub intrinsics: FisheyeIntrinsics,
    pub homography: Homography,
    pub iterations: usize,
    /// Root-mean-square landmark error before refinement, meters.
    pub initial_rms_m: f64,
    /// Root-mean-square landmark error after refinement, meters.
    pub final_rms_m: f64,
    /// False when the iteration budget ran out before the step tolerance
    /// was met; the fit still holds the best parameters found.
    pub converged: bool,
}

/// Span fraction of the image radius that landmarks must reach for the
/// radial polynomial to be observable.
const MIN_SPAN_FRACTION: f64 = 0.6;

/// Jointly refines fisheye intrinsics and the ground homography by
/// Levenberg-Marquardt on tangent-plane reprojection error.
///
/// Starts from `init` (typically the ideal equidistant model) and an
/// initial DLT homography, then descends over
/// `(f, k1, k2, k3, cx, cy, h00..h21)` with numeric Jacobians. The radial
/// model has an exact gauge freedom — scaling `(k1, k2, k3)` by `1/a` and
/// `f` by `a` composes with a rescaled homography to the identical
/// pixel-to-plane map — so the result is canonicalized to `k1 = 1` before
/// being returned. The plane is anchored at the landmark centroid; the
/// translation difference from any other anchor is absorbed by the
/// homography.
///
/// Requires at least 10 landmarks reaching at least 60% of the image
/// radius; sparser coverage leaves the distortion tail unobservable.
pub fn estimate_intrinsics(
    landmarks: &[LandmarkPair],
    init: &FisheyeIntrinsics,
    opts: &LmOptions,
) -> Result<IntrinsicsFit, GeoError> {
    if landmarks.is_empty() {
        return Err(GeoError::EmptySet);
    }
    if landmarks.len() < 10 {
        return Err(GeoError::DegenerateConfiguration(format!(
            "{} landmarks, intrinsics refinement needs 10",
            landmarks.len()
        )));
    }
    let max_radius = init.max_radius();
    let span = landmarks
        .iter()
        .map(|lm| lm.pixel.distance(&PixelPoint::new(init.cx, init.cy)))
        .fold(0.0, f64::max)
        / max_radius;
    if span < MIN_SPAN_FRACTION {
        return Err(GeoError::InsufficientSpan { span, required: MIN_SPAN_FRACTION });
    }

    // Anchor the working plane at the landmark centroid.
    let n = landmarks.len() as f64;
    let origin = WorldPoint::new(
        landmarks.iter().map(|lm| lm.world.lat_deg).sum::<f64>() / n,
        landmarks.iter().map(|lm| lm.world.lon_deg).sum::<f64>() / n,
    );
    let plane: Vec<(f64, f64)> = landmarks.iter().map(|lm| lm.world.to_plane(&origin)).collect();
    let pixels: Vec<PixelPoint> = landmarks.iter().map(|lm| lm.pixel).collect();

    // Initial homography from the initial intrinsics.
    let undist: Vec<(f64, f64)> = pixels
        .iter()
        .map(|&p| init.undistort_extended(p).map(|q| (q.u, q.v)))
        .collect::<Result<_, _>>()?;
    let h0 = fit_homography(&undist, &plane, &RansacOptions { inlier_threshold_m: f64::INFINITY, ..Default::default() })?
        .homography;

    let mut params = pack(init, &h0);
    let theta_max = init.theta_max;
    let mut cost = residual_vector(&params, theta_max, &pixels, &plane)
        .map(|r| r.norm_squared())
        .unwrap_or(f64::INFINITY);
    let initial_rms = (cost / n).sqrt();

    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let Some(r) = residual_vector(&params, theta_max, &pixels, &plane) else { break };
        let j = numeric_jacobian(&params, theta_max, &pixels, &plane);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;

        // Marquardt inner loop: grow lambda until a step reduces the cost.
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 2.5;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let trial_cost = residual_vector(&trial, theta_max, &pixels, &plane)
                .map(|r| r.norm_squared())
                .unwrap_or(f64::INFINITY);
            if trial_cost < cost {
                let rel_step = step.norm() / (1.0 + DVector::from_vec(params.clone()).norm());
                params = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if rel_step < opts.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            lambda *= 2.5;
        }
        // No step at any damping improved the cost: the fit is at a local
        // minimum to numeric precision.
        converged = true;
        break;
    }

    let (intr, homog) = unpack(&params, theta_max)?;
    let (intr, homog) = canonicalize(intr, homog)?;
    Ok(IntrinsicsFit {
        intrinsics: intr,
        homography: homog,
        iterations,
        initial_rms_m: initial_rms,
        final_rms_m: (cost / n).sqrt(),
        converged,
    })
}

/// Parameter packing order: f, k1, k2, k3, cx, cy, h00..h21 (h22 fixed at 1).
fn pack(intr: &FisheyeIntrinsics, h: &Homography) -> Vec<f64> {
    let hm = h.to_row_major();
    let mut p = vec![intr.f, intr.k1, intr.k2, intr.k3, intr.cx, intr.cy];
    p.extend_from_slice(&hm[..8]);
    p
}

fn unpack(params: &[f64], theta_max: f64) -> Result<(FisheyeIntrinsics, Homography), GeoError> {
    let intr = FisheyeIntrinsics::new(
        params[4], params[5], params[0], params[1], params[2], params[3], theta_max,
    )?;
    let mut hm = [0.0; 9];
    hm[..8].copy_from_slice(&params[6..14]);
    hm[8] = 1.0;
    Ok((intr, Homography::from_row_major(&hm)?))
}

/// Stacked (east, north) reprojection residuals; `None` when the parameters
/// are not a valid camera model (treated as an infinite-cost trial).
fn residual_vector(
    params: &[f64],
    theta_max: f64,
    pixels: &[PixelPoint],
    plane: &[(f64, f64)],
) -> Option<DVector<f64>> {
    let (intr, h) = unpack(params, theta_max).ok()?;
    let mut r = DVector::zeros(2 * pixels.len());
    for (i, (&p, &(we, wn))) in pixels.iter().zip(plane).enumerate() {
        let q = intr.undistort_extended(p).ok()?;
        let (e, n) = h.apply(q.u, q.v);
        if !e.is_finite() || !n.is_finite() {
            return None;
        }
        r[2 * i] = e - we;
        r[2 * i + 1] = n - wn;
    }
    Some(r)
}

fn numeric_jacobian(
    params: &[f64],
    theta_max: f64,
    pixels: &[PixelPoint],
    plane: &[(f64, f64)],
) -> DMatrix<f64> {
    let m = 2 * pixels.len();
    let mut j = DMatrix::zeros(m, params.len());
    for col in 0..params.len() {
        let h = 1e-6 * (1.0 + params[col].abs());
        let mut plus = params.to_vec();
        plus[col] += h;
        let mut minus = params.to_vec();
        minus[col] -= h;
        let (Some(rp), Some(rm)) = (
            residual_vector(&plus, theta_max, pixels, plane),
            residual_vector(&minus, theta_max, pixels, plane),
        ) else {
            continue;
        };
        for row in 0..m {
            j[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    j
}

/// Fixes the radial gauge at `k1 = 1` by folding the scale into the focal
/// length, and compensates the induced rescaling of undistorted coordinates
/// (about the principal point) inside the homography.
fn canonicalize(
    intr: FisheyeIntrinsics,
    h: Homography,
) -> Result<(FisheyeIntrinsics, Homography), GeoError> {
    let c = intr.k1;
    if !(c > 0.0) {
        return Err(GeoError::NonInvertibleRadius { theta_max: intr.theta_max });
    }
    if (c - 1.0).abs() < 1e-15 {
        return Ok((intr, h));
    }
    let canon = FisheyeIntrinsics::new(
        intr.cx,
        intr.cy,
        intr.f * c,
        1.0,
        intr.k2 / c,
        intr.k3 / c,
        intr.theta_max,
    )?;
    // Canonical undistorted coordinates are scaled by c about the principal
    // point; pre-compose the homography with the inverse scaling.
    let s = 1.0 / c;
    let unscale = Matrix3::new(
        s, 0.0, intr.cx * (1.0 - s),
        0.0, s, intr.cy * (1.0 - s),
        0.0, 0.0, 1.0,
    );
    let compensated = Homography::new(h.matrix() * unscale)?;
    Ok((canon, compensated))
}

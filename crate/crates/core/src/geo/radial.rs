//! Radial fisheye distortion model and its numeric inverse.

use super::{GeoError, PixelPoint};
use serde::{Deserialize, Serialize};

/// Number of samples used to verify that the radial polynomial is strictly
/// increasing over the field of view.
const MONOTONICITY_SAMPLES: usize = 1024;

/// Convergence target for the radius inversion, in radians of ray angle.
const INVERSION_TOL_RAD: f64 = 1e-10;

/// Fisheye camera intrinsics.
///
/// The lens maps a ray at angle `theta` from the optical axis to a distorted
/// image radius
///
/// ```text
/// r(theta) = focal * (k1*theta + k2*theta^3 + k3*theta^5)
/// ```
///
/// measured in pixels from the principal point. Undistortion inverts this
/// mapping and re-projects onto a virtual pinhole image at the same focal
/// length, where the radius is `focal * tan(theta)`; a ground-plane
/// homography is estimated on those pinhole coordinates.
///
/// With `k1 = 1, k2 = k3 = 0` this is the ideal equidistant fisheye. The
/// polynomial is required to be strictly increasing on `[0, theta_max]` so
/// that every in-view radius identifies a unique ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisheyeIntrinsics {
    /// Principal point (distortion center), pixels.
    pub cx: f64,
    pub cy: f64,
    /// Focal length, pixels.
    pub f: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Half field of view: largest ray angle the lens images, radians.
    pub theta_max: f64,
}

impl FisheyeIntrinsics {
    /// Builds intrinsics, rejecting parameter sets whose radial polynomial
    /// is not strictly increasing over the field of view.
    pub fn new(
        cx: f64,
        cy: f64,
        f: f64,
        k1: f64,
        k2: f64,
        k3: f64,
        theta_max: f64,
    ) -> Result<Self, GeoError> {
        let intr = FisheyeIntrinsics { cx, cy, f, k1, k2, k3, theta_max };
        if !(f > 0.0) || !(theta_max > 0.0) || theta_max >= std::f64::consts::FRAC_PI_2 {
            return Err(GeoError::NonInvertibleRadius { theta_max });
        }
        if !intr.is_monotonic() {
            return Err(GeoError::NonInvertibleRadius { theta_max });
        }
        Ok(intr)
    }

    /// Ideal equidistant fisheye (`k1 = 1`), the standard initial guess for
    /// intrinsics refinement.
    pub fn equidistant(cx: f64, cy: f64, f: f64, theta_max: f64) -> Result<Self, GeoError> {
        Self::new(cx, cy, f, 1.0, 0.0, 0.0, theta_max)
    }

    /// Distorted image radius for a ray at angle `theta`, pixels.
    pub fn radius_of_theta(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        self.f * (theta * (self.k1 + t2 * (self.k2 + t2 * self.k3)))
    }

    /// Derivative of [`Self::radius_of_theta`] with respect to `theta`.
    fn radius_derivative(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        self.f * (self.k1 + t2 * (3.0 * self.k2 + t2 * 5.0 * self.k3))
    }

    /// Largest distorted radius the lens produces, pixels.
    pub fn max_radius(&self) -> f64 {
        self.radius_of_theta(self.theta_max)
    }

    fn is_monotonic(&self) -> bool {
        (0..=MONOTONICITY_SAMPLES).all(|i| {
            let theta = self.theta_max * i as f64 / MONOTONICITY_SAMPLES as f64;
            self.radius_derivative(theta) > 0.0
        })
    }

    /// Solves `radius_of_theta(theta) = r` for `theta`.
    ///
    /// Monotonicity makes the root unique; a bisection bracket is refined
    /// with Newton steps until the residual is below `1e-10` rad.
    fn theta_of_radius(&self, r: f64) -> Result<f64, GeoError> {
        debug_assert!(r >= 0.0);
        let (mut lo, mut hi) = (0.0_f64, self.theta_max);
        let mut theta = self.theta_max * r / self.max_radius().max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            let g = self.radius_of_theta(theta) - r;
            let dg = self.radius_derivative(theta);
            if g.abs() <= INVERSION_TOL_RAD * dg.abs() {
                return Ok(theta);
            }
            if g > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let newton = theta - g / dg;
            // Fall back to bisection whenever Newton leaves the bracket.
            theta = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Err(GeoError::NonInvertibleRadius { theta_max: self.theta_max })
    }

    /// Maps a raw (distorted) pixel to virtual pinhole coordinates.
    ///
    /// Fails with [`GeoError::OutOfFieldOfView`] when the pixel radius
    /// exceeds the lens' maximum radius.
    pub fn undistort(&self, p: PixelPoint) -> Result<PixelPoint, GeoError> {
        let (du, dv) = (p.u - self.cx, p.v - self.cy);
        let r_d = du.hypot(dv);
        if r_d <= f64::EPSILON * self.f {
            return Ok(p);
        }
        let max = self.max_radius();
        if r_d > max {
            return Err(GeoError::OutOfFieldOfView { radius: r_d, max });
        }
        let theta = self.theta_of_radius(r_d)?;
        let scale = self.f * theta.tan() / r_d;
        Ok(PixelPoint::new(self.cx + du * scale, self.cy + dv * scale))
    }

    /// Forward model: maps virtual pinhole coordinates to the raw pixel the
    /// lens actually produces. Inverse of [`Self::undistort`].
    pub fn distort(&self, p: PixelPoint) -> Result<PixelPoint, GeoError> {
        let (du, dv) = (p.u - self.cx, p.v - self.cy);
        let r_u = du.hypot(dv);
        if r_u <= f64::EPSILON * self.f {
            return Ok(p);
        }
        let theta = (r_u / self.f).atan();
        if theta > self.theta_max {
            return Err(GeoError::OutOfFieldOfView {
                radius: r_u,
                max: self.f * self.theta_max.tan(),
            });
        }
        let scale = self.radius_of_theta(theta) / r_u;
        Ok(PixelPoint::new(self.cx + du * scale, self.cy + dv * scale))
    }

    /// Undistortion with the radial polynomial linearly extended beyond
    /// `theta_max`. The extension keeps least-squares refinement smooth when
    /// an intermediate iterate pushes a landmark slightly out of view; it is
    /// never used for production projection.
    pub(super) fn undistort_extended(&self, p: PixelPoint) -> Result<PixelPoint, GeoError> {
        match self.undistort(p) {
            Err(GeoError::OutOfFieldOfView { radius, .. }) => {
                let (du, dv) = (p.u - self.cx, p.v - self.cy);
                let slope = self.radius_derivative(self.theta_max);
                if slope <= 0.0 {
                    return Err(GeoError::NonInvertibleRadius { theta_max: self.theta_max });
                }
                let theta = self.theta_max + (radius - self.max_radius()) / slope;
                // Cap just below pi/2 so tan() stays finite.
                let theta = theta.min(std::f64::consts::FRAC_PI_2 - 1e-3);
                let scale = self.f * theta.tan() / radius;
                Ok(PixelPoint::new(self.cx + du * scale, self.cy + dv * scale))
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lens() -> FisheyeIntrinsics {
        FisheyeIntrinsics::new(640.0, 480.0, 420.0, 1.0, -0.05, 0.002, 1.3).unwrap()
    }

    #[test]
    fn principal_point_is_fixed() {
        let l = lens();
        let pp = PixelPoint::new(640.0, 480.0);
        let q = l.undistort(pp).unwrap();
        assert_abs_diff_eq!(q.u, pp.u, epsilon = 1e-12);
        assert_abs_diff_eq!(q.v, pp.v, epsilon = 1e-12);
    }

    /// For the ideal equidistant lens the inversion has the closed form
    /// theta = r/f, so the numeric solver can be checked exactly.
    #[test]
    fn equidistant_matches_closed_form() {
        let l = FisheyeIntrinsics::equidistant(640.0, 480.0, 420.0, 1.3).unwrap();
        for i in 1..100 {
            let r_d = l.max_radius() * i as f64 / 100.0;
            let p = PixelPoint::new(640.0 + r_d, 480.0);
            let q = l.undistort(p).unwrap();
            let expected = 420.0 * (r_d / 420.0).tan();
            assert_abs_diff_eq!(q.u - 640.0, expected, epsilon = 1e-9);
            assert_abs_diff_eq!(q.v, 480.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn undistort_distort_round_trip() {
        let l = lens();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let theta = rng.random_range(0.0..l.theta_max);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let r = l.radius_of_theta(theta);
            let p = PixelPoint::new(l.cx + r * phi.cos(), l.cy + r * phi.sin());
            let back = l.distort(l.undistort(p).unwrap()).unwrap();
            assert_abs_diff_eq!(back.u, p.u, epsilon = 1e-6);
            assert_abs_diff_eq!(back.v, p.v, epsilon = 1e-6);
        }
    }

    #[test]
    fn out_of_view_radius_is_rejected() {
        let l = lens();
        let p = PixelPoint::new(l.cx + l.max_radius() + 1.0, l.cy);
        assert!(matches!(l.undistort(p), Err(GeoError::OutOfFieldOfView { .. })));
    }

    #[test]
    fn non_monotonic_polynomial_is_rejected() {
        // Strongly negative k2 bends the radius curve back down inside the
        // field of view.
        let err = FisheyeIntrinsics::new(640.0, 480.0, 420.0, 1.0, -0.4, 0.0, 1.3);
        assert!(matches!(err, Err(GeoError::NonInvertibleRadius { .. })));
    }
}

//! Planar homography estimation: normalized DLT inside a seeded RANSAC loop.

use super::GeoError;
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Determinant magnitude below which a normalized homography is treated as
/// singular.
const SINGULAR_DET: f64 = 1e-12;

/// A triangle formed by any three points of a minimal sample must have at
/// least this fraction of the point set's bounding-box area, otherwise the
/// sample is rejected as near-degenerate.
const DEGENERATE_AREA_FRACTION: f64 = 1e-6;

/// A 3x3 projective map between two planes, here from undistorted pixel
/// coordinates to tangent-plane meters.
///
/// Stored normalized so the bottom-right entry is 1 whenever it is nonzero;
/// construction rejects singular matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    /// Wraps a matrix, normalizing scale and rejecting singular maps.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeoError> {
        let scale = m[(2, 2)];
        let m = if scale.abs() > SINGULAR_DET { m / scale } else { m };
        let det = m.determinant();
        if !det.is_finite() || det.abs() < SINGULAR_DET {
            return Err(GeoError::SingularHomography { det });
        }
        Ok(Homography { m })
    }

    /// Builds from nine row-major entries.
    pub fn from_row_major(h: &[f64; 9]) -> Result<Self, GeoError> {
        Self::new(Matrix3::from_row_slice(h))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Applies the map to a 2-D point. The projective divide can produce
    /// non-finite output for points on the map's vanishing line; callers
    /// that cannot rule that out must check the result.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.m * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    /// Inverse map.
    pub fn inverse(&self) -> Result<Homography, GeoError> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(GeoError::SingularHomography { det: self.m.determinant() })?;
        Homography::new(inv)
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Homography) -> Result<Homography, GeoError> {
        Homography::new(self.m * other.m)
    }
}

/// RANSAC parameters for [`fit_homography`].
#[derive(Debug, Clone, Copy)]
pub struct RansacOptions {
    /// Upper bound on sampling iterations. The loop exits earlier once the
    /// running inlier ratio makes a better sample statistically unlikely.
    pub iterations: usize,
    /// Tangent-plane reprojection distance below which a correspondence is
    /// an inlier, meters.
    pub inlier_threshold_m: f64,
    /// Minimum consensus size; smaller sets fail with
    /// [`GeoError::InsufficientInliers`].
    pub min_inliers: usize,
    /// Seed for the sampling RNG; fits are deterministic per seed.
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions { iterations: 2000, inlier_threshold_m: 0.5, min_inliers: 4, seed: 0 }
    }
}

/// Result of a robust homography fit.
#[derive(Debug, Clone)]
pub struct HomographyFit {
    pub homography: Homography,
    /// One flag per input correspondence: `true` for consensus members.
    pub inliers: Vec<bool>,
    /// Mean reprojection distance over the consensus set, meters.
    pub mean_residual_m: f64,
}

/// Fits a homography mapping `src` points onto `dst` points, robust to
/// outlying correspondences.
///
/// Runs normalized-DLT on RANSAC minimal samples of four, keeps the largest
/// consensus set, then refits on all inliers and re-evaluates the consensus
/// once with the refined model. Sampling is driven by a counter-based RNG
/// seeded from `opts.seed`, so results are reproducible.
pub fn fit_homography(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    opts: &RansacOptions,
) -> Result<HomographyFit, GeoError> {
    assert_eq!(src.len(), dst.len(), "correspondence lists must pair up");
    let n = src.len();
    if n < 4 {
        return Err(GeoError::DegenerateConfiguration(format!("{n} correspondences, need 4")));
    }

    if n == 4 {
        check_sample_geometry(&[0, 1, 2, 3], src, dst)?;
        let h = dlt(src, dst)?;
        let residuals: Vec<f64> = residuals(&h, src, dst);
        let mean = residuals.iter().sum::<f64>() / n as f64;
        return Ok(HomographyFit { homography: h, inliers: vec![true; n], mean_residual_m: mean });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut required_iters = opts.iterations;

    for iter in 0..opts.iterations {
        if iter >= required_iters {
            break;
        }
        let sample = distinct_sample(&mut rng, n);
        if check_sample_geometry(&sample, src, dst).is_err() {
            continue;
        }
        let s: Vec<(f64, f64)> = sample.iter().map(|&i| src[i]).collect();
        let d: Vec<(f64, f64)> = sample.iter().map(|&i| dst[i]).collect();
        let Ok(h) = dlt(&s, &d) else { continue };

        let res = residuals(&h, src, dst);
        let mask: Vec<bool> = res.iter().map(|&r| r < opts.inlier_threshold_m).collect();
        let count = mask.iter().filter(|&&b| b).count();
        let mean_inlier =
            res.iter().zip(&mask).filter(|(_, &b)| b).map(|(r, _)| r).sum::<f64>() / count.max(1) as f64;

        let better = match &best {
            None => true,
            Some((bc, bm, _)) => count > *bc || (count == *bc && mean_inlier < *bm),
        };
        if better {
            best = Some((count, mean_inlier, mask));
            // Standard adaptive stopping: enough iterations that drawing at
            // least one all-inlier sample has probability >= 0.999.
            let w = count as f64 / n as f64;
            let p_good = w.powi(4);
            if p_good > 1.0 - 1e-12 {
                required_iters = iter + 1;
            } else if p_good > 0.0 {
                let needed = ((1.0f64 - 0.999).ln() / (1.0 - p_good).ln()).ceil() as usize;
                required_iters = required_iters.min(iter + 1 + needed);
            }
        }
    }

    let (count, _, mut mask) = best.ok_or_else(|| {
        GeoError::DegenerateConfiguration("no non-degenerate RANSAC sample found".into())
    })?;
    if count < opts.min_inliers.max(4) {
        return Err(GeoError::InsufficientInliers {
            found: count,
            required: opts.min_inliers.max(4),
        });
    }

    // Refit on the consensus, then re-evaluate membership once with the
    // refined model before the final fit.
    for _ in 0..2 {
        let h = dlt_masked(src, dst, &mask)?;
        let res = residuals(&h, src, dst);
        let new_mask: Vec<bool> = res.iter().map(|&r| r < opts.inlier_threshold_m).collect();
        let new_count = new_mask.iter().filter(|&&b| b).count();
        if new_count < opts.min_inliers.max(4) {
            break;
        }
        if new_mask == mask {
            break;
        }
        mask = new_mask;
    }

    let h = dlt_masked(src, dst, &mask)?;
    let res = residuals(&h, src, dst);
    let count = mask.iter().filter(|&&b| b).count();
    let mean =
        res.iter().zip(&mask).filter(|(_, &b)| b).map(|(r, _)| r).sum::<f64>() / count.max(1) as f64;
    Ok(HomographyFit { homography: h, inliers: mask, mean_residual_m: mean })
}

/// Draws four distinct indices in `0..n`.
fn distinct_sample(rng: &mut ChaCha8Rng, n: usize) -> [usize; 4] {
    let mut out = [0usize; 4];
    let mut filled = 0;
    while filled < 4 {
        let candidate = rng.random_range(0..n);
        if !out[..filled].contains(&candidate) {
            out[filled] = candidate;
            filled += 1;
        }
    }
    out
}

/// Rejects samples containing a near-collinear triple on either side.
fn check_sample_geometry(
    idx: &[usize; 4],
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
) -> Result<(), GeoError> {
    for pts in [src, dst] {
        let chosen: Vec<(f64, f64)> = idx.iter().map(|&i| pts[i]).collect();
        let min_x = chosen.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = chosen.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = chosen.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = chosen.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let bbox_area = ((max_x - min_x) * (max_y - min_y)).max(f64::MIN_POSITIVE);
        for skip in 0..4 {
            let tri: Vec<(f64, f64)> =
                (0..4).filter(|&i| i != skip).map(|i| chosen[i]).collect();
            let area2 = ((tri[1].0 - tri[0].0) * (tri[2].1 - tri[0].1)
                - (tri[2].0 - tri[0].0) * (tri[1].1 - tri[0].1))
                .abs();
            if area2 * 0.5 < DEGENERATE_AREA_FRACTION * bbox_area {
                return Err(GeoError::DegenerateConfiguration(
                    "three of four sampled points are collinear".into(),
                ));
            }
        }
    }
    Ok(())
}

fn residuals(h: &Homography, src: &[(f64, f64)], dst: &[(f64, f64)]) -> Vec<f64> {
    src.iter()
        .zip(dst)
        .map(|(&(x, y), &(dx, dy))| {
            let (px, py) = h.apply(x, y);
            if px.is_finite() && py.is_finite() {
                (px - dx).hypot(py - dy)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn dlt_masked(src: &[(f64, f64)], dst: &[(f64, f64)], mask: &[bool]) -> Result<Homography, GeoError> {
    let s: Vec<(f64, f64)> = src.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let d: Vec<(f64, f64)> = dst.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    dlt(&s, &d)
}

/// Direct linear transform with Hartley normalization on both point sets.
fn dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Homography, GeoError> {
    let n = src.len();
    if n < 4 {
        return Err(GeoError::DegenerateConfiguration(format!("{n} correspondences, need 4")));
    }
    let t_src = normalizing_transform(src)?;
    let t_dst = normalizing_transform(dst)?;

    // At least 9 rows (zero-padded): the thin SVD of a 2n×9 system with
    // 2n < 9 would omit the null-space vector we solve for.
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for (i, (&s, &d)) in src.iter().zip(dst).enumerate() {
        let (x, y) = apply3(&t_src, s);
        let (xp, yp) = apply3(&t_dst, d);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = xp * x;
        a[(r0, 7)] = xp * y;
        a[(r0, 8)] = xp;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = yp * x;
        a[(r1, 7)] = yp * y;
        a[(r1, 8)] = yp;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("SVD requested V^T");
    // Right singular vector for the smallest singular value.
    let h = v_t.row(v_t.nrows() - 1);
    let hn = Matrix3::from_row_slice(&[h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]]);

    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(GeoError::DegenerateConfiguration("singular normalization".into()))?;
    Homography::new(t_dst_inv * hn * t_src)
}

/// Similarity transform taking a point set to zero centroid and mean radius
/// sqrt(2) (Hartley's conditioning for DLT).
fn normalizing_transform(pts: &[(f64, f64)]) -> Result<Matrix3<f64>, GeoError> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(GeoError::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply3(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

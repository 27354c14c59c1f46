//! Enhanced-correlation-coefficient alignment.
//!
//! Maximizes the correlation of zero-mean intensities between the stored
//! standard view and a warped live view, iterating a closed-form
//! first-order update on the warp parameters. A coarse-to-fine pyramid
//! extends the capture range to the multi-pixel drifts seen in the field.

use super::{AlignError, AlignTransform, GrayImage, MotionModel};
use nalgebra::{DMatrix, DVector, Matrix3};

/// Tuning for [`estimate_transform`].
#[derive(Debug, Clone, Copy)]
pub struct EccOptions {
    /// Iteration cap per pyramid level.
    pub max_iterations: usize,
    /// Convergence threshold on the parameter-update norm.
    pub eps: f64,
    /// Number of pyramid levels (finest included). Levels smaller than
    /// 24 px on a side are skipped.
    pub pyramid_levels: usize,
}

impl Default for EccOptions {
    fn default() -> Self {
        EccOptions { max_iterations: 100, eps: 1e-7, pyramid_levels: 3 }
    }
}

/// Result of an alignment run.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Warp taking the live input view onto the standard view:
    /// `warp_perspective(input, transform) ≈ standard`.
    pub transform: AlignTransform,
    /// Final correlation coefficient on the full-resolution images, in
    /// `[-1, 1]`; 1.0 means a perfect (affine-intensity) match.
    pub ecc: f64,
    /// Total iterations across pyramid levels.
    pub iterations: usize,
    /// True when optimization could not beat the identity warp, in which
    /// case `transform` is the identity.
    pub no_improvement: bool,
}

/// Consecutive correlation decreases tolerated before declaring divergence.
const MAX_CONSECUTIVE_DECREASES: usize = 5;

/// Minimum image side for a pyramid level to be worth optimizing.
const MIN_LEVEL_SIDE: usize = 24;

/// Estimates the warp aligning `input` to `standard`.
///
/// Both images must share dimensions. The returned correlation is exactly
/// invariant to global gain/bias changes of either image, and the returned
/// warp is never worse (in correlation) than the identity: if optimization
/// cannot improve on identity, the identity transform is returned with
/// [`Alignment::no_improvement`] set.
pub fn estimate_transform(
    input: &GrayImage,
    standard: &GrayImage,
    model: MotionModel,
    opts: &EccOptions,
) -> Result<Alignment, AlignError> {
    if input.width == 0 || input.height == 0 || standard.width == 0 || standard.height == 0 {
        return Err(AlignError::EmptyImage);
    }
    if input.width != standard.width || input.height != standard.height {
        return Err(AlignError::DimensionMismatch(
            input.width,
            input.height,
            standard.width,
            standard.height,
        ));
    }

    // Coarse-to-fine pyramid; index 0 is full resolution.
    let mut in_pyr = vec![input.clone()];
    let mut std_pyr = vec![standard.clone()];
    for _ in 1..opts.pyramid_levels.max(1) {
        let next_in = in_pyr.last().unwrap().downsample();
        if next_in.width < MIN_LEVEL_SIDE || next_in.height < MIN_LEVEL_SIDE {
            break;
        }
        in_pyr.push(next_in);
        std_pyr.push(std_pyr.last().unwrap().downsample());
    }

    // The optimization runs on the sampling map W: standard coordinates to
    // input coordinates. The published transform is its inverse.
    let mut params = identity_params(model);
    let mut total_iters = 0;

    for level in (0..in_pyr.len()).rev() {
        if level < in_pyr.len() - 1 {
            params = rescale_params(model, &params, 2.0);
        }
        let (new_params, iters) =
            optimize_level(&in_pyr[level], &std_pyr[level], model, &mut params, opts)?;
        params = new_params;
        total_iters += iters;
    }

    let w = params_to_matrix(model, &params);
    let final_ecc = correlation(&in_pyr[0], &std_pyr[0], &w).unwrap_or(f64::NEG_INFINITY);
    let identity_ecc =
        correlation(&in_pyr[0], &std_pyr[0], &Matrix3::identity()).ok_or(AlignError::FlatImage)?;

    if !final_ecc.is_finite() || final_ecc < identity_ecc {
        return Ok(Alignment {
            transform: AlignTransform::identity(model),
            ecc: identity_ecc,
            iterations: total_iters,
            no_improvement: true,
        });
    }

    let sampling = AlignTransform::new(w, model)?;
    Ok(Alignment {
        transform: sampling.inverse()?,
        ecc: final_ecc,
        iterations: total_iters,
        no_improvement: false,
    })
}

/// One pyramid level of ECC iterations. Returns the best parameters seen
/// (by correlation) and the iteration count.
fn optimize_level(
    input: &GrayImage,
    standard: &GrayImage,
    model: MotionModel,
    start: &[f64],
    opts: &EccOptions,
) -> Result<(Vec<f64>, usize), AlignError> {
    let np = model.param_count();
    let (grad_x, grad_y) = gradients(input);

    let mut params = start.to_vec();
    let mut best_params = params.clone();
    let mut best_rho = f64::NEG_INFINITY;
    let mut prev_rho = f64::NEG_INFINITY;
    let mut decreases = 0;
    let mut iters = 0;

    for _ in 0..opts.max_iterations {
        iters += 1;
        let w = params_to_matrix(model, &params);

        // Gather template/warped samples and steepest-descent rows over the
        // pixels whose warped position lands inside the input frame.
        let mut t_vals = Vec::new();
        let mut i_vals = Vec::new();
        let mut g_rows: Vec<f64> = Vec::new();
        let max_x = (input.width - 1) as f64;
        let max_y = (input.height - 1) as f64;
        for y in 0..standard.height {
            for x in 0..standard.width {
                let (xf, yf) = (x as f64, y as f64);
                let (wx, wy) = apply_h(&w, xf, yf);
                if !(wx.is_finite() && wy.is_finite())
                    || !(0.0..=max_x).contains(&wx)
                    || !(0.0..=max_y).contains(&wy)
                {
                    continue;
                }
                t_vals.push(standard.get(x, y));
                i_vals.push(input.sample(wx, wy));
                let gx = grad_x.sample(wx, wy);
                let gy = grad_y.sample(wx, wy);
                push_jacobian_row(model, &w, xf, yf, wx, wy, gx, gy, &mut g_rows);
            }
        }
        let n = t_vals.len();
        if n < 4 * np {
            // The warp has drifted (or started) almost entirely off-frame.
            break;
        }

        let t_mean = t_vals.iter().sum::<f64>() / n as f64;
        let i_mean = i_vals.iter().sum::<f64>() / n as f64;
        let tz = DVector::from_iterator(n, t_vals.iter().map(|v| v - t_mean));
        let iz = DVector::from_iterator(n, i_vals.iter().map(|v| v - i_mean));
        let t_norm = tz.norm();
        let i_norm = iz.norm();
        if t_norm < 1e-12 {
            return Err(AlignError::FlatImage);
        }
        if i_norm < 1e-12 {
            break;
        }

        let g = DMatrix::from_row_slice(n, np, &g_rows);
        let gtg = g.transpose() * &g;
        let Some(gtg_inv) = gtg.clone().try_inverse() else { break };
        let g_t = g.transpose() * &tz;
        let g_i = g.transpose() * &iz;
        let v_i = &gtg_inv * &g_i;

        let rho = tz.dot(&iz) / (t_norm * i_norm);
        if rho > best_rho {
            best_rho = rho;
            best_params = params.clone();
        }
        if prev_rho.is_finite() && rho < prev_rho - 1e-12 {
            decreases += 1;
            if decreases >= MAX_CONSECUTIVE_DECREASES {
                return Err(AlignError::Diverged { iterations: iters, ecc: rho });
            }
        } else {
            decreases = 0;
        }
        prev_rho = rho;

        let lambda_n = i_norm * i_norm - g_i.dot(&v_i);
        let lambda_d = tz.dot(&iz) - g_t.dot(&v_i);
        if lambda_d <= 0.0 {
            // The warped view is (nearly) orthogonal to the template in the
            // descent subspace; no correlation-increasing step exists.
            break;
        }
        let lambda = lambda_n / lambda_d;

        let err_proj = &g_t * lambda - &g_i;
        let delta = gtg_inv * err_proj;
        for (p, d) in params.iter_mut().zip(delta.iter()) {
            *p += d;
        }
        if delta.norm() < opts.eps {
            let w = params_to_matrix(model, &params);
            if let Some(rho) = correlation_level(input, standard, &w) {
                if rho > best_rho {
                    best_params = params.clone();
                }
            }
            break;
        }
    }

    Ok((best_params, iters))
}

/// Zero-mean correlation of `standard` against `input` warped through the
/// sampling map `w`, over the in-frame support.
fn correlation(input: &GrayImage, standard: &GrayImage, w: &Matrix3<f64>) -> Option<f64> {
    correlation_level(input, standard, w)
}

fn correlation_level(input: &GrayImage, standard: &GrayImage, w: &Matrix3<f64>) -> Option<f64> {
    let mut t_vals = Vec::new();
    let mut i_vals = Vec::new();
    let max_x = (input.width - 1) as f64;
    let max_y = (input.height - 1) as f64;
    for y in 0..standard.height {
        for x in 0..standard.width {
            let (wx, wy) = apply_h(w, x as f64, y as f64);
            if wx.is_finite() && wy.is_finite() && (0.0..=max_x).contains(&wx) && (0.0..=max_y).contains(&wy)
            {
                t_vals.push(standard.get(x, y));
                i_vals.push(input.sample(wx, wy));
            }
        }
    }
    let n = t_vals.len();
    if n < 16 {
        return None;
    }
    let tm = t_vals.iter().sum::<f64>() / n as f64;
    let im = i_vals.iter().sum::<f64>() / n as f64;
    let mut dot = 0.0;
    let mut tn = 0.0;
    let mut inm = 0.0;
    for (t, i) in t_vals.iter().zip(&i_vals) {
        let (tz, iz) = (t - tm, i - im);
        dot += tz * iz;
        tn += tz * tz;
        inm += iz * iz;
    }
    if tn < 1e-18 || inm < 1e-18 {
        return None;
    }
    Some(dot / (tn.sqrt() * inm.sqrt()))
}

/// Central-difference intensity gradients (one-sided at borders).
fn gradients(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (img.width, img.height);
    let gx = GrayImage::from_fn(w, h, |x, y| {
        let xp = (x + 1).min(w - 1);
        let xm = x.saturating_sub(1);
        (img.get(xp, y) - img.get(xm, y)) / (xp - xm).max(1) as f64
    });
    let gy = GrayImage::from_fn(w, h, |x, y| {
        let yp = (y + 1).min(h - 1);
        let ym = y.saturating_sub(1);
        (img.get(x, yp) - img.get(x, ym)) / (yp - ym).max(1) as f64
    });
    (gx, gy)
}

fn identity_params(model: MotionModel) -> Vec<f64> {
    match model {
        MotionModel::Translation => vec![0.0, 0.0],
        MotionModel::Affine => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        MotionModel::Homography => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    }
}

/// Parameter layouts: translation `[tx, ty]`; affine row-major
/// `[m00, m01, tx, m10, m11, ty]`; homography row-major with `h22 = 1`.
fn params_to_matrix(model: MotionModel, p: &[f64]) -> Matrix3<f64> {
    match model {
        MotionModel::Translation => Matrix3::new(1.0, 0.0, p[0], 0.0, 1.0, p[1], 0.0, 0.0, 1.0),
        MotionModel::Affine => Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], 0.0, 0.0, 1.0),
        MotionModel::Homography => {
            Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0)
        }
    }
}

fn matrix_to_params(model: MotionModel, m: &Matrix3<f64>) -> Vec<f64> {
    let m = m / m[(2, 2)];
    match model {
        MotionModel::Translation => vec![m[(0, 2)], m[(1, 2)]],
        MotionModel::Affine => {
            vec![m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)]]
        }
        MotionModel::Homography => vec![
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
        ],
    }
}

/// Conjugates the warp by a uniform coordinate scaling, moving parameters
/// between pyramid levels.
fn rescale_params(model: MotionModel, p: &[f64], scale: f64) -> Vec<f64> {
    let s = Matrix3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0);
    let s_inv = Matrix3::new(1.0 / scale, 0.0, 0.0, 0.0, 1.0 / scale, 0.0, 0.0, 0.0, 1.0);
    let m = s * params_to_matrix(model, p) * s_inv;
    matrix_to_params(model, &m)
}

#[inline]
fn apply_h(m: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let d = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    (
        (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / d,
        (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / d,
    )
}

/// Appends one steepest-descent row: the intensity gradient chained through
/// the warp Jacobian with respect to each parameter.
#[allow(clippy::too_many_arguments)]
#[inline]
fn push_jacobian_row(
    model: MotionModel,
    w: &Matrix3<f64>,
    x: f64,
    y: f64,
    wx: f64,
    wy: f64,
    gx: f64,
    gy: f64,
    rows: &mut Vec<f64>,
) {
    match model {
        MotionModel::Translation => {
            rows.push(gx);
            rows.push(gy);
        }
        MotionModel::Affine => {
            rows.push(gx * x);
            rows.push(gx * y);
            rows.push(gx);
            rows.push(gy * x);
            rows.push(gy * y);
            rows.push(gy);
        }
        MotionModel::Homography => {
            let d = w[(2, 0)] * x + w[(2, 1)] * y + 1.0;
            let inv_d = 1.0 / d;
            rows.push(gx * x * inv_d);
            rows.push(gx * y * inv_d);
            rows.push(gx * inv_d);
            rows.push(gy * x * inv_d);
            rows.push(gy * y * inv_d);
            rows.push(gy * inv_d);
            rows.push(-(gx * wx + gy * wy) * x * inv_d);
            rows.push(-(gx * wx + gy * wy) * y * inv_d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::warp_perspective;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth band-limited analytic texture: a sum of random Gaussian
    /// blobs, evaluable at arbitrary (fractional) coordinates so warped
    /// inputs can be generated without interpolation error.
    struct BlobTexture {
        blobs: Vec<(f64, f64, f64, f64)>, // (cx, cy, sigma, amplitude)
    }

    impl BlobTexture {
        fn new(w: usize, h: usize, count: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blobs = (0..count)
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(2.5..6.0),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect();
            BlobTexture { blobs }
        }

        fn eval(&self, x: f64, y: f64) -> f64 {
            0.5 + self
                .blobs
                .iter()
                .map(|&(cx, cy, s, a)| {
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum::<f64>()
        }

        fn render(&self, w: usize, h: usize, map: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage {
            GrayImage::from_fn(w, h, |x, y| {
                let (sx, sy) = map(x as f64, y as f64);
                self.eval(sx, sy)
            })
        }
    }

    #[test]
    fn self_alignment_is_identity() {
        let tex = BlobTexture::new(64, 64, 40, 1);
        let img = tex.render(64, 64, |x, y| (x, y));
        let a = estimate_transform(&img, &img, MotionModel::Translation, &EccOptions::default())
            .unwrap();
        assert!(a.ecc >= 1.0 - 1e-9, "self ecc {}", a.ecc);
        assert!(!a.no_improvement);
        let m = a.transform.matrix();
        assert_abs_diff_eq!(m[(0, 2)], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m[(1, 2)], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn recovers_translation_within_a_twentieth_pixel() {
        let tex = BlobTexture::new(64, 64, 40, 2);
        let standard = tex.render(64, 64, |x, y| (x, y));
        // Content shifted by (+3, -2): input(p) = standard(p + (-3, +2)),
        // so the input→standard estimate is a translation by (-3, +2).
        let input = tex.render(64, 64, |x, y| (x - 3.0, y + 2.0));
        let a = estimate_transform(&input, &standard, MotionModel::Translation, &EccOptions::default())
            .unwrap();
        let m = a.transform.matrix();
        assert_abs_diff_eq!(m[(0, 2)], -3.0, epsilon = 0.05);
        assert_abs_diff_eq!(m[(1, 2)], 2.0, epsilon = 0.05);
        assert!(a.ecc > 0.999, "ecc {}", a.ecc);
    }

    #[test]
    fn recovers_mild_projective_drift() {
        let tex = BlobTexture::new(64, 64, 45, 3);
        let standard = tex.render(64, 64, |x, y| (x, y));
        // True warp T maps input to standard; the input image therefore
        // shows the texture at T(p): input(p) = standard(T(p)).
        let t_true = Matrix3::new(1.01, 0.008, 1.5, -0.006, 0.995, -1.1, 4e-5, -3e-5, 1.0);
        let input = tex.render(64, 64, |x, y| apply_h(&t_true, x, y));
        let a = estimate_transform(&input, &standard, MotionModel::Homography, &EccOptions::default())
            .unwrap();
        assert!(a.ecc >= 0.995, "ecc {}", a.ecc);
        // Corner displacement error against the true warp.
        for &(x, y) in &[(0.0, 0.0), (63.0, 0.0), (0.0, 63.0), (63.0, 63.0)] {
            let (tx, ty) = apply_h(&t_true, x, y);
            let (gx, gy) = a.transform.apply(x, y);
            let err = (tx - gx).hypot(ty - gy);
            assert!(err <= 0.3, "corner ({x},{y}) error {err}");
        }
    }

    #[test]
    fn estimate_is_invariant_to_gain_and_bias() {
        let tex = BlobTexture::new(64, 64, 40, 4);
        let standard = tex.render(64, 64, |x, y| (x, y));
        let input = tex.render(64, 64, |x, y| (x - 1.7, y + 0.9));
        let a = estimate_transform(&input, &standard, MotionModel::Translation, &EccOptions::default())
            .unwrap();
        let mut scaled = input.clone();
        for v in &mut scaled.data {
            *v = 0.75 * *v + 0.1;
        }
        let b = estimate_transform(&scaled, &standard, MotionModel::Translation, &EccOptions::default())
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(
                    a.transform.matrix()[(i, j)],
                    b.transform.matrix()[(i, j)],
                    epsilon = 1e-6
                );
            }
        }
        assert_abs_diff_eq!(a.ecc, b.ecc, epsilon = 1e-9);
    }

    #[test]
    fn result_is_never_worse_than_identity() {
        // Unrelated textures: whatever the estimator does, the reported
        // alignment must not correlate worse than the identity warp.
        let a_tex = BlobTexture::new(64, 64, 40, 5);
        let b_tex = BlobTexture::new(64, 64, 40, 6);
        let standard = a_tex.render(64, 64, |x, y| (x, y));
        let input = b_tex.render(64, 64, |x, y| (x, y));
        let identity_ecc =
            correlation(&input, &standard, &Matrix3::identity()).unwrap();
        match estimate_transform(&input, &standard, MotionModel::Translation, &EccOptions::default()) {
            Ok(al) => {
                assert!(al.ecc >= identity_ecc - 1e-12);
                if al.no_improvement {
                    assert_eq!(al.transform.matrix(), &Matrix3::identity());
                }
            }
            Err(AlignError::Diverged { .. }) => {} // acceptable for garbage input
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn flat_standard_is_rejected() {
        let flat = GrayImage::from_fn(32, 32, |_, _| 0.5);
        let tex = BlobTexture::new(32, 32, 20, 7);
        let input = tex.render(32, 32, |x, y| (x, y));
        assert!(matches!(
            estimate_transform(&input, &flat, MotionModel::Translation, &EccOptions::default()),
            Err(AlignError::FlatImage)
        ));
    }

    #[test]
    fn warping_input_by_the_estimate_reproduces_the_standard() {
        let tex = BlobTexture::new(64, 64, 40, 8);
        let standard = tex.render(64, 64, |x, y| (x, y));
        let input = tex.render(64, 64, |x, y| (x - 2.0, y - 1.0));
        let a = estimate_transform(&input, &standard, MotionModel::Translation, &EccOptions::default())
            .unwrap();
        let (warped, mask) = warp_perspective(&input, &a.transform).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for i in 0..warped.data.len() {
            if mask[i] {
                err += (warped.data[i] - standard.data[i]).abs();
                n += 1;
            }
        }
        assert!(n > 3000);
        assert!(err / (n as f64) < 5e-3, "MAE {}", err / n as f64);
    }
}

//! Runtime image alignment.
//!
//! Roadside cameras drift: wind, thermal expansion, and maintenance nudge
//! the view away from the pose the ground-plane calibration was made for.
//! Rather than re-surveying landmarks, the runtime registers the live frame
//! against the stored calibration-time "standard" view with an intensity
//! correlation method and prepends the recovered warp to the projection
//! chain.
//!
//! The estimator maximizes the enhanced correlation coefficient (ECC) — the
//! normalized correlation of zero-mean image patches — which is exactly
//! invariant to global gain and bias changes, so lighting shifts between
//! the standard view and the live view do not disturb the geometry.

mod ecc;
mod pnm;
mod warp;

pub use ecc::{estimate_transform, Alignment, EccOptions};
pub use pnm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use warp::warp_perspective;

use nalgebra::Matrix3;

/// Errors from alignment and image I/O.
#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("image is empty")]
    EmptyImage,

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    /// The standard view has (near-)zero intensity variance, so correlation
    /// is undefined.
    #[error("image has no intensity variation")]
    FlatImage,

    /// The correlation dropped for several consecutive iterations; inputs
    /// are most likely uncorrelated views.
    #[error("alignment diverged after {iterations} iterations (ecc {ecc:.4})")]
    Diverged { iterations: usize, ecc: f64 },

    #[error("transform is not invertible")]
    SingularTransform,

    #[error("bad image file: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grayscale image with `f64` intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at fractional coordinates. Callers must keep
    /// `x` in `[0, width-1]` and `y` in `[0, height-1]`; coordinates on the
    /// far edge are handled by clamping the (weightless) second sample.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0);
        let v10 = self.get(x1, y0);
        let v01 = self.get(x0, y1);
        let v11 = self.get(x1, y1);
        v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
    }

    /// 2x2 box-average downsample (floor dimensions), used to build the
    /// coarse-to-fine pyramid.
    pub fn downsample(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        GrayImage::from_fn(w, h, |x, y| {
            let (sx, sy) = (2 * x, 2 * y);
            let x1 = (sx + 1).min(self.width - 1);
            let y1 = (sy + 1).min(self.height - 1);
            0.25 * (self.get(sx, sy) + self.get(x1, sy) + self.get(sx, y1) + self.get(x1, y1))
        })
    }
}

/// Interleaved RGB image with `f64` channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `3 * width * height` values, R,G,B per pixel.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0.0; 3 * width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Converts RGB to luma with the BT.601 weights `0.299 R + 0.587 G + 0.114 B`.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    let mut out = GrayImage::new(img.width, img.height);
    for (dst, rgb) in out.data.iter_mut().zip(img.data.chunks_exact(3)) {
        *dst = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    }
    out
}

/// Parametric motion model for the alignment search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    /// 2 parameters: pure shift.
    Translation,
    /// 6 parameters: linear part + shift.
    Affine,
    /// 8 parameters: full planar projective motion.
    Homography,
}

impl MotionModel {
    pub(crate) fn param_count(self) -> usize {
        match self {
            MotionModel::Translation => 2,
            MotionModel::Affine => 6,
            MotionModel::Homography => 8,
        }
    }
}

/// An invertible 2-D warp in homogeneous pixel coordinates.
///
/// The convention throughout alignment: applying the transform to the live
/// input view produces the standard view, i.e.
/// `warp_perspective(input, t) ≈ standard`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignTransform {
    matrix: Matrix3<f64>,
    model: MotionModel,
}

impl AlignTransform {
    pub fn identity(model: MotionModel) -> Self {
        AlignTransform { matrix: Matrix3::identity(), model }
    }

    pub fn new(matrix: Matrix3<f64>, model: MotionModel) -> Result<Self, AlignError> {
        let scale = matrix[(2, 2)];
        let matrix = if scale.abs() > 1e-12 { matrix / scale } else { matrix };
        let det = matrix.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(AlignError::SingularTransform);
        }
        Ok(AlignTransform { matrix, model })
    }

    /// Pure translation by `(tx, ty)` pixels.
    pub fn translation(tx: f64, ty: f64) -> Self {
        AlignTransform {
            matrix: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
            model: MotionModel::Translation,
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn model(&self) -> MotionModel {
        self.model
    }

    /// Applies the warp to a pixel position.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.matrix * nalgebra::Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    pub fn inverse(&self) -> Result<AlignTransform, AlignError> {
        let inv = self.matrix.try_inverse().ok_or(AlignError::SingularTransform)?;
        AlignTransform::new(inv, self.model)
    }
}

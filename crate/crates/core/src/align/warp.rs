//! Perspective warping by inverse mapping with bilinear interpolation.

use super::{AlignError, AlignTransform, GrayImage};

/// Applies `t` to `img`: output pixel `(x, y)` is sampled from
/// `t⁻¹ · (x, y)` in the source, so content moves the way the forward
/// transform says. Returns the warped image and a validity mask flagging
/// output pixels whose source sample fell inside the input frame; invalid
/// pixels are 0.
pub fn warp_perspective(
    img: &GrayImage,
    t: &AlignTransform,
) -> Result<(GrayImage, Vec<bool>), AlignError> {
    if img.width == 0 || img.height == 0 {
        return Err(AlignError::EmptyImage);
    }
    let inv = t.inverse()?;
    let mut out = GrayImage::new(img.width, img.height);
    let mut mask = vec![false; img.width * img.height];
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if sx.is_finite() && sy.is_finite() && (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy)
            {
                let i = y * img.width + x;
                out.data[i] = img.sample(sx, sy);
                mask[i] = true;
            }
        }
    }
    Ok((out, mask))
}

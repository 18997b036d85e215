//! Color-mapped disparity and error images.
//!
//! Disparities map linearly from `[0, d_max]` onto a fixed piecewise-linear
//! palette (dark blue, blue, cyan, yellow, red, dark red), so images from
//! different runs are directly comparable. Error maps use the same palette on
//! `[0, ERROR_RANGE]` pixels and paint invalid pixels black.

use crate::data::{DisparityMap, Image, ValidMask};
use crate::error::{Error, Result};

/// Palette anchors at evenly spaced positions in `[0, 1]`.
pub const PALETTE: [[f32; 3]; 6] = [
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
];

/// Absolute errors at or above this many pixels saturate the error palette.
pub const ERROR_RANGE: f32 = 8.0;

/// Palette color of `t`, clamped to `[0, 1]`. Non-finite values are black.
pub fn palette(t: f32) -> [f32; 3] {
    if !t.is_finite() {
        return [0.0; 3];
    }
    let x = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f32;
    let i = (x.floor() as usize).min(PALETTE.len() - 2);
    let f = x - i as f32;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f)
}

pub fn colorize_disparity(map: &DisparityMap, d_max: f32) -> Image {
    let mut img = Image::new(map.height, map.width);
    for y in 0..map.height {
        for x in 0..map.width {
            img.set_pixel(y, x, palette(map.at(y, x) / d_max));
        }
    }
    img
}

pub fn error_map(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidMask) -> Result<Image> {
    if (pred.height, pred.width) != (gt.height, gt.width) || (gt.height, gt.width) != (mask.height, mask.width) {
        return Err(Error::Shape("error map inputs differ in size".into()));
    }
    let mut img = Image::new(gt.height, gt.width);
    for y in 0..gt.height {
        for x in 0..gt.width {
            if mask.at(y, x) {
                let e = (pred.at(y, x) - gt.at(y, x)).abs();
                img.set_pixel(y, x, palette(e / ERROR_RANGE));
            }
        }
    }
    Ok(img)
}

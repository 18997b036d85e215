//! KITTI 16-bit disparity PNGs: `value = round(disparity * 256)`, 0 = invalid.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{DisparityMap, ValidMask};
use crate::error::{Error, FormatError, Result};

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<(DisparityMap, ValidMask)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(FormatError::Image)?;
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(FormatError::KittiPng(format!("{:?}", other.color())).into());
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let mask = ValidMask {
        height: h,
        width: w,
        data: raw.iter().map(|&v| v != 0).collect(),
    };
    let map = DisparityMap {
        height: h,
        width: w,
        data: raw.iter().map(|&v| v as f32 / 256.0).collect(),
    };
    Ok((map, mask))
}

/// Quantizes valid disparities to 1/256 px. Valid values that would round to 0
/// are stored as 1 so they stay valid.
pub fn write_kitti_png(path: impl AsRef<Path>, map: &DisparityMap, mask: &ValidMask) -> Result<()> {
    let path = path.as_ref();
    if (map.height, map.width) != (mask.height, mask.width) {
        return Err(Error::Shape("disparity map and mask sizes differ".into()));
    }
    let raw: Vec<u16> = map
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&d, &valid)| {
            if valid && d.is_finite() {
                (d as f64 * 256.0).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, raw)
            .ok_or_else(|| Error::Shape("KITTI buffer size".into()))?;
    buf.save(path).map_err(FormatError::Image)?;
    Ok(())
}

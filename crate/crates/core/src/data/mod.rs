//! Stereo samples, synthetic pair generation and disparity file formats.

mod dataset;
mod kitti;
mod pfm;
mod synthetic;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use dataset::{load_dataset, load_rgb_png, sample_seed, save_rgb_png, write_synthetic_dataset, Manifest, MANIFEST_FILE};
pub use kitti::{read_kitti_png, write_kitti_png};
pub use pfm::{encode_pfm, parse_pfm, read_pfm, write_pfm, Pfm};
pub use synthetic::{generate_random_dot_pair, SyntheticConfig};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Row-major single-channel map in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize) -> Self {
        DisparityMap {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(DisparityMap { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl ValidMask {
    pub fn all(height: usize, width: usize, valid: bool) -> Self {
        ValidMask {
            height,
            width,
            data: vec![valid; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Rectified pair with dense ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub left: Image,
    pub right: Image,
    pub disparity_gt: DisparityMap,
    pub valid_mask: ValidMask,
}

/// Mirror index without repeating the edge sample: `-1 -> 1`, `n -> n - 2`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.left.height
    }

    pub fn width(&self) -> usize {
        self.left.width
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let dims = [
            (self.right.height, self.right.width),
            (self.disparity_gt.height, self.disparity_gt.width),
            (self.valid_mask.height, self.valid_mask.width),
        ];
        if dims.iter().any(|&d| d != (h, w)) {
            return Err(Error::Shape(format!(
                "sample components disagree on size: left {h}x{w}, others {dims:?}"
            )));
        }
        let bad = self
            .disparity_gt
            .data
            .iter()
            .zip(&self.valid_mask.data)
            .any(|(&d, &v)| v && !(d >= 0.0 && d.is_finite()));
        if bad {
            return Err(Error::Shape("valid pixel with negative or non-finite disparity".into()));
        }
        Ok(())
    }

    /// Crops `h x w` starting at `(top, left)`. Regions outside the source are
    /// filled by reflection and marked invalid.
    pub fn crop(&self, top: isize, left: isize, h: usize, w: usize) -> StereoSample {
        let (sh, sw) = (self.height(), self.width());
        let mut out = StereoSample {
            left: Image::new(h, w),
            right: Image::new(h, w),
            disparity_gt: DisparityMap::new(h, w),
            valid_mask: ValidMask::all(h, w, false),
        };
        for y in 0..h {
            let sy = top + y as isize;
            let ry = reflect(sy, sh);
            for x in 0..w {
                let sx = left + x as isize;
                let rx = reflect(sx, sw);
                out.left.set_pixel(y, x, self.left.pixel(ry, rx));
                out.right.set_pixel(y, x, self.right.pixel(ry, rx));
                let inside = sy >= 0 && sx >= 0 && (sy as usize) < sh && (sx as usize) < sw;
                let i = y * w + x;
                out.disparity_gt.data[i] = self.disparity_gt.at(ry, rx);
                out.valid_mask.data[i] = inside && self.valid_mask.at(ry, rx);
                if !out.valid_mask.data[i] {
                    out.disparity_gt.data[i] = 0.0;
                }
            }
        }
        out
    }

    /// Uniformly placed crop; reflects when the request exceeds the image.
    pub fn random_crop<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> StereoSample {
        let top = if h < self.height() {
            rng.gen_range(0..=self.height() - h) as isize
        } else {
            0
        };
        let left = if w < self.width() {
            rng.gen_range(0..=self.width() - w) as isize
        } else {
            0
        };
        self.crop(top, left, h, w)
    }
}

/// Stacks images into an `[N, 3, H, W]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::Shape("images in a batch must share a size".into()));
        }
        for c in 0..3 {
            data.extend((0..h * w).map(|i| T::lit(img.data[i * 3 + c] as f64)));
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Stacks maps into an `[N, 1, H, W]` tensor.
pub fn maps_to_tensor<T: Real>(maps: &[&DisparityMap]) -> Result<Tensor<T>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Shape("empty map batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Shape("maps in a batch must share a size".into()));
        }
        data.extend(m.data.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[maps.len(), 1, h, w], data)
}

pub fn masks_to_tensor<T: Real>(masks: &[&ValidMask]) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Shape("empty mask batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Shape("masks in a batch must share a size".into()));
        }
        data.extend(m.data.iter().map(|&v| if v { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(&[masks.len(), 1, h, w], data)
}

/// Extracts sample `n` of an `[N, 1, H, W]` tensor as a map.
pub fn tensor_to_map<T: Real>(t: &Tensor<T>, n: usize) -> DisparityMap {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    DisparityMap {
        height: h,
        width: w,
        data: t.outer(n).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
    }
}

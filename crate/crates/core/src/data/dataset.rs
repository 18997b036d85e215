//! On-disk synthetic dataset: `<root>/<index>_left.png`, `<index>_right.png`,
//! `<index>_disp.pfm` and a `manifest.json`. Invalid pixels are stored as
//! `+inf` in the disparity PFM.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::pfm::{read_pfm, write_pfm};
use super::synthetic::{generate_random_dot_pair, SyntheticConfig};
use super::{DisparityMap, Image, StereoSample, ValidMask};
use crate::error::{Error, FormatError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: SyntheticConfig,
    pub indices: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// Per-sample seed derived from the dataset seed.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn stem(root: &Path, index: usize) -> PathBuf {
    root.join(format!("{index:06}"))
}

fn suffixed(root: &Path, index: usize, suffix: &str) -> PathBuf {
    let mut s = stem(root, index).into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_rgb_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .ok_or_else(|| Error::Shape("RGB buffer size".into()))?;
    buf.save(path.as_ref()).map_err(FormatError::Image)?;
    Ok(())
}

pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::open(path.as_ref()).map_err(FormatError::Image)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Image {
        height: h,
        width: w,
        data: img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    })
}

/// Generates `count` pairs under `root` with seeds derived from `cfg.seed`.
pub fn write_synthetic_dataset(root: impl AsRef<Path>, cfg: &SyntheticConfig, count: usize) -> Result<Manifest> {
    let root = root.as_ref();
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = Manifest {
        generator: cfg.clone(),
        indices: Vec::with_capacity(count),
        seeds: Vec::with_capacity(count),
    };
    for index in 0..count {
        let seed = sample_seed(cfg.seed, index);
        let sample = generate_random_dot_pair(&SyntheticConfig { seed, ..cfg.clone() })?;
        save_rgb_png(suffixed(root, index, "_left.png"), &sample.left)?;
        save_rgb_png(suffixed(root, index, "_right.png"), &sample.right)?;
        let mut disp = sample.disparity_gt.clone();
        for (d, &v) in disp.data.iter_mut().zip(&sample.valid_mask.data) {
            if !v {
                *d = f32::INFINITY;
            }
        }
        write_pfm(suffixed(root, index, "_disp.pfm"), &disp)?;
        manifest.indices.push(index);
        manifest.seeds.push(seed);
    }
    let path = root.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<(Manifest, Vec<StereoSample>)> {
    let root = root.as_ref();
    let path = root.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let mut samples = Vec::with_capacity(manifest.indices.len());
    for &index in &manifest.indices {
        let left = load_rgb_png(suffixed(root, index, "_left.png"))?;
        let right = load_rgb_png(suffixed(root, index, "_right.png"))?;
        let pfm = read_pfm(suffixed(root, index, "_disp.pfm"))?;
        let valid = ValidMask {
            height: pfm.map.height,
            width: pfm.map.width,
            data: pfm.map.data.iter().map(|d| d.is_finite()).collect(),
        };
        let disparity_gt = DisparityMap {
            data: pfm.map.data.iter().map(|&d| if d.is_finite() { d } else { 0.0 }).collect(),
            ..pfm.map
        };
        let sample = StereoSample {
            left,
            right,
            disparity_gt,
            valid_mask: valid,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok((manifest, samples))
}

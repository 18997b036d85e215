//! Random-dot stereograms over piecewise-constant rectangular disparity regions.
//!
//! Every region is a fronto-parallel plate carrying its own random-dot
//! texture. Plates with larger disparity are nearer and drawn on top. The
//! background plate is unbounded so every image column is covered in both
//! views. A left pixel is valid when its match lies inside the right image
//! and the same plate is visible there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DisparityMap, Image, StereoSample, ValidMask};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    /// Exclusive upper bound on disparity in pixels; a multiple of 4.
    pub d_max: usize,
    pub num_regions: usize,
    /// Fraction of texels that carry a random color; the rest are mid-gray.
    pub dot_density: f64,
    pub seed: u64,
    /// Forces every region to this disparity.
    #[serde(default)]
    pub fixed_disparity: Option<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 96,
            width: 128,
            d_max: 32,
            num_regions: 3,
            dot_density: 0.6,
            seed: 0,
            fixed_disparity: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic image must be non-empty".into()));
        }
        if self.d_max == 0 || self.d_max % 4 != 0 {
            return Err(Error::Config(format!(
                "d_max = {} must be a positive multiple of 4",
                self.d_max
            )));
        }
        if self.d_max >= self.width {
            return Err(Error::Config(format!(
                "d_max = {} must be smaller than the width {}",
                self.d_max, self.width
            )));
        }
        if self.num_regions == 0 {
            return Err(Error::Config("num_regions must be at least 1".into()));
        }
        if !(self.dot_density > 0.0 && self.dot_density <= 1.0) {
            return Err(Error::Config(format!(
                "dot_density = {} must lie in (0, 1]",
                self.dot_density
            )));
        }
        if let Some(d) = self.fixed_disparity {
            if d >= self.d_max {
                return Err(Error::Config(format!(
                    "fixed_disparity = {d} must be below d_max = {}",
                    self.d_max
                )));
            }
        }
        Ok(())
    }

    /// Largest disparity the generator draws: `d_max - 4`, the top of the range a
    /// quarter-resolution regressor with `d_max / 4` levels can express.
    pub fn max_drawn_disparity(&self) -> usize {
        self.d_max - 4
    }
}

struct Plate {
    disparity: usize,
    /// Left-view extent `[y0, y1) x [x0, x1)`; `None` for the unbounded background.
    rect: Option<(usize, usize, usize, usize)>,
    texture: Vec<[f32; 3]>,
}

impl Plate {
    fn covers_left(&self, y: usize, x: usize) -> bool {
        match self.rect {
            None => true,
            Some((y0, y1, x0, x1)) => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }

    fn covers_right(&self, y: usize, xr: usize) -> bool {
        self.covers_left(y, xr + self.disparity)
    }
}

pub fn generate_random_dot_pair(cfg: &SyntheticConfig) -> Result<StereoSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let tex_w = w + cfg.d_max;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut plates = Vec::with_capacity(cfg.num_regions);
    for i in 0..cfg.num_regions {
        let disparity = match cfg.fixed_disparity {
            Some(d) => d,
            None => rng.gen_range(0..=cfg.max_drawn_disparity()),
        };
        let rect = (i > 0).then(|| {
            let rh = rng.gen_range((h / 4).max(1)..=(h / 2).max(1));
            let rw = rng.gen_range((w / 4).max(1)..=(w / 2).max(1));
            let y0 = rng.gen_range(0..=h - rh);
            let x0 = rng.gen_range(0..=w - rw);
            (y0, y0 + rh, x0, x0 + rw)
        });
        let texture = (0..h * tex_w)
            .map(|_| {
                if rng.gen_bool(cfg.dot_density) {
                    [0; 3].map(|_: u8| rng.gen_range(0u8..=255) as f32 / 255.0)
                } else {
                    [128.0 / 255.0; 3]
                }
            })
            .collect();
        plates.push(Plate {
            disparity,
            rect,
            texture,
        });
    }
    // Nearest plate last; stable so equal disparities keep generation order.
    plates.sort_by_key(|p| p.disparity);

    let mut sample = StereoSample {
        left: Image::new(h, w),
        right: Image::new(h, w),
        disparity_gt: DisparityMap::new(h, w),
        valid_mask: ValidMask::all(h, w, false),
    };
    let top_left = |y: usize, x: usize| plates.iter().rposition(|p| p.covers_left(y, x)).expect("background");
    let top_right = |y: usize, x: usize| plates.iter().rposition(|p| p.covers_right(y, x)).expect("background");

    for y in 0..h {
        for x in 0..w {
            let s = top_left(y, x);
            let plate = &plates[s];
            sample.left.set_pixel(y, x, plate.texture[y * tex_w + x]);
            let r = top_right(y, x);
            let rp = &plates[r];
            sample.right.set_pixel(y, x, rp.texture[y * tex_w + x + rp.disparity]);

            let d = plate.disparity;
            let visible = x >= d && top_right(y, x - d) == s;
            let i = y * w + x;
            sample.valid_mask.data[i] = visible;
            sample.disparity_gt.data[i] = if visible { d as f32 } else { 0.0 };
        }
    }
    Ok(sample)
}

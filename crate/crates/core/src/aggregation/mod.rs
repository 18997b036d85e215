//! Cost aggregation over the correlation volume.
//!
//! [`Bga`] alternates disparity-isolated spatial steps with pixel-isolated
//! disparity steps in 2D. [`Baseline3d`] is the coupled 3D-convolution
//! hourglass it is compared against, with a parameter count matched to within
//! 10%.

mod attention;
mod baseline3d;
mod bga;
mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::{apply_spatial_attention, SpatialAttention};
pub use baseline3d::Baseline3d;
pub use bga::Bga;
pub use layers::{BgaBlock, DisparityAggregation, SpatialAggregation};

use crate::autograd::Var;
use crate::costvolume::channel2disp;
use crate::error::{Error, Result};
use crate::features::Variant;
use crate::nn::{Binder, LayerDesc, ParamStore};
use crate::tensor::Real;

/// Prefix shared by all aggregation parameters.
pub const PARAM_PREFIX: &str = "agg.";
const VOLUME_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Bga,
    Conv3d,
}

impl std::str::FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bga" => Ok(Paradigm::Bga),
            "conv3d" => Ok(Paradigm::Conv3d),
            _ => Err(Error::Config(format!("unknown paradigm {s:?}; expected bga or conv3d"))),
        }
    }
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Paradigm::Bga => "bga",
            Paradigm::Conv3d => "conv3d",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggConfig {
    pub paradigm: Paradigm,
    pub variant: Variant,
    pub num_stages: usize,
    pub blocks_per_stage: usize,
    pub use_attention: bool,
    /// Spatial steps mix all channels instead of staying inside each bundle.
    pub spatial_dense: bool,
}

impl AggConfig {
    pub fn for_variant(variant: Variant) -> Self {
        AggConfig {
            paradigm: Paradigm::Bga,
            variant,
            num_stages: 2,
            blocks_per_stage: match variant {
                Variant::Tiny | Variant::S => 1,
                Variant::M => 2,
                Variant::L => 3,
            },
            use_attention: false,
            spatial_dense: false,
        }
    }

    pub fn groups(&self) -> usize {
        self.variant.groups()
    }

    /// Channels per disparity level at scale `k` (0 = quarter resolution).
    pub fn bundle_width(&self, k: usize) -> usize {
        let g = self.groups();
        match self.variant {
            Variant::Tiny | Variant::M => g + k * g / 2,
            Variant::S | Variant::L => g + k * g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages == 0 {
            return Err(Error::Config("agg.num_stages must be at least 1".into()));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("agg.blocks_per_stage must be at least 1".into()));
        }
        Ok(())
    }
}

/// Aggregated scores `[N, D, h4, w4]`; higher means a better match.
#[derive(Clone, Copy, Debug)]
pub struct AggOutput<'t, T: Real> {
    pub scores: Var<'t, T>,
    /// Coarse head tapped before the decoder, same shape as `scores`.
    pub init_scores: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub enum Aggregator {
    Bga(Bga),
    Conv3d(Baseline3d),
}

impl Aggregator {
    /// Builds the configured paradigm for `levels` quarter-resolution disparities.
    /// The 3D baseline is sized to the BGA parameter count of the same config.
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &AggConfig,
        levels: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        match cfg.paradigm {
            Paradigm::Bga => Ok(Aggregator::Bga(Bga::new(cfg, levels, store, rng)?)),
            Paradigm::Conv3d => {
                let target = bga_param_count(cfg, levels)?;
                let width = Baseline3d::match_width(cfg, target)?;
                Ok(Aggregator::Conv3d(Baseline3d::new(cfg, width, store, rng)?))
            }
        }
    }

    /// `volume` is the 4D correlation volume `[N, G, D, h4, w4]`.
    pub fn forward<'t, T: Real>(
        &self,
        p: &Binder<'t, '_, T>,
        volume: Var<'t, T>,
        gate: Option<Var<'t, T>>,
    ) -> Result<AggOutput<'t, T>> {
        // Correlation magnitudes track the feature scale; only relative costs matter.
        let volume = volume.sample_norm(VOLUME_NORM_EPS);
        match self {
            Aggregator::Bga(b) => b.forward(p, channel2disp(volume), gate),
            Aggregator::Conv3d(b) => {
                let volume = match gate {
                    Some(a) => {
                        let s = volume.shape();
                        let merged = volume.reshape(&[s[0], s[1] * s[2], s[3], s[4]]);
                        apply_spatial_attention(merged, a).reshape(&s)
                    }
                    None => volume,
                };
                b.forward(p, volume)
            }
        }
    }

    pub fn describe(&self, levels: usize, h4: usize, w4: usize) -> Vec<LayerDesc> {
        match self {
            Aggregator::Bga(b) => b.describe(h4, w4),
            Aggregator::Conv3d(b) => b.describe(levels, h4, w4),
        }
    }
}

/// Parameter count of the BGA aggregator for `cfg` (paradigm ignored).
pub fn bga_param_count(cfg: &AggConfig, levels: usize) -> Result<usize> {
    let mut scratch = ParamStore::<f32>::new();
    let cfg = AggConfig {
        paradigm: Paradigm::Bga,
        ..cfg.clone()
    };
    Bga::new(&cfg, levels, &mut scratch, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(scratch.num_params_with_prefix(PARAM_PREFIX))
}

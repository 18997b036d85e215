//! Full stereo network: backbone, correlation volume, aggregation, regression.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{AggConfig, Aggregator, Paradigm, SpatialAttention, PARAM_PREFIX};
use crate::autograd::{Tape, Var};
use crate::costvolume::{build_gwc_volume, disparity_levels};
use crate::error::{Error, Result};
use crate::features::{extract_features, Backbone, BackboneConfig, Variant};
use crate::nn::{Binder, LayerDesc, ParamStore};
use crate::regression::{soft_argmin, upsample_interp, DisparityPrediction, LearnedUpsampler};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub agg: AggConfig,
    /// Full-resolution disparity search range in pixels; a multiple of 4.
    pub d_max: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, paradigm: Paradigm, d_max: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig::for_variant(variant),
            agg: AggConfig {
                paradigm,
                ..AggConfig::for_variant(variant)
            },
            d_max,
        }
    }

    pub fn levels(&self) -> Result<usize> {
        disparity_levels(self.d_max)
    }

    pub fn groups(&self) -> usize {
        self.agg.groups()
    }

    pub fn validate(&self) -> Result<()> {
        if self.backbone.variant != self.agg.variant {
            return Err(Error::Config(format!(
                "backbone variant {} differs from aggregation variant {}",
                self.backbone.variant, self.agg.variant
            )));
        }
        self.levels()?;
        self.backbone.validate(self.groups())?;
        self.agg.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding; identifies the architecture.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Tape-level outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput<'t, T: Real> {
    pub d_quarter: Var<'t, T>,
    pub prob_volume: Var<'t, T>,
    pub d_init: Var<'t, T>,
    pub d_final: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct StereoModel<T: Real> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    backbone: Backbone,
    attention: Option<SpatialAttention>,
    aggregator: Aggregator,
    upsampler: LearnedUpsampler,
}

impl<T: Real> StereoModel<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&cfg.backbone, cfg.groups(), &mut params, &mut rng)?;
        let attention = cfg
            .agg
            .use_attention
            .then(|| SpatialAttention::new(&cfg.backbone, &mut params, &mut rng));
        let aggregator = Aggregator::new(&cfg.agg, cfg.levels()?, &mut params, &mut rng)?;
        let upsampler = LearnedUpsampler::new(cfg.backbone.c4(), &mut params, &mut rng);
        Ok(StereoModel {
            cfg: cfg.clone(),
            params,
            backbone,
            attention,
            aggregator,
            upsampler,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn aggregation_params(&self) -> usize {
        self.params.num_params_with_prefix(PARAM_PREFIX)
    }

    /// Runs the network on `[N, 3, H, W]` images in `[0, 1]`.
    pub fn forward<'t>(
        &self,
        p: &Binder<'t, '_, T>,
        left: Var<'t, T>,
        right: Var<'t, T>,
    ) -> Result<ForwardOutput<'t, T>> {
        let (fl, fr) = extract_features(p, &self.backbone, left, right)?;
        let volume = build_gwc_volume(fl.level_4, fr.level_4, self.cfg.d_max, self.cfg.groups())?;
        let gate = self.attention.as_ref().map(|a| a.forward(p, &fl));
        let agg = self.aggregator.forward(p, volume, gate)?;
        let (d_quarter, prob_volume) = soft_argmin(agg.scores);
        let (d_init_quarter, _) = soft_argmin(agg.init_scores);
        Ok(ForwardOutput {
            d_quarter,
            prob_volume,
            d_init: upsample_interp(d_init_quarter),
            d_final: self.upsampler.forward(p, d_quarter, fl.level_4),
        })
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<DisparityPrediction<T>> {
        let tape = Tape::new();
        let p = Binder::new(&tape, &self.params, false);
        let out = self.forward(&p, tape.constant(left.clone()), tape.constant(right.clone()))?;
        let take = |v: Var<'_, T>| (*v.value()).clone();
        Ok(DisparityPrediction {
            d_quarter: take(out.d_quarter),
            d_init: take(out.d_init),
            d_final: take(out.d_final),
            prob_volume: take(out.prob_volume),
        })
    }

    /// Conv layers executed for one `h x w` stereo pair.
    pub fn describe(&self, h: usize, w: usize) -> Result<Vec<LayerDesc>> {
        crate::features::check_stride(h, w)?;
        let (h4, w4) = (h / 4, w / 4);
        let mut out = Vec::new();
        for side in ["left", "right"] {
            out.extend(self.backbone.describe(h, w).into_iter().map(|mut l| {
                l.name = format!("{side}.{}", l.name);
                l
            }));
        }
        if let Some(a) = &self.attention {
            out.extend(a.describe(h4, w4));
        }
        out.extend(self.aggregator.describe(self.cfg.levels()?, h4, w4));
        out.extend(self.upsampler.describe(h4, w4));
        Ok(out)
    }

    /// Conv layers of the aggregation stage alone for an `h x w` image.
    pub fn describe_aggregation(&self, h: usize, w: usize) -> Result<Vec<LayerDesc>> {
        crate::features::check_stride(h, w)?;
        Ok(self.aggregator.describe(self.cfg.levels()?, h / 4, w / 4))
    }
}

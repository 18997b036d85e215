//! Siamese multi-scale feature extractor.
//!
//! A small residual CNN downsamples to 1/32 and a cascade of
//! nearest-upsample + 3x3 conv blocks with skip concatenation brings features
//! back to 1/16, 1/8 and 1/4 of the input. The 1/4 level feeds the cost volume;
//! the left pyramid also drives the optional attention gate and the learned
//! upsampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Binder, Conv2d, LayerDesc, ParamStore};
use crate::tensor::Real;

/// Total downsampling of the backbone; inputs must be multiples of it.
pub const BACKBONE_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "tiny", alias = "Tiny", alias = "TINY")]
    Tiny,
    #[serde(rename = "S", alias = "s")]
    S,
    #[serde(rename = "M", alias = "m")]
    M,
    #[serde(rename = "L", alias = "l")]
    L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tiny, Variant::S, Variant::M, Variant::L];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "tiny",
            Variant::S => "S",
            Variant::M => "M",
            Variant::L => "L",
        }
    }

    /// Channels of the 1/4 feature level.
    pub fn level4_channels(self) -> usize {
        match self {
            Variant::Tiny => 32,
            Variant::S => 48,
            Variant::M => 64,
            Variant::L => 96,
        }
    }

    /// Correlation group count.
    pub fn groups(self) -> usize {
        match self {
            Variant::Tiny | Variant::S => 8,
            Variant::M | Variant::L => 16,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" | "Tiny" | "TINY" => Ok(Variant::Tiny),
            "S" | "s" => Ok(Variant::S),
            "M" | "m" => Ok(Variant::M),
            "L" | "l" => Ok(Variant::L),
            _ => Err(Error::Config(format!("unknown variant {s:?}; expected tiny, S, M or L"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub variant: Variant,
    /// Channels of the 1/4 level (C4).
    pub base_channels: usize,
    #[serde(default)]
    pub use_pretrained: bool,
}

impl BackboneConfig {
    pub fn for_variant(variant: Variant) -> Self {
        BackboneConfig {
            variant,
            base_channels: variant.level4_channels(),
            use_pretrained: false,
        }
    }

    pub fn c4(&self) -> usize {
        self.base_channels
    }

    pub fn c8(&self) -> usize {
        self.base_channels * 3 / 2
    }

    pub fn c16(&self) -> usize {
        self.base_channels * 2
    }

    fn c32(&self) -> usize {
        self.base_channels * 3
    }

    pub fn validate(&self, groups: usize) -> Result<()> {
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "backbone base_channels = {} must be even and positive",
                self.base_channels
            )));
        }
        if groups == 0 || self.base_channels % groups != 0 {
            return Err(Error::Config(format!(
                "C4 = {} is not divisible by the correlation group count {groups}",
                self.base_channels
            )));
        }
        if self.use_pretrained {
            return Err(Error::Config(
                "no pretrained backbone weights are bundled; set model.use_pretrained = false".into(),
            ));
        }
        Ok(())
    }
}

/// Per-image features at 1/4, 1/8 and 1/16 resolution, each `[N, C, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid<'t, T: Real> {
    pub level_4: Var<'t, T>,
    pub level_8: Var<'t, T>,
    pub level_16: Var<'t, T>,
}

const NORM_EPS: f64 = 1e-5;

/// Parameter-free instance normalization used after every hidden conv.
fn norm<T: Real>(x: Var<'_, T>) -> Var<'_, T> {
    x.instance_norm(NORM_EPS)
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResBlock {
    fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, ch: usize, rng: &mut R) -> Self {
        ResBlock {
            a: Conv2d::new(store, &format!("{name}.a"), ch, ch, 3, Conv2dSpec::same(3), true, rng),
            b: Conv2d::new(store, &format!("{name}.b"), ch, ch, 3, Conv2dSpec::same(3), true, rng),
        }
    }

    fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let y = Activation::LeakyRelu.apply(norm(self.a.forward(p, x)));
        let y = norm(self.b.forward(p, y));
        Activation::LeakyRelu.apply(x.add(y))
    }

    fn describe(&self, name: &str, hw: (usize, usize), out: &mut Vec<LayerDesc>) {
        out.push(self.a.describe(&format!("{name}.a"), hw));
        out.push(self.b.describe(&format!("{name}.b"), hw));
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    cfg: BackboneConfig,
    stem: Conv2d,
    down4: Conv2d,
    res4: ResBlock,
    down8: Conv2d,
    res8: ResBlock,
    down16: Conv2d,
    res16: ResBlock,
    down32: Conv2d,
    up16: Conv2d,
    up8: Conv2d,
    up4: Conv2d,
}

fn down_spec() -> Conv2dSpec {
    Conv2dSpec {
        stride: 2,
        padding: 1,
        groups: 1,
    }
}

impl Backbone {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &BackboneConfig,
        groups: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(groups)?;
        let (c2, c4, c8, c16, c32) = (cfg.c4() / 2, cfg.c4(), cfg.c8(), cfg.c16(), cfg.c32());
        let same = Conv2dSpec::same(3);
        Ok(Backbone {
            cfg: cfg.clone(),
            stem: Conv2d::new(store, "backbone.stem", 3, c2, 3, down_spec(), true, rng),
            down4: Conv2d::new(store, "backbone.down4", c2, c4, 3, down_spec(), true, rng),
            res4: ResBlock::new(store, "backbone.res4", c4, rng),
            down8: Conv2d::new(store, "backbone.down8", c4, c8, 3, down_spec(), true, rng),
            res8: ResBlock::new(store, "backbone.res8", c8, rng),
            down16: Conv2d::new(store, "backbone.down16", c8, c16, 3, down_spec(), true, rng),
            res16: ResBlock::new(store, "backbone.res16", c16, rng),
            down32: Conv2d::new(store, "backbone.down32", c16, c32, 3, down_spec(), true, rng),
            up16: Conv2d::new(store, "backbone.up16", c32 + c16, c16, 3, same, true, rng),
            up8: Conv2d::new(store, "backbone.up8", c16 + c8, c8, 3, same, true, rng),
            up4: Conv2d::new(store, "backbone.up4", c8 + c4, c4, 3, same, true, rng),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Runs one batch `[N, 3, H, W]` through the backbone.
    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, image: Var<'t, T>) -> Result<FeaturePyramid<'t, T>> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("backbone expects [N,3,H,W], got {s:?}")));
        }
        check_stride(s[2], s[3])?;
        let act = |v: Var<'t, T>| Activation::LeakyRelu.apply(norm(v));
        let x2 = act(self.stem.forward(p, image));
        let e4 = self.res4.forward(p, act(self.down4.forward(p, x2)));
        let e8 = self.res8.forward(p, act(self.down8.forward(p, e4)));
        let e16 = self.res16.forward(p, act(self.down16.forward(p, e8)));
        let e32 = act(self.down32.forward(p, e16));

        let level_16 = act(self
            .up16
            .forward(p, Var::concat_channels(&[e32.upsample_nearest(&[2, 2]), e16])));
        let level_8 = act(self
            .up8
            .forward(p, Var::concat_channels(&[level_16.upsample_nearest(&[2, 2]), e8])));
        let level_4 = self
            .up4
            .forward(p, Var::concat_channels(&[level_8.upsample_nearest(&[2, 2]), e4]));
        Ok(FeaturePyramid {
            level_4,
            level_8,
            level_16,
        })
    }

    /// Conv layers of one image's forward pass.
    pub fn describe(&self, h: usize, w: usize) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let hw2 = self.stem.out_hw((h, w));
        out.push(self.stem.describe("backbone.stem", (h, w)));
        let hw4 = self.down4.out_hw(hw2);
        out.push(self.down4.describe("backbone.down4", hw2));
        self.res4.describe("backbone.res4", hw4, &mut out);
        let hw8 = self.down8.out_hw(hw4);
        out.push(self.down8.describe("backbone.down8", hw4));
        self.res8.describe("backbone.res8", hw8, &mut out);
        let hw16 = self.down16.out_hw(hw8);
        out.push(self.down16.describe("backbone.down16", hw8));
        self.res16.describe("backbone.res16", hw16, &mut out);
        out.push(self.down32.describe("backbone.down32", hw16));
        out.push(self.up16.describe("backbone.up16", hw16));
        out.push(self.up8.describe("backbone.up8", hw8));
        out.push(self.up4.describe("backbone.up4", hw4));
        out
    }
}

pub fn check_stride(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % BACKBONE_STRIDE != 0 || width % BACKBONE_STRIDE != 0 {
        return Err(Error::Stride {
            height,
            width,
            stride: BACKBONE_STRIDE,
        });
    }
    Ok(())
}

/// Extracts both pyramids with shared weights in a single batched pass.
pub fn extract_features<'t, T: Real>(
    p: &Binder<'t, '_, T>,
    backbone: &Backbone,
    left: Var<'t, T>,
    right: Var<'t, T>,
) -> Result<(FeaturePyramid<'t, T>, FeaturePyramid<'t, T>)> {
    let (ls, rs) = (left.shape(), right.shape());
    if ls != rs {
        return Err(Error::Shape(format!("left {ls:?} and right {rs:?} differ")));
    }
    let n = ls[0];
    let both = backbone.forward(p, Var::concat_batch(&[left, right]))?;
    let half = |v: Var<'t, T>, i: usize| v.slice_batch(i * n, n);
    let split = |i| FeaturePyramid {
        level_4: half(both.level_4, i),
        level_8: half(both.level_8, i),
        level_16: half(both.level_16, i),
    };
    Ok((split(0), split(1)))
}

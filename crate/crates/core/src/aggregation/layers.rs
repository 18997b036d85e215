use rand::Rng;

use crate::autograd::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Binder, ChannelAffine, Conv2d, LayerDesc, ParamStore};
use crate::tensor::Real;

/// 3x3 convolution inside each disparity level's channel bundle, followed by
/// a per-channel affine and leaky ReLU.
///
/// With `dense = false` the convolution has `groups = levels`, so the output
/// bundle of level `k` only reads input bundle `k`.
#[derive(Clone, Debug)]
pub struct SpatialAggregation {
    pub conv: Conv2d,
    pub affine: ChannelAffine,
    pub levels: usize,
    pub activation: Activation,
}

impl SpatialAggregation {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        levels: usize,
        stride: usize,
        dense: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if levels == 0 || in_ch % levels != 0 || out_ch % levels != 0 {
            return Err(Error::Config(format!(
                "{name}: channels {in_ch}->{out_ch} are not divisible into {levels} disparity bundles"
            )));
        }
        let spec = Conv2dSpec {
            stride,
            padding: 1,
            groups: if dense { 1 } else { levels },
        };
        Ok(SpatialAggregation {
            conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 3, spec, false, rng),
            affine: ChannelAffine::new(store, &format!("{name}.norm"), out_ch),
            levels,
            activation: Activation::LeakyRelu,
        })
    }

    /// Channels owned by disparity level `k` in this layer's output.
    pub fn bundle(&self, k: usize) -> std::ops::Range<usize> {
        let b = self.conv.out_ch / self.levels;
        k * b..(k + 1) * b
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let y = self.conv.forward(p, x);
        self.activation.apply(self.affine.forward(p, y))
    }

    pub fn out_hw(&self, hw: (usize, usize)) -> (usize, usize) {
        self.conv.out_hw(hw)
    }

    pub fn describe(&self, name: &str, hw: (usize, usize)) -> LayerDesc {
        self.conv.describe(name, hw)
    }
}

/// Dense 1x1 convolution over all channels at each pixel, then leaky ReLU.
#[derive(Clone, Debug)]
pub struct DisparityAggregation {
    pub conv: Conv2d,
    pub activation: Activation,
}

impl DisparityAggregation {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Self {
        DisparityAggregation {
            conv: Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 1, Conv2dSpec::same(1), true, rng),
            activation: Activation::LeakyRelu,
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        self.activation.apply(self.conv.forward(p, x))
    }

    pub fn describe(&self, name: &str, hw: (usize, usize)) -> LayerDesc {
        self.conv.describe(name, hw)
    }
}

/// One spatial step followed by one disparity step.
#[derive(Clone, Debug)]
pub struct BgaBlock {
    pub spatial: SpatialAggregation,
    pub disparity: DisparityAggregation,
}

impl BgaBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        ch: usize,
        levels: usize,
        dense: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BgaBlock {
            spatial: SpatialAggregation::new(store, &format!("{name}.spatial"), ch, ch, levels, 1, dense, rng)?,
            disparity: DisparityAggregation::new(store, &format!("{name}.disparity"), ch, ch, rng),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        self.disparity.forward(p, self.spatial.forward(p, x))
    }

    pub fn describe(&self, name: &str, hw: (usize, usize), out: &mut Vec<LayerDesc>) {
        out.push(self.spatial.describe(&format!("{name}.spatial"), hw));
        out.push(self.disparity.describe(&format!("{name}.disparity"), hw));
    }
}

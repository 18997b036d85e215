use rand::Rng;

use crate::autograd::{Conv2dSpec, Var};
use crate::features::{BackboneConfig, FeaturePyramid};
use crate::nn::{Activation, Binder, Conv2d, LayerDesc, ParamStore};
use crate::tensor::Real;

const GUIDE_CHANNELS: usize = 8;

/// Single-channel spatial gate computed from the left feature pyramid.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    p4: Conv2d,
    p8: Conv2d,
    p16: Conv2d,
    fuse: Conv2d,
}

impl SpatialAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(backbone: &BackboneConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let pw = Conv2dSpec::same(1);
        SpatialAttention {
            p4: Conv2d::new(store, "attn.p4", backbone.c4(), GUIDE_CHANNELS, 1, pw, true, rng),
            p8: Conv2d::new(store, "attn.p8", backbone.c8(), GUIDE_CHANNELS, 1, pw, true, rng),
            p16: Conv2d::new(store, "attn.p16", backbone.c16(), GUIDE_CHANNELS, 1, pw, true, rng),
            fuse: Conv2d::new(store, "attn.fuse", GUIDE_CHANNELS, 1, 1, pw, true, rng),
        }
    }

    /// Gate `A ∈ (0,1)` of shape `[N, 1, h4, w4]`.
    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, pyramid: &FeaturePyramid<'t, T>) -> Var<'t, T> {
        let s4 = pyramid.level_4.shape();
        let g4 = self.p4.forward(p, pyramid.level_4);
        let g8 = self
            .p8
            .forward(p, pyramid.level_8)
            .upsample_nearest(&[2, 2])
            .crop_spatial(&s4[2..]);
        let g16 = self
            .p16
            .forward(p, pyramid.level_16)
            .upsample_nearest(&[4, 4])
            .crop_spatial(&s4[2..]);
        let fused = Activation::LeakyRelu.apply(g4.add(g8).add(g16));
        self.fuse.forward(p, fused).sigmoid()
    }

    pub fn describe(&self, h4: usize, w4: usize) -> Vec<LayerDesc> {
        vec![
            self.p4.describe("attn.p4", (h4, w4)),
            self.p8.describe("attn.p8", (h4 / 2, w4 / 2)),
            self.p16.describe("attn.p16", (h4 / 4, w4 / 4)),
            self.fuse.describe("attn.fuse", (h4, w4)),
        ]
    }
}

/// `out[n,c,y,x] = gate[n,0,y,x] · volume[n,c,y,x]`.
pub fn apply_spatial_attention<'t, T: Real>(volume: Var<'t, T>, gate: Var<'t, T>) -> Var<'t, T> {
    volume.gate(gate)
}

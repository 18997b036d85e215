//! Disparity regression from aggregated scores plus the two upsampling heads.

use rand::Rng;

use crate::autograd::{Conv2dSpec, Var};
use crate::nn::{Activation, Binder, Conv2d, LayerDesc, ParamStore, HEAD_INIT_SCALE};
use crate::tensor::{Real, Tensor};

/// Resolution ratio between the full image and the cost volume.
pub const UPSAMPLE_FACTOR: usize = 4;
const MASK_HIDDEN: usize = 32;
const TAPS: usize = 9;

/// Softmax over the disparity axis of `[N, D, h, w]` scores and its expectation.
/// Returns `(d_quarter [N,1,h,w], probabilities [N,D,h,w])`.
pub fn soft_argmin<'t, T: Real>(scores: Var<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
    let prob = scores.softmax_channels();
    (prob.channel_index_expectation(), prob)
}

/// Corner-aligned bilinear x4 upsampling, values rescaled to full-resolution pixels.
pub fn upsample_interp<'t, T: Real>(d_quarter: Var<'t, T>) -> Var<'t, T> {
    let s = d_quarter.shape();
    d_quarter
        .upsample_bilinear(s[2] * UPSAMPLE_FACTOR, s[3] * UPSAMPLE_FACTOR)
        .scale(T::lit(UPSAMPLE_FACTOR as f64))
}

/// Convex x4 upsampling whose 3x3 combination weights are predicted from the
/// left quarter-resolution features.
#[derive(Clone, Debug)]
pub struct LearnedUpsampler {
    hidden: Conv2d,
    mask: Conv2d,
}

impl LearnedUpsampler {
    pub fn new<T: Real, R: Rng + ?Sized>(guide_channels: usize, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let r2 = UPSAMPLE_FACTOR * UPSAMPLE_FACTOR;
        LearnedUpsampler {
            hidden: Conv2d::new(
                store,
                "upsample.hidden",
                guide_channels,
                MASK_HIDDEN,
                3,
                Conv2dSpec::same(3),
                true,
                rng,
            ),
            mask: Conv2d::new(store, "upsample.mask", MASK_HIDDEN, TAPS * r2, 1, Conv2dSpec::same(1), true, rng)
                .scaled(store, HEAD_INIT_SCALE),
        }
    }

    /// Mask logits `[N, 9·16, h, w]`.
    pub fn mask_logits<'t, T: Real>(&self, p: &Binder<'t, '_, T>, guidance: Var<'t, T>) -> Var<'t, T> {
        let h = Activation::LeakyRelu.apply(self.hidden.forward(p, guidance));
        self.mask.forward(p, h)
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, d_quarter: Var<'t, T>, guidance: Var<'t, T>) -> Var<'t, T> {
        upsample_learned(d_quarter, self.mask_logits(p, guidance))
    }

    pub fn describe(&self, h4: usize, w4: usize) -> Vec<LayerDesc> {
        vec![
            self.hidden.describe("upsample.hidden", (h4, w4)),
            self.mask.describe("upsample.mask", (h4, w4)),
        ]
    }
}

/// Convex x4 upsampling with explicit mask logits, values rescaled by 4.
pub fn upsample_learned<'t, T: Real>(d_quarter: Var<'t, T>, logits: Var<'t, T>) -> Var<'t, T> {
    d_quarter
        .convex_upsample(logits, UPSAMPLE_FACTOR)
        .scale(T::lit(UPSAMPLE_FACTOR as f64))
}

/// Network outputs for a batch, detached from the tape.
#[derive(Clone, Debug)]
pub struct DisparityPrediction<T> {
    /// `[N, 1, h4, w4]` in quarter-resolution pixels.
    pub d_quarter: Tensor<T>,
    /// `[N, 1, H, W]` from bilinear upsampling of the coarse head.
    pub d_init: Tensor<T>,
    /// `[N, 1, H, W]` from learned upsampling.
    pub d_final: Tensor<T>,
    /// `[N, D, h4, w4]`.
    pub prob_volume: Tensor<T>,
}

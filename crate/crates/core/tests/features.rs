mod common;

use bga_core::autograd::Tape;
use bga_core::features::{extract_features, Backbone, BackboneConfig, Variant, BACKBONE_STRIDE};
use bga_core::nn::{Binder, ParamStore};
use bga_core::{Error, Tensor};
use common::rng;

fn backbone(variant: Variant) -> (Backbone, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let b = Backbone::new(&BackboneConfig::for_variant(variant), variant.groups(), &mut store, &mut rng(400)).unwrap();
    (b, store)
}

fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::uniform(&[n, 3, h, w], 0.0, 1.0, &mut rng(seed))
}

type Levels = [Tensor<f32>; 3];

fn run(b: &Backbone, store: &ParamStore<f32>, left: &Tensor<f32>, right: &Tensor<f32>) -> (Levels, Levels) {
    let tape = Tape::new();
    let p = Binder::new(&tape, store, false);
    let (l, r) = extract_features(&p, b, tape.constant(left.clone()), tape.constant(right.clone())).unwrap();
    let grab = |f: bga_core::features::FeaturePyramid<'_, f32>| {
        [f.level_4, f.level_8, f.level_16].map(|v| (*v.value()).clone())
    };
    (grab(l), grab(r))
}

#[test]
fn pyramid_shapes_for_every_variant() {
    for v in Variant::ALL {
        let (b, store) = backbone(v);
        let cfg = b.config();
        let (l, r) = run(&b, &store, &image(1, 96, 128, 1), &image(1, 96, 128, 2));
        for side in [&l, &r] {
            assert_eq!(side[0].shape(), &[1, cfg.c4(), 24, 32], "{v}");
            assert_eq!(side[1].shape(), &[1, cfg.c8(), 12, 16], "{v}");
            assert_eq!(side[2].shape(), &[1, cfg.c16(), 6, 8], "{v}");
            assert!(side.iter().all(|t| t.data().iter().all(|x| x.is_finite())));
        }
        assert_eq!(cfg.c4() % v.groups(), 0);
    }
}

#[test]
fn shared_weights_give_identical_features_for_identical_views() {
    let (b, store) = backbone(Variant::Tiny);
    let img = image(2, 64, 64, 3);
    let (l, r) = run(&b, &store, &img, &img);
    assert_eq!(l, r);
}

#[test]
fn swapping_views_swaps_pyramids() {
    let (b, store) = backbone(Variant::Tiny);
    let (a, c) = (image(1, 64, 96, 4), image(1, 64, 96, 5));
    let (l1, r1) = run(&b, &store, &a, &c);
    let (l2, r2) = run(&b, &store, &c, &a);
    assert_eq!(l1, r2);
    assert_eq!(r1, l2);
}

#[test]
fn batched_pass_matches_single_image_passes() {
    let (b, store) = backbone(Variant::Tiny);
    let (a, c) = (image(1, 64, 64, 6), image(1, 64, 64, 7));
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let single = b.forward(&p, tape.constant(a.clone())).unwrap();
    let (l, _) = run(&b, &store, &a, &c);
    for (got, want) in l[0].data().iter().zip(single.level_4.value().data()) {
        assert!((got - want).abs() <= 1e-5);
    }
}

#[test]
fn running_twice_is_bit_identical() {
    let (b, store) = backbone(Variant::S);
    let (a, c) = (image(1, 64, 64, 8), image(1, 64, 64, 9));
    assert_eq!(run(&b, &store, &a, &c), run(&b, &store, &a, &c));
}

#[test]
fn sizes_off_the_stride_are_rejected() {
    let (b, store) = backbone(Variant::Tiny);
    for (h, w) in [(100, 128), (96, 130), (BACKBONE_STRIDE / 2, 64)] {
        let tape = Tape::new();
        let p = Binder::new(&tape, &store, false);
        let x = tape.constant(Tensor::zeros(&[1, 3, h, w]));
        let err = extract_features(&p, &b, x, x).unwrap_err();
        assert!(matches!(err, Error::Stride { height, width, stride: 32 } if (height, width) == (h, w)));
    }
}

#[test]
fn mismatched_views_and_bad_configs_are_rejected() {
    let (b, store) = backbone(Variant::Tiny);
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let l = tape.constant(Tensor::zeros(&[1, 3, 64, 64]));
    let r = tape.constant(Tensor::zeros(&[1, 3, 64, 96]));
    assert!(matches!(extract_features(&p, &b, l, r), Err(Error::Shape(_))));

    let mut bad = BackboneConfig::for_variant(Variant::M);
    bad.base_channels = 40;
    assert!(matches!(bad.validate(16), Err(Error::Config(_))));
    bad.base_channels = 64;
    bad.use_pretrained = true;
    assert!(matches!(bad.validate(16), Err(Error::Config(_))));
}

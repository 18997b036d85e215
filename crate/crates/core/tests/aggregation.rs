mod common;

use bga_core::aggregation::{
    apply_spatial_attention, bga_param_count, AggConfig, Aggregator, Baseline3d, Bga, DisparityAggregation, Paradigm,
    SpatialAggregation,
};
use bga_core::autograd::Tape;
use bga_core::features::Variant;
use bga_core::nn::{Binder, Conv3d, ParamStore};
use bga_core::Tensor;
use common::{grad_check, input_gradient, level_slice, rng, tiny_bga, zero_other_levels};
use rand::Rng;

#[test]
fn every_spatial_layer_is_disparity_isolated() {
    let (bga, store) = tiny_bga(1, 8);
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let mut r = rng(2);
    let layers = bga.spatial_layers();
    assert_eq!(layers.len(), 7);
    for _ in 0..10 {
        for layer in &layers {
            let x = Tensor::randn(&[1, layer.conv.in_ch, 6, 7], 1.0, &mut r);
            let full = layer.forward(&p, tape.constant(x.clone())).value();
            for k in 0..layer.levels {
                let masked = zero_other_levels(&x, layer.levels, k);
                let out = layer.forward(&p, tape.constant(masked)).value();
                assert_eq!(level_slice(&out, layer, k), level_slice(&full, layer, k));
            }
        }
    }
}

#[test]
fn every_disparity_layer_is_spatially_isolated() {
    let (bga, store) = tiny_bga(3, 8);
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let mut r = rng(4);
    let layers = bga.disparity_layers();
    assert_eq!(layers.len(), 5);
    let (h, w) = (5, 6);
    for _ in 0..10 {
        for layer in &layers {
            let x = Tensor::randn(&[1, layer.conv.in_ch, h, w], 1.0, &mut r);
            let full = layer.forward(&p, tape.constant(x.clone())).value();
            let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
            let mut poked = x.clone();
            for c in 0..layer.conv.in_ch {
                poked.data_mut()[(c * h + y0) * w + x0] = r.gen_range(-5.0..5.0);
            }
            let out = layer.forward(&p, tape.constant(poked)).value();
            let mut changed = false;
            for (i, (a, b)) in out.data().iter().zip(full.data()).enumerate() {
                if i % (h * w) == y0 * w + x0 {
                    changed |= a != b;
                } else {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            assert!(changed);
        }
    }
}

#[test]
fn spatial_impulse_stays_in_its_neighbourhood() {
    let mut store = ParamStore::<f64>::new();
    let layer = SpatialAggregation::new(&mut store, "s", 8, 8, 4, 1, false, &mut rng(5)).unwrap();
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let mut x = Tensor::zeros(&[1, 8, 7, 7]);
    x.set(&[0, 3, 3, 3], 1.0);
    let base = layer.conv.forward(&p, tape.constant(Tensor::zeros(&[1, 8, 7, 7]))).value();
    let out = layer.conv.forward(&p, tape.constant(x)).value();
    for c in 0..8 {
        for y in 0..7usize {
            for xx in 0..7usize {
                let near = y.abs_diff(3) <= 1 && xx.abs_diff(3) <= 1;
                // Input channel 3 belongs to level 1, which owns outputs 2..4.
                if !near || c / 2 != 1 {
                    assert_eq!(out.at(&[0, c, y, xx]), base.at(&[0, c, y, xx]));
                }
            }
        }
    }
}

#[test]
fn identity_kernels_pass_input_through() {
    let mut store = ParamStore::<f64>::new();
    let spatial = SpatialAggregation::new(&mut store, "s", 6, 6, 3, 1, false, &mut rng(6)).unwrap();
    let disparity = DisparityAggregation::new(&mut store, "d", 6, 6, &mut rng(7));
    {
        let w = store.get_mut(spatial.conv.weight);
        w.data_mut().fill(0.0);
        for o in 0..6 {
            w.set(&[o, o % 2, 1, 1], 1.0);
        }
        let w = store.get_mut(disparity.conv.weight);
        w.data_mut().fill(0.0);
        for o in 0..6 {
            w.set(&[o, o, 0, 0], 1.0);
        }
        store.get_mut(disparity.conv.bias.unwrap()).data_mut().fill(0.0);
    }
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let x = Tensor::randn(&[2, 6, 4, 5], 1.0, &mut rng(8));
    assert_eq!(*spatial.conv.forward(&p, tape.constant(x.clone())).value(), x);
    assert_eq!(*disparity.conv.forward(&p, tape.constant(x.clone())).value(), x);
}

#[test]
fn disparity_step_hand_example() {
    let mut store = ParamStore::<f64>::new();
    let layer = DisparityAggregation::new(&mut store, "d", 2, 2, &mut rng(9));
    *store.get_mut(layer.conv.weight) = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 1.0, 0.0, 3.0]).unwrap();
    store.get_mut(layer.conv.bias.unwrap()).data_mut().fill(0.0);
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let x = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
    assert_eq!(layer.conv.forward(&p, tape.constant(x)).value().data(), &[3.0, 6.0]);
}

#[test]
fn rejects_bundles_that_do_not_divide() {
    let mut store = ParamStore::<f64>::new();
    assert!(SpatialAggregation::new(&mut store, "s", 10, 10, 4, 1, false, &mut rng(10)).is_err());
}

#[test]
fn one_disparity_step_reaches_every_level() {
    let (bga, store) = tiny_bga(11, 8);
    let layer = bga.disparity_layers()[0];
    let c = layer.conv.in_ch;
    let x = Tensor::randn(&[1, c, 3, 3], 1.0, &mut rng(12));
    for o in 0..layer.conv.out_ch {
        let g = input_gradient(&x, &[0, o, 1, 1], |v| {
            let p = Binder::new(v.tape(), &store, false);
            layer.forward(&p, v)
        });
        for ch in 0..c {
            assert_ne!(g.at(&[0, ch, 1, 1]), 0.0, "output {o} ignores input channel {ch}");
        }
        let elsewhere = g.data().iter().enumerate().filter(|(i, _)| i % 9 != 4).all(|(_, &v)| v == 0.0);
        assert!(elsewhere);
    }
}

#[test]
fn one_3d_layer_reaches_one_level_either_way() {
    let mut store = ParamStore::<f64>::new();
    let conv = Conv3d::new(&mut store, "c", 2, 2, 3, 1, false, &mut rng(13));
    let x = Tensor::randn(&[1, 2, 8, 5, 5], 1.0, &mut rng(14));
    let g = input_gradient(&x, &[0, 0, 4, 2, 2], |v| {
        let p = Binder::new(v.tape(), &store, false);
        conv.forward(&p, v)
    });
    let reached: Vec<usize> = (0..8)
        .filter(|&d| (0..2).any(|c| (0..5).any(|y| (0..5).any(|xx| g.at(&[0, c, d, y, xx]) != 0.0))))
        .collect();
    assert_eq!(reached, vec![3, 4, 5]);
}

fn support(g: &Tensor<f64>) -> usize {
    let s = g.shape();
    let plane = s[2] * s[3];
    (0..plane)
        .filter(|&i| (0..s[1]).any(|c| g.data()[c * plane + i] != 0.0))
        .count()
}

#[test]
fn receptive_field_grows_with_stages() {
    let mut sizes = Vec::new();
    for stages in [1, 2] {
        let cfg = AggConfig {
            num_stages: stages,
            ..AggConfig::for_variant(Variant::Tiny)
        };
        let mut store = ParamStore::<f64>::new();
        let bga = Bga::new(&cfg, 4, &mut store, &mut rng(15)).unwrap();
        let x = Tensor::randn(&[1, bga.input_channels(), 24, 24], 1.0, &mut rng(16));
        let g = input_gradient(&x, &[0, 0, 12, 12], |v| {
            let p = Binder::new(v.tape(), &store, false);
            bga.forward(&p, v, None).unwrap().scores
        });
        sizes.push(support(&g));
    }
    assert!(sizes[1] > sizes[0], "{sizes:?}");
}

#[test]
fn bga_shape_contract() {
    let mut store = ParamStore::<f32>::new();
    let bga = Bga::new(&AggConfig::for_variant(Variant::Tiny), 16, &mut store, &mut rng(17)).unwrap();
    assert_eq!(bga.input_channels(), 128);
    assert_eq!(bga.widths()[0], 128);
    let tape = Tape::new();
    let p = Binder::new(&tape, &store, false);
    let x = Tensor::randn(&[1, 128, 24, 32], 1.0, &mut rng(18));
    let out = bga.forward(&p, tape.constant(x.clone()), None).unwrap();
    assert_eq!(out.scores.shape(), vec![1, 16, 24, 32]);
    assert_eq!(out.init_scores.shape(), vec![1, 16, 24, 32]);
    let again = bga.forward(&p, tape.constant(x), None).unwrap();
    assert_eq!(*out.scores.value(), *again.scores.value());
    let wrong = tape.constant(Tensor::zeros(&[1, 96, 24, 32]));
    assert!(bga.forward(&p, wrong, None).is_err());
}

#[test]
fn baseline_shape_contract_and_parameter_match() {
    for variant in Variant::ALL {
        for levels in [4, 8, 16] {
            let cfg = AggConfig {
                paradigm: Paradigm::Conv3d,
                ..AggConfig::for_variant(variant)
            };
            let mut store = ParamStore::<f32>::new();
            let agg = Aggregator::new(&cfg, levels, &mut store, &mut rng(19)).unwrap();
            let target = bga_param_count(&cfg, levels).unwrap();
            let got = store.num_params_with_prefix("agg.");
            let ratio = got as f64 / target as f64;
            assert!((ratio - 1.0).abs() <= 0.10, "{variant} D={levels}: {got} vs {target}");
            if variant == Variant::Tiny && levels == 8 {
                let tape = Tape::new();
                let p = Binder::new(&tape, &store, false);
                let x = Tensor::randn(&[1, cfg.groups(), levels, 6, 8], 1.0, &mut rng(20));
                let out = agg.forward(&p, tape.constant(x), None).unwrap();
                assert_eq!(out.scores.shape(), vec![1, 8, 6, 8]);
                assert_eq!(out.init_scores.shape(), vec![1, 8, 6, 8]);
            }
        }
    }
    assert!(Baseline3d::param_count(&AggConfig::for_variant(Variant::Tiny), 8) > 0);
}

#[test]
fn attention_gate_examples() {
    let tape = Tape::new();
    let vol = Tensor::<f64>::randn(&[2, 5, 3, 4], 1.0, &mut rng(21));
    let v = tape.constant(vol.clone());
    let ones = apply_spatial_attention(v, tape.constant(Tensor::full(&[2, 1, 3, 4], 1.0)));
    assert_eq!(*ones.value(), vol);
    let zeros = apply_spatial_attention(v, tape.constant(Tensor::zeros(&[2, 1, 3, 4])));
    assert!(zeros.value().data().iter().all(|&x| x == 0.0));
    let a = Tensor::uniform(&[2, 1, 3, 4], 0.01, 0.99, &mut rng(22));
    let out = apply_spatial_attention(v, tape.constant(a.clone())).value();
    for n in 0..2 {
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..5 {
                    let ratio = out.at(&[n, c, y, x]) / vol.at(&[n, c, y, x]);
                    assert!((ratio - a.at(&[n, 0, y, x])).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn aggregator_gradient_matches_finite_differences() {
    let cfg = AggConfig::for_variant(Variant::Tiny);
    let mut store = ParamStore::<f64>::new();
    let agg = Aggregator::new(&cfg, 4, &mut store, &mut rng(23)).unwrap();
    let mut r = rng(24);
    for v in store.values_mut() {
        let noise = Tensor::randn(v.shape(), 0.05, &mut r);
        v.add_assign(&noise);
    }
    let volume = Tensor::randn(&[1, cfg.groups(), 4, 4, 6], 1.0, &mut rng(25));
    let err = grad_check(
        &[volume],
        |v| {
            let p = Binder::new(v[0].tape(), &store, false);
            let out = agg.forward(&p, v[0], None).unwrap();
            out.scores.add(out.init_scores.scale(0.3))
        },
        26,
    );
    assert!(err <= 1e-3, "{err}");
}

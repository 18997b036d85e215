mod common;

use bga_core::autograd::Tape;
use bga_core::regression::{soft_argmin, upsample_interp, upsample_learned};
use bga_core::Tensor;
use common::{grad_check, randn, rng};
use proptest::prelude::*;

fn column(scores: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(&[1, scores.len(), 1, 1], scores.to_vec()).unwrap()
}

fn expectation(scores: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let out = soft_argmin(tape.constant(scores.clone())).0.value();
    (*out).clone()
}

#[test]
fn soft_argmin_examples() {
    let mut peaked = vec![0.0; 8];
    peaked[5] = 50.0;
    assert!((expectation(&column(&peaked)).data()[0] - 5.0).abs() < 1e-3);
    assert_eq!(expectation(&column(&[0.0; 16])).data()[0], 7.5);
    let tape = Tape::new();
    let (d, p) = soft_argmin(tape.constant(column(&[0.0, 2f64.ln(), 0.0])));
    let p = p.value();
    for (got, want) in p.data().iter().zip([0.25, 0.5, 0.25]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((d.value().data()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn soft_argmin_gradient_on_a_five_level_column() {
    let err = grad_check(&[randn(&[1, 5, 1, 1], 60)], |v| soft_argmin(v[0]).0, 61);
    assert!(err <= 1e-4, "{err}");
}

/// Corner-aligned bilinear sample of `map` (`h x w`, row-major) at output `(oy, ox)`.
fn bilinear_reference(map: &[f64], h: usize, w: usize, oh: usize, ow: usize, oy: usize, ox: usize) -> f64 {
    let src = |o: usize, n: usize, on: usize| if on > 1 { o as f64 * (n - 1) as f64 / (on - 1) as f64 } else { 0.0 };
    let (sy, sx) = (src(oy, h, oh), src(ox, w, ow));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let at = |y: usize, x: usize| map[y * w + x];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

#[test]
fn interpolated_head_matches_direct_formula() {
    let d = Tensor::<f64>::uniform(&[1, 1, 6, 8], 0.0, 7.0, &mut rng(62));
    let tape = Tape::new();
    let up = upsample_interp(tape.constant(d.clone())).value();
    assert_eq!(up.shape(), &[1, 1, 24, 32]);
    for y in 0..24 {
        for x in 0..32 {
            let want = 4.0 * bilinear_reference(d.data(), 6, 8, 24, 32, y, x);
            assert!((up.at(&[0, 0, y, x]) - want).abs() <= 1e-5);
        }
    }
}

#[test]
fn interpolated_head_constant_and_single_sample() {
    let tape = Tape::new();
    let c = upsample_interp(tape.constant(Tensor::<f64>::full(&[1, 1, 3, 5], 2.25))).value();
    assert!(c.data().iter().all(|&v| v == 9.0));
    let one = upsample_interp(tape.constant(Tensor::<f64>::full(&[1, 1, 1, 1], 1.5))).value();
    assert_eq!(one.shape(), &[1, 1, 4, 4]);
    assert!(one.data().iter().all(|&v| v == 6.0));
}

/// Edge-clamped 3x3 neighborhood of `(y, x)`, row-major.
fn neighbourhood(map: &Tensor<f64>, y: usize, x: usize) -> Vec<f64> {
    let (h, w) = (map.shape()[2] as isize, map.shape()[3] as isize);
    let mut out = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w - 1) as usize;
            out.push(map.at(&[0, 0, yy, xx]));
        }
    }
    out
}

#[test]
fn uniform_masks_average_the_neighbourhood() {
    let d = Tensor::<f64>::uniform(&[1, 1, 3, 4], 0.0, 7.0, &mut rng(63));
    let tape = Tape::new();
    let up = upsample_learned(tape.constant(d.clone()), tape.constant(Tensor::zeros(&[1, 144, 3, 4]))).value();
    for y in 0..12 {
        for x in 0..16 {
            let n = neighbourhood(&d, y / 4, x / 4);
            let want = 4.0 * n.iter().sum::<f64>() / 9.0;
            assert!((up.at(&[0, 0, y, x]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_map_survives_any_mask() {
    let tape = Tape::new();
    let logits = randn(&[1, 144, 3, 4], 64).map(|v| 10.0 * v);
    let up = upsample_learned(tape.constant(Tensor::full(&[1, 1, 3, 4], 1.75)), tape.constant(logits)).value();
    assert!(up.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
}

#[test]
fn centre_one_hot_masks_give_nearest_upsampling() {
    let d = Tensor::<f64>::uniform(&[1, 1, 3, 4], 0.0, 7.0, &mut rng(65));
    let mut logits = Tensor::full(&[1, 144, 3, 4], -1e4);
    let plane = 12;
    for ch in 4 * 16..5 * 16 {
        logits.data_mut()[ch * plane..(ch + 1) * plane].fill(0.0);
    }
    let tape = Tape::new();
    let up = upsample_learned(tape.constant(d.clone()), tape.constant(logits)).value();
    for y in 0..12 {
        for x in 0..16 {
            assert_eq!(up.at(&[0, 0, y, x]), 4.0 * d.at(&[0, 0, y / 4, x / 4]));
        }
    }
}

proptest! {
    #[test]
    fn expectation_stays_in_range(scores in prop::collection::vec(-30.0f64..30.0, 2..24)) {
        let d = scores.len();
        let v = expectation(&column(&scores)).data()[0];
        prop_assert!((0.0..=(d - 1) as f64).contains(&v));
    }

    #[test]
    fn per_pixel_shift_leaves_expectation(
        scores in prop::collection::vec(-10.0f64..10.0, 12),
        shifts in prop::collection::vec(-100.0f64..100.0, 2),
    ) {
        // Six levels over a 1x2 image.
        let base = Tensor::from_vec(&[1, 6, 1, 2], scores.clone()).unwrap();
        let moved: Vec<f64> = scores.iter().enumerate().map(|(i, s)| s + shifts[i % 2]).collect();
        let moved = Tensor::from_vec(&[1, 6, 1, 2], moved).unwrap();
        let (a, b) = (expectation(&base), expectation(&moved));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn probabilities_sum_to_one(scores in prop::collection::vec(-40.0f64..40.0, 9)) {
        let tape = Tape::new();
        let p = soft_argmin(tape.constant(column(&scores))).1.value();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn learned_head_is_a_convex_combination(
        d in prop::collection::vec(0.0f64..20.0, 12),
        logits in prop::collection::vec(-8.0f64..8.0, 144 * 12),
    ) {
        let d = Tensor::from_vec(&[1, 1, 3, 4], d).unwrap();
        let tape = Tape::new();
        let up = upsample_learned(tape.constant(d.clone()), tape.constant(Tensor::from_vec(&[1, 144, 3, 4], logits).unwrap())).value();
        for y in 0..12 {
            for x in 0..16 {
                let n = neighbourhood(&d, y / 4, x / 4);
                let lo = n.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = up.at(&[0, 0, y, x]);
                prop_assert!(v >= 4.0 * lo - 1e-9 && v <= 4.0 * hi + 1e-9);
            }
        }
    }
}

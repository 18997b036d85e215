mod common;

use bga_core::data::{DisparityMap, ValidMask};
use bga_core::metrics::{distribution_diagnostics, epe, kitti_compound_rate, outlier_rate, EvalReport, ImageMetrics};
use bga_core::Tensor;
use common::rng;
use proptest::prelude::*;
use rand::Rng;

fn map(h: usize, w: usize, v: Vec<f32>) -> DisparityMap {
    DisparityMap::from_vec(h, w, v).unwrap()
}

fn mask(h: usize, w: usize, v: Vec<bool>) -> ValidMask {
    let mut m = ValidMask::all(h, w, false);
    m.data = v;
    m
}

/// Loop oracle: (epe, >1px %, >3px %, KITTI %).
fn reference(p: &[f32], g: &[f32], m: &[bool]) -> Option<(f64, f64, f64, f64)> {
    let mut n = 0usize;
    let (mut sum, mut b1, mut b3, mut bk) = (0.0, 0usize, 0usize, 0usize);
    for i in 0..p.len() {
        if !m[i] {
            continue;
        }
        n += 1;
        let e = (p[i] as f64 - g[i] as f64).abs();
        sum += e;
        if e > 1.0 {
            b1 += 1;
        }
        if e > 3.0 {
            b3 += 1;
            if e > 0.05 * (g[i] as f64).abs() {
                bk += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let pct = |b: usize| 100.0 * b as f64 / n as f64;
    Some((sum / n as f64, pct(b1), pct(b3), pct(bk)))
}

#[test]
fn loop_oracle_on_random_maps() {
    let mut r = rng(300);
    for _ in 0..50 {
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let n = h * w;
        let g: Vec<f32> = (0..n).map(|_| r.gen_range(0.0..120.0)).collect();
        let p: Vec<f32> = g.iter().map(|&v| v + r.gen_range(-8.0..8.0)).collect();
        let m: Vec<bool> = (0..n).map(|_| r.gen_bool(0.7)).collect();
        let (pm, gm, mm) = (map(h, w, p.clone()), map(h, w, g.clone()), mask(h, w, m.clone()));
        let got = ImageMetrics::compute(0, &pm, &gm, &mm, true).unwrap();
        match reference(&p, &g, &m) {
            None => {
                assert_eq!(got.epe, None);
                assert_eq!(got.d1_1px, None);
            }
            Some((e, r1, r3, rk)) => {
                assert!((got.epe.unwrap() - e).abs() < 1e-9);
                assert!((got.d1_1px.unwrap() - r1).abs() < 1e-9);
                assert!((got.d1_3px.unwrap() - r3).abs() < 1e-9);
                assert!((got.kitti_d1.unwrap() - rk).abs() < 1e-9);
            }
        }
        assert_eq!(got.valid_count, m.iter().filter(|&&v| v).count());
    }
}

#[test]
fn hand_examples() {
    let gt = map(1, 4, vec![10.0, 10.0, 100.0, 0.0]);
    let pred = map(1, 4, vec![10.5, 12.0, 104.0, 0.0]);
    let all = ValidMask::all(1, 4, true);
    assert!((epe(&pred, &gt, &all).unwrap().unwrap() - 6.5 / 4.0).abs() < 1e-12);
    assert_eq!(outlier_rate(&pred, &gt, &all, 1.0).unwrap(), Some(50.0));
    assert_eq!(outlier_rate(&pred, &gt, &all, 3.0).unwrap(), Some(25.0));
    // 4 px at 100 px is under 5%, so the compound rule keeps it.
    assert_eq!(kitti_compound_rate(&pred, &gt, &all).unwrap(), Some(0.0));
    // Errors exactly at the threshold are not outliers.
    let exact = map(1, 1, vec![3.0]);
    let zero = map(1, 1, vec![0.0]);
    assert_eq!(outlier_rate(&exact, &zero, &ValidMask::all(1, 1, true), 3.0).unwrap(), Some(0.0));
}

#[test]
fn masked_pixels_never_contribute() {
    let gt = map(1, 3, vec![1.0, 2.0, 3.0]);
    let pred = map(1, 3, vec![1.0, f32::NAN, 1e9]);
    let m = mask(1, 3, vec![true, false, false]);
    assert_eq!(epe(&pred, &gt, &m).unwrap(), Some(0.0));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = map(2, 3, vec![0.0; 6]);
    let b = map(3, 2, vec![0.0; 6]);
    assert!(epe(&a, &b, &ValidMask::all(2, 3, true)).is_err());
    assert!(epe(&a, &a, &ValidMask::all(3, 2, true)).is_err());
    assert!(outlier_rate(&a, &a, &ValidMask::all(2, 3, true), -1.0).is_err());
}

#[test]
fn report_averages_over_images_and_serializes() {
    let gt = map(1, 2, vec![0.0, 0.0]);
    let all = ValidMask::all(1, 2, true);
    let imgs = vec![
        ImageMetrics::compute(0, &map(1, 2, vec![1.0, 1.0]), &gt, &all, false).unwrap(),
        ImageMetrics::compute(1, &map(1, 2, vec![0.0, 5.0]), &gt, &all, false).unwrap(),
    ];
    let report = EvalReport::from_images(imgs);
    assert_eq!(report.epe, (1.0 + 2.5) / 2.0);
    assert_eq!(report.d1_1px, 25.0);
    assert_eq!(report.d1_3px, 25.0);
    assert_eq!(report.valid_count, 4);
    let jsonl = report.to_jsonl().unwrap();
    let lines: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["kind"], "summary");
    assert_eq!(lines[2]["epe"], 1.75);
    assert!(report.to_table().contains("mean"));
}

#[test]
fn diagnostics_of_one_hot_and_uniform_columns() {
    let mut p = vec![0.0; 4 * 2];
    p[2 * 2] = 1.0;
    for k in 0..4 {
        p[k * 2 + 1] = 0.25;
    }
    let (h, r) = distribution_diagnostics(&Tensor::<f64>::from_vec(&[4, 1, 2], p).unwrap()).unwrap();
    assert_eq!(h[0], 0.0);
    assert_eq!(r[0], bga_core::metrics::PEAK_RATIO_CAP);
    assert!((h[1] - 4f64.ln()).abs() < 1e-12);
    assert_eq!(r[1], 1.0);
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_ordered(
        g in prop::collection::vec(0.0f32..64.0, 1..40),
        noise in prop::collection::vec(-10.0f32..10.0, 40),
    ) {
        let n = g.len();
        let p: Vec<f32> = g.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let (pm, gm) = (map(1, n, p), map(1, n, g));
        let all = ValidMask::all(1, n, true);
        let m = ImageMetrics::compute(0, &pm, &gm, &all, true).unwrap();
        let (e, r1, r3, rk) = (m.epe.unwrap(), m.d1_1px.unwrap(), m.d1_3px.unwrap(), m.kitti_d1.unwrap());
        prop_assert!(e >= 0.0);
        prop_assert!((0.0..=100.0).contains(&r1));
        prop_assert!(r3 <= r1 && rk <= r3);
    }

    #[test]
    fn perfect_prediction_scores_zero(g in prop::collection::vec(0.0f32..200.0, 1..40)) {
        let n = g.len();
        let gm = map(1, n, g);
        let m = ImageMetrics::compute(0, &gm, &gm, &ValidMask::all(1, n, true), true).unwrap();
        prop_assert_eq!(m.epe, Some(0.0));
        prop_assert_eq!(m.d1_1px, Some(0.0));
        prop_assert_eq!(m.d1_3px, Some(0.0));
        prop_assert_eq!(m.kitti_d1, Some(0.0));
    }

    #[test]
    fn epe_is_symmetric(a in prop::collection::vec(0.0f32..50.0, 8), b in prop::collection::vec(0.0f32..50.0, 8)) {
        let (am, bm) = (map(2, 4, a), map(2, 4, b));
        let all = ValidMask::all(2, 4, true);
        prop_assert_eq!(epe(&am, &bm, &all).unwrap(), epe(&bm, &am, &all).unwrap());
    }
}

//! Fast runtime invariant checks, each against a direct reference
//! computation. Backs the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregation::{Aggregator, Paradigm};
use crate::autograd::Tape;
use crate::costvolume::{build_gwc_volume, CostVolume4D};
use crate::data::{encode_pfm, generate_random_dot_pair, parse_pfm, DisparityMap, SyntheticConfig, ValidMask};
use crate::features::Variant;
use crate::metrics::{distribution_diagnostics, epe, outlier_rate};
use crate::model::{ModelConfig, StereoModel};
use crate::nn::Binder;
use crate::regression::soft_argmin;
use crate::tensor::Tensor;
use crate::training::{smooth_l1, total_loss};

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 9] = [
    ("correlation_matches_loops", correlation_matches_loops),
    ("channel2disp_round_trip", channel2disp_round_trip),
    ("correlation_gradient", correlation_gradient),
    ("aggregation_isolation", aggregation_isolation),
    ("soft_argmin_contracts", soft_argmin_contracts),
    ("loss_examples", loss_examples),
    ("metric_examples", metric_examples),
    ("pfm_round_trip", pfm_round_trip),
    ("synthetic_photo_consistency", synthetic_photo_consistency),
];

pub fn run_selftest() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome { name, passed, detail }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn correlation_matches_loops() -> Result<String, String> {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let g = r.gen_range(1..=4);
        let c = g * r.gen_range(1..=8 / g);
        let (h, w) = (r.gen_range(1..=8), r.gen_range(2..=8));
        let levels = r.gen_range(1..=w.min(8));
        let fl = Tensor::<f64>::randn(&[c, h, w], 1.0, &mut r);
        let fr = Tensor::<f64>::randn(&[c, h, w], 1.0, &mut r);
        let vol = CostVolume4D::correlate(&fl, &fr, 4 * levels, g).map_err(|e| e.to_string())?;
        let per = c / g;
        for gi in 0..g {
            for d in 0..levels {
                for y in 0..h {
                    for x in 0..w {
                        let mut want = 0.0;
                        if x >= d {
                            for k in gi * per..(gi + 1) * per {
                                want += fl.at(&[k, y, x]) * fr.at(&[k, y, x - d]);
                            }
                            want /= per as f64;
                        }
                        worst = worst.max((vol.tensor().at(&[gi, d, y, x]) - want).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 instances, max deviation {worst:.1e}"))
}

fn channel2disp_round_trip() -> Result<String, String> {
    let mut r = rng(2);
    for i in 0..100 {
        let shape = [r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..5), r.gen_range(1..5)];
        let t = Tensor::<f32>::randn(&shape, 1.0, &mut r);
        let v = CostVolume4D::from_tensor(t.clone()).map_err(|e| e.to_string())?;
        let fused = v.channel2disp();
        let sum: f32 = fused.tensor().data().iter().sum();
        let back = fused.disp2channel();
        ensure(back.tensor() == &t, || format!("volume {i} changed"))?;
        ensure(sum == t.data().iter().sum::<f32>(), || format!("volume {i} sum changed"))?;
    }
    Ok("100 volumes bit-exact".into())
}

fn correlation_gradient() -> Result<String, String> {
    let mut r = rng(3);
    let inputs = [
        Tensor::<f64>::randn(&[1, 2, 3, 3], 1.0, &mut r),
        Tensor::<f64>::randn(&[1, 2, 3, 3], 1.0, &mut r),
    ];
    let weights = Tensor::<f64>::randn(&[1, 2, 2, 3, 3], 1.0, &mut r);
    let value = |vals: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::new();
        let l = tape.leaf(vals[0].clone());
        let rr = tape.leaf(vals[1].clone());
        let out = build_gwc_volume(l, rr, 8, 2).expect("valid shapes");
        let loss = out.mul(tape.constant(weights.clone())).sum();
        let v = loss.value().data()[0];
        let g = tape.backward(loss);
        (v, vec![g.get_or_zeros(l), g.get_or_zeros(rr)])
    };
    let (_, analytic) = value(&inputs);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..2 {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (value(&plus).0 - value(&minus).0) / (2.0 * h);
            let a = analytic[i].data()[j];
            diff += (a - numeric).powi(2);
            norm = norm.max(a.abs()).max(numeric.abs());
        }
        worst = worst.max(diff.sqrt() / norm.max(1e-12));
    }
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("relative error {worst:.1e}"))
}

fn aggregation_isolation() -> Result<String, String> {
    let cfg = ModelConfig::new(Variant::Tiny, Paradigm::Bga, 32);
    let model = StereoModel::<f32>::new(&cfg, 4).map_err(|e| e.to_string())?;
    let Aggregator::Bga(bga) = model.aggregator() else {
        return Err("expected a BGA aggregator".into());
    };
    let mut r = rng(4);
    let tape = Tape::new();
    let p = Binder::new(&tape, &model.params, false);
    let (h, w) = (5, 6);
    let spatial = bga.spatial_layers();
    for (li, layer) in spatial.iter().enumerate() {
        let x = Tensor::<f32>::randn(&[1, layer.conv.in_ch, h, w], 1.0, &mut r);
        let full = layer.forward(&p, tape.constant(x.clone())).value();
        let in_bundle = layer.conv.in_ch / layer.levels;
        let k = r.gen_range(0..layer.levels);
        let mut masked = x.clone();
        for c in (0..layer.conv.in_ch).filter(|c| c / in_bundle != k) {
            for v in &mut masked.data_mut()[c * h * w..(c + 1) * h * w] {
                *v = 0.0;
            }
        }
        let out = layer.forward(&p, tape.constant(masked)).value();
        let plane = out.shape()[2] * out.shape()[3];
        let range = layer.bundle(k);
        let same = out.data()[range.start * plane..range.end * plane] == full.data()[range.start * plane..range.end * plane];
        ensure(same, || format!("spatial layer {li}: level {k} depends on other levels"))?;
    }
    let disparity = bga.disparity_layers();
    for (li, layer) in disparity.iter().enumerate() {
        let x = Tensor::<f32>::randn(&[1, layer.conv.in_ch, h, w], 1.0, &mut r);
        let full = layer.forward(&p, tape.constant(x.clone())).value();
        let (y0, x0) = (r.gen_range(0..h), r.gen_range(0..w));
        let mut poked = x.clone();
        for c in 0..layer.conv.in_ch {
            poked.data_mut()[(c * h + y0) * w + x0] += 1.0;
        }
        let out = layer.forward(&p, tape.constant(poked)).value();
        for (i, (a, b)) in out.data().iter().zip(full.data()).enumerate() {
            let pix = i % (h * w);
            ensure(pix == y0 * w + x0 || a == b, || format!("disparity layer {li}: pixel {pix} changed"))?;
        }
    }
    Ok(format!("{} spatial and {} disparity layers isolated", spatial.len(), disparity.len()))
}

fn soft_argmin_contracts() -> Result<String, String> {
    let tape = Tape::new();
    let uniform = soft_argmin(tape.constant(Tensor::<f64>::zeros(&[1, 16, 1, 1]))).0.value();
    ensure(uniform.data()[0] == 7.5, || format!("uniform scores gave {}", uniform.data()[0]))?;
    let mut r = rng(5);
    let d = 9;
    let scores = Tensor::<f64>::randn(&[1, d, 10, 10], 5.0, &mut r);
    let base = soft_argmin(tape.constant(scores.clone())).0.value();
    ensure(base.data().iter().all(|&v| (0.0..=(d - 1) as f64).contains(&v)), || "expectation out of range".into())?;
    let mut shifted = scores.clone();
    let plane = 100;
    let offsets: Vec<f64> = (0..plane).map(|_| r.gen_range(-50.0..50.0)).collect();
    for (i, v) in shifted.data_mut().iter_mut().enumerate() {
        *v += offsets[i % plane];
    }
    let moved = soft_argmin(tape.constant(shifted)).0.value();
    let drift = base.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(drift <= 1e-6, || format!("shift changed output by {drift:e}"))?;
    Ok(format!("uniform = 7.5, shift drift {drift:.1e}"))
}

fn loss_examples() -> Result<String, String> {
    let tape = Tape::new();
    let one = |v: f64| Tensor::<f64>::full(&[1, 1, 1, 1], v);
    let mask = one(1.0);
    let value = |pred: f64| -> Result<f64, String> {
        let l = smooth_l1(tape.constant(one(pred)), &one(0.0), &mask).map_err(|e| e.to_string())?;
        let v = l.value().data()[0];
        Ok(v)
    };
    ensure(value(0.5)? == 0.125, || "e = 0.5 should give 0.125".into())?;
    ensure(value(2.0)? == 1.5, || "e = 2 should give 1.5".into())?;
    let total = |init: f64, fin: f64| -> Result<f64, String> {
        let l = total_loss(tape.constant(one(init)), tape.constant(one(fin)), &one(0.0), &mask, 0.3, 1.0)
            .map_err(|e| e.to_string())?;
        let v = l.value().data()[0];
        Ok(v)
    };
    // A 1.5 px error contributes exactly 1.0 per head.
    ensure(total(0.0, 0.0)? == 0.0, || "perfect heads should give 0".into())?;
    ensure(total(1.5, 0.0)? == 0.3, || "init-only loss should give 0.3".into())?;
    ensure(total(0.0, 1.5)? == 1.0, || "final-only loss should give 1.0".into())?;
    Ok("0.125 / 1.5 / 0 / 0.3 / 1.0".into())
}

fn metric_examples() -> Result<String, String> {
    let gt = DisparityMap::new(1, 3);
    let pred = DisparityMap::from_vec(1, 3, vec![0.5, 1.5, 3.5]).map_err(|e| e.to_string())?;
    let mask = ValidMask::all(1, 3, true);
    let e = epe(&pred, &gt, &mask).map_err(|e| e.to_string())?.unwrap_or(f64::NAN);
    let r1 = outlier_rate(&pred, &gt, &mask, 1.0).map_err(|e| e.to_string())?.unwrap_or(f64::NAN);
    ensure((e - 5.5 / 3.0).abs() < 1e-9, || format!("epe {e}"))?;
    ensure((r1 - 200.0 / 3.0).abs() < 1e-9, || format!(">1px rate {r1}"))?;
    let uniform = Tensor::<f64>::full(&[16, 1, 1], 1.0 / 16.0);
    let (h, _) = distribution_diagnostics(&uniform).map_err(|e| e.to_string())?;
    ensure((h[0] - 16f64.ln()).abs() < 1e-4, || format!("uniform entropy {}", h[0]))?;
    Ok(format!("epe {e:.4}, >1px {r1:.2}%, H(uniform16) {:.4}", h[0]))
}

fn pfm_round_trip() -> Result<String, String> {
    let mut fixture = b"Pf\n1 1\n-1.0\n".to_vec();
    fixture.extend_from_slice(&2.5f32.to_le_bytes());
    let parsed = parse_pfm(&fixture).map_err(|e| e.to_string())?;
    ensure(parsed.map.data == vec![2.5], || format!("fixture decoded to {:?}", parsed.map.data))?;
    let mut r = rng(6);
    let map = DisparityMap::from_vec(8, 8, (0..64).map(|_| r.gen_range(-100.0..100.0)).collect())
        .map_err(|e| e.to_string())?;
    let back = parse_pfm(&encode_pfm(&map)).map_err(|e| e.to_string())?;
    let same = back.map.data.iter().zip(&map.data).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, || "8x8 map changed".into())?;
    Ok("fixture and 8x8 round trip bit-exact".into())
}

fn synthetic_photo_consistency() -> Result<String, String> {
    let cfg = SyntheticConfig {
        seed: 7,
        ..SyntheticConfig::default()
    };
    let s = generate_random_dot_pair(&cfg).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for y in 0..s.height() {
        for x in 0..s.width() {
            if !s.valid_mask.at(y, x) {
                continue;
            }
            let d = s.disparity_gt.at(y, x) as usize;
            ensure(x >= d && s.left.pixel(y, x) == s.right.pixel(y, x - d), || {
                format!("pixel ({y},{x}) with disparity {d} does not match")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} valid pixels consistent"))
}

#![allow(dead_code)]

use bga_core::aggregation::{AggConfig, Bga, Paradigm, SpatialAggregation};
use bga_core::autograd::{Tape, Var};
use bga_core::features::Variant;
use bga_core::model::{ModelConfig, StereoModel};
use bga_core::nn::{Binder, ParamStore};
use bga_core::training::total_loss;
use bga_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, 0 when both vanish.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `Σ w ⊙ f(inputs)` against central
/// differences, for a fixed random `w`. Returns the worst relative error.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, seed: u64) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let eval = |vals: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> (f64, Vec<Tensor<f64>>, Tensor<f64>) {
        let tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&vars);
        let w = match weights {
            Some(w) => w.clone(),
            None => Tensor::randn(&out.shape(), 1.0, &mut rng(seed)),
        };
        let loss = out.mul(tape.constant(w.clone())).sum();
        let value = loss.value().data()[0];
        let grads = tape.backward(loss);
        (value, vars.iter().map(|v| grads.get_or_zeros(*v)).collect(), w)
    };
    let (_, analytic, w) = eval(inputs, None);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            *slot = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
        }
        worst = worst.max(rel_error(analytic[i].data(), &numeric));
    }
    worst
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Straight transcription of the correlation definition.
pub fn loop_reference(fl: &Tensor<f64>, fr: &Tensor<f64>, levels: usize, groups: usize) -> Vec<f64> {
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    let per = c / groups;
    let mut out = Vec::with_capacity(groups * levels * h * w);
    for g in 0..groups {
        for d in 0..levels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    if x >= d {
                        for k in g * per..(g + 1) * per {
                            acc += fl.at(&[k, y, x]) * fr.at(&[k, y, x - d]);
                        }
                        acc /= per as f64;
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Tiny BGA over 8 disparity levels with every parameter redrawn, so no
/// weight or shift is zero.
pub fn tiny_bga(seed: u64, levels: usize) -> (Bga, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let bga = Bga::new(&AggConfig::for_variant(Variant::Tiny), levels, &mut store, &mut rng(seed)).unwrap();
    let mut r = rng(seed + 1);
    for v in store.values_mut() {
        *v = Tensor::randn(v.shape(), 0.3, &mut r);
    }
    (bga, store)
}

pub fn zero_other_levels(x: &Tensor<f64>, levels: usize, keep: usize) -> Tensor<f64> {
    let s = x.shape();
    let (c, plane) = (s[1], s[2] * s[3]);
    let bundle = c / levels;
    let mut out = x.clone();
    for ch in 0..c {
        if ch / bundle != keep {
            out.data_mut()[ch * plane..(ch + 1) * plane].fill(0.0);
        }
    }
    out
}

pub fn level_slice(t: &Tensor<f64>, layer: &SpatialAggregation, k: usize) -> Vec<u64> {
    let plane = t.shape()[2] * t.shape()[3];
    let r = layer.bundle(k);
    t.data()[r.start * plane..r.end * plane].iter().map(|v| v.to_bits()).collect()
}

/// Input-gradient of the single output element at `index`.
pub fn input_gradient<F>(x: &Tensor<f64>, index: &[usize], f: F) -> Tensor<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(v);
    let mut seed = Tensor::zeros(&out.shape());
    seed.set(index, 1.0);
    tape.backward_seeded(out, seed).get_or_zeros(v)
}

pub fn directional_check(paradigm: Paradigm, seed: u64, prefix: &str) -> f64 {

    let cfg = ModelConfig::new(Variant::Tiny, paradigm, 32);
    let mut model = StereoModel::<f64>::new(&cfg, seed).unwrap();
    // Zero-initialized shifts put padded voxels exactly on the leaky kink.
    for (i, v) in model.params.values_mut().iter_mut().enumerate() {
        let noise = Tensor::<f64>::randn(v.shape(), 0.05, &mut rng(seed * 7919 + i as u64));
        for (x, e) in v.data_mut().iter_mut().zip(noise.data()) {
            *x += e;
        }
    }
    let left = Tensor::uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng(seed + 1));
    let right = Tensor::uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng(seed + 2));
    let gt = Tensor::uniform(&[1, 1, 32, 32], 0.0, 24.0, &mut rng(seed + 3));
    let mask = Tensor::from_vec(&[1, 1, 32, 32], vec![1.0; 32 * 32]).unwrap();
    let loss_of = |store: &ParamStore<f64>, want_grad: bool| {
        let tape = Tape::new();
        let p = Binder::new(&tape, store, want_grad);
        let out = model_forward(&model, &p, &tape, &left, &right);
        let loss = total_loss(out.0, out.1, &gt, &mask, 0.3, 1.0).unwrap();
        let value = loss.value().data()[0];
        let grads = want_grad.then(|| p.collect(&tape.backward(loss)));
        (value, grads)
    };
    fn model_forward<'t>(
        m: &StereoModel<f64>,
        p: &Binder<'t, '_, f64>,
        tape: &'t Tape<f64>,
        l: &Tensor<f64>,
        r: &Tensor<f64>,
    ) -> (Var<'t, f64>, Var<'t, f64>) {
        let o = m.forward(p, tape.constant(l.clone()), tape.constant(r.clone())).unwrap();
        (o.d_init, o.d_final)
    }

    let (_, grads) = loss_of(&model.params, true);
    let grads = grads.unwrap();
    let dirs: Vec<Tensor<f64>> = model
        .params
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if model.params.names()[i].starts_with(prefix) {
                randn(v.shape(), seed * 1000 + i as u64)
            } else {
                Tensor::zeros(v.shape())
            }
        })
        .collect();
    let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    // Thousands of leaky units sit near zero; a small step keeps them on one side.
    let h = 1e-8;
    let shifted = |sign: f64| {
        let mut store = model.params.clone();
        for (v, d) in store.values_mut().iter_mut().zip(&dirs) {
            for (x, e) in v.data_mut().iter_mut().zip(d.data()) {
                *x += sign * h * e;
            }
        }
        loss_of(&store, false).0
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

//! Spatial resampling: nearest and bilinear upsampling, cropping, and convex
//! combination upsampling.

use std::rc::Rc;

use super::ops::ncs;
use super::{Backward, Var};
use crate::tensor::{Real, Tensor};

/// Trailing spatial extents padded to three dims (`[1, H, W]` for 4D tensors).
fn dims3(shape: &[usize]) -> [usize; 3] {
    match shape.len() {
        4 => [1, shape[2], shape[3]],
        5 => [shape[2], shape[3], shape[4]],
        _ => panic!("expected [N,C,H,W] or [N,C,D,H,W], got {shape:?}"),
    }
}

fn factors3(shape: &[usize], factors: &[usize]) -> [usize; 3] {
    assert_eq!(factors.len(), shape.len() - 2, "one factor per spatial dim");
    if factors.len() == 2 {
        [1, factors[0], factors[1]]
    } else {
        [factors[0], factors[1], factors[2]]
    }
}

struct NearestRule {
    input: Vec<usize>,
    factors: [usize; 3],
}

impl<T: Real> Backward<T> for NearestRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, _) = ncs(&self.input);
        let [id, ih, iw] = dims3(&self.input);
        let [fd, fh, fw] = self.factors;
        let (od, oh, ow) = (id * fd, ih * fh, iw * fw);
        let mut dx = Tensor::zeros(&self.input);
        let d = dx.data_mut();
        let g = grad.data();
        for nc in 0..n * c {
            let ib = nc * id * ih * iw;
            let ob = nc * od * oh * ow;
            for z in 0..od {
                for y in 0..oh {
                    let src = ib + ((z / fd) * ih + y / fh) * iw;
                    let row = ob + (z * oh + y) * ow;
                    for x in 0..ow {
                        d[src + x / fw] += g[row + x];
                    }
                }
            }
        }
        vec![Some(dx)]
    }
}

struct CropRule {
    input: Vec<usize>,
}

impl<T: Real> Backward<T> for CropRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, _) = ncs(&self.input);
        let [id, ih, iw] = dims3(&self.input);
        let [od, oh, ow] = dims3(grad.shape());
        let mut dx = Tensor::zeros(&self.input);
        let d = dx.data_mut();
        let g = grad.data();
        for nc in 0..n * c {
            for z in 0..od {
                for y in 0..oh {
                    let src = nc * id * ih * iw + (z * ih + y) * iw;
                    let dst = nc * od * oh * ow + (z * oh + y) * ow;
                    d[src..src + ow].copy_from_slice(&g[dst..dst + ow]);
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Corner-aligned source coordinate of output index `o`: `o · (in − 1) / (out − 1)`.
pub(crate) fn align_corners_src(o: usize, input: usize, output: usize) -> (usize, usize, f64) {
    if input == 1 || output == 1 {
        return (0, 0, 0.0);
    }
    let pos = o as f64 * (input - 1) as f64 / (output - 1) as f64;
    let lo = (pos.floor() as usize).min(input - 1);
    let hi = (lo + 1).min(input - 1);
    (lo, hi, pos - lo as f64)
}

struct BilinearRule {
    input: Vec<usize>,
    out_hw: (usize, usize),
}

impl<T: Real> Backward<T> for BilinearRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, _) = ncs(&self.input);
        let (ih, iw) = (self.input[2], self.input[3]);
        let (oh, ow) = self.out_hw;
        let mut dx = Tensor::zeros(&self.input);
        let d = dx.data_mut();
        let g = grad.data();
        for nc in 0..n * c {
            for y in 0..oh {
                let (y0, y1, fy) = align_corners_src(y, ih, oh);
                let fy = T::lit(fy);
                for x in 0..ow {
                    let (x0, x1, fx) = align_corners_src(x, iw, ow);
                    let fx = T::lit(fx);
                    let gv = g[(nc * oh + y) * ow + x];
                    let base = nc * ih * iw;
                    let one = T::one();
                    d[base + y0 * iw + x0] += gv * (one - fy) * (one - fx);
                    d[base + y0 * iw + x1] += gv * (one - fy) * fx;
                    d[base + y1 * iw + x0] += gv * fy * (one - fx);
                    d[base + y1 * iw + x1] += gv * fy * fx;
                }
            }
        }
        vec![Some(dx)]
    }
}

const TAPS: usize = 9;

/// Softmax over the 9 taps of one sub-pixel's mask logits.
fn tap_weights<T: Real>(logits: &[T], stride: usize, base: usize) -> [T; TAPS] {
    let mut w = [T::zero(); TAPS];
    let mut max = T::neg_infinity();
    for t in 0..TAPS {
        max = max.max(logits[base + t * stride]);
    }
    let mut sum = T::zero();
    for t in 0..TAPS {
        w[t] = (logits[base + t * stride] - max).exp();
        sum += w[t];
    }
    for v in &mut w {
        *v = *v / sum;
    }
    w
}

/// Edge-clamped 3x3 neighborhood of `(y, x)` in an `h x w` map, tap-major.
fn neighborhood(y: usize, x: usize, h: usize, w: usize) -> [usize; TAPS] {
    let mut idx = [0; TAPS];
    for dy in 0..3 {
        for dx in 0..3 {
            let yy = (y + dy).saturating_sub(1).min(h - 1);
            let xx = (x + dx).saturating_sub(1).min(w - 1);
            idx[dy * 3 + dx] = yy * w + xx;
        }
    }
    idx
}

struct ConvexRule<T> {
    values: Rc<Tensor<T>>,
    logits: Rc<Tensor<T>>,
    factor: usize,
}

impl<T: Real> Backward<T> for ConvexRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let s = self.values.shape();
        let (n, h, w) = (s[0], s[2], s[3]);
        let r = self.factor;
        let plane = h * w;
        let lg = self.logits.data();
        let vd = self.values.data();
        let g = grad.data();
        let mut dv = Tensor::zeros(s);
        let mut dl = Tensor::zeros(self.logits.shape());
        for b in 0..n {
            let vb = &vd[b * plane..(b + 1) * plane];
            let lb0 = b * TAPS * r * r * plane;
            for y in 0..h {
                for x in 0..w {
                    let nb = neighborhood(y, x, h, w);
                    for i in 0..r {
                        for j in 0..r {
                            let sub = i * r + j;
                            let base = lb0 + sub * plane + y * w + x;
                            let stride = r * r * plane;
                            let wts = tap_weights(lg, stride, base);
                            let oi = (b * h * r + y * r + i) * (w * r) + x * r + j;
                            let gv = g[oi];
                            let out: T = (0..TAPS).map(|t| wts[t] * vb[nb[t]]).sum();
                            for t in 0..TAPS {
                                if needs[0] {
                                    dv.data_mut()[b * plane + nb[t]] += gv * wts[t];
                                }
                                if needs[1] {
                                    dl.data_mut()[base + t * stride] += gv * wts[t] * (vb[nb[t]] - out);
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![needs[0].then_some(dv), needs[1].then_some(dl)]
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Nearest-neighbor upsampling of the trailing spatial dims by integer factors.
    pub fn upsample_nearest(self, factors: &[usize]) -> Var<'t, T> {
        let shape = self.shape();
        let f = factors3(&shape, factors);
        let (n, c, _) = ncs(&shape);
        let [id, ih, iw] = dims3(&shape);
        let (od, oh, ow) = (id * f[0], ih * f[1], iw * f[2]);
        let mut out_shape = shape.clone();
        for (i, &fac) in factors.iter().enumerate() {
            out_shape[2 + i] *= fac;
        }
        let input = self.value();
        let x = input.data();
        let mut data = Vec::with_capacity(n * c * od * oh * ow);
        for nc in 0..n * c {
            for z in 0..od {
                for y in 0..oh {
                    let src = nc * id * ih * iw + ((z / f[0]) * ih + y / f[1]) * iw;
                    data.extend((0..ow).map(|xx| x[src + xx / f[2]]));
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, data).expect("upsample");
        self.tape
            .record(value, &[self], NearestRule { input: shape, factors: f })
    }

    /// Keeps the leading `sizes` entries of each trailing spatial dim.
    pub fn crop_spatial(self, sizes: &[usize]) -> Var<'t, T> {
        let shape = self.shape();
        assert_eq!(sizes.len(), shape.len() - 2, "one size per spatial dim");
        if shape[2..] == *sizes {
            return self;
        }
        let mut out_shape = shape.clone();
        out_shape[2..].copy_from_slice(sizes);
        let (n, c, _) = ncs(&shape);
        let [id, ih, iw] = dims3(&shape);
        let [od, oh, ow] = dims3(&out_shape);
        assert!(od <= id && oh <= ih && ow <= iw, "crop larger than input");
        let input = self.value();
        let x = input.data();
        let mut data = Vec::with_capacity(n * c * od * oh * ow);
        for nc in 0..n * c {
            for z in 0..od {
                for y in 0..oh {
                    let src = nc * id * ih * iw + (z * ih + y) * iw;
                    data.extend_from_slice(&x[src..src + ow]);
                }
            }
        }
        let value = Tensor::from_vec(&out_shape, data).expect("crop");
        self.tape.record(value, &[self], CropRule { input: shape })
    }

    /// Corner-aligned bilinear resize of `[N, C, H, W]` to `out_h x out_w`.
    pub fn upsample_bilinear(self, out_h: usize, out_w: usize) -> Var<'t, T> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4, "bilinear expects [N,C,H,W]");
        let (n, c, ih, iw) = (shape[0], shape[1], shape[2], shape[3]);
        let input = self.value();
        let x = input.data();
        let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
        {
            let o = out.data_mut();
            let one = T::one();
            for nc in 0..n * c {
                let base = nc * ih * iw;
                for y in 0..out_h {
                    let (y0, y1, fy) = align_corners_src(y, ih, out_h);
                    let fy = T::lit(fy);
                    for xx in 0..out_w {
                        let (x0, x1, fx) = align_corners_src(xx, iw, out_w);
                        let fx = T::lit(fx);
                        let top = x[base + y0 * iw + x0] * (one - fx) + x[base + y0 * iw + x1] * fx;
                        let bot = x[base + y1 * iw + x0] * (one - fx) + x[base + y1 * iw + x1] * fx;
                        o[(nc * out_h + y) * out_w + xx] = top * (one - fy) + bot * fy;
                    }
                }
            }
        }
        self.tape.record(
            out,
            &[self],
            BilinearRule {
                input: shape,
                out_hw: (out_h, out_w),
            },
        )
    }

    /// Convex-combination upsampling of a single-channel map `[N, 1, h, w]`.
    ///
    /// `logits` is `[N, 9·r·r, h, w]`; channel `tap·r² + i·r + j` scores
    /// neighbor `tap` (row-major over the edge-clamped 3x3 neighborhood) for
    /// output pixel `(y·r + i, x·r + j)`. Weights are a softmax over the 9 taps.
    pub fn convex_upsample(self, logits: Var<'t, T>, factor: usize) -> Var<'t, T> {
        let s = self.shape();
        let ls = logits.shape();
        assert_eq!(s.len(), 4, "convex upsample expects [N,1,h,w]");
        assert_eq!(s[1], 1, "convex upsample expects one channel");
        assert_eq!(ls, vec![s[0], TAPS * factor * factor, s[2], s[3]], "mask logits shape");
        let (n, h, w, r) = (s[0], s[2], s[3], factor);
        let values = self.value();
        let lv = logits.value();
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, 1, h * r, w * r]);
        {
            let o = out.data_mut();
            let vd = values.data();
            let lg = lv.data();
            for b in 0..n {
                let vb = &vd[b * plane..(b + 1) * plane];
                for y in 0..h {
                    for x in 0..w {
                        let nb = neighborhood(y, x, h, w);
                        for i in 0..r {
                            for j in 0..r {
                                let base = b * TAPS * r * r * plane + (i * r + j) * plane + y * w + x;
                                let wts = tap_weights(lg, r * r * plane, base);
                                let v: T = (0..TAPS).map(|t| wts[t] * vb[nb[t]]).sum();
                                o[(b * h * r + y * r + i) * (w * r) + x * r + j] = v;
                            }
                        }
                    }
                }
            }
        }
        self.tape.record(
            out,
            &[self, logits],
            ConvexRule {
                values,
                logits: lv,
                factor,
            },
        )
    }
}

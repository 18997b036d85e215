//! Element-wise, broadcast and structural operations.

use std::rc::Rc;

use super::{Backward, Var};
use crate::tensor::{Real, Tensor};

/// `(batch, channels, spatial)` view of a `[N, C, ...]` shape.
pub(crate) fn ncs(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected [N, C, ...], got {shape:?}");
    (shape[0], shape[1], shape[2..].iter().product())
}

struct AddRule;

impl<T: Real> Backward<T> for AddRule {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.clone()),
        ]
    }
}

struct SubRule;

impl<T: Real> Backward<T> for SubRule {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.map(|g| -g)),
        ]
    }
}

struct MulRule<T> {
    a: Rc<Tensor<T>>,
    b: Rc<Tensor<T>>,
}

impl<T: Real> Backward<T> for MulRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![
            needs[0].then(|| grad.zip_map(&self.b, |g, b| g * b)),
            needs[1].then(|| grad.zip_map(&self.a, |g, a| g * a)),
        ]
    }
}

struct ScaleRule<T> {
    factor: T,
}

impl<T: Real> Backward<T> for ScaleRule<T> {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.map(|g| g * self.factor))]
    }
}

struct LeakyReluRule<T> {
    input: Rc<Tensor<T>>,
    slope: T,
}

impl<T: Real> Backward<T> for LeakyReluRule<T> {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let s = self.slope;
        vec![Some(grad.zip_map(&self.input, |g, x| {
            if x > T::zero() {
                g
            } else {
                g * s
            }
        }))]
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

struct SigmoidRule<T> {
    input: Rc<Tensor<T>>,
}

impl<T: Real> Backward<T> for SigmoidRule<T> {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.zip_map(&self.input, |g, x| {
            let s = sigmoid(x);
            g * s * (T::one() - s)
        }))]
    }
}

/// Standardization over contiguous segments of length `len`.
struct SegmentNormRule<T> {
    output: Rc<Tensor<T>>,
    inv_std: Vec<T>,
    len: usize,
}

impl<T: Real> Backward<T> for SegmentNormRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let m = self.len;
        let n = grad.numel() / m;
        let inv_m = T::lit(1.0 / m as f64);
        let (g, y) = (grad.data(), self.output.data());
        let mut dx = Tensor::zeros(grad.shape());
        let d = dx.data_mut();
        for b in 0..n {
            let r = b * m..(b + 1) * m;
            let (mut mg, mut mgy) = (T::zero(), T::zero());
            for i in r.clone() {
                mg += g[i];
                mgy += g[i] * y[i];
            }
            mg = mg * inv_m;
            mgy = mgy * inv_m;
            for i in r {
                d[i] = self.inv_std[b] * (g[i] - mg - y[i] * mgy);
            }
        }
        vec![Some(dx)]
    }
}

struct ChannelAffineRule<T> {
    input: Rc<Tensor<T>>,
    scale: Rc<Tensor<T>>,
}

impl<T: Real> Backward<T> for ChannelAffineRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, s) = ncs(grad.shape());
        let scale = self.scale.data();
        let x = self.input.data();
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(grad.shape());
            for (i, (d, &gv)) in dx.data_mut().iter_mut().zip(g).enumerate() {
                *d = gv * scale[(i / s) % c];
            }
            dx
        });
        let mut dscale = vec![T::zero(); c];
        let mut dshift = vec![T::zero(); c];
        if needs[1] || needs[2] {
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    let (mut acc_s, mut acc_b) = (T::zero(), T::zero());
                    for i in base..base + s {
                        acc_s += g[i] * x[i];
                        acc_b += g[i];
                    }
                    dscale[ch] += acc_s;
                    dshift[ch] += acc_b;
                }
            }
        }
        vec![
            dx,
            needs[1].then(|| Tensor::from_vec(&[c], dscale).expect("shape")),
            needs[2].then(|| Tensor::from_vec(&[c], dshift).expect("shape")),
        ]
    }
}

struct GateRule<T> {
    input: Rc<Tensor<T>>,
    gate: Rc<Tensor<T>>,
}

impl<T: Real> Backward<T> for GateRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, s) = ncs(grad.shape());
        let g = grad.data();
        let a = self.gate.data();
        let x = self.input.data();
        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(grad.shape());
            let d = dx.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    for i in 0..s {
                        d[base + i] = g[base + i] * a[b * s + i];
                    }
                }
            }
            dx
        });
        let da = needs[1].then(|| {
            let mut da = Tensor::zeros(self.gate.shape());
            let d = da.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    for i in 0..s {
                        d[b * s + i] += g[base + i] * x[base + i];
                    }
                }
            }
            da
        });
        vec![dx, da]
    }
}

struct ReshapeRule {
    shape: Vec<usize>,
}

impl<T: Real> Backward<T> for ReshapeRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(grad.clone().reshape(&self.shape).expect("reshape"))]
    }
}

/// Splits `grad` along `axis` (0 or 1) into pieces of the given sizes.
fn split_axis<T: Real>(grad: &Tensor<T>, axis: usize, sizes: &[usize]) -> Vec<Tensor<T>> {
    let shape = grad.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let total = shape[axis];
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let mut piece_shape = shape.to_vec();
            piece_shape[axis] = len;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * total + start) * inner;
                data.extend_from_slice(&grad.data()[from..from + len * inner]);
            }
            start += len;
            Tensor::from_vec(&piece_shape, data).expect("split")
        })
        .collect()
}

struct ConcatRule {
    axis: usize,
    sizes: Vec<usize>,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        split_axis(grad, self.axis, &self.sizes)
            .into_iter()
            .zip(needs)
            .map(|(g, &n)| n.then_some(g))
            .collect()
    }
}

struct SliceBatchRule {
    start: usize,
    full: Vec<usize>,
}

impl<T: Real> Backward<T> for SliceBatchRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut out = Tensor::zeros(&self.full);
        let inner: usize = self.full[1..].iter().product();
        let from = self.start * inner;
        out.data_mut()[from..from + grad.numel()].copy_from_slice(grad.data());
        vec![Some(out)]
    }
}

struct SumRule {
    shape: Vec<usize>,
    scale: f64,
}

impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::full(
            &self.shape,
            grad.data()[0] * T::lit(self.scale),
        ))]
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let value = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.record(value, &[self, other], AddRule)
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let value = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.record(value, &[self, other], SubRule)
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        let value = a.zip_map(&b, |x, y| x * y);
        self.tape.record(value, &[self, other], MulRule { a, b })
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let value = self.value().map(|v| v * factor);
        self.tape.record(value, &[self], ScaleRule { factor })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let input = self.value();
        let value = input.map(|x| if x > T::zero() { x } else { x * slope });
        self.tape
            .record(value, &[self], LeakyReluRule { input, slope })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let input = self.value();
        let value = input.map(sigmoid);
        self.tape.record(value, &[self], SigmoidRule { input })
    }

    /// Standardizes each sample over all of its non-batch elements.
    pub fn sample_norm(self, eps: f64) -> Var<'t, T> {
        let m = self.value().numel() / self.shape()[0];
        self.segment_norm(m, eps)
    }

    /// Standardizes every `(n, c)` slice over its spatial elements.
    pub fn instance_norm(self, eps: f64) -> Var<'t, T> {
        let (_, _, s) = ncs(&self.shape());
        self.segment_norm(s, eps)
    }

    fn segment_norm(self, m: usize, eps: f64) -> Var<'t, T> {
        let input = self.value();
        let n = input.numel() / m;
        let inv_m = T::lit(1.0 / m as f64);
        let mut value = Tensor::zeros(input.shape());
        let mut inv_std = Vec::with_capacity(n);
        {
            let (x, out) = (input.data(), value.data_mut());
            for b in 0..n {
                let r = b * m..(b + 1) * m;
                let mean = x[r.clone()].iter().fold(T::zero(), |a, &v| a + v) * inv_m;
                let var = x[r.clone()].iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_m;
                let inv = T::one() / (var + T::lit(eps)).sqrt();
                for i in r {
                    out[i] = (x[i] - mean) * inv;
                }
                inv_std.push(inv);
            }
        }
        let output = Rc::new(value.clone());
        self.tape.record(value, &[self], SegmentNormRule { output, inv_std, len: m })
    }

    /// `y[n,c,..] = x[n,c,..] * scale[c] + shift[c]`.
    pub fn channel_affine(self, scale: Var<'t, T>, shift: Var<'t, T>) -> Var<'t, T> {
        let input = self.value();
        let sc = scale.value();
        let sh = shift.value();
        let (_, c, s) = ncs(input.shape());
        assert_eq!(sc.shape(), &[c], "affine scale shape");
        assert_eq!(sh.shape(), &[c], "affine shift shape");
        let mut value = Tensor::zeros(input.shape());
        for (i, (o, &x)) in value.data_mut().iter_mut().zip(input.data()).enumerate() {
            let ch = (i / s) % c;
            *o = x * sc.data()[ch] + sh.data()[ch];
        }
        self.tape.record(
            value,
            &[self, scale, shift],
            ChannelAffineRule { input, scale: sc },
        )
    }

    /// Broadcast multiply by a single-channel map: `y[n,c,p] = x[n,c,p] * a[n,0,p]`.
    pub fn gate(self, gate: Var<'t, T>) -> Var<'t, T> {
        let input = self.value();
        let a = gate.value();
        let (n, c, s) = ncs(input.shape());
        assert_eq!(a.shape()[0], n, "gate batch");
        assert_eq!(a.shape()[1], 1, "gate must have one channel");
        assert_eq!(&a.shape()[2..], &input.shape()[2..], "gate spatial shape");
        let mut value = Tensor::zeros(input.shape());
        {
            let out = value.data_mut();
            let (x, g) = (input.data(), a.data());
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    for i in 0..s {
                        out[base + i] = x[base + i] * g[b * s + i];
                    }
                }
            }
        }
        self.tape
            .record(value, &[self, gate], GateRule { input, gate: a })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let from = self.shape();
        let value = (*self.value())
            .clone()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape.record(value, &[self], ReshapeRule { shape: from })
    }

    fn concat_axis(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let first = values[0].shape().to_vec();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = values
            .iter()
            .map(|v| {
                let s = v.shape();
                assert_eq!(s.len(), first.len(), "concat rank");
                assert_eq!(&s[..axis], &first[..axis], "concat leading dims");
                assert_eq!(&s[axis + 1..], &first[axis + 1..], "concat trailing dims");
                s[axis]
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&sizes) {
                let from = o * len * inner;
                data.extend_from_slice(&v.data()[from..from + len * inner]);
            }
        }
        let value = Tensor::from_vec(&shape, data).expect("concat");
        tape.record(value, parts, ConcatRule { axis, sizes })
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Var<'t, T> {
        Self::concat_axis(parts, 1)
    }

    /// Concatenation along the batch axis (axis 0).
    pub fn concat_batch(parts: &[Var<'t, T>]) -> Var<'t, T> {
        Self::concat_axis(parts, 0)
    }

    pub fn slice_batch(self, start: usize, len: usize) -> Var<'t, T> {
        let full = self.shape();
        assert!(start + len <= full[0], "batch slice out of range");
        let inner: usize = full[1..].iter().product();
        let value = self.value();
        let mut shape = full.clone();
        shape[0] = len;
        let data = value.data()[start * inner..(start + len) * inner].to_vec();
        let out = Tensor::from_vec(&shape, data).expect("slice");
        self.tape
            .record(out, &[self], SliceBatchRule { start, full })
    }

    pub fn sum(self) -> Var<'t, T> {
        let value = self.value();
        let out = Tensor::scalar(value.sum());
        self.tape.record(
            out,
            &[self],
            SumRule {
                shape: value.shape().to_vec(),
                scale: 1.0,
            },
        )
    }

    pub fn mean(self) -> Var<'t, T> {
        let value = self.value();
        let n = value.numel().max(1);
        let out = Tensor::scalar(value.sum() / T::lit(n as f64));
        self.tape.record(
            out,
            &[self],
            SumRule {
                shape: value.shape().to_vec(),
                scale: 1.0 / n as f64,
            },
        )
    }
}

use std::rc::Rc;

use super::ops::ncs;
use super::{Backward, Var};
use crate::tensor::{Real, Tensor};

struct SoftmaxRule<T> {
    output: Rc<Tensor<T>>,
}

impl<T: Real> Backward<T> for SoftmaxRule<T> {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, s) = ncs(grad.shape());
        let p = self.output.data();
        let g = grad.data();
        let mut dx = Tensor::zeros(grad.shape());
        let d = dx.data_mut();
        for b in 0..n {
            for i in 0..s {
                let at = |ch: usize| (b * c + ch) * s + i;
                let dot: T = (0..c).map(|ch| g[at(ch)] * p[at(ch)]).sum();
                for ch in 0..c {
                    d[at(ch)] = p[at(ch)] * (g[at(ch)] - dot);
                }
            }
        }
        vec![Some(dx)]
    }
}

struct ExpectationRule {
    input: Vec<usize>,
}

impl<T: Real> Backward<T> for ExpectationRule {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (n, c, s) = ncs(&self.input);
        let g = grad.data();
        let mut dx = Tensor::zeros(&self.input);
        let d = dx.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let w = T::lit(ch as f64);
                for i in 0..s {
                    d[(b * c + ch) * s + i] = g[b * s + i] * w;
                }
            }
        }
        vec![Some(dx)]
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Numerically stable softmax over the channel axis of `[N, C, ...]`.
    pub fn softmax_channels(self) -> Var<'t, T> {
        let input = self.value();
        let (n, c, s) = ncs(input.shape());
        let x = input.data();
        let mut out = Tensor::zeros(input.shape());
        {
            let o = out.data_mut();
            for b in 0..n {
                for i in 0..s {
                    let at = |ch: usize| (b * c + ch) * s + i;
                    let max = (0..c).fold(T::neg_infinity(), |m, ch| m.max(x[at(ch)]));
                    let mut sum = T::zero();
                    for ch in 0..c {
                        let e = (x[at(ch)] - max).exp();
                        o[at(ch)] = e;
                        sum += e;
                    }
                    for ch in 0..c {
                        o[at(ch)] = o[at(ch)] / sum;
                    }
                }
            }
        }
        let output = Rc::new(out.clone());
        self.tape.record(out, &[self], SoftmaxRule { output })
    }

    /// `Σ_c c · x[n, c, ..]`, producing `[N, 1, ...]`.
    pub fn channel_index_expectation(self) -> Var<'t, T> {
        let shape = self.shape();
        let (n, c, s) = ncs(&shape);
        let input = self.value();
        let x = input.data();
        let mut out_shape = shape.clone();
        out_shape[1] = 1;
        let mut out = Tensor::zeros(&out_shape);
        {
            let o = out.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let w = T::lit(ch as f64);
                    for i in 0..s {
                        o[b * s + i] += w * x[(b * c + ch) * s + i];
                    }
                }
            }
        }
        self.tape
            .record(out, &[self], ExpectationRule { input: shape })
    }
}

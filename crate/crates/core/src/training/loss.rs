use std::rc::Rc;

use crate::autograd::{Backward, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Transition point between the quadratic and linear pieces.
pub const BETA: f64 = 1.0;

/// Default weight of the interpolated head.
pub const LAMBDA_INIT: f64 = 0.3;
/// Default weight of the learned-upsampling head.
pub const LAMBDA_FINAL: f64 = 1.0;

fn huber<T: Real>(e: T) -> T {
    let beta = T::lit(BETA);
    let a = e.abs();
    if a < beta {
        T::lit(0.5) * e * e / beta
    } else {
        a - T::lit(0.5) * beta
    }
}

fn huber_grad<T: Real>(e: T) -> T {
    let beta = T::lit(BETA);
    if e.abs() < beta {
        e / beta
    } else {
        e.signum()
    }
}

struct SmoothL1Rule<T> {
    pred: Rc<Tensor<T>>,
    gt: Rc<Tensor<T>>,
    mask: Rc<Tensor<T>>,
    count: usize,
}

impl<T: Real> Backward<T> for SmoothL1Rule<T> {
    fn backward(&self, grad: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let scale = grad.data()[0] / T::lit(self.count as f64);
        let mut d = Tensor::zeros(self.pred.shape());
        for (((o, &p), &g), &m) in d
            .data_mut()
            .iter_mut()
            .zip(self.pred.data())
            .zip(self.gt.data())
            .zip(self.mask.data())
        {
            if m > T::zero() {
                *o = huber_grad(p - g) * scale;
            }
        }
        vec![Some(d)]
    }
}

/// Mean smooth L1 over pixels where `mask > 0`. Returns 0 when none are valid.
pub fn smooth_l1<'t, T: Real>(pred: Var<'t, T>, gt: &Tensor<T>, mask: &Tensor<T>) -> Result<Var<'t, T>> {
    let ps = pred.shape();
    if ps != gt.shape() || ps != mask.shape() {
        return Err(Error::Shape(format!(
            "smooth L1 inputs differ: pred {ps:?}, gt {:?}, mask {:?}",
            gt.shape(),
            mask.shape()
        )));
    }
    let p = pred.value();
    let count = mask.data().iter().filter(|&&m| m > T::zero()).count();
    if count == 0 {
        log::warn!("smooth L1 called with an empty mask; loss is 0");
        return Ok(pred.tape().constant(Tensor::scalar(T::zero())));
    }
    let mut sum = T::zero();
    for ((&pv, &g), &m) in p.data().iter().zip(gt.data()).zip(mask.data()) {
        if m > T::zero() {
            sum += huber(pv - g);
        }
    }
    let value = Tensor::scalar(sum / T::lit(count as f64));
    Ok(pred.tape().record(
        value,
        &[pred],
        SmoothL1Rule {
            pred: p,
            gt: Rc::new(gt.clone()),
            mask: Rc::new(mask.clone()),
            count,
        },
    ))
}

/// `λ0 · smooth_l1(d_init) + λ1 · smooth_l1(d_final)`.
pub fn total_loss<'t, T: Real>(
    d_init: Var<'t, T>,
    d_final: Var<'t, T>,
    gt: &Tensor<T>,
    mask: &Tensor<T>,
    lambda_init: f64,
    lambda_final: f64,
) -> Result<Var<'t, T>> {
    let a = smooth_l1(d_init, gt, mask)?.scale(T::lit(lambda_init));
    let b = smooth_l1(d_final, gt, mask)?.scale(T::lit(lambda_final));
    Ok(a.add(b))
}

//! 2D and 3D convolution through im2col + GEMM.
//!
//! Both ranks share one kernel: a 2D convolution is a 3D convolution whose
//! depth extent and kernel depth are 1.

use std::rc::Rc;

use super::{Backward, Var};
use crate::tensor::{gemm, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn same(kernel: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

pub(crate) fn conv_out(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(
        len + 2 * padding >= kernel,
        "kernel {kernel} larger than padded input {len}+2*{padding}"
    );
    (len + 2 * padding - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    groups: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl Geom {
    fn cin_g(&self) -> usize {
        self.in_ch / self.groups
    }
    fn cout_g(&self) -> usize {
        self.out_ch / self.groups
    }
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }
    fn cols(&self) -> usize {
        self.output.iter().product()
    }
    fn rows(&self) -> usize {
        self.cin_g() * self.kernel.iter().product::<usize>()
    }
    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
    fn flops(&self) -> u64 {
        2 * (self.batch * self.out_ch * self.cols() * self.rows()) as u64
    }
}

#[inline]
fn src_index(o: usize, stride: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

/// Unfolds one group of one sample into a `rows x cols` matrix.
fn im2col<T: Real>(x: &[T], g: &Geom, col: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.output;
    let p = g.cols();
    let mut row = 0;
    for c in 0..g.cin_g() {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..od {
                        let plane = &mut dst[oz * oh * ow..(oz + 1) * oh * ow];
                        let Some(iz) = src_index(oz, sd, kz, pd, id) else {
                            plane.fill(T::zero());
                            continue;
                        };
                        for oy in 0..oh {
                            let line = &mut plane[oy * ow..(oy + 1) * ow];
                            let Some(iy) = src_index(oy, sh, ky, ph, ih) else {
                                line.fill(T::zero());
                                continue;
                            };
                            let src = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match src_index(ox, sw, kx, pw, iw) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a column matrix back into `dx`.
fn col2im<T: Real>(col: &[T], g: &Geom, dx: &mut [T]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.output;
    let p = g.cols();
    let mut row = 0;
    for c in 0..g.cin_g() {
        let dxc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    row += 1;
                    for oz in 0..od {
                        let Some(iz) = src_index(oz, sd, kz, pd, id) else {
                            continue;
                        };
                        for oy in 0..oh {
                            let Some(iy) = src_index(oy, sh, ky, ph, ih) else {
                                continue;
                            };
                            let dst = &mut dxc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            let line = &src[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            for (ox, &v) in line.iter().enumerate() {
                                if let Some(ix) = src_index(ox, sw, kx, pw, iw) {
                                    dst[ix] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: &Geom) -> Tensor<T> {
    let (k, p) = (g.rows(), g.cols());
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let plane = g.in_plane();
    let mut out = Tensor::zeros(&[g.batch, g.out_ch, g.output[0], g.output[1], g.output[2]]);
    let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let xd = x.data();
    let wd = w.data();
    for n in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &xd[(n * g.in_ch + grp * cin_g) * plane..(n * g.in_ch + (grp + 1) * cin_g) * plane];
            let cols: &[T] = if g.pointwise() {
                xs
            } else {
                im2col(xs, g, &mut col);
                &col
            };
            let ws = &wd[grp * cout_g * k..(grp + 1) * cout_g * k];
            let o0 = (n * g.out_ch + grp * cout_g) * p;
            let os = &mut out.data_mut()[o0..o0 + cout_g * p];
            gemm(cout_g, k, p, ws, false, cols, false, T::zero(), os);
        }
        if let Some(bias) = b {
            let od = out.data_mut();
            for (c, &bv) in bias.data().iter().enumerate() {
                let o0 = (n * g.out_ch + c) * p;
                for v in &mut od[o0..o0 + p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

struct ConvRule<T> {
    input: Rc<Tensor<T>>,
    weight: Rc<Tensor<T>>,
    geom: Geom,
    has_bias: bool,
}

impl<T: Real> Backward<T> for ConvRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (k, p) = (g.rows(), g.cols());
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let plane = g.in_plane();
        let xd = self.input.data();
        let wd = self.weight.data();
        let gd = grad.data();

        let mut dx = needs[0].then(|| Tensor::zeros(self.input.shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(self.weight.shape()));
        let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        let mut dcol = if dx.is_some() { vec![T::zero(); k * p] } else { Vec::new() };

        for n in 0..g.batch {
            for grp in 0..g.groups {
                let x0 = (n * g.in_ch + grp * cin_g) * plane;
                let go0 = (n * g.out_ch + grp * cout_g) * p;
                let gs = &gd[go0..go0 + cout_g * p];
                if let Some(dw) = dw.as_mut() {
                    let xs = &xd[x0..x0 + cin_g * plane];
                    let cols: &[T] = if g.pointwise() {
                        xs
                    } else {
                        im2col(xs, g, &mut col);
                        &col
                    };
                    let dws = &mut dw.data_mut()[grp * cout_g * k..(grp + 1) * cout_g * k];
                    gemm(cout_g, p, k, gs, false, cols, true, T::one(), dws);
                }
                if let Some(dx) = dx.as_mut() {
                    let ws = &wd[grp * cout_g * k..(grp + 1) * cout_g * k];
                    let dxs = &mut dx.data_mut()[x0..x0 + cin_g * plane];
                    if g.pointwise() {
                        gemm(k, cout_g, p, ws, true, gs, false, T::one(), dxs);
                    } else {
                        gemm(k, cout_g, p, ws, true, gs, false, T::zero(), &mut dcol);
                        col2im(&dcol, g, dxs);
                    }
                }
            }
        }

        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(needs[2].then(|| {
                let mut db = vec![T::zero(); g.out_ch];
                for n in 0..g.batch {
                    for (c, acc) in db.iter_mut().enumerate() {
                        let o0 = (n * g.out_ch + c) * p;
                        *acc += gd[o0..o0 + p].iter().copied().sum::<T>();
                    }
                }
                Tensor::from_vec(&[g.out_ch], db).expect("bias grad")
            }));
        }
        out
    }
}

impl<'t, T: Real> Var<'t, T> {
    fn conv_nd(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        geom: Geom,
        out_shape: &[usize],
        w5: &[usize],
    ) -> Var<'t, T> {
        let input = self.value();
        let w = weight.value();
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            assert_eq!(b.shape(), &[geom.out_ch], "conv bias shape");
        }
        let w_view = (*w).clone().reshape(w5).expect("weight view");
        let out = conv_forward(&input, &w_view, bv.as_deref(), &geom)
            .reshape(out_shape)
            .expect("conv output");
        self.tape.add_flops(geom.flops());
        let rule = ConvRule {
            input,
            weight: w,
            geom,
            has_bias: bias.is_some(),
        };
        match bias {
            Some(b) => self.tape.record(out, &[self, weight, b], rule),
            None => self.tape.record(out, &[self, weight], rule),
        }
    }

    /// Zero-padded grouped 2D convolution. `self` is `[N, Cin, H, W]`,
    /// `weight` is `[Cout, Cin / groups, kh, kw]`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv2dSpec) -> Var<'t, T> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 4, "conv2d input must be [N,C,H,W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [Co,Ci/g,kh,kw], got {ws:?}");
        let groups = spec.groups.max(1);
        assert!(xs[1] % groups == 0 && ws[0] % groups == 0, "channels not divisible by groups");
        assert_eq!(ws[1], xs[1] / groups, "conv2d weight in-channels {ws:?} vs input {xs:?}");
        let oh = conv_out(xs[2], ws[2], spec.stride, spec.padding);
        let ow = conv_out(xs[3], ws[3], spec.stride, spec.padding);
        let geom = Geom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            groups,
            input: [1, xs[2], xs[3]],
            kernel: [1, ws[2], ws[3]],
            stride: [1, spec.stride, spec.stride],
            pad: [0, spec.padding, spec.padding],
            output: [1, oh, ow],
        };
        let w5 = [ws[0], ws[1], 1, ws[2], ws[3]];
        self.conv_nd(weight, bias, geom, &[xs[0], ws[0], oh, ow], &w5)
    }

    /// Zero-padded dense 3D convolution. `self` is `[N, Cin, D, H, W]`,
    /// `weight` is `[Cout, Cin, kd, kh, kw]`.
    pub fn conv3d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv3dSpec) -> Var<'t, T> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 5, "conv3d input must be [N,C,D,H,W], got {xs:?}");
        assert_eq!(ws.len(), 5, "conv3d weight must be [Co,Ci,kd,kh,kw], got {ws:?}");
        assert_eq!(ws[1], xs[1], "conv3d weight in-channels {ws:?} vs input {xs:?}");
        let mut output = [0; 3];
        for i in 0..3 {
            output[i] = conv_out(xs[2 + i], ws[2 + i], spec.stride[i], spec.padding[i]);
        }
        let geom = Geom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            groups: 1,
            input: [xs[2], xs[3], xs[4]],
            kernel: [ws[2], ws[3], ws[4]],
            stride: spec.stride,
            pad: spec.padding,
            output,
        };
        let out_shape = [xs[0], ws[0], output[0], output[1], output[2]];
        self.conv_nd(weight, bias, geom, &out_shape, &ws.clone())
    }
}

//! Group-wise correlation volume and its Channel2Disp fusion.
//!
//! For features with `N_c` channels split into `G` groups,
//!
//! ```text
//! C(g, d, y, x) = (G / N_c) · Σ_{c ∈ group g} f_l[c, y, x] · f_r[c, y, x − d]
//! ```
//!
//! for `x − d ≥ 0` and exactly 0 otherwise. Channel2Disp flattens `(g, d)` into
//! channel `g·D + d` without touching values or spatial layout.

use std::rc::Rc;

use crate::autograd::{Backward, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Number of quarter-resolution disparity candidates for a full-resolution `d_max`.
pub fn disparity_levels(d_max: usize) -> Result<usize> {
    if d_max == 0 || d_max % 4 != 0 {
        return Err(Error::Config(format!("d_max = {d_max} must be a positive multiple of 4")));
    }
    Ok(d_max / 4)
}

fn check_inputs(fl: &[usize], fr: &[usize], d_max: usize, groups: usize) -> Result<usize> {
    if fl.len() != 4 || fl != fr {
        return Err(Error::Shape(format!(
            "correlation needs matching [N,C,H,W] features, got {fl:?} and {fr:?}"
        )));
    }
    if groups == 0 || fl[1] % groups != 0 {
        return Err(Error::Config(format!(
            "{} feature channels are not divisible into {groups} groups",
            fl[1]
        )));
    }
    let d = disparity_levels(d_max)?;
    if d > fl[3] {
        return Err(Error::Config(format!(
            "{d} disparity levels exceed the feature width {}; no candidate can match",
            fl[3]
        )));
    }
    Ok(d)
}

fn gwc_forward<T: Real>(fl: &Tensor<T>, fr: &Tensor<T>, groups: usize, levels: usize) -> Tensor<T> {
    let s = fl.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cg = c / groups;
    let norm = T::lit(1.0 / cg as f64);
    let mut out = Tensor::zeros(&[n, groups, levels, h, w]);
    let (l, r) = (fl.data(), fr.data());
    let o = out.data_mut();
    for b in 0..n {
        for g in 0..groups {
            for d in 0..levels {
                let ob = (((b * groups + g) * levels) + d) * h * w;
                for ch in g * cg..(g + 1) * cg {
                    let fb = (b * c + ch) * h * w;
                    for y in 0..h {
                        let row = fb + y * w;
                        for x in d..w {
                            o[ob + y * w + x] += l[row + x] * r[row + x - d];
                        }
                    }
                }
                for v in &mut o[ob..ob + h * w] {
                    *v *= norm;
                }
            }
        }
    }
    out
}

struct GwcRule<T> {
    left: Rc<Tensor<T>>,
    right: Rc<Tensor<T>>,
    groups: usize,
    levels: usize,
}

impl<T: Real> Backward<T> for GwcRule<T> {
    fn backward(&self, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let s = self.left.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (groups, levels) = (self.groups, self.levels);
        let cg = c / groups;
        let norm = T::lit(1.0 / cg as f64);
        let mut dl = Tensor::zeros(s);
        let mut dr = Tensor::zeros(s);
        let (l, r, g) = (self.left.data(), self.right.data(), grad.data());
        for b in 0..n {
            for grp in 0..groups {
                for d in 0..levels {
                    let gb = (((b * groups + grp) * levels) + d) * h * w;
                    for ch in grp * cg..(grp + 1) * cg {
                        let fb = (b * c + ch) * h * w;
                        for y in 0..h {
                            let row = fb + y * w;
                            for x in d..w {
                                let gv = g[gb + y * w + x] * norm;
                                if needs[0] {
                                    dl.data_mut()[row + x] += gv * r[row + x - d];
                                }
                                if needs[1] {
                                    dr.data_mut()[row + x - d] += gv * l[row + x];
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![needs[0].then_some(dl), needs[1].then_some(dr)]
    }
}

/// Differentiable group-wise correlation of quarter-resolution features.
/// Returns `[N, G, D, H, W]` with `D = d_max / 4`.
pub fn build_gwc_volume<'t, T: Real>(
    left: Var<'t, T>,
    right: Var<'t, T>,
    d_max: usize,
    groups: usize,
) -> Result<Var<'t, T>> {
    let levels = check_inputs(&left.shape(), &right.shape(), d_max, groups)?;
    let (l, r) = (left.value(), right.value());
    let out = gwc_forward(&l, &r, groups, levels);
    Ok(left.tape().record(
        out,
        &[left, right],
        GwcRule {
            left: l,
            right: r,
            groups,
            levels,
        },
    ))
}

/// `[N, G, D, H, W] -> [N, G·D, H, W]`; channel `g·D + d` holds slice `(g, d)`.
pub fn channel2disp<'t, T: Real>(volume: Var<'t, T>) -> Var<'t, T> {
    let s = volume.shape();
    assert_eq!(s.len(), 5, "channel2disp expects [N,G,D,H,W]");
    volume.reshape(&[s[0], s[1] * s[2], s[3], s[4]])
}

/// Inverse of [`channel2disp`].
pub fn disp2channel<'t, T: Real>(volume: Var<'t, T>, groups: usize) -> Var<'t, T> {
    let s = volume.shape();
    assert_eq!(s.len(), 4, "disp2channel expects [N,G·D,H,W]");
    assert_eq!(s[1] % groups, 0, "channels not divisible by groups");
    volume.reshape(&[s[0], groups, s[1] / groups, s[2], s[3]])
}

/// Group-wise correlation volume for one sample, `G x D x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume4D<T> {
    data: Tensor<T>,
}

/// Channel2Disp image of a [`CostVolume4D`], `(G·D) x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume3D<T> {
    data: Tensor<T>,
    groups: usize,
}

impl<T: Real> CostVolume4D<T> {
    /// Correlates `C x H x W` feature maps.
    pub fn correlate(left: &Tensor<T>, right: &Tensor<T>, d_max: usize, groups: usize) -> Result<Self> {
        let expand = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(&s)
        };
        let (l, r) = (expand(left)?, expand(right)?);
        let levels = check_inputs(l.shape(), r.shape(), d_max, groups)?;
        let out = gwc_forward(&l, &r, groups, levels);
        let s = out.shape()[1..].to_vec();
        Ok(CostVolume4D {
            data: out.reshape(&s)?,
        })
    }

    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::Shape(format!("4D volume must be [G,D,H,W], got {:?}", data.shape())));
        }
        Ok(CostVolume4D { data })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn groups(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn disparities(&self) -> usize {
        self.data.shape()[1]
    }

    /// Writes every `(g, d)` slice as `g{g}_d{d}.pfm` under `dir` for inspection.
    pub fn dump_pfm(&self, dir: impl AsRef<std::path::Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let s = self.data.shape();
        let (h, w) = (s[2], s[3]);
        let mut paths = Vec::with_capacity(s[0] * s[1]);
        for (i, slice) in self.data.data().chunks(h * w).enumerate() {
            let values = slice.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
            let path = dir.join(format!("g{}_d{}.pfm", i / s[1], i % s[1]));
            crate::data::write_pfm(&path, &crate::data::DisparityMap::from_vec(h, w, values)?)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn channel2disp(self) -> CostVolume3D<T> {
        let s = self.data.shape().to_vec();
        CostVolume3D {
            groups: s[0],
            data: self.data.reshape(&[s[0] * s[1], s[2], s[3]]).expect("same element count"),
        }
    }
}

impl<T: Real> CostVolume3D<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn disparities(&self) -> usize {
        self.data.shape()[0] / self.groups
    }

    /// Channel holding slice `(g, d)`.
    pub fn channel_of(&self, g: usize, d: usize) -> usize {
        g * self.disparities() + d
    }

    pub fn disp2channel(self) -> CostVolume4D<T> {
        let s = self.data.shape().to_vec();
        let d = s[0] / self.groups;
        CostVolume4D {
            data: self.data.reshape(&[self.groups, d, s[1], s[2]]).expect("same element count"),
        }
    }
}

//! Coupled 3D-convolution hourglass used as the comparison baseline.

use rand::Rng;

use super::{AggConfig, AggOutput};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Activation, Binder, ChannelAffine, Conv3d, LayerDesc, ParamStore, HEAD_INIT_SCALE};
use crate::tensor::Real;

#[derive(Clone, Debug)]
struct Unit {
    conv: Conv3d,
    affine: ChannelAffine,
}

impl Unit {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Unit {
            conv: Conv3d::new(store, &format!("{name}.conv"), in_ch, out_ch, 3, stride, false, rng),
            affine: ChannelAffine::new(store, &format!("{name}.norm"), out_ch),
        }
    }

    fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        Activation::LeakyRelu.apply(self.affine.forward(p, self.conv.forward(p, x)))
    }
}

#[derive(Clone, Debug)]
struct Stage {
    entry: Unit,
    blocks: Vec<Unit>,
}

#[derive(Clone, Debug)]
struct UpStage {
    project: Conv3d,
    blocks: Vec<Unit>,
}

/// 3x3x3 hourglass over `[N, G, D, H, W]`; stride-2 steps halve D, H and W together.
#[derive(Clone, Debug)]
pub struct Baseline3d {
    base_width: usize,
    widths: Vec<usize>,
    enc: Vec<Stage>,
    ups: Vec<UpStage>,
    exit: Conv3d,
    init_head: Conv3d,
}

fn stage_widths(base: usize, stages: usize) -> Vec<usize> {
    (0..=stages).map(|k| base + k * base / 2).collect()
}

impl Baseline3d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &AggConfig,
        base_width: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if base_width < 2 {
            return Err(Error::Config(format!("3D baseline width {base_width} must be at least 2")));
        }
        let widths = stage_widths(base_width, cfg.num_stages);
        let nb = cfg.blocks_per_stage;
        let units = |store: &mut ParamStore<T>, rng: &mut R, name: &str, ch: usize| -> Vec<Unit> {
            (0..nb)
                .map(|i| Unit::new(store, &format!("{name}.block{i}"), ch, ch, 1, rng))
                .collect()
        };
        let mut enc = Vec::with_capacity(cfg.num_stages + 1);
        enc.push(Stage {
            entry: Unit::new(store, "agg.enc0.entry", cfg.groups(), widths[0], 1, rng),
            blocks: units(store, rng, "agg.enc0", widths[0]),
        });
        for k in 1..=cfg.num_stages {
            let name = format!("agg.enc{k}");
            enc.push(Stage {
                entry: Unit::new(store, &format!("{name}.down"), widths[k - 1], widths[k], 2, rng),
                blocks: units(store, rng, &name, widths[k]),
            });
        }
        let mut ups = Vec::with_capacity(cfg.num_stages);
        for k in (1..=cfg.num_stages).rev() {
            let name = format!("agg.dec{}", k - 1);
            ups.push(UpStage {
                project: Conv3d::new(store, &format!("{name}.project"), widths[k], widths[k - 1], 1, 1, true, rng),
                blocks: units(store, rng, &name, widths[k - 1]),
            });
        }
        Ok(Baseline3d {
            base_width,
            exit: Conv3d::new(store, "agg.exit", widths[0], 1, 3, 1, true, rng).scaled(store, HEAD_INIT_SCALE),
            init_head: Conv3d::new(store, "agg.init_head", widths[cfg.num_stages], 1, 1, 1, true, rng)
                .scaled(store, HEAD_INIT_SCALE),
            widths,
            enc,
            ups,
        })
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Parameter count for `base_width` without building the network.
    pub fn param_count(cfg: &AggConfig, base_width: usize) -> usize {
        let w = stage_widths(base_width, cfg.num_stages);
        let nb = cfg.blocks_per_stage;
        let unit = |i: usize, o: usize| 27 * i * o + 2 * o;
        let mut total = unit(cfg.groups(), w[0]) + nb * unit(w[0], w[0]);
        for k in 1..=cfg.num_stages {
            total += unit(w[k - 1], w[k]) + nb * unit(w[k], w[k]);
            total += w[k] * w[k - 1] + w[k - 1] + nb * unit(w[k - 1], w[k - 1]);
        }
        total + 27 * w[0] + 1 + w[cfg.num_stages] + 1
    }

    /// Base width whose parameter count is closest to `target`.
    /// Fails if even the best width is more than 10% away.
    pub fn match_width(cfg: &AggConfig, target: usize) -> Result<usize> {
        let rel = |c: usize| (Self::param_count(cfg, c) as f64 - target as f64).abs() / target.max(1) as f64;
        let mut best = 2;
        let mut c = 2;
        while c <= 4096 {
            if rel(c) < rel(best) {
                best = c;
            }
            if Self::param_count(cfg, c) > target {
                break;
            }
            c += 1;
        }
        if rel(best) > 0.10 {
            return Err(Error::Config(format!(
                "no 3D baseline width lands within 10% of {target} parameters (best {best}: {})",
                Self::param_count(cfg, best)
            )));
        }
        Ok(best)
    }

    /// `volume` is the 4D correlation volume `[N, G, D, H, W]`.
    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, volume: Var<'t, T>) -> Result<AggOutput<'t, T>> {
        let s = volume.shape();
        if s.len() != 5 {
            return Err(Error::Shape(format!("3D baseline expects [N,G,D,H,W], got {s:?}")));
        }
        let (n, dims) = (s[0], [s[2], s[3], s[4]]);
        let mut x = volume;
        let mut skips = Vec::with_capacity(self.enc.len());
        for (k, stage) in self.enc.iter().enumerate() {
            if k > 0 {
                skips.push(x);
            }
            x = stage.entry.forward(p, x);
            for b in &stage.blocks {
                x = b.forward(p, x);
            }
        }
        let f = 1 << (self.enc.len() - 1);
        let init = self
            .init_head
            .forward(p, x)
            .upsample_nearest(&[f, f, f])
            .crop_spatial(&dims)
            .reshape(&[n, dims[0], dims[1], dims[2]]);
        for stage in &self.ups {
            let skip = skips.pop().expect("one skip per stage");
            let ss = skip.shape();
            x = stage
                .project
                .forward(p, x)
                .upsample_nearest(&[2, 2, 2])
                .crop_spatial(&ss[2..])
                .add(skip);
            for b in &stage.blocks {
                x = b.forward(p, x);
            }
        }
        let scores = self.exit.forward(p, x).reshape(&[n, dims[0], dims[1], dims[2]]);
        Ok(AggOutput {
            scores,
            init_scores: init,
        })
    }

    /// Conv layers for a `d x h x w` volume.
    pub fn describe(&self, d: usize, h: usize, w: usize) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let mut dims = [d, h, w];
        let mut sizes = Vec::new();
        for (k, stage) in self.enc.iter().enumerate() {
            let entry = if k == 0 { "entry" } else { "down" };
            out.push(stage.entry.conv.describe(&format!("agg.enc{k}.{entry}"), dims));
            dims = stage.entry.conv.out_dims(dims);
            sizes.push(dims);
            for (i, b) in stage.blocks.iter().enumerate() {
                out.push(b.conv.describe(&format!("agg.enc{k}.block{i}"), dims));
            }
        }
        out.push(self.init_head.describe("agg.init_head", dims));
        for (j, stage) in self.ups.iter().enumerate() {
            let k = self.enc.len() - 1 - j;
            out.push(stage.project.describe(&format!("agg.dec{}.project", k - 1), sizes[k]));
            for (i, b) in stage.blocks.iter().enumerate() {
                out.push(b.conv.describe(&format!("agg.dec{}.block{i}", k - 1), sizes[k - 1]));
            }
        }
        out.push(self.exit.describe("agg.exit", sizes[0]));
        out
    }
}

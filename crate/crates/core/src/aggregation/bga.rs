use rand::Rng;

use super::layers::{BgaBlock, DisparityAggregation, SpatialAggregation};
use super::{AggConfig, AggOutput};
use crate::autograd::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{Binder, Conv2d, LayerDesc, ParamStore, HEAD_INIT_SCALE};
use crate::tensor::Real;

#[derive(Clone, Debug)]
struct DownStage {
    down: SpatialAggregation,
    blocks: Vec<BgaBlock>,
}

#[derive(Clone, Debug)]
struct UpStage {
    /// 1x1 channel match from the deeper width to the skip width.
    project: Conv2d,
    blocks: Vec<BgaBlock>,
}

/// Encoder-decoder of decoupled spatial and disparity aggregation blocks over a
/// `[N, G·D, H, W]` volume.
///
/// After the dense entry projection, channel bundle
/// `[k·C/D, (k+1)·C/D)` of every stage belongs to disparity level `k`.
#[derive(Clone, Debug)]
pub struct Bga {
    cfg: AggConfig,
    levels: usize,
    widths: Vec<usize>,
    entry: Conv2d,
    enc0: Vec<BgaBlock>,
    downs: Vec<DownStage>,
    ups: Vec<UpStage>,
    exit: Conv2d,
    init_head: Conv2d,
}

fn pointwise<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    rng: &mut R,
) -> Conv2d {
    Conv2d::new(store, name, in_ch, out_ch, 1, Conv2dSpec::same(1), true, rng)
}

fn blocks<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    count: usize,
    ch: usize,
    levels: usize,
    dense: bool,
    rng: &mut R,
) -> Result<Vec<BgaBlock>> {
    (0..count)
        .map(|i| BgaBlock::new(store, &format!("{name}.block{i}"), ch, levels, dense, rng))
        .collect()
}

impl Bga {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &AggConfig,
        levels: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if levels == 0 {
            return Err(Error::Config("aggregation needs at least one disparity level".into()));
        }
        let groups = cfg.groups();
        let widths: Vec<usize> = (0..=cfg.num_stages).map(|k| levels * cfg.bundle_width(k)).collect();
        let (nb, dense) = (cfg.blocks_per_stage, cfg.spatial_dense);

        let entry = pointwise(store, "agg.entry", groups * levels, widths[0], rng);
        let enc0 = blocks(store, "agg.enc0", nb, widths[0], levels, dense, rng)?;
        let mut downs = Vec::with_capacity(cfg.num_stages);
        for k in 1..=cfg.num_stages {
            let name = format!("agg.enc{k}");
            downs.push(DownStage {
                down: SpatialAggregation::new(
                    store,
                    &format!("{name}.down"),
                    widths[k - 1],
                    widths[k],
                    levels,
                    2,
                    dense,
                    rng,
                )?,
                blocks: blocks(store, &name, nb, widths[k], levels, dense, rng)?,
            });
        }
        let mut ups = Vec::with_capacity(cfg.num_stages);
        for k in (1..=cfg.num_stages).rev() {
            let name = format!("agg.dec{}", k - 1);
            ups.push(UpStage {
                project: pointwise(store, &format!("{name}.project"), widths[k], widths[k - 1], rng),
                blocks: blocks(store, &name, nb, widths[k - 1], levels, dense, rng)?,
            });
        }
        let exit = pointwise(store, "agg.exit", widths[0], levels, rng).scaled(store, HEAD_INIT_SCALE);
        let init_head = pointwise(store, "agg.init_head", widths[cfg.num_stages], levels, rng).scaled(store, HEAD_INIT_SCALE);
        Ok(Bga {
            cfg: cfg.clone(),
            levels,
            widths,
            entry,
            enc0,
            downs,
            ups,
            exit,
            init_head,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Channel width at each scale, finest first.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_channels(&self) -> usize {
        self.cfg.groups() * self.levels
    }

    /// Every spatial aggregation layer in forward order.
    pub fn spatial_layers(&self) -> Vec<&SpatialAggregation> {
        let mut out: Vec<_> = self.enc0.iter().map(|b| &b.spatial).collect();
        for s in &self.downs {
            out.push(&s.down);
            out.extend(s.blocks.iter().map(|b| &b.spatial));
        }
        for s in &self.ups {
            out.extend(s.blocks.iter().map(|b| &b.spatial));
        }
        out
    }

    /// Every disparity aggregation layer in forward order.
    pub fn disparity_layers(&self) -> Vec<&DisparityAggregation> {
        let all = self
            .enc0
            .iter()
            .chain(self.downs.iter().flat_map(|s| s.blocks.iter()))
            .chain(self.ups.iter().flat_map(|s| s.blocks.iter()));
        all.map(|b| &b.disparity).collect()
    }

    /// `volume` is the Channel2Disp tensor `[N, G·D, H, W]`; `gate` an optional
    /// `[N, 1, H, W]` attention map applied after the entry projection.
    pub fn forward<'t, T: Real>(
        &self,
        p: &Binder<'t, '_, T>,
        volume: Var<'t, T>,
        gate: Option<Var<'t, T>>,
    ) -> Result<AggOutput<'t, T>> {
        let s = volume.shape();
        if s.len() != 4 || s[1] != self.input_channels() {
            return Err(Error::Shape(format!(
                "aggregation expects [N,{},H,W], got {s:?}",
                self.input_channels()
            )));
        }
        let (h, w) = (s[2], s[3]);
        let mut x = self.entry.forward(p, volume);
        if let Some(a) = gate {
            x = super::apply_spatial_attention(x, a);
        }
        for b in &self.enc0 {
            x = b.forward(p, x);
        }
        let mut skips = Vec::with_capacity(self.downs.len());
        for stage in &self.downs {
            skips.push(x);
            x = stage.down.forward(p, x);
            for b in &stage.blocks {
                x = b.forward(p, x);
            }
        }
        let factor = 1 << self.downs.len();
        let init_scores = self
            .init_head
            .forward(p, x)
            .upsample_nearest(&[factor, factor])
            .crop_spatial(&[h, w]);
        for stage in &self.ups {
            let skip = skips.pop().expect("one skip per stage");
            let ss = skip.shape();
            let up = stage
                .project
                .forward(p, x)
                .upsample_nearest(&[2, 2])
                .crop_spatial(&ss[2..]);
            x = up.add(skip);
            for b in &stage.blocks {
                x = b.forward(p, x);
            }
        }
        Ok(AggOutput {
            scores: self.exit.forward(p, x),
            init_scores,
        })
    }

    /// Conv layers for one `h x w` volume.
    pub fn describe(&self, h: usize, w: usize) -> Vec<LayerDesc> {
        let mut out = vec![self.entry.describe("agg.entry", (h, w))];
        let mut hw = (h, w);
        for (i, b) in self.enc0.iter().enumerate() {
            b.describe(&format!("agg.enc0.block{i}"), hw, &mut out);
        }
        let mut sizes = vec![hw];
        for (k, stage) in self.downs.iter().enumerate() {
            out.push(stage.down.describe(&format!("agg.enc{}.down", k + 1), hw));
            hw = stage.down.out_hw(hw);
            sizes.push(hw);
            for (i, b) in stage.blocks.iter().enumerate() {
                b.describe(&format!("agg.enc{}.block{i}", k + 1), hw, &mut out);
            }
        }
        out.push(self.init_head.describe("agg.init_head", hw));
        for (j, stage) in self.ups.iter().enumerate() {
            let k = self.downs.len() - j;
            out.push(stage.project.describe(&format!("agg.dec{}.project", k - 1), sizes[k]));
            for (i, b) in stage.blocks.iter().enumerate() {
                b.describe(&format!("agg.dec{}.block{i}", k - 1), sizes[k - 1], &mut out);
            }
        }
        out.push(self.exit.describe("agg.exit", (h, w)));
        out
    }
}

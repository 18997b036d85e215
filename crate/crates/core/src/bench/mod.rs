//! FLOP counting, latency measurement and the 2D-vs-3D aggregation comparison.

mod flops;
mod latency;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use flops::{count_flops, layer_flops};
pub use latency::{hardware_descriptor, measure_latency, BenchLock, LatencyStats, CLOCK_SOURCE, MIN_ITERS, MIN_WARMUP};

use crate::aggregation::Paradigm;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::features::Variant;
use crate::model::{ModelConfig, StereoModel};
use crate::nn::Binder;
use crate::tensor::Tensor;

/// Image shapes `(height, width)` of the default sweep.
pub const DEFAULT_SHAPES: [(usize, usize); 2] = [(64, 96), (96, 128)];
pub const DEFAULT_D_MAX: usize = 32;
/// Largest tolerated relative difference between paired parameter budgets.
pub const PARAM_TOLERANCE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// The aggregation network on a correlation volume.
    Aggregation,
    /// Both images through the whole network.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub aggregator: Paradigm,
    pub variant: Variant,
    pub scope: Scope,
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub params: usize,
    pub flops: u64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub warmup: usize,
    pub iters: usize,
    pub hardware: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub variant: Variant,
    pub scope: Scope,
    pub height: usize,
    pub width: usize,
    /// 3D parameters over BGA parameters.
    pub param_ratio: f64,
    pub flops_ratio: f64,
    pub latency_ratio: f64,
    /// BGA FLOPs < 3D FLOPs.
    pub flops_pass: bool,
    /// BGA median latency < 3D median latency.
    pub latency_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Row(BenchRow),
    Pair(PairVerdict),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    pub pairs: Vec<PairVerdict>,
}

impl BenchmarkReport {
    pub fn all_pass(&self) -> bool {
        self.pairs.iter().all(|p| p.flops_pass && p.latency_pass)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let records = self
            .rows
            .iter()
            .cloned()
            .map(Record::Row)
            .chain(self.pairs.iter().cloned().map(Record::Pair));
        for r in records {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut report = BenchmarkReport::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                Record::Row(r) => report.rows.push(r),
                Record::Pair(p) => report.pairs.push(p),
            }
        }
        Ok(report)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:<5} {:<12} {:>9} {:>10} {:>10} {:>10} {:>10}\n",
            "agg", "var", "scope", "shape", "params", "MFLOPs", "med(ms)", "p95(ms)"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:<5} {:<12} {:>9} {:>10} {:>10.1} {:>10.3} {:>10.3}\n",
                r.aggregator.to_string(),
                r.variant.name(),
                format!("{:?}", r.scope).to_lowercase(),
                format!("{}x{}", r.height, r.width),
                r.params,
                r.flops as f64 / 1e6,
                r.median_ms,
                r.p95_ms
            ));
        }
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&format!(
                "{:<5} {:<12} {:>9}  params 3D/BGA {:.3}  FLOPs 3D/BGA {:.2} [{}]  latency 3D/BGA {:.2} [{}]\n",
                p.variant.name(),
                format!("{:?}", p.scope).to_lowercase(),
                format!("{}x{}", p.height, p.width),
                p.param_ratio,
                p.flops_ratio,
                if p.flops_pass { "pass" } else { "FAIL" },
                p.latency_ratio,
                if p.latency_pass { "pass" } else { "FAIL" },
            ));
        }
        if let Some(r) = self.rows.first() {
            out.push_str(&format!("hardware: {}\n", r.hardware));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub d_max: usize,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
    pub scopes: Vec<Scope>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            d_max: DEFAULT_D_MAX,
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            seed: 0,
            scopes: vec![Scope::Aggregation, Scope::Full],
        }
    }
}

/// Parameters, FLOPs and latency of one model at one shape and scope.
pub fn bench_model(
    model: &StereoModel<f32>,
    scope: Scope,
    (h, w): (usize, usize),
    opts: &BenchOptions,
) -> Result<BenchRow> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (params, flops, stats) = match scope {
        Scope::Aggregation => {
            let layers = model.describe_aggregation(h, w)?;
            let shape = [1, cfg.groups(), cfg.levels()?, h / 4, w / 4];
            let volume = Tensor::<f32>::randn(&shape, 1.0, &mut rng);
            let run = || -> Result<()> {
                let tape = Tape::new();
                let p = Binder::new(&tape, &model.params, false);
                model.aggregator().forward(&p, tape.constant(volume.clone()), None)?;
                Ok(())
            };
            let stats = measure_latency(run, opts.warmup, opts.iters)?;
            (model.aggregation_params(), count_flops(&layers)?, stats)
        }
        Scope::Full => {
            let layers = model.describe(h, w)?;
            let left = Tensor::<f32>::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
            let right = Tensor::<f32>::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
            let run = || model.predict(&left, &right).map(|_| ());
            let stats = measure_latency(run, opts.warmup, opts.iters)?;
            (model.num_params(), count_flops(&layers)?, stats)
        }
    };
    Ok(BenchRow {
        aggregator: cfg.agg.paradigm,
        variant: cfg.agg.variant,
        scope,
        height: h,
        width: w,
        d_max: cfg.d_max,
        params,
        flops,
        median_ms: stats.median_ms,
        p95_ms: stats.p95_ms,
        mean_ms: stats.mean_ms,
        warmup: stats.warmup,
        iters: stats.iters,
        hardware: hardware_descriptor(),
    })
}

/// Benchmarks each variant's BGA model against its parameter-matched 3D
/// baseline on every shape and scope.
pub fn compare_paradigms(variants: &[Variant], shapes: &[(usize, usize)], opts: &BenchOptions) -> Result<BenchmarkReport> {
    let mut report = BenchmarkReport::default();
    for &variant in variants {
        let bga = StereoModel::<f32>::new(&ModelConfig::new(variant, Paradigm::Bga, opts.d_max), opts.seed)?;
        let c3d = StereoModel::<f32>::new(&ModelConfig::new(variant, Paradigm::Conv3d, opts.d_max), opts.seed)?;
        let ratio = c3d.aggregation_params() as f64 / bga.aggregation_params() as f64;
        if (ratio - 1.0).abs() > PARAM_TOLERANCE {
            return Err(Error::Config(format!(
                "variant {variant}: 3D baseline has {} aggregation parameters vs {} for BGA; budgets must match within 10%",
                c3d.aggregation_params(),
                bga.aggregation_params()
            )));
        }
        for &shape in shapes {
            for &scope in &opts.scopes {
                let a = bench_model(&bga, scope, shape, opts)?;
                let b = bench_model(&c3d, scope, shape, opts)?;
                report.pairs.push(PairVerdict {
                    variant,
                    scope,
                    height: shape.0,
                    width: shape.1,
                    param_ratio: b.params as f64 / a.params as f64,
                    flops_ratio: b.flops as f64 / a.flops as f64,
                    latency_ratio: b.median_ms / a.median_ms,
                    flops_pass: a.flops < b.flops,
                    latency_pass: a.median_ms < b.median_ms,
                });
                report.rows.push(a);
                report.rows.push(b);
            }
        }
    }
    Ok(report)
}

/// Parses `64x96,96x128` into shapes.
pub fn parse_shapes(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (h, w) = s
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Config(format!("shape {s:?} is not HxW")))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("shape {s:?} is not HxW")))
            };
            Ok((parse(h)?, parse(w)?))
        })
        .collect()
}

//! Supervised training: smooth L1 on both heads, Adam with a one-cycle
//! schedule, JSONL metric log and periodic checkpoints.

mod checkpoint;
mod loss;
mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_name, encode_checkpoint, load_model, read_checkpoint, resolve_checkpoint, save_checkpoint,
    write_atomic, Checkpoint, LATEST_FILE,
};
pub use loss::{smooth_l1, total_loss, BETA, LAMBDA_FINAL, LAMBDA_INIT};
pub use optim::{Adam, OneCycle};

use crate::autograd::Tape;
use crate::data::{images_to_tensor, maps_to_tensor, masks_to_tensor, tensor_to_map, StereoSample, ValidMask};
use crate::error::{Error, Result};
use crate::features::check_stride;
use crate::metrics::{EvalReport, ImageMetrics};
use crate::model::StereoModel;
use crate::nn::Binder;
use crate::tensor::{Real, Tensor};

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub lambda_init: f64,
    pub lambda_final: f64,
    pub crop_height: usize,
    pub crop_width: usize,
    pub seed: u64,
    /// Omits wall-clock times from the log so repeated runs are byte-identical.
    pub deterministic: bool,
    pub log_every: usize,
    pub eval_every: usize,
    /// 0 disables periodic checkpoints; the final step is always saved when an
    /// output directory is given.
    pub ckpt_every: usize,
    /// Trailing samples of a dataset held out for validation.
    pub val_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 4,
            lr: 4e-4,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            lambda_init: LAMBDA_INIT,
            lambda_final: LAMBDA_FINAL,
            crop_height: 96,
            crop_width: 128,
            seed: 0,
            deterministic: false,
            log_every: 10,
            eval_every: 250,
            ckpt_every: 500,
            val_count: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.pct_start) {
            return Err(Error::Config("train.lr must be positive and train.pct_start in [0,1)".into()));
        }
        if self.lambda_init < 0.0 || self.lambda_final < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        check_stride(self.crop_height, self.crop_width)
    }

    pub fn schedule(&self) -> OneCycle {
        OneCycle {
            max_lr: self.lr,
            total_steps: self.steps,
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub epe: f64,
    pub d1: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<MetricRecord>,
    pub final_eval: Option<EvalReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Pixels with valid ground truth inside the search range.
pub fn supervision_mask(sample: &StereoSample, d_max: usize) -> ValidMask {
    let mut mask = sample.valid_mask.clone();
    for (m, &d) in mask.data.iter_mut().zip(&sample.disparity_gt.data) {
        *m = *m && d.is_finite() && d >= 0.0 && (d as f64) < d_max as f64;
    }
    mask
}

struct Batch<T> {
    left: Tensor<T>,
    right: Tensor<T>,
    gt: Tensor<T>,
    mask: Tensor<T>,
    masks: Vec<ValidMask>,
    samples: Vec<StereoSample>,
}

fn make_batch<T: Real>(samples: Vec<StereoSample>, d_max: usize) -> Result<Batch<T>> {
    let masks: Vec<ValidMask> = samples.iter().map(|s| supervision_mask(s, d_max)).collect();
    Ok(Batch {
        left: images_to_tensor(&samples.iter().map(|s| &s.left).collect::<Vec<_>>())?,
        right: images_to_tensor(&samples.iter().map(|s| &s.right).collect::<Vec<_>>())?,
        gt: maps_to_tensor(&samples.iter().map(|s| &s.disparity_gt).collect::<Vec<_>>())?,
        mask: masks_to_tensor(&masks.iter().collect::<Vec<_>>())?,
        masks,
        samples,
    })
}

fn batch_metrics<T: Real>(pred: &Tensor<T>, batch: &Batch<T>) -> Result<Vec<ImageMetrics>> {
    batch
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| ImageMetrics::compute(i, &tensor_to_map(pred, i), &s.disparity_gt, &batch.masks[i], false))
        .collect()
}

/// Loss and metrics of the learned head over `samples`, one image at a time.
pub fn evaluate<T: Real>(model: &StereoModel<T>, samples: &[StereoSample], cfg: &TrainConfig) -> Result<(f64, EvalReport)> {
    let mut per_image = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let batch = make_batch::<T>(vec![s.clone()], model.config().d_max)?;
        let tape = Tape::new();
        let p = Binder::new(&tape, &model.params, false);
        let out = model.forward(&p, tape.constant(batch.left.clone()), tape.constant(batch.right.clone()))?;
        let loss = total_loss(out.d_init, out.d_final, &batch.gt, &batch.mask, cfg.lambda_init, cfg.lambda_final)?;
        loss_sum += loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
        let mut m = batch_metrics(&out.d_final.value(), &batch)?.remove(0);
        m.index = i;
        per_image.push(m);
    }
    Ok((loss_sum / samples.len().max(1) as f64, EvalReport::from_images(per_image)))
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Trains `model` in place. With `out_dir`, appends to `metrics.jsonl` and
/// writes checkpoints there.
pub fn train<T: Real>(
    model: &mut StereoModel<T>,
    train_set: &[StereoSample],
    val_set: &[StereoSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let d_max = model.config().d_max;
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };
    let mut report = TrainReport {
        log: Vec::new(),
        final_eval: None,
        checkpoints: Vec::new(),
    };
    let start = Instant::now();
    let mut emit = |rec: MetricRecord, report: &mut TrainReport| -> Result<()> {
        log::info!(
            "step {} [{}] loss {:.4} epe {:.4} d1 {:.2}",
            rec.step,
            rec.split,
            rec.loss,
            rec.epe,
            rec.d1
        );
        if let Some((f, path)) = log_file.as_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        report.log.push(rec);
        Ok(())
    };
    let wall = |start: &Instant| (!cfg.deterministic).then(|| start.elapsed().as_secs_f64() * 1e3);

    for step in 1..=cfg.steps {
        let samples: Vec<StereoSample> = (0..cfg.batch_size)
            .map(|_| {
                let s = &train_set[rng.gen_range(0..train_set.len())];
                s.random_crop(cfg.crop_height, cfg.crop_width, &mut rng)
            })
            .collect();
        let batch = make_batch::<T>(samples, d_max)?;
        let tape = Tape::new();
        let p = Binder::new(&tape, &model.params, true);
        let out = model.forward(&p, tape.constant(batch.left.clone()), tape.constant(batch.right.clone()))?;
        let loss = total_loss(out.d_init, out.d_final, &batch.gt, &batch.mask, cfg.lambda_init, cfg.lambda_final)?;
        let loss_value = loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = tape.backward(loss);
        let grads = p.collect(&grads);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        adam.step(&mut model.params, &grads, schedule.lr(step - 1));

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps) {
            let metrics = EvalReport::from_images(batch_metrics(&out.d_final.value(), &batch)?);
            let rec = MetricRecord {
                step,
                split: "train".into(),
                loss: loss_value,
                epe: finite_or_nan(metrics.epe),
                d1: finite_or_nan(metrics.d1_1px),
                wall_ms: wall(&start),
            };
            emit(rec, &mut report)?;
        }
        let last = step == cfg.steps;
        if !val_set.is_empty() && ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || last) {
            let (loss, metrics) = evaluate(model, val_set, cfg)?;
            let rec = MetricRecord {
                step,
                split: "val".into(),
                loss,
                epe: metrics.epe,
                d1: metrics.d1_1px,
                wall_ms: wall(&start),
            };
            emit(rec, &mut report)?;
            if last {
                report.final_eval = Some(metrics);
            }
        }
        if let Some(dir) = out_dir {
            if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0) || last {
                report.checkpoints.push(save_checkpoint(dir, model, step)?);
            }
        }
    }
    Ok(report)
}

//! Disparity error metrics and probability-volume diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::{DisparityMap, ValidMask};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reported in place of an infinite peak ratio (second-largest probability 0).
pub const PEAK_RATIO_CAP: f64 = 1e6;
/// Largest tolerated deviation of a probability column sum from 1.
pub const NORMALIZATION_TOL: f64 = 1e-4;

fn check(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidMask) -> Result<()> {
    let dims = (pred.height, pred.width);
    if dims != (gt.height, gt.width) || dims != (mask.height, mask.width) {
        return Err(Error::Shape(format!(
            "metric inputs differ: pred {}x{}, gt {}x{}, mask {}x{}",
            pred.height, pred.width, gt.height, gt.width, mask.height, mask.width
        )));
    }
    Ok(())
}

fn abs_errors<'a>(
    pred: &'a DisparityMap,
    gt: &'a DisparityMap,
    mask: &'a ValidMask,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.data
        .iter()
        .zip(&gt.data)
        .zip(&mask.data)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| ((p as f64 - g as f64).abs(), g as f64))
}

/// Mean absolute error over valid pixels; `None` when no pixel is valid.
pub fn epe(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidMask) -> Result<Option<f64>> {
    check(pred, gt, mask)?;
    let (sum, n) = abs_errors(pred, gt, mask).fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    Ok((n > 0).then(|| sum / n as f64))
}

/// Percentage of valid pixels whose absolute error is strictly greater than
/// `threshold`; `None` when no pixel is valid.
pub fn outlier_rate(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidMask, threshold: f64) -> Result<Option<f64>> {
    if threshold <= 0.0 || threshold.is_nan() {
        return Err(Error::Config(format!("outlier threshold must be positive, got {threshold}")));
    }
    check(pred, gt, mask)?;
    let (bad, n) = abs_errors(pred, gt, mask).fold((0usize, 0usize), |(b, n), (e, _)| (b + (e > threshold) as usize, n + 1));
    Ok((n > 0).then(|| 100.0 * bad as f64 / n as f64))
}

/// Official KITTI rule: an outlier exceeds 3 px and 5% of the true disparity.
pub fn kitti_compound_rate(pred: &DisparityMap, gt: &DisparityMap, mask: &ValidMask) -> Result<Option<f64>> {
    check(pred, gt, mask)?;
    let (bad, n) = abs_errors(pred, gt, mask).fold((0usize, 0usize), |(b, n), (e, g)| {
        (b + (e > 3.0 && e > 0.05 * g.abs()) as usize, n + 1)
    });
    Ok((n > 0).then(|| 100.0 * bad as f64 / n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    pub epe: Option<f64>,
    pub d1_1px: Option<f64>,
    pub d1_3px: Option<f64>,
    pub valid_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kitti_d1: Option<f64>,
}

impl ImageMetrics {
    pub fn compute(
        index: usize,
        pred: &DisparityMap,
        gt: &DisparityMap,
        mask: &ValidMask,
        kitti_compound: bool,
    ) -> Result<Self> {
        Ok(ImageMetrics {
            index,
            epe: epe(pred, gt, mask)?,
            d1_1px: outlier_rate(pred, gt, mask, 1.0)?,
            d1_3px: outlier_rate(pred, gt, mask, 3.0)?,
            valid_count: mask.count(),
            kitti_d1: if kitti_compound {
                kitti_compound_rate(pred, gt, mask)?
            } else {
                None
            },
        })
    }
}

/// Aggregates are means over images; images without valid pixels are excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epe: f64,
    pub d1_1px: f64,
    pub d1_3px: f64,
    pub valid_count: usize,
    /// Images that contributed to the aggregates.
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kitti_d1: Option<f64>,
    pub per_image: Vec<ImageMetrics>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (f64, usize) {
    let (s, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n > 0 { s / n as f64 } else { f64::NAN }, n)
}

impl EvalReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let (epe, evaluated) = mean_defined(per_image.iter().map(|m| m.epe));
        let (d1_1px, _) = mean_defined(per_image.iter().map(|m| m.d1_1px));
        let (d1_3px, _) = mean_defined(per_image.iter().map(|m| m.d1_3px));
        let kitti = per_image.iter().any(|m| m.kitti_d1.is_some());
        let kitti_d1 = kitti.then(|| mean_defined(per_image.iter().map(|m| m.kitti_d1)).0);
        EvalReport {
            epe,
            d1_1px,
            d1_3px,
            valid_count: per_image.iter().map(|m| m.valid_count).sum(),
            evaluated,
            kitti_d1,
            per_image,
        }
    }

    /// One JSON object per image followed by a summary line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for m in &self.per_image {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "kind": "image", "metrics": m }))?);
            out.push('\n');
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "epe": self.epe,
            "d1_1px": self.d1_1px,
            "d1_3px": self.d1_3px,
            "valid_count": self.valid_count,
            "evaluated": self.evaluated,
            "kitti_d1": self.kitti_d1,
        });
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = format!("{:>6} {:>10} {:>10} {:>10} {:>8}\n", "image", "EPE(px)", ">1px(%)", ">3px(%)", "valid");
        for m in &self.per_image {
            out.push_str(&format!(
                "{:>6} {:>10} {:>10} {:>10} {:>8}\n",
                m.index,
                fmt(m.epe),
                fmt(m.d1_1px),
                fmt(m.d1_3px),
                m.valid_count
            ));
        }
        out.push_str(&format!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>8}\n",
            "mean", self.epe, self.d1_1px, self.d1_3px, self.valid_count
        ));
        if let Some(k) = self.kitti_d1 {
            out.push_str(&format!("KITTI D1 (>3px and >5%): {k:.4}%\n"));
        }
        out
    }
}

/// Per-pixel entropy (nats) and top-1 / top-2 probability ratio of a
/// `[D, H, W]` probability volume. Ratios are capped at [`PEAK_RATIO_CAP`].
pub fn distribution_diagnostics<T: Real>(prob: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = prob.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(Error::Shape(format!("probability volume must be [D,H,W], got {s:?}")));
    }
    let (d, plane) = (s[0], s[1] * s[2]);
    let p = prob.data();
    let mut entropy = Vec::with_capacity(plane);
    let mut ratio = Vec::with_capacity(plane);
    for i in 0..plane {
        let col = (0..d).map(|k| p[k * plane + i].to_f64().unwrap_or(f64::NAN));
        let (mut sum, mut h, mut top, mut second) = (0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in col {
            if !(0.0..=1.0 + NORMALIZATION_TOL).contains(&v) {
                return Err(Error::Shape(format!("pixel {i}: probability {v} outside [0,1]")));
            }
            sum += v;
            if v > 0.0 {
                h -= v * v.ln();
            }
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Shape(format!("pixel {i}: probabilities sum to {sum}, not 1")));
        }
        entropy.push(h);
        ratio.push(if second > 0.0 { (top / second).min(PEAK_RATIO_CAP) } else { PEAK_RATIO_CAP });
    }
    Ok((entropy, ratio))
}

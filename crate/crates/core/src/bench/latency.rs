use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_WARMUP: usize = 10;
pub const MIN_ITERS: usize = 30;
pub const CLOCK_SOURCE: &str = "std::time::Instant (monotonic)";

static BENCH_LOCK: AtomicBool = AtomicBool::new(false);

/// Held for the duration of a measurement; only one may exist per process.
#[derive(Debug)]
pub struct BenchLock(());

impl BenchLock {
    pub fn acquire() -> Result<Self> {
        BENCH_LOCK
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| BenchLock(()))
            .map_err(|_| Error::BenchLockHeld)
    }
}

impl Drop for BenchLock {
    fn drop(&mut self) {
        BENCH_LOCK.store(false, Ordering::Release);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub warmup: usize,
    pub iters: usize,
    pub samples_ms: Vec<f64>,
    pub clock: String,
}

/// Nearest-rank percentile of an ascending series.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl LatencyStats {
    pub fn from_samples(samples_ms: Vec<f64>, warmup: usize) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        LatencyStats {
            median_ms: median(&sorted),
            p95_ms: percentile(&sorted, 95.0),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            warmup,
            iters: samples_ms.len(),
            samples_ms,
            clock: CLOCK_SOURCE.into(),
        }
    }
}

fn call<F: FnMut() -> Result<()>>(f: &mut F) -> std::result::Result<(), String> {
    match catch_unwind(AssertUnwindSafe(&mut *f)) {
        Ok(Ok(())) => Ok(()),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "callable panicked".into())),
    }
}

/// Times `iters` calls of `f` after `warmup` untimed calls.
///
/// Kernels here are synchronous, so the end of a call is the synchronization
/// point. A failing call aborts with the samples collected so far.
pub fn measure_latency<F: FnMut() -> Result<()>>(mut f: F, warmup: usize, iters: usize) -> Result<LatencyStats> {
    if warmup < MIN_WARMUP || iters < MIN_ITERS {
        return Err(Error::Config(format!(
            "latency needs warmup >= {MIN_WARMUP} and iters >= {MIN_ITERS}, got {warmup} and {iters}"
        )));
    }
    let _lock = BenchLock::acquire()?;
    for i in 0..warmup {
        call(&mut f).map_err(|reason| Error::BenchAborted {
            reason: format!("warmup call {i}: {reason}"),
            partial: Vec::new(),
        })?;
    }
    let mut samples = Vec::with_capacity(iters);
    for i in 0..iters {
        let t0 = Instant::now();
        if let Err(reason) = call(&mut f) {
            return Err(Error::BenchAborted {
                reason: format!("iteration {i}: {reason}"),
                partial: samples,
            });
        }
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(samples, warmup))
}

/// CPU model and logical core count, best effort.
pub fn hardware_descriptor() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{model} ({cores} logical cores, single-threaded kernels)")
}

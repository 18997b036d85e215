use std::hint::black_box;
use std::sync::Mutex;
use std::time::Duration;

use bga_core::aggregation::Paradigm;
use bga_core::bench::{
    measure_latency, BenchLock, BenchRow, BenchmarkReport, LatencyStats, PairVerdict, Scope, CLOCK_SOURCE, MIN_ITERS,
    MIN_WARMUP,
};
use bga_core::features::Variant;
use bga_core::Error;

// The measurement lock is process-wide; tests here take turns.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn sleeping_callable_is_timed_accurately() {
    let _g = serial();
    let stats = measure_latency(
        || {
            std::thread::sleep(Duration::from_millis(50));
            Ok(())
        },
        MIN_WARMUP,
        MIN_ITERS,
    )
    .unwrap();
    assert!((45.0..=60.0).contains(&stats.median_ms), "median {}", stats.median_ms);
    assert!(stats.median_ms <= stats.p95_ms);
    assert_eq!(stats.samples_ms.len(), MIN_ITERS);
    assert_eq!((stats.warmup, stats.iters), (MIN_WARMUP, MIN_ITERS));
    assert_eq!(stats.clock, CLOCK_SOURCE);
}

#[test]
fn too_few_iterations_are_rejected() {
    let _g = serial();
    for (w, i) in [(MIN_WARMUP, 0), (MIN_WARMUP, MIN_ITERS - 1), (MIN_WARMUP - 1, MIN_ITERS)] {
        let mut calls = 0;
        let r = measure_latency(
            || {
                calls += 1;
                Ok(())
            },
            w,
            i,
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert_eq!(calls, 0);
    }
}

fn spin() -> bga_core::Result<()> {
    let mut acc = 0u64;
    for i in 0..200_000u64 {
        acc = black_box(acc.wrapping_mul(6364136223846793005).wrapping_add(i));
    }
    black_box(acc);
    Ok(())
}

#[test]
fn same_callable_measures_the_same() {
    let _g = serial();
    let a = measure_latency(spin, MIN_WARMUP, 60).unwrap();
    let b = measure_latency(spin, MIN_WARMUP, 60).unwrap();
    let ratio = a.median_ms / b.median_ms;
    assert!((0.8..=1.25).contains(&ratio), "{} vs {}", a.median_ms, b.median_ms);
}

#[test]
fn failure_keeps_the_partial_series() {
    let _g = serial();
    let mut n = 0;
    let err = measure_latency(
        || {
            n += 1;
            if n > MIN_WARMUP + 5 {
                return Err(Error::Shape("boom".into()));
            }
            Ok(())
        },
        MIN_WARMUP,
        MIN_ITERS,
    )
    .unwrap_err();
    match err {
        Error::BenchAborted { partial, reason } => {
            assert_eq!(partial.len(), 5);
            assert!(reason.contains("boom"));
        }
        other => panic!("{other}"),
    }

    let mut n = 0;
    let err = measure_latency(
        || {
            n += 1;
            assert!(n <= MIN_WARMUP + 2, "kernel exploded");
            Ok(())
        },
        MIN_WARMUP,
        MIN_ITERS,
    )
    .unwrap_err();
    assert!(matches!(err, Error::BenchAborted { ref partial, .. } if partial.len() == 2));
    // The lock is released after an abort.
    drop(BenchLock::acquire().unwrap());
}

#[test]
fn concurrent_measurements_are_refused() {
    let _g = serial();
    let held = BenchLock::acquire().unwrap();
    assert!(matches!(BenchLock::acquire(), Err(Error::BenchLockHeld)));
    assert!(matches!(measure_latency(spin, MIN_WARMUP, MIN_ITERS), Err(Error::BenchLockHeld)));
    drop(held);
    BenchLock::acquire().unwrap();
}

#[test]
fn statistics_of_a_known_series() {
    let s = LatencyStats::from_samples(vec![5.0, 1.0, 3.0, 2.0, 4.0], 10);
    assert_eq!(s.median_ms, 3.0);
    assert_eq!(s.mean_ms, 3.0);
    assert_eq!(s.p95_ms, 5.0);
    assert_eq!(s.samples_ms, vec![5.0, 1.0, 3.0, 2.0, 4.0]);
}

#[test]
fn report_round_trips_through_jsonl() {
    let row = |aggregator, params, flops, median_ms| BenchRow {
        aggregator,
        variant: Variant::S,
        scope: Scope::Aggregation,
        height: 64,
        width: 96,
        d_max: 32,
        params,
        flops,
        median_ms,
        p95_ms: median_ms * 1.5,
        mean_ms: median_ms * 1.1,
        warmup: 10,
        iters: 30,
        hardware: "test cpu".into(),
    };
    let report = BenchmarkReport {
        rows: vec![row(Paradigm::Bga, 1000, 2_000_000, 1.5), row(Paradigm::Conv3d, 1050, 9_000_000, 6.0)],
        pairs: vec![PairVerdict {
            variant: Variant::S,
            scope: Scope::Aggregation,
            height: 64,
            width: 96,
            param_ratio: 1.05,
            flops_ratio: 4.5,
            latency_ratio: 4.0,
            flops_pass: true,
            latency_pass: true,
        }],
    };
    let text = report.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(BenchmarkReport::from_jsonl(&text).unwrap(), report);
    assert!(report.all_pass());
    let table = report.to_table();
    assert!(table.contains("hardware: test cpu"));
    assert!(table.contains("FLOPs 3D/BGA 4.50 [pass]"));
}

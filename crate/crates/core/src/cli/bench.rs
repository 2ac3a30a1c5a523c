//! Micro-benchmarks of base solves and stacked modifier evaluation.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::lgm::{make_lgm, sum_modifiers};
use crate::poly::{plan, DynamicsLimits, Vec3, WaypointConstraint};

pub const SOLVE_SIZES: [usize; 3] = [6, 14, 26];
pub const LGM_COUNTS: [usize; 4] = [1, 8, 64, 512];
pub const WARMUP: usize = 10;
pub const REPETITIONS: usize = 100;

/// Shortest span one timed repetition should cover; cheap operations are
/// repeated inside a repetition until it is reached.
const MIN_SPAN: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    /// Seconds per operation.
    pub mean: f64,
    pub std: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub benchmark: &'static str,
    pub count: usize,
    #[serde(flatten)]
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Mean 6-waypoint solve time over mean 64-modifier time.
    pub solve6_over_lgm64: f64,
    /// Mean 512-modifier time over mean 64-modifier time.
    pub lgm512_over_lgm64: f64,
}

/// Times `op` after `warmup` discarded runs. Each repetition runs `op` as
/// many times as needed to span [`MIN_SPAN`] and records the per-call mean.
pub fn measure(warmup: usize, repetitions: usize, mut op: impl FnMut()) -> Timing {
    for _ in 0..warmup {
        op();
    }
    let start = Instant::now();
    op();
    let once = start.elapsed();
    let batch = if once >= MIN_SPAN {
        1
    } else {
        (MIN_SPAN.as_nanos() / once.as_nanos().max(1)).max(1) as usize
    };

    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for _ in 0..batch {
            op();
        }
        samples.push(start.elapsed().as_secs_f64() / batch as f64);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Timing {
        mean,
        std: var.sqrt(),
        repetitions,
    }
}

/// A zig-zag course of `n` waypoints with some height variation.
pub fn bench_waypoints(n: usize) -> Vec<WaypointConstraint> {
    (0..n)
        .map(|i| {
            let x = 4.0 * i as f64;
            let y = if i % 2 == 0 { 0.0 } else { 3.0 };
            let z = 1.0 + 0.5 * (i % 3) as f64;
            WaypointConstraint::position(Vec3::new(x, y, z))
        })
        .collect()
}

pub fn bench_solve(n: usize, warmup: usize, repetitions: usize) -> Result<Timing> {
    let waypoints = bench_waypoints(n);
    let limits = DynamicsLimits::new(10.0, 20.0)?;
    plan(&waypoints, &limits)?;
    Ok(measure(warmup, repetitions, || {
        black_box(plan(black_box(&waypoints), &limits).unwrap());
    }))
}

/// Creation of `count` modifiers plus one evaluation of their sum
/// (position, velocity and acceleration).
pub fn bench_lgm(count: usize, warmup: usize, repetitions: usize) -> Timing {
    let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
    let inputs: Vec<(Vec3, f64, f64)> = (0..count)
        .map(|_| {
            let a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let t_w = rng.gen_range(1.0..10.0);
            (a, t_w, t_w - rng.gen_range(0.05..1.0))
        })
        .collect();
    let mut modifiers = Vec::with_capacity(count);
    measure(warmup, repetitions, || {
        modifiers.clear();
        for (i, &(a, t_w, t_mod)) in black_box(&inputs).iter().enumerate() {
            modifiers.push(make_lgm(Vec3::zeros(), a, t_w, t_mod, i as u32).unwrap());
        }
        black_box(sum_modifiers(&modifiers, black_box(5.0)));
    })
}

pub fn run_bench(warmup: usize, repetitions: usize) -> Result<BenchReport> {
    let mut rows = Vec::new();
    for n in SOLVE_SIZES {
        rows.push(BenchRow {
            benchmark: "solve",
            count: n,
            timing: bench_solve(n, warmup, repetitions)?,
        });
    }
    for n in LGM_COUNTS {
        rows.push(BenchRow {
            benchmark: "lgm",
            count: n,
            timing: bench_lgm(n, warmup, repetitions),
        });
    }
    let mean = |kind: &str, count: usize| {
        rows.iter()
            .find(|r| r.benchmark == kind && r.count == count)
            .map_or(f64::NAN, |r| r.timing.mean)
    };
    let solve6_over_lgm64 = mean("solve", 6) / mean("lgm", 64);
    let lgm512_over_lgm64 = mean("lgm", 512) / mean("lgm", 64);
    Ok(BenchReport {
        rows,
        solve6_over_lgm64,
        lgm512_over_lgm64,
    })
}

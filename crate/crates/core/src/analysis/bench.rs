use std::time::Instant;

use serde::Serialize;

use super::flops::compare_flops;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::rng;
use crate::tensor::{par, Element};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchOptions {
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
    /// Worker threads for the timed forwards; 1 gives the most stable numbers.
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch: 16,
            reps: 5,
            warmup: 1,
            threads: 1,
            seed: 0,
        }
    }
}

/// Wall-clock time of one eval-mode forward, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchStats {
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub reps: usize,
    pub batch: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub baseline_ms: f64,
    pub pruned_ms: f64,
    pub realistic_speedup: f64,
    pub theoretical_speedup: f64,
    pub baseline: BenchStats,
    pub pruned: BenchStats,
    pub reps: usize,
    pub batch: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn bench_forward<T: Element>(model: &Model<T>, opts: &BenchOptions) -> Result<BenchStats> {
    if opts.reps < 3 {
        return Err(Error::Config(format!("bench needs at least 3 reps, got {}", opts.reps)));
    }
    if opts.batch == 0 || opts.threads == 0 {
        return Err(Error::Config("batch and threads must be positive".into()));
    }
    let mut m = model.clone();
    m.set_mode(Mode::Eval);
    let [c, h, w] = m.input_shape();
    let x = rng::normal_tensor::<T>(&mut rng::seeded(opts.seed), &[opts.batch, c, h, w], 1.0);
    let mut times = par::with_threads(opts.threads, || -> Result<Vec<f64>> {
        for _ in 0..opts.warmup {
            m.predict(&x)?;
        }
        (0..opts.reps)
            .map(|_| {
                let t = Instant::now();
                m.predict(&x)?;
                Ok(t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    })?;
    times.sort_by(f64::total_cmp);
    Ok(BenchStats {
        median_ms: median(&times),
        min_ms: times[0],
        max_ms: times[times.len() - 1],
        reps: opts.reps,
        batch: opts.batch,
        threads: opts.threads,
    })
}

/// Times both models on identical inputs and sets the measured speedup
/// beside the one implied by their MAC counts.
pub fn compare_speed<T: Element>(
    baseline: &Model<T>,
    pruned: &Model<T>,
    opts: &BenchOptions,
) -> Result<SpeedupReport> {
    let flops = compare_flops(baseline, pruned)?;
    let b = bench_forward(baseline, opts)?;
    let p = bench_forward(pruned, opts)?;
    Ok(SpeedupReport {
        baseline_ms: b.median_ms,
        pruned_ms: p.median_ms,
        realistic_speedup: b.median_ms / p.median_ms,
        theoretical_speedup: flops.theoretical_speedup(),
        baseline: b,
        pruned: p,
        reps: opts.reps,
        batch: opts.batch,
    })
}

impl SpeedupReport {
    pub fn to_table(&self) -> String {
        format!(
            "{:<10} {:>11} {:>11} {:>11}\n{:<10} {:>11.3} {:>11.3} {:>11.3}\n{:<10} {:>11.3} {:>11.3} {:>11.3}\n\
             realistic speedup   {:.3}x\ntheoretical speedup {:.3}x\ngap                 {:.3}x\n\
             batch {}, {} reps, median of wall-clock ms per forward\n",
            "model",
            "median_ms",
            "min_ms",
            "max_ms",
            "baseline",
            self.baseline.median_ms,
            self.baseline.min_ms,
            self.baseline.max_ms,
            "pruned",
            self.pruned.median_ms,
            self.pruned.min_ms,
            self.pruned.max_ms,
            self.realistic_speedup,
            self.theoretical_speedup,
            self.theoretical_speedup - self.realistic_speedup,
            self.batch,
            self.reps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_resnet;

    #[test]
    fn rejects_too_few_reps() {
        let m: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 0).unwrap();
        let opts = BenchOptions {
            reps: 2,
            ..BenchOptions::default()
        };
        assert!(matches!(bench_forward(&m, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn stats_are_ordered() {
        let m: Model<f32> = build_resnet(1, &[4, 8, 16], [3, 8, 8], 10, 0).unwrap();
        let s = bench_forward(&m, &BenchOptions::default()).unwrap();
        assert!(s.min_ms <= s.median_ms && s.median_ms <= s.max_ms && s.min_ms > 0.0);
        assert_eq!(median(&[1.0, 2.0, 10.0, 11.0]), 6.0);
    }
}

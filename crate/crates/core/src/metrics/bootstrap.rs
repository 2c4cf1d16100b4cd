use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Percentile bootstrap interval around a point estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check(n: usize, level: f64, resamples: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!("bootstrap needs at least 2 sentences, got {n}")));
    }
    if resamples < 100 {
        return Err(Error::Invalid(format!("bootstrap needs at least 100 resamples, got {resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

fn interval(point: f64, mut draws: Vec<f64>, level: f64) -> Result<ConfidenceInterval> {
    if !point.is_finite() || draws.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("bootstrap statistic".into()));
    }
    draws.sort_by(f64::total_cmp);
    let r = draws.len();
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * r as f64).floor() as usize).min(r - 1);
    let hi = (((1.0 - alpha) * r as f64).ceil() as usize).clamp(1, r) - 1;
    Ok(ConfidenceInterval {
        point,
        lower: draws[lo].min(point),
        upper: draws[hi].max(point),
        level,
        resamples: r,
    })
}

/// Bootstrap over sentence indices. `statistic` receives the resampled
/// indices (with repetition) and returns the corpus-level score.
pub fn bootstrap_ci<F>(n: usize, mut statistic: F, level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval>
where
    F: FnMut(&[usize]) -> f64,
{
    check(n, level, resamples)?;
    let all: Vec<usize> = (0..n).collect();
    let point = statistic(&all);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0; n];
    let draws = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            statistic(&idx)
        })
        .collect();
    interval(point, draws, level)
}

/// Interval for `a - b`, both statistics evaluated on the same resamples.
pub fn paired_bootstrap_ci<F, G>(n: usize, mut a: F, mut b: G, level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval>
where
    F: FnMut(&[usize]) -> f64,
    G: FnMut(&[usize]) -> f64,
{
    bootstrap_ci(n, |idx| a(idx) - b(idx), level, resamples, seed)
}

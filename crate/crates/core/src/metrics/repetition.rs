use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// n-gram counts for orders 1..=4 of one token stream.
#[derive(Clone, Debug)]
pub struct NGramProfile<'a, T> {
    counts: Vec<HashMap<&'a [T], usize>>,
    len: usize,
}

impl<'a, T: Hash + Eq> NGramProfile<'a, T> {
    pub fn new(stream: &'a [T]) -> Self {
        let counts = (1..=MAX_ORDER)
            .map(|n| {
                let mut m = HashMap::new();
                if stream.len() >= n {
                    for g in stream.windows(n) {
                        *m.entry(g).or_insert(0) += 1;
                    }
                }
                m
            })
            .collect();
        NGramProfile { counts, len: stream.len() }
    }

    pub fn counts(&self, n: usize) -> &HashMap<&'a [T], usize> {
        &self.counts[n - 1]
    }

    pub fn count(&self, gram: &[T]) -> usize {
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// Number of n-gram instances: `len - n + 1`, or 0.
    pub fn total(&self, n: usize) -> usize {
        self.len.saturating_sub(n - 1)
    }
}

/// Count of every n-gram of order `n` in `stream`.
pub fn ngram_counts<T: Hash + Eq>(stream: &[T], n: usize) -> HashMap<&[T], usize> {
    NGramProfile::new(stream).counts[n - 1].clone()
}

/// Non-overlapping windows; a trailing partial window is kept when it holds
/// at least a tenth of the window size or when it is the only one.
fn windows<T>(stream: &[T], window: usize) -> Vec<&[T]> {
    let mut out: Vec<&[T]> = stream.chunks(window).collect();
    if out.len() > 1 && out.last().is_some_and(|w| w.len() * 10 < window) {
        out.pop();
    }
    out
}

fn check(stream_len: usize, window: usize) -> Result<()> {
    if stream_len == 0 {
        return Err(Error::Empty("token stream"));
    }
    if window == 0 {
        return Err(Error::Invalid("window size must be positive".into()));
    }
    Ok(())
}

/// Geometric mean of the per-order window averages that are defined.
fn combine(per_order: [Option<f64>; MAX_ORDER]) -> f64 {
    let defined: Vec<f64> = per_order.into_iter().flatten().collect();
    if defined.is_empty() {
        return 0.0;
    }
    defined.iter().product::<f64>().powf(1.0 / defined.len() as f64)
}

fn windowed_rate<'a, T: Hash + Eq>(stream: &'a [T], window: usize, keep: impl Fn(&[T]) -> bool) -> f64 {
    let mut per_order = [None; MAX_ORDER];
    let chunks = windows(stream, window);
    for (n, slot) in (1..=MAX_ORDER).zip(per_order.iter_mut()) {
        let mut fracs = Vec::new();
        for w in &chunks {
            let prof = NGramProfile::new(w);
            let (mut types, mut repeated) = (0usize, 0usize);
            for (g, &c) in prof.counts(n) {
                if keep(g) {
                    types += 1;
                    repeated += usize::from(c >= 2);
                }
            }
            if types > 0 {
                fracs.push(repeated as f64 / types as f64);
            }
        }
        if !fracs.is_empty() {
            *slot = Some(fracs.iter().sum::<f64>() / fracs.len() as f64);
        }
    }
    combine(per_order)
}

/// Repetition rate: geometric mean over n = 1..4 of the windowed fraction of
/// n-gram types that occur at least twice.
pub fn repetition_rate<T: Hash + Eq>(stream: &[T], window: usize) -> Result<f64> {
    check(stream.len(), window)?;
    Ok(windowed_rate(stream, window, |_| true))
}

/// Repetition rate counting only n-grams that never occur in `training`.
pub fn restricted_repetition_rate<T: Hash + Eq>(test: &[T], training: &[T], window: usize) -> Result<f64> {
    check(test.len(), window)?;
    check(training.len(), window)?;
    let seen = NGramProfile::new(training);
    Ok(windowed_rate(test, window, |g| seen.count(g) == 0))
}

/// Mean over orders of the fraction of test n-gram instances unseen in
/// `training`.
pub fn unseen_ngram_fraction<T: Hash + Eq>(test: &[T], training: &[T]) -> Result<f64> {
    check(test.len(), 1)?;
    check(training.len(), 1)?;
    let seen: Vec<HashSet<&[T]>> =
        (1..=MAX_ORDER).map(|n| training.windows(n).collect()).collect();
    let fracs: Vec<f64> = (1..=MAX_ORDER)
        .filter(|&n| test.len() >= n)
        .map(|n| {
            let total = test.len() - n + 1;
            let unseen = test.windows(n).filter(|g| !seen[n - 1].contains(g)).count();
            unseen as f64 / total as f64
        })
        .collect();
    Ok(fracs.iter().sum::<f64>() / fracs.len() as f64)
}

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

const ORDERS: usize = 4;

/// Sufficient statistics for BLEU; sums over sentences give corpus stats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; ORDERS],
    pub totals: [usize; ORDERS],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn counts<T: Hash + Eq>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for g in s.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and totals for one sentence pair.
pub fn bleu_stats<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut st = BleuStats { hyp_len: hyp.len(), ref_len: reference.len(), ..Default::default() };
    for n in 1..=ORDERS {
        let r = counts(reference, n);
        st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        st.matches[n - 1] = counts(hyp, n).iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    }
    st
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..ORDERS {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl BleuStats {
    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Unsmoothed BLEU. Orders with no hypothesis n-grams are left out of
    /// the geometric mean.
    pub fn score(&self) -> f64 {
        self.combine(0)
    }

    /// BLEU with add-one smoothing on orders 2 to 4.
    pub fn smoothed_score(&self) -> f64 {
        self.combine(1)
    }

    fn combine(&self, add: usize) -> f64 {
        if self.hyp_len == 0 {
            return if self.ref_len == 0 { 1.0 } else { 0.0 };
        }
        let mut log_sum = 0.0;
        let mut k = 0;
        for n in 0..ORDERS {
            if self.totals[n] == 0 {
                continue;
            }
            let extra = if n == 0 { 0 } else { add };
            let m = self.matches[n] + extra;
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / (self.totals[n] + extra) as f64).ln();
            k += 1;
        }
        self.brevity_penalty() * (log_sum / k as f64).exp()
    }
}

/// Corpus BLEU in `[0, 1]`.
pub fn bleu<T: Hash + Eq, S: AsRef<[T]>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::Empty("BLEU hypotheses"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let mut st = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        st += bleu_stats(h.as_ref(), r.as_ref());
    }
    Ok(st.score())
}

/// Smoothed single-sentence BLEU for display.
pub fn sentence_bleu<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> f64 {
    bleu_stats(hyp, reference).smoothed_score()
}

//! Translation quality, effort and corpus repetition metrics.

mod bleu;
mod bootstrap;
mod repetition;
mod ter;

pub use bleu::{bleu, bleu_stats, sentence_bleu, BleuStats};
pub use bootstrap::{bootstrap_ci, paired_bootstrap_ci, ConfidenceInterval};
pub use repetition::{
    ngram_counts, repetition_rate, restricted_repetition_rate, unseen_ngram_fraction, NGramProfile, MAX_ORDER,
};
pub use ter::{edit_distance, ter, ter_edits};

use std::io::Write;

use crate::error::{Error, Result};

/// Keystroke and mouse-action ratio: `(ks + ma) / chars`.
pub fn ksmr(keystrokes: usize, mouse_actions: usize, reference_chars: usize) -> Result<f64> {
    if reference_chars == 0 {
        return Err(Error::Invalid("KSMR needs a non-empty reference".into()));
    }
    Ok((keystrokes + mouse_actions) as f64 / reference_chars as f64)
}

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricLine {
    pub name: String,
    pub value: f64,
    pub ci: Option<ConfidenceInterval>,
}

/// Writes `metric TAB value TAB ci_low TAB ci_high` lines; missing
/// intervals are written as `nan`.
pub fn write_metric_report<W: Write>(lines: &[MetricLine], mut out: W) -> Result<()> {
    for l in lines {
        let (lo, hi) = l.ci.map_or((f64::NAN, f64::NAN), |c| (c.lower, c.upper));
        writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}", l.name, l.value, lo, hi)?;
    }
    Ok(())
}

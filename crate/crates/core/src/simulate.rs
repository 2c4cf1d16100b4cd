//! Simulated users: references stand in for the translations a user wants,
//! and sessions are driven until the hypothesis matches them exactly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::decode::SearchOptions;
use crate::engine::{translate_with, Engine, ParallelCorpus};
use crate::error::{Error, Result};
use crate::metrics::{bleu, bootstrap_ci, ksmr, ter_edits, ConfidenceInterval};
use crate::model::ModelConfig;
use crate::session::SessionRecord;
use crate::train::{online_update, Algorithm, OptimizerState, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Char,
    Word,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Char => "char",
            Level::Word => "word",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Level::Char),
            "word" => Ok(Level::Word),
            _ => Err(Error::Parse(format!("unknown interaction level {s:?} (char | word)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub level: Level,
    pub adaptive: bool,
    pub algorithm: Algorithm,
    pub lr: f64,
    pub beam: usize,
    pub max_sentences: Option<usize>,
    pub seed: u64,
    pub clip_norm: f64,
    pub word_completion: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            level: Level::Char,
            adaptive: false,
            algorithm: Algorithm::Sgd,
            lr: 0.1,
            beam: 6,
            max_sentences: None,
            seed: 1,
            clip_norm: 5.0,
            word_completion: false,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Invalid("beam must be at least 1".into()));
        }
        if self.adaptive && !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("adaptive simulation needs a positive learning rate, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Invalid("clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions { beam: self.beam, max_len: None, word_completion: self.word_completion }
    }
}

/// Effort spent on one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub index: usize,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub ref_chars: usize,
    pub ref_words: usize,
    /// TER edits of the first hypothesis.
    pub ter_edits: usize,
    pub ter_first: f64,
    pub iterations: usize,
    /// Mean decoding time per interaction, milliseconds.
    pub rt_ms: f64,
    /// Online update time, milliseconds (0 when static).
    pub lt_ms: f64,
    pub first_hypothesis: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationReport {
    pub level: Level,
    pub adaptive: bool,
    pub sentences: Vec<SentenceRecord>,
    pub references: Vec<Vec<String>>,
    /// Every decode, milliseconds.
    pub response_times: Vec<f64>,
    /// Every online update, milliseconds.
    pub learning_times: Vec<f64>,
}

fn ratio(records: &[&SentenceRecord], num: impl Fn(&SentenceRecord) -> usize, den: impl Fn(&SentenceRecord) -> usize) -> f64 {
    let n: usize = records.iter().map(|r| num(r)).sum();
    let d: usize = records.iter().map(|r| den(r)).sum();
    n as f64 / d as f64
}

impl SimulationReport {
    pub fn keystrokes(&self) -> usize {
        self.sentences.iter().map(|s| s.keystrokes).sum()
    }

    pub fn mouse_actions(&self) -> usize {
        self.sentences.iter().map(|s| s.mouse_actions).sum()
    }

    pub fn ref_chars(&self) -> usize {
        self.sentences.iter().map(|s| s.ref_chars).sum()
    }

    /// Pooled `(ks + ma) / chars`.
    pub fn ksmr(&self) -> Result<f64> {
        ksmr(self.keystrokes(), self.mouse_actions(), self.ref_chars())
    }

    /// Corpus TER of the first hypotheses: total edits over total reference
    /// words.
    pub fn ter(&self) -> f64 {
        ratio(&self.sentences.iter().collect::<Vec<_>>(), |s| s.ter_edits, |s| s.ref_words)
    }

    /// Unweighted mean of sentence TER.
    pub fn mean_ter(&self) -> f64 {
        self.sentences.iter().map(|s| s.ter_first).sum::<f64>() / self.sentences.len().max(1) as f64
    }

    pub fn bleu_first(&self) -> Result<f64> {
        let hyps: Vec<&[String]> = self.sentences.iter().map(|s| s.first_hypothesis.as_slice()).collect();
        let refs: Vec<&[String]> = self.references.iter().map(Vec::as_slice).collect();
        bleu(&hyps, &refs)
    }

    pub fn cumulative_ksmr(&self) -> Vec<f64> {
        let (mut effort, mut chars) = (0, 0);
        self.sentences
            .iter()
            .map(|s| {
                effort += s.keystrokes + s.mouse_actions;
                chars += s.ref_chars;
                effort as f64 / chars as f64
            })
            .collect()
    }

    pub fn cumulative_ter(&self) -> Vec<f64> {
        let (mut edits, mut words) = (0, 0);
        self.sentences
            .iter()
            .map(|s| {
                edits += s.ter_edits;
                words += s.ref_words;
                edits as f64 / words as f64
            })
            .collect()
    }

    fn pick(&self, idx: &[usize]) -> Vec<&SentenceRecord> {
        idx.iter().map(|&i| &self.sentences[i]).collect()
    }

    pub fn ksmr_ci(&self, level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval> {
        let f = |idx: &[usize]| ratio(&self.pick(idx), |s| s.keystrokes + s.mouse_actions, |s| s.ref_chars);
        bootstrap_ci(self.sentences.len(), f, level, resamples, seed)
    }

    pub fn ter_ci(&self, level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval> {
        let f = |idx: &[usize]| ratio(&self.pick(idx), |s| s.ter_edits, |s| s.ref_words);
        bootstrap_ci(self.sentences.len(), f, level, resamples, seed)
    }

    /// Paired interval of `self.ksmr - other.ksmr` over shared sentence
    /// resamples.
    pub fn ksmr_gap_ci(&self, other: &Self, level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval> {
        if self.sentences.len() != other.sentences.len() {
            return Err(Error::Invalid("reports cover different corpora".into()));
        }
        let f = |idx: &[usize]| {
            let k = |r: &Self| ratio(&r.pick(idx), |s| s.keystrokes + s.mouse_actions, |s| s.ref_chars);
            k(self) - k(other)
        };
        bootstrap_ci(self.sentences.len(), f, level, resamples, seed)
    }

    /// CSV with one row per sentence and a `total` footer. Timing columns
    /// are written as zero unless `timing` is set, which keeps the file
    /// reproducible.
    pub fn write_csv<W: Write>(&self, mut out: W, timing: bool) -> Result<()> {
        writeln!(out, "index,ks,ma,ref_chars,ter_first,iterations,rt_ms,lt_ms")?;
        let t = |x: f64| if timing { x } else { 0.0 };
        for s in &self.sentences {
            writeln!(
                out,
                "{},{},{},{},{:.6},{},{:.3},{:.3}",
                s.index,
                s.keystrokes,
                s.mouse_actions,
                s.ref_chars,
                s.ter_first,
                s.iterations,
                t(s.rt_ms),
                t(s.lt_ms)
            )?;
        }
        let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
        writeln!(
            out,
            "total,{},{},{},{:.6},{},{:.3},{:.3}",
            self.keystrokes(),
            self.mouse_actions(),
            self.ref_chars(),
            self.ter(),
            self.sentences.iter().map(|s| s.iterations).sum::<usize>(),
            t(mean(&self.response_times)),
            t(mean(&self.learning_times))
        )?;
        Ok(())
    }
}

/// First character position where `hypothesis` and `reference` differ,
/// with the reference character there (`None` when the reference has
/// ended). `None` overall iff the strings are equal.
pub fn leftmost_char_discrepancy(hypothesis: &str, reference: &str) -> Option<(usize, Option<char>)> {
    let mut h = hypothesis.chars();
    let mut r = reference.chars();
    let mut i = 0;
    loop {
        match (h.next(), r.next()) {
            (None, None) => return None,
            (a, b) if a == b => i += 1,
            (_, b) => return Some((i, b)),
        }
    }
}

fn leftmost_word_discrepancy(hyp: &[String], reference: &[String]) -> Option<usize> {
    let n = hyp.iter().zip(reference).take_while(|(a, b)| a == b).count();
    (n < hyp.len().max(reference.len())).then_some(n)
}

/// Result of one simulated INMT sentence.
#[derive(Clone, Debug)]
pub struct SentenceOutcome {
    pub record: SentenceRecord,
    pub session: SessionRecord,
    pub response_times: Vec<f64>,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Drives one session to the reference and accepts it.
pub fn simulate_inmt_sentence(
    engine: &Engine,
    source: &[String],
    reference: &[String],
    level: Level,
    opts: &SearchOptions,
) -> Result<SentenceOutcome> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    let ref_text = reference.join(" ");
    let ref_chars = ref_text.chars().count();
    let cap = ref_chars + 5;
    let mut times = Vec::new();
    let t0 = Instant::now();
    let mut s = SessionRecord::start(engine, source, *opts)?;
    times.push(millis(t0));
    let first = s.words().to_vec();
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(Error::IterationCap(cap));
        }
        let t0 = Instant::now();
        match level {
            Level::Char => match leftmost_char_discrepancy(s.text(), &ref_text) {
                None => {
                    s.accept(engine, None)?;
                    break;
                }
                Some((p, Some(c))) => s.apply_char_feedback(engine, p, c)?,
                Some((p, None)) => {
                    s.accept(engine, Some(p))?;
                    break;
                }
            },
            Level::Word => match leftmost_word_discrepancy(s.words(), reference) {
                None => {
                    s.accept(engine, None)?;
                    break;
                }
                Some(i) if i < reference.len() => s.apply_word_feedback(engine, i, &reference[i])?,
                Some(_) => {
                    s.accept(engine, Some(ref_chars))?;
                    break;
                }
            },
        }
        times.push(millis(t0));
    }
    if s.text() != ref_text {
        return Err(Error::Invalid(format!("session ended with {:?}, expected {ref_text:?}", s.text())));
    }
    let edits = ter_edits(&first, reference);
    let record = SentenceRecord {
        index: 0,
        keystrokes: s.keystrokes,
        mouse_actions: s.mouse_actions,
        ref_chars,
        ref_words: reference.len(),
        ter_edits: edits,
        ter_first: edits as f64 / reference.len() as f64,
        iterations,
        rt_ms: times.iter().sum::<f64>() / times.len() as f64,
        lt_ms: 0.0,
        first_hypothesis: first,
    };
    Ok(SentenceOutcome { record, session: s, response_times: times })
}

fn fresh_optimizer(engine: &Engine, config: &SimulationConfig) -> Result<Option<OptimizerState>> {
    config
        .adaptive
        .then(|| OptimizerState::new(config.algorithm, config.lr, engine.params.tensors()))
        .transpose()
}

/// Runs the INMT protocol over `corpus` in order. When adaptive, each
/// accepted pair updates `engine` before the next sentence is decoded.
pub fn simulate(engine: &mut Engine, corpus: &ParallelCorpus, config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let n = config.max_sentences.map_or(corpus.len(), |m| m.min(corpus.len()));
    let opts = config.search_options();
    let mut optimizer = fresh_optimizer(engine, config)?;
    let mut report = SimulationReport {
        level: config.level,
        adaptive: config.adaptive,
        sentences: Vec::with_capacity(n),
        references: Vec::with_capacity(n),
        response_times: Vec::new(),
        learning_times: Vec::new(),
    };
    for (index, (src, reference)) in corpus.iter().take(n).enumerate() {
        let mut out = simulate_inmt_sentence(engine, src, reference, config.level, &opts)?;
        if let Some(opt) = optimizer.as_mut() {
            let pair = engine.pair(src, reference)?;
            let t0 = Instant::now();
            online_update(&mut engine.params, opt, &pair.src, &pair.trg, config.clip_norm)?;
            let lt = millis(t0);
            out.record.lt_ms = lt;
            report.learning_times.push(lt);
        }
        out.record.index = index;
        report.response_times.extend(out.response_times);
        report.sentences.push(out.record);
        report.references.push(reference.to_vec());
    }
    Ok(report)
}

/// One post-editing step: decode once and measure TER against the
/// reference; with an optimizer, learn from the pair afterwards.
pub fn simulate_post_edit(
    engine: &mut Engine,
    optimizer: Option<&mut OptimizerState>,
    source: &[String],
    reference: &[String],
    opts: &SearchOptions,
    clip_norm: f64,
) -> Result<(usize, Vec<String>)> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    let hyp = translate_with(&engine.params, engine, source, opts)?.words;
    let edits = ter_edits(&hyp, reference);
    if let Some(opt) = optimizer {
        let pair = engine.pair(source, reference)?;
        online_update(&mut engine.params, opt, &pair.src, &pair.trg, clip_norm)?;
    }
    Ok((edits, hyp))
}

/// Post-editing over a corpus. Returns per-sentence TER edits and the
/// hypotheses.
pub fn simulate_post_editing(
    engine: &mut Engine,
    corpus: &ParallelCorpus,
    config: &SimulationConfig,
) -> Result<Vec<(usize, Vec<String>)>> {
    config.validate()?;
    let n = config.max_sentences.map_or(corpus.len(), |m| m.min(corpus.len()));
    let opts = config.search_options();
    let mut optimizer = fresh_optimizer(engine, config)?;
    corpus
        .iter()
        .take(n)
        .map(|(s, r)| simulate_post_edit(engine, optimizer.as_mut(), s, r, &opts, config.clip_norm))
        .collect()
}

/// Static and adaptive runs over the same corpus, each from a copy of
/// `engine`.
pub fn static_and_adaptive(
    engine: &Engine,
    test: &ParallelCorpus,
    config: &SimulationConfig,
) -> Result<(SimulationReport, SimulationReport)> {
    let stat = simulate(&mut engine.clone(), test, &SimulationConfig { adaptive: false, ..config.clone() })?;
    let adapt = simulate(&mut engine.clone(), test, &SimulationConfig { adaptive: true, ..config.clone() })?;
    Ok((stat, adapt))
}

/// Corpora for the three experimental set-ups.
#[derive(Clone, Debug, Default)]
pub struct ScenarioCorpora {
    /// Out-of-domain training data.
    pub general: Option<ParallelCorpus>,
    /// In-domain training data.
    pub in_domain: Option<ParallelCorpus>,
    /// Development data for early stopping; the training set when absent.
    pub dev: Option<ParallelCorpus>,
    pub test: ParallelCorpus,
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub num_merges: usize,
    pub dims: ModelConfig,
    pub train: TrainConfig,
    pub train_algorithm: Algorithm,
    pub train_lr: f64,
    pub simulation: SimulationConfig,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub engine: Engine,
    pub training: Vec<TrainOutcome>,
    pub static_report: SimulationReport,
    pub adaptive_report: SimulationReport,
}

/// Scenario 1 trains on in-domain data, scenario 2 on out-of-domain data,
/// scenario 3 pre-trains out of domain and fine-tunes in domain. All three
/// then simulate the test set statically and adaptively.
pub fn run_scenario(corpora: &ScenarioCorpora, scenario: u8, config: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let need = |c: &Option<ParallelCorpus>, what: &str| {
        c.clone().ok_or_else(|| Error::Invalid(format!("scenario {scenario} needs a {what} corpus")))
    };
    let stages: Vec<ParallelCorpus> = match scenario {
        1 => vec![need(&corpora.in_domain, "in-domain")?],
        2 => vec![need(&corpora.general, "general")?],
        3 => vec![need(&corpora.general, "general")?, need(&corpora.in_domain, "in-domain")?],
        _ => return Err(Error::Invalid(format!("unknown scenario {scenario} (1 | 2 | 3)"))),
    };
    let refs: Vec<&ParallelCorpus> = stages.iter().collect();
    let mut engine = Engine::initialize(&refs, config.num_merges, config.dims, config.train.seed)?;
    let dev_opts = SearchOptions::beam(config.simulation.beam);
    let mut training = Vec::new();
    for stage in &stages {
        let dev = corpora.dev.as_ref().unwrap_or(stage);
        let opt = OptimizerState::new(config.train_algorithm, config.train_lr, engine.params.tensors())?;
        training.push(engine.fit(stage, dev, opt, &config.train, &dev_opts)?);
    }
    let (static_report, adaptive_report) = static_and_adaptive(&engine, &corpora.test, &config.simulation)?;
    Ok(ScenarioOutcome { engine, training, static_report, adaptive_report })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingSummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self { count: 0, mean_ms: 0.0, p50_ms: 0.0, p90_ms: 0.0, max_ms: 0.0 };
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            p50_ms: q(0.5),
            p90_ms: q(0.9),
            max_ms: s[s.len() - 1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub response: TimingSummary,
    pub learning: TimingSummary,
}

/// Times every decode and every online update of an adaptive simulation.
pub fn measure_latency(engine: &Engine, corpus: &ParallelCorpus, config: &SimulationConfig) -> Result<LatencyStats> {
    let report = simulate(&mut engine.clone(), corpus, &SimulationConfig { adaptive: true, ..config.clone() })?;
    Ok(LatencyStats {
        response: TimingSummary::from_samples(&report.response_times),
        learning: TimingSummary::from_samples(&report.learning_times),
    })
}

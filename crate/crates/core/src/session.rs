//! Interactive translation sessions: a hypothesis that is regenerated after
//! every correction, with keystroke and mouse-action accounting.

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use crate::decode::{masked_constrained_search, prefix_constrained_search, PrefixConstraint, SearchOptions, Tail};
use crate::engine::{tokenize, Engine, Translation};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionStatus {
    Active,
    Accepted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeedbackEvent {
    Start,
    /// Replace the character at `position` (or append when it equals the
    /// hypothesis length) and drop everything after it.
    Char { position: usize, ch: char },
    /// Replace word `position` and drop everything after it.
    Word { position: usize, word: String },
    /// Accept the hypothesis, optionally cut at a word boundary.
    Accept { truncate_at: Option<usize> },
}

impl FeedbackEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Start => "start",
            Self::Char { .. } => "char",
            Self::Word { .. } => "word",
            Self::Accept { .. } => "accept",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub event: FeedbackEvent,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub hypothesis: String,
    pub elapsed: Duration,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (pos, value) = match &self.event {
            FeedbackEvent::Start => (String::new(), String::new()),
            FeedbackEvent::Char { position, ch } => (position.to_string(), ch.to_string()),
            FeedbackEvent::Word { position, word } => (position.to_string(), word.clone()),
            FeedbackEvent::Accept { truncate_at } => (truncate_at.map_or(String::new(), |p| p.to_string()), String::new()),
        };
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.event.kind(),
            pos,
            value,
            self.keystrokes,
            self.mouse_actions,
            self.hypothesis
        )
    }
}

/// The sentence pair produced by accepting a session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcceptedPair {
    pub source_words: Vec<String>,
    pub target_words: Vec<String>,
    pub source_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
}

#[derive(Clone, Debug)]
pub struct SessionRecord {
    pub id: u64,
    pub source_words: Vec<String>,
    pub source_ids: Vec<TokenId>,
    pub translation: Translation,
    pub constraint: PrefixConstraint,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub status: SessionStatus,
    pub log: Vec<LogEntry>,
    pub options: SearchOptions,
    last_correction: Option<usize>,
    started: Instant,
}

impl SessionRecord {
    /// Opens a session with the unconstrained beam-search hypothesis.
    pub fn start<S: AsRef<str>>(engine: &Engine, source: &[S], options: SearchOptions) -> Result<Self> {
        let source_words: Vec<String> = source.iter().map(|w| w.as_ref().to_owned()).collect();
        let translation = engine.translate(&source_words, &options)?;
        let mut rec = SessionRecord {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            source_ids: engine.source_ids(&source_words)?,
            source_words,
            translation,
            constraint: PrefixConstraint::empty(),
            keystrokes: 0,
            mouse_actions: 0,
            status: SessionStatus::Active,
            log: Vec::new(),
            options,
            last_correction: None,
            started: Instant::now(),
        };
        rec.record(FeedbackEvent::Start);
        Ok(rec)
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    pub fn text(&self) -> &str {
        &self.translation.text
    }

    pub fn words(&self) -> &[String] {
        &self.translation.words
    }

    /// Number of feedback events so far (start excluded).
    pub fn iterations(&self) -> usize {
        self.log.len() - 1
    }

    fn ensure_active(&self) -> Result<()> {
        match self.status {
            SessionStatus::Active => Ok(()),
            SessionStatus::Accepted => Err(Error::SessionInactive(self.id)),
        }
    }

    fn record(&mut self, event: FeedbackEvent) {
        self.log.push(LogEntry {
            iteration: self.log.len(),
            event,
            keystrokes: self.keystrokes,
            mouse_actions: self.mouse_actions,
            hypothesis: self.translation.text.clone(),
            elapsed: self.started.elapsed(),
        });
    }

    fn masked(&self, engine: &Engine, constraint: &PrefixConstraint) -> Result<Translation> {
        let result =
            masked_constrained_search(&engine.params, engine.segmenter(), &self.source_ids, constraint, &self.options)?;
        let t = engine.render(result.best);
        if !constraint.is_satisfied_by(&t.text) {
            return Err(Error::Invalid(format!("decoded {:?} does not extend {:?}", t.text, constraint.text())));
        }
        Ok(t)
    }

    /// The user types `ch` at character `position`. The constraint becomes
    /// the hypothesis up to `position` followed by `ch`.
    pub fn apply_char_feedback(&mut self, engine: &Engine, position: usize, ch: char) -> Result<()> {
        self.ensure_active()?;
        let chars: Vec<char> = self.translation.text.chars().collect();
        let (min, max) = (self.constraint.char_len(), chars.len());
        if position < min || position > max {
            return Err(Error::InvalidPosition { position, min, max });
        }
        let mut typed: String = chars[..position].iter().collect();
        typed.push(ch);
        let constraint = PrefixConstraint::parse(&typed)?;
        let translation = self.masked(engine, &constraint)?;

        let contiguous = match self.last_correction {
            None => position == 0,
            Some(p) => position == p + 1,
        };
        self.keystrokes += 1;
        self.mouse_actions += usize::from(!contiguous);
        self.last_correction = Some(position);
        self.constraint = constraint;
        self.translation = translation;
        self.record(FeedbackEvent::Char { position, ch });
        Ok(())
    }

    /// The user retypes word `position` as `word`; the words before it are
    /// validated.
    pub fn apply_word_feedback(&mut self, engine: &Engine, position: usize, word: &str) -> Result<()> {
        self.ensure_active()?;
        let (min, max) = (self.constraint.words().len(), self.translation.words.len());
        if position < min || position > max {
            return Err(Error::InvalidPosition { position, min, max });
        }
        let mut words = self.translation.words[..position].to_vec();
        words.push(word.to_owned());
        let constraint = PrefixConstraint::from_words(words)?;
        let (old, new) = (self.constraint.text(), constraint.text());
        if !new.starts_with(&old) || new.len() == old.len() {
            return Err(Error::InvalidFeedback(format!("{new:?} does not extend the validated prefix {old:?}")));
        }
        let forced = engine.segmenter().words(constraint.words())?;
        let result = prefix_constrained_search(&engine.params, &self.source_ids, &forced, &self.options)?;
        let translation = engine.render(result.best);

        self.keystrokes += word.chars().count();
        self.mouse_actions += 1;
        self.last_correction = Some(constraint.char_len() - 1);
        self.constraint = constraint;
        self.translation = translation;
        self.record(FeedbackEvent::Word { position, word: word.to_owned() });
        Ok(())
    }

    /// Accepts the hypothesis. With `truncate_at`, only the text before that
    /// character position is kept (it may cut a word short, must cover the
    /// validated prefix and must not end in a space). Costs one mouse action
    /// either way.
    pub fn accept(&mut self, engine: &Engine, truncate_at: Option<usize>) -> Result<AcceptedPair> {
        self.ensure_active()?;
        let mut translation = None;
        if let Some(p) = truncate_at {
            let chars: Vec<char> = self.translation.text.chars().collect();
            let (min, max) = (self.constraint.char_len(), chars.len());
            if p < min || p > max {
                return Err(Error::InvalidPosition { position: p, min, max });
            }
            if p > 0 && chars[p - 1] == ' ' {
                return Err(Error::InvalidFeedback(format!("cut at {p} leaves a trailing space")));
            }
            let kept: String = chars[..p].iter().collect();
            let constraint = PrefixConstraint::new(tokenize(&kept), Tail::End)?;
            translation = Some(self.masked(engine, &constraint)?);
        }
        let target_words = translation.as_ref().unwrap_or(&self.translation).words.clone();
        let target_ids = engine.segmenter().sentence(&target_words)?;

        if let Some(t) = translation {
            self.translation = t;
        }
        self.mouse_actions += 1;
        self.status = SessionStatus::Accepted;
        self.record(FeedbackEvent::Accept { truncate_at });
        Ok(AcceptedPair {
            source_words: self.source_words.clone(),
            target_words,
            source_ids: self.source_ids.clone(),
            target_ids,
        })
    }

    /// One tab-separated line per event.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.log {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }
}

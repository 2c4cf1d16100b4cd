//! Beam search, forced prefixes and character-level vocabulary masking.

use std::collections::VecDeque;
use std::fmt;

use crate::bpe::{detokenize_bpe, Detokenized, MergeTable, Subword};
use crate::error::{Error, Result};
use crate::model::{decoder_step, encode, DecoderState, EncoderAnnotations, ModelParams};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, PAD, UNK};

/// A scored target sequence. `tokens` excludes `<s>`; a finished hypothesis
/// ends with `</s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the closing `</s>`.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: Hypothesis,
    /// Finished hypotheses by score, then unfinished ones by score.
    pub nbest: Vec<Hypothesis>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    pub beam: usize,
    /// Defaults to twice the source length plus five.
    pub max_len: Option<usize>,
    /// At masked steps keep only the most probable compatible token.
    pub word_completion: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { beam: 6, max_len: None, word_completion: false }
    }
}

impl SearchOptions {
    pub fn beam(beam: usize) -> Self {
        Self { beam, ..Self::default() }
    }
}

pub fn default_max_len(source_len: usize) -> usize {
    2 * source_len + 5
}

/// Tokens the decoder may emit freely.
pub fn is_generable(id: TokenId) -> bool {
    !matches!(id, PAD | BOS | UNK)
}

/// Maps ids to subwords and joins them into words. `</s>` and other
/// reserved tokens are skipped.
pub fn detokenize_ids(vocab: &Vocabulary, ids: &[TokenId]) -> Detokenized {
    let subwords: Vec<Subword> = ids
        .iter()
        .filter(|&&id| !vocab.is_reserved(id))
        .filter_map(|&id| vocab.get(id).cloned())
        .collect();
    detokenize_bpe(&subwords)
}

/// Binary compatibility vector over the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabularyMask {
    pub bits: Vec<bool>,
    pub count: usize,
}

impl VocabularyMask {
    pub fn allowed(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Whether a token can continue a word whose remaining typed characters are
/// `prefix`: its text starts with the prefix, or the prefix starts with its
/// text and the word goes on after it.
pub fn is_compatible(token: &Subword, prefix: &str) -> bool {
    token.text.starts_with(prefix) || (!token.word_final && prefix.starts_with(token.text.as_str()))
}

pub fn build_vocabulary_mask(prefix: &str, vocab: &Vocabulary) -> VocabularyMask {
    let bits: Vec<bool> = (0..vocab.len())
        .map(|id| {
            if prefix.is_empty() {
                true
            } else if vocab.is_reserved(id) {
                false
            } else {
                is_compatible(vocab.token(id), prefix)
            }
        })
        .collect();
    let count = bits.iter().filter(|&&b| b).count();
    VocabularyMask { bits, count }
}

/// What follows the validated whole words of a constraint.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tail {
    /// Nothing typed after the words; any continuation, including `</s>`.
    Any,
    /// A trailing space was typed: another word must follow.
    NextWord,
    /// Characters of a word still being typed.
    Open(String),
    /// The sentence must end right after the words.
    End,
}

/// Validated target prefix: whole words plus the state of the next word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PrefixConstraint {
    words: Vec<String>,
    tail: Tail,
}

fn check_word(w: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidFeedback("empty word".into()));
    }
    if w.chars().any(char::is_whitespace) {
        return Err(Error::InvalidFeedback(format!("word {w:?} contains whitespace")));
    }
    Ok(())
}

impl PrefixConstraint {
    pub fn empty() -> Self {
        Self { words: Vec::new(), tail: Tail::Any }
    }

    pub fn new(words: Vec<String>, tail: Tail) -> Result<Self> {
        for w in &words {
            check_word(w)?;
        }
        match &tail {
            Tail::Open(p) => check_word(p)?,
            Tail::NextWord if words.is_empty() => {
                return Err(Error::InvalidFeedback("a prefix cannot start with a space".into()))
            }
            _ => {}
        }
        Ok(Self { words, tail })
    }

    /// Whole words with nothing after them.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        Self::new(words, Tail::Any)
    }

    /// Parses a typed character prefix. Words are separated by single
    /// spaces; a trailing space announces another word.
    pub fn parse(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Ok(Self::empty());
        }
        if let Some(c) = text.chars().find(|&c| c.is_whitespace() && c != ' ') {
            return Err(Error::InvalidFeedback(format!("unsupported whitespace {c:?}")));
        }
        if text.starts_with(' ') || text.contains("  ") {
            return Err(Error::InvalidFeedback("leading or repeated space".into()));
        }
        let mut parts: Vec<String> = text.split(' ').map(String::from).collect();
        let last = parts.pop().expect("split yields one part");
        let tail = if last.is_empty() { Tail::NextWord } else { Tail::Open(last) };
        Self::new(parts, tail)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tail(&self) -> &Tail {
        &self.tail
    }

    /// The partial word being typed (empty unless the tail is open).
    pub fn partial(&self) -> &str {
        match &self.tail {
            Tail::Open(p) => p,
            _ => "",
        }
    }

    /// Characters typed into the partial word.
    pub fn char_position(&self) -> usize {
        self.partial().chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.tail == Tail::Any
    }

    /// The constraint as the text a hypothesis must start with.
    pub fn text(&self) -> String {
        let mut s = self.words.join(" ");
        match &self.tail {
            Tail::Open(p) => {
                if !s.is_empty() {
                    s.push(' ');
                }
                s.push_str(p);
            }
            Tail::NextWord => s.push(' '),
            Tail::Any | Tail::End => {}
        }
        s
    }

    pub fn char_len(&self) -> usize {
        self.text().chars().count()
    }

    pub fn is_satisfied_by(&self, hypothesis: &str) -> bool {
        let text = self.text();
        match self.tail {
            Tail::End => hypothesis == text,
            Tail::Any if !text.is_empty() => {
                hypothesis == text || hypothesis.strip_prefix(&text).is_some_and(|rest| rest.starts_with(' '))
            }
            _ => hypothesis.starts_with(&text),
        }
    }
}

impl fmt::Display for PrefixConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Turns target words into vocabulary ids.
#[derive(Clone, Copy)]
pub struct Segmenter<'a> {
    pub merges: &'a MergeTable,
    pub vocab: &'a Vocabulary,
}

impl<'a> Segmenter<'a> {
    pub fn new(merges: &'a MergeTable, vocab: &'a Vocabulary) -> Self {
        Self { merges, vocab }
    }

    fn lookup(&self, pieces: Vec<Subword>, out: &mut Vec<TokenId>) -> Result<()> {
        for piece in pieces {
            if let Some(id) = self.vocab.id(&piece) {
                out.push(id);
                continue;
            }
            // spell the piece out character by character
            let n = piece.char_len();
            for (i, c) in piece.text.chars().enumerate() {
                let s = Subword::new(c.to_string(), piece.word_final && i + 1 == n);
                out.push(self.vocab.id(&s).ok_or(Error::AlphabetMismatch(c))?);
            }
        }
        Ok(())
    }

    pub fn words(&self, words: &[String]) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for w in words {
            self.lookup(self.merges.apply_word(w), &mut out)?;
        }
        Ok(out)
    }

    /// Non-final pieces spelling the start of a word.
    pub fn partial(&self, prefix: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        self.lookup(self.merges.apply_partial(prefix), &mut out)?;
        Ok(out)
    }

    /// Words as ids followed by `</s>`.
    pub fn sentence(&self, words: &[String]) -> Result<Vec<TokenId>> {
        let mut ids = self.words(words)?;
        ids.push(EOS);
        Ok(ids)
    }
}

/// Per-hypothesis constraint bookkeeping.
#[derive(Clone, Debug, PartialEq)]
enum Need {
    Free,
    NotEnd,
    Chars(String),
    End,
}

#[derive(Clone)]
struct Live {
    hyp: Hypothesis,
    state: DecoderState,
    forced: VecDeque<TokenId>,
    need: Need,
}

struct Masking<'a> {
    vocab: &'a Vocabulary,
    segmenter: Option<Segmenter<'a>>,
    word_completion: bool,
}

/// Expands `live` into `(log_prob, token, next_forced, next_need)` candidates.
fn expand(
    live: &Live,
    probs: &[f64],
    masking: Option<&Masking<'_>>,
) -> Result<Vec<(f64, TokenId, VecDeque<TokenId>, Need)>> {
    if let Some(&tok) = live.forced.front() {
        let mut rest = live.forced.clone();
        rest.pop_front();
        return Ok(vec![(probs[tok].ln(), tok, rest, live.need.clone())]);
    }
    let mut out = Vec::new();
    match &live.need {
        Need::Free | Need::NotEnd => {
            for (id, &p) in probs.iter().enumerate() {
                if is_generable(id) && !(live.need == Need::NotEnd && id == EOS) {
                    out.push((p.ln(), id, VecDeque::new(), Need::Free));
                }
            }
        }
        Need::End => out.push((probs[EOS].ln(), EOS, VecDeque::new(), Need::Free)),
        Need::Chars(rem) => {
            let m = masking.expect("character constraints need a vocabulary");
            let mask = build_vocabulary_mask(rem, m.vocab);
            let allowed: Vec<TokenId> = mask.allowed().filter(|&id| id < probs.len()).collect();
            if allowed.is_empty() {
                let seg = m.segmenter.ok_or_else(|| {
                    Error::AlphabetMismatch(rem.chars().next().expect("non-empty remainder"))
                })?;
                let mut forced: VecDeque<TokenId> = seg.partial(rem)?.into();
                let tok = forced.pop_front().expect("non-empty remainder");
                return Ok(vec![(probs[tok].ln(), tok, forced, Need::Free)]);
            }
            let mass: f64 = allowed.iter().map(|&id| probs[id]).sum();
            let mut cands: Vec<(f64, TokenId)> = allowed.iter().map(|&id| ((probs[id] / mass).ln(), id)).collect();
            if m.word_completion {
                let best = cands
                    .iter()
                    .copied()
                    .fold(None::<(f64, TokenId)>, |acc, c| match acc {
                        Some(a) if a.0 >= c.0 => Some(a),
                        _ => Some(c),
                    })
                    .expect("non-empty mask");
                cands = vec![best];
            }
            for (lp, id) in cands {
                let text = &m.vocab.token(id).text;
                let need = if text.starts_with(rem.as_str()) {
                    Need::Free
                } else {
                    Need::Chars(rem[text.len()..].to_string())
                };
                out.push((lp, id, VecDeque::new(), need));
            }
        }
    }
    Ok(out)
}

fn run_search(
    params: &ModelParams,
    ann: &EncoderAnnotations,
    forced: Vec<TokenId>,
    need: Need,
    masking: Option<&Masking<'_>>,
    beam: usize,
    max_len: usize,
) -> Result<SearchResult> {
    if beam == 0 {
        return Err(Error::Invalid("beam size must be at least 1".into()));
    }
    let vy = params.config().trg_vocab;
    if let Some(&id) = forced.iter().find(|&&id| id >= vy) {
        return Err(Error::IdOutOfRange { id, size: vy });
    }
    let mut live = vec![Live {
        hyp: Hypothesis { tokens: Vec::new(), step_log_probs: Vec::new(), log_prob: 0.0, finished: false },
        state: ann.initial.clone(),
        forced: forced.into(),
        need,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut width = beam;
    for _ in 0..max_len {
        if live.is_empty() || width == 0 {
            break;
        }
        let mut cands: Vec<(f64, usize, TokenId, f64, VecDeque<TokenId>, Need)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (pi, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(BOS);
            let (state, probs) = decoder_step(params, prev, &l.state, ann)?;
            for (lp, tok, fq, nd) in expand(l, &probs, masking)? {
                cands.push((l.hyp.log_prob + lp, pi, tok, lp, fq, nd));
            }
            states.push(state);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next = Vec::with_capacity(cands.len());
        for (score, pi, tok, lp, fq, nd) in cands {
            let parent = &live[pi];
            let mut hyp = parent.hyp.clone();
            hyp.tokens.push(tok);
            hyp.step_log_probs.push(lp);
            hyp.log_prob = score;
            if tok == EOS {
                hyp.finished = true;
                finished.push(hyp);
                width -= 1;
            } else {
                next.push(Live { hyp, state: states[pi].clone(), forced: fq, need: nd });
            }
        }
        live = next;
    }
    let by_score = |a: &Hypothesis, b: &Hypothesis| b.log_prob.total_cmp(&a.log_prob);
    finished.sort_by(by_score);
    let mut unfinished: Vec<Hypothesis> = live.into_iter().map(|l| l.hyp).collect();
    unfinished.sort_by(by_score);
    let mut nbest = finished;
    nbest.extend(unfinished);
    let best = nbest.first().cloned().ok_or(Error::Empty("search produced no hypothesis"))?;
    Ok(SearchResult { best, nbest })
}

/// Plain beam search without length normalisation. Ties are broken by
/// parent position, then token id.
pub fn beam_search(params: &ModelParams, src: &[TokenId], opts: &SearchOptions) -> Result<SearchResult> {
    let ann = encode(params, src)?;
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(src.len()));
    run_search(params, &ann, Vec::new(), Need::Free, None, opts.beam, max_len)
}

/// Forces `prefix` token by token, recording each token's model
/// log-probability, then continues with beam search.
pub fn prefix_constrained_search(
    params: &ModelParams,
    src: &[TokenId],
    prefix: &[TokenId],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let ann = encode(params, src)?;
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(src.len())).max(prefix.len() + 1);
    run_search(params, &ann, prefix.to_vec(), Need::Free, None, opts.beam, max_len)
}

/// Decodes under a character-level constraint: validated words are forced,
/// the partial word is completed through vocabulary masks (renormalised over
/// compatible tokens), and decoding is free afterwards. When no token is
/// compatible the remaining characters are forced as subwords.
pub fn masked_constrained_search(
    params: &ModelParams,
    segmenter: Segmenter<'_>,
    src: &[TokenId],
    constraint: &PrefixConstraint,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let forced = segmenter.words(&constraint.words)?;
    let (need, extra) = match &constraint.tail {
        Tail::Any => (Need::Free, 0),
        Tail::NextWord => (Need::NotEnd, 1),
        Tail::Open(p) => (Need::Chars(p.clone()), p.chars().count()),
        Tail::End => (Need::End, 0),
    };
    let ann = encode(params, src)?;
    let max_len = opts.max_len.unwrap_or_else(|| default_max_len(src.len())).max(forced.len() + extra + 1);
    let masking = Masking { vocab: segmenter.vocab, segmenter: Some(segmenter), word_completion: opts.word_completion };
    run_search(params, &ann, forced, need, Some(&masking), opts.beam, max_len)
}

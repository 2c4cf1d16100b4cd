//! Joint byte-pair encoding: learning merges, segmenting words, and undoing
//! the segmentation.
//!
//! The last subword of every word carries a `word_final` flag. The flag is
//! kept out of the subword text so character offsets inside a word stay
//! exact; only the on-disk form spells it as a `</w>` suffix.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FINAL_MARKER: &str = "</w>";
const HEADER: &str = "#bpe-v1";

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subword {
    pub text: String,
    pub word_final: bool,
}

impl Subword {
    pub fn new(text: impl Into<String>, word_final: bool) -> Self {
        Self { text: text.into(), word_final }
    }

    /// Parses the on-disk form (`</w>` suffix marks a word-final subword).
    pub fn parse_marked(s: &str) -> Self {
        match s.strip_suffix(FINAL_MARKER) {
            Some(text) if !text.is_empty() => Self::new(text, true),
            _ => Self::new(s, false),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

impl fmt::Display for Subword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.word_final {
            write!(f, "{}{FINAL_MARKER}", self.text)
        } else {
            f.write_str(&self.text)
        }
    }
}

/// Ordered list of merge operations. Equality ignores the learning-time
/// frequencies, which are not persisted.
#[derive(Clone, Debug, Default)]
pub struct MergeTable {
    merges: Vec<(Subword, Subword)>,
    ranks: HashMap<(Subword, Subword), usize>,
    frequencies: Vec<usize>,
}

impl PartialEq for MergeTable {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges
    }
}

impl MergeTable {
    pub fn from_merges(merges: Vec<(Subword, Subword)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if pair.0.word_final {
                return Err(Error::Invalid(format!("left side of merge {i} is word-final")));
            }
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate merge {} {}", pair.0, pair.1)));
            }
        }
        Ok(Self { merges, ranks, frequencies: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(Subword, Subword)] {
        &self.merges
    }

    /// Pair frequencies observed at each merge step (empty for loaded tables).
    pub fn frequencies(&self) -> &[usize] {
        &self.frequencies
    }

    pub fn apply_word(&self, word: &str) -> Vec<Subword> {
        self.segment(word, true)
    }

    /// Segments the beginning of a word that may continue, so no subword is
    /// word-final.
    pub fn apply_partial(&self, prefix: &str) -> Vec<Subword> {
        self.segment(prefix, false)
    }

    fn segment(&self, word: &str, closed: bool) -> Vec<Subword> {
        let chars: Vec<char> = word.chars().collect();
        let n = chars.len();
        let mut symbols: Vec<Subword> = chars
            .iter()
            .enumerate()
            .map(|(i, c)| Subword::new(c.to_string(), closed && i + 1 == n))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(Subword::new(format!("{}{}", left.text, right.text), right.word_final));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{HEADER} {}", self.merges.len())?;
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("missing bpe header".into()))??;
        let count: usize = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad bpe header {header:?}")))?;
        let mut merges = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad merge line {line:?}")))?;
            merges.push((Subword::parse_marked(l), Subword::parse_marked(r)));
        }
        if merges.len() != count {
            return Err(Error::Parse(format!("header says {count} merges, found {}", merges.len())));
        }
        Self::from_merges(merges)
    }
}

/// Learns up to `num_merges` merges over every word of `corpus`.
///
/// The corpus should hold the sentences of both languages so that a single
/// table segments either side. Ties between equally frequent pairs go to the
/// lexicographically smallest `(left, right)`.
pub fn learn_bpe(corpus: &[Vec<String>], num_merges: usize) -> Result<MergeTable> {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for word in corpus.iter().flatten() {
        *word_freq.entry(word.as_str()).or_default() += 1;
    }
    if word_freq.is_empty() {
        return Err(Error::Empty("bpe training corpus"));
    }

    // symbols are interned so the inner loops compare integers
    let mut table: Vec<Subword> = Vec::new();
    let mut interned: HashMap<Subword, u32> = HashMap::new();
    let mut intern = |s: Subword, table: &mut Vec<Subword>| -> u32 {
        *interned.entry(s.clone()).or_insert_with(|| {
            table.push(s);
            (table.len() - 1) as u32
        })
    };
    let mut words: Vec<(Vec<u32>, usize)> = word_freq
        .iter()
        .map(|(w, &f)| {
            let n = w.chars().count();
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| intern(Subword::new(c.to_string(), i + 1 == n), &mut table))
                .collect();
            (syms, f)
        })
        .collect();

    let mut merges = Vec::new();
    let mut frequencies = Vec::new();
    while merges.len() < num_merges {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += f;
            }
        }
        let best = counts.into_iter().max_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| {
                let ka = (&table[a.0 .0 as usize], &table[a.0 .1 as usize]);
                let kb = (&table[b.0 .0 as usize], &table[b.0 .1 as usize]);
                Reverse(ka).cmp(&Reverse(kb))
            })
        });
        let Some(((l, r), freq)) = best else { break };
        let (left, right) = (table[l as usize].clone(), table[r as usize].clone());
        let joined = Subword::new(format!("{}{}", left.text, right.text), right.word_final);
        let id = intern(joined, &mut table);
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((left, right));
        frequencies.push(freq);
    }
    let mut learned = MergeTable::from_merges(merges)?;
    learned.frequencies = frequencies;
    Ok(learned)
}

/// Segments every word of `words`.
pub fn apply_bpe<S: AsRef<str>>(words: &[S], table: &MergeTable) -> Vec<Subword> {
    words.iter().flat_map(|w| table.apply_word(w.as_ref())).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detokenized {
    pub words: Vec<String>,
    /// The sequence ended inside a word; that word was closed anyway.
    pub dangling: bool,
}

/// Joins subwords back into words, closing a word at every word-final subword.
pub fn detokenize_bpe(subwords: &[Subword]) -> Detokenized {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for s in subwords {
        current.push_str(&s.text);
        open = true;
        if s.word_final {
            words.push(std::mem::take(&mut current));
            open = false;
        }
    }
    if open {
        words.push(current);
    }
    Detokenized { words, dangling: open }
}

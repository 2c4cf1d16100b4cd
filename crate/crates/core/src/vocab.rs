//! Token ↔ id maps with fixed reserved ids.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::bpe::Subword;
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Subword>,
    index: HashMap<Subword, TokenId>,
}

impl Vocabulary {
    fn reserved_only() -> Self {
        Self {
            tokens: RESERVED.iter().map(|r| Subword::new(*r, false)).collect(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, s: Subword) -> TokenId {
        let id = self.tokens.len();
        self.index.insert(s.clone(), id);
        self.tokens.push(s);
        id
    }

    pub fn from_subwords(subwords: impl IntoIterator<Item = Subword>) -> Result<Self> {
        let mut v = Self::reserved_only();
        for s in subwords {
            if v.index.contains_key(&s) {
                return Err(Error::Invalid(format!("duplicate token {s}")));
            }
            v.push(s);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id < RESERVED.len()
    }

    pub fn token(&self, id: TokenId) -> &Subword {
        &self.tokens[id]
    }

    pub fn get(&self, id: TokenId) -> Option<&Subword> {
        self.tokens.get(id)
    }

    pub fn id(&self, s: &Subword) -> Option<TokenId> {
        self.index.get(s).copied()
    }

    pub fn id_or_unk(&self, s: &Subword) -> TokenId {
        self.id(s).unwrap_or(UNK)
    }

    /// Non-reserved (id, subword) pairs.
    pub fn pieces(&self) -> impl Iterator<Item = (TokenId, &Subword)> {
        self.tokens.iter().enumerate().skip(RESERVED.len())
    }

    /// Characters that appear in any non-reserved token.
    pub fn alphabet(&self) -> BTreeSet<char> {
        self.pieces().flat_map(|(_, s)| s.text.chars()).collect()
    }

    /// Adds every character of `chars` as a single-character token in both
    /// its word-internal and word-final form, so any word over the alphabet
    /// can be spelled out.
    pub fn with_alphabet(mut self, chars: impl IntoIterator<Item = char>) -> Self {
        let chars: BTreeSet<char> = chars.into_iter().collect();
        for c in chars {
            for word_final in [false, true] {
                let s = Subword::new(c.to_string(), word_final);
                if !self.index.contains_key(&s) {
                    self.push(s);
                }
            }
        }
        self
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, s) in self.tokens.iter().enumerate() {
            writeln!(out, "{s}\t{id}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut v = Self::reserved_only();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Parse(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Parse(format!("vocab line {}: bad id {id:?}", n + 1)))?;
            if id < RESERVED.len() {
                if tok != RESERVED[id] {
                    return Err(Error::Parse(format!("reserved id {id} must be {}", RESERVED[id])));
                }
                continue;
            }
            if id != v.len() {
                return Err(Error::Parse(format!("vocab ids not dense at line {}", n + 1)));
            }
            let s = Subword::parse_marked(tok);
            if v.index.contains_key(&s) {
                return Err(Error::Parse(format!("duplicate token {tok:?}")));
            }
            v.push(s);
        }
        Ok(v)
    }
}

/// Builds a vocabulary from segmented sentences. Ids follow frequency
/// (descending) and then the subword ordering.
pub fn build_vocab(corpus: &[Vec<Subword>]) -> Vocabulary {
    let mut counts: HashMap<&Subword, usize> = HashMap::new();
    for s in corpus.iter().flatten() {
        *counts.entry(s).or_default() += 1;
    }
    let mut entries: Vec<(&Subword, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_subwords(entries.into_iter().map(|(s, _)| s.clone()))
        .expect("counted subwords are distinct")
}

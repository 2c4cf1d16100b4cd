//! Generated parallel corpora with controllable repetition.
//!
//! The general domain is a toy language pair whose words are built from
//! syllables and translated syllable by syllable. The template domain reuses
//! its vocabulary in fixed sentence frames whose frame words have
//! idiosyncratic translations, so they can only be learned from examples.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::ParallelCorpus;

const SRC_SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ne", "su", "ta", "ri", "po", "le", "mu", "sa", "ti", "ro", "pe", "ku", "na"];
const TRG_SYLLABLES: [&str; 16] =
    ["be", "do", "fa", "gi", "hu", "ve", "zo", "wa", "bi", "du", "fe", "go", "ha", "vi", "zu", "we"];

/// A word-by-word language pair with a fixed lexicon.
#[derive(Clone, Debug)]
pub struct SyntheticLanguage {
    /// Source syllable index sequences.
    words: Vec<Vec<usize>>,
}

fn spell(syllables: &[usize], table: &[&str]) -> String {
    syllables.iter().map(|&s| table[s]).collect()
}

impl SyntheticLanguage {
    /// `lexicon_size` distinct source words of one to three syllables.
    pub fn new(lexicon_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(lexicon_size);
        while words.len() < lexicon_size {
            let len = rng.random_range(1..=3);
            let w: Vec<usize> = (0..len).map(|_| rng.random_range(0..SRC_SYLLABLES.len())).collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        Self { words }
    }

    pub fn lexicon_size(&self) -> usize {
        self.words.len()
    }

    pub fn source_word(&self, i: usize) -> String {
        spell(&self.words[i], &SRC_SYLLABLES)
    }

    pub fn target_word(&self, i: usize) -> String {
        spell(&self.words[i], &TRG_SYLLABLES)
    }

    /// Random sentence of `min..=max` lexicon words.
    pub fn sentence<R: Rng>(&self, rng: &mut R, min: usize, max: usize) -> (Vec<String>, Vec<String>) {
        let len = rng.random_range(min..=max);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..self.words.len())).collect();
        (ids.iter().map(|&i| self.source_word(i)).collect(), ids.iter().map(|&i| self.target_word(i)).collect())
    }

    /// `n` random sentences of 3 to 7 words.
    pub fn general_corpus(&self, n: usize, seed: u64) -> ParallelCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (src, trg) = (0..n).map(|_| self.sentence(&mut rng, 3, 7)).unzip();
        ParallelCorpus::new(src, trg).expect("generated sentences are non-empty")
    }

    /// Sentences from the general distribution in which no n-gram (n = 2..4)
    /// that is absent from `training` occurs more than once.
    pub fn control_corpus(&self, training: &ParallelCorpus, n: usize, seed: u64) -> ParallelCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        for s in training.src.iter().chain(&training.trg) {
            for k in 1..=4 {
                seen.extend(s.windows(k).map(<[String]>::to_vec));
            }
        }
        let mut used: HashSet<Vec<String>> = HashSet::new();
        let (mut src, mut trg) = (Vec::new(), Vec::new());
        while src.len() < n {
            let (s, t) = self.sentence(&mut rng, 3, 7);
            let fresh: Vec<Vec<String>> = [&s, &t]
                .iter()
                .flat_map(|side| (1..=4).flat_map(move |k| side.windows(k).map(<[String]>::to_vec)))
                .filter(|g| !seen.contains(g))
                .collect();
            let unique: HashSet<&Vec<String>> = fresh.iter().collect();
            if unique.len() == fresh.len() && fresh.iter().all(|g| !used.contains(g)) {
                used.extend(fresh);
                src.push(s);
                trg.push(t);
            }
        }
        ParallelCorpus::new(src, trg).expect("generated sentences are non-empty")
    }

    /// `templates` sentence frames, each used `per_template` times with
    /// random slot fillers; sentences are shuffled.
    pub fn template_corpus(&self, templates: usize, per_template: usize, seed: u64) -> ParallelCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lexicon: HashSet<Vec<usize>> = self.words.iter().cloned().collect();
        let mut frame_words = HashSet::new();
        let mut new_frame_word = |rng: &mut ChaCha8Rng| loop {
            let src: Vec<usize> = (0..2).map(|_| rng.random_range(0..SRC_SYLLABLES.len())).collect();
            let trg: Vec<usize> = (0..2).map(|_| rng.random_range(0..TRG_SYLLABLES.len())).collect();
            if !lexicon.contains(&src) && src != trg && frame_words.insert(src.clone()) {
                return (spell(&src, &SRC_SYLLABLES), spell(&trg, &TRG_SYLLABLES));
            }
        };
        // a frame is a sequence of slots (None) and fixed words
        let frames: Vec<Vec<Option<(String, String)>>> = (0..templates)
            .map(|_| {
                let mut f: Vec<Option<(String, String)>> = (0..3).map(|_| Some(new_frame_word(&mut rng))).collect();
                f.extend([None, None]);
                f.shuffle(&mut rng);
                f
            })
            .collect();
        let mut pairs = Vec::with_capacity(templates * per_template);
        for frame in &frames {
            for _ in 0..per_template {
                let (mut s, mut t) = (Vec::new(), Vec::new());
                for slot in frame {
                    match slot {
                        Some((a, b)) => {
                            s.push(a.clone());
                            t.push(b.clone());
                        }
                        None => {
                            let i = rng.random_range(0..self.words.len());
                            s.push(self.source_word(i));
                            t.push(self.target_word(i));
                        }
                    }
                }
                pairs.push((s, t));
            }
        }
        pairs.shuffle(&mut rng);
        let (src, trg) = pairs.into_iter().unzip();
        ParallelCorpus::new(src, trg).expect("generated sentences are non-empty")
    }
}

/// Target equals source: `n` sequences of 3 to 8 letters, each letter a
/// word.
pub fn copy_corpus(n: usize, seed: u64) -> ParallelCorpus {
    let letters: Vec<String> = ('a'..='z').map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.random_range(3..=8);
            (0..len).map(|_| letters.choose(&mut rng).expect("alphabet is non-empty").clone()).collect()
        })
        .collect();
    ParallelCorpus::new(src.clone(), src).expect("generated sentences are non-empty")
}

/// A stream of the same length whose tokens are drawn uniformly from the
/// types of `stream`.
pub fn shuffled_vocabulary<T: Clone + Ord>(stream: &[T], seed: u64) -> Vec<T> {
    let types: Vec<T> = stream.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..stream.len()).map(|_| types.choose(&mut rng).expect("stream is non-empty").clone()).collect()
}

/// Concatenated tokens of a list of sentences.
pub fn token_stream(sentences: &[Vec<String>]) -> Vec<&str> {
    sentences.iter().flatten().map(String::as_str).collect()
}

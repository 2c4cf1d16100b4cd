//! A trained system: model parameters, the joint BPE table and both
//! vocabularies, plus the word-level entry points built on them.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bpe::{apply_bpe, learn_bpe, MergeTable, Subword};
use crate::decode::{beam_search, detokenize_ids, Hypothesis, SearchOptions, Segmenter};
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::model::{Checkpoint, ModelConfig, ModelParams};
use crate::train::{train, OptimizerState, Pair, TrainConfig, TrainOutcome};
use crate::vocab::{build_vocab, TokenId, Vocabulary, UNK};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CODES_FILE: &str = "bpe.codes";
pub const SRC_VOCAB_FILE: &str = "src.vocab";
pub const TRG_VOCAB_FILE: &str = "trg.vocab";
pub const HISTORY_FILE: &str = "history.tsv";

/// Splits a pre-tokenized line on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

/// Sentence-aligned source and target text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub src: Vec<Vec<String>>,
    pub trg: Vec<Vec<String>>,
}

impl ParallelCorpus {
    pub fn new(src: Vec<Vec<String>>, trg: Vec<Vec<String>>) -> Result<Self> {
        if src.len() != trg.len() {
            return Err(Error::Invalid(format!("{} source lines but {} target lines", src.len(), trg.len())));
        }
        if let Some(i) = src.iter().zip(&trg).position(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(Error::Invalid(format!("empty sentence at line {}", i + 1)));
        }
        Ok(Self { src, trg })
    }

    pub fn from_lines<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self> {
        let (src, trg) = pairs.iter().map(|(s, t)| (tokenize(s.as_ref()), tokenize(t.as_ref()))).unzip();
        Self::new(src, trg)
    }

    pub fn read(src: impl AsRef<Path>, trg: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_sentences(src)?, read_sentences(trg)?)
    }

    pub fn write(&self, src: impl AsRef<Path>, trg: impl AsRef<Path>) -> Result<()> {
        write_sentences(&self.src, src)?;
        write_sentences(&self.trg, trg)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], &[String])> {
        self.src.iter().zip(&self.trg).map(|(s, t)| (s.as_slice(), t.as_slice()))
    }

    pub fn take(&self, n: usize) -> Self {
        Self { src: self.src[..n.min(self.len())].to_vec(), trg: self.trg[..n.min(self.len())].to_vec() }
    }

    fn chars(&self) -> BTreeSet<char> {
        self.src.iter().chain(&self.trg).flatten().flat_map(|w| w.chars()).collect()
    }
}

/// One tokenized sentence per line; blank lines are kept as empty sentences.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let reader = BufReader::new(File::open(path)?);
    reader.lines().map(|l| Ok(tokenize(&l?))).collect()
}

pub fn write_sentences(sentences: &[Vec<String>], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in sentences {
        writeln!(out, "{}", s.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// A hypothesis together with its word and string forms.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub hypothesis: Hypothesis,
    pub words: Vec<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Engine {
    pub params: ModelParams,
    pub merges: MergeTable,
    pub src_vocab: Vocabulary,
    pub trg_vocab: Vocabulary,
}

impl Engine {
    pub fn new(params: ModelParams, merges: MergeTable, src_vocab: Vocabulary, trg_vocab: Vocabulary) -> Result<Self> {
        let cfg = params.config();
        if cfg.src_vocab != src_vocab.len() || cfg.trg_vocab != trg_vocab.len() {
            return Err(Error::Shape(format!(
                "model expects vocabularies of {}/{} tokens, got {}/{}",
                cfg.src_vocab,
                cfg.trg_vocab,
                src_vocab.len(),
                trg_vocab.len()
            )));
        }
        Ok(Self { params, merges, src_vocab, trg_vocab })
    }

    /// Learns joint BPE over every side of `corpora`, builds both
    /// vocabularies and draws fresh parameters. The vocabulary sizes in
    /// `dims` are replaced.
    pub fn initialize(corpora: &[&ParallelCorpus], num_merges: usize, dims: ModelConfig, seed: u64) -> Result<Self> {
        let sentences: Vec<Vec<String>> =
            corpora.iter().flat_map(|c| c.src.iter().chain(&c.trg)).cloned().collect();
        let merges = learn_bpe(&sentences, num_merges)?;
        let chars: BTreeSet<char> = corpora.iter().flat_map(|c| c.chars()).collect();
        let segment = |side: fn(&ParallelCorpus) -> &Vec<Vec<String>>| -> Vec<Vec<Subword>> {
            corpora.iter().flat_map(|c| side(c).iter().map(|s| apply_bpe(s, &merges))).collect()
        };
        let src_vocab = build_vocab(&segment(|c| &c.src)).with_alphabet(chars.iter().copied());
        let trg_vocab = build_vocab(&segment(|c| &c.trg)).with_alphabet(chars.iter().copied());
        let config = ModelConfig { src_vocab: src_vocab.len(), trg_vocab: trg_vocab.len(), ..dims };
        let params = ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::new(params, merges, src_vocab, trg_vocab)
    }

    pub fn segmenter(&self) -> Segmenter<'_> {
        Segmenter::new(&self.merges, &self.trg_vocab)
    }

    /// Source ids; pieces missing from the vocabulary are spelled out, and
    /// characters it has never seen become `<unk>`.
    pub fn source_ids<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        if words.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        let mut ids = Vec::new();
        for piece in apply_bpe(words, &self.merges) {
            if let Some(id) = self.src_vocab.id(&piece) {
                ids.push(id);
                continue;
            }
            let n = piece.char_len();
            for (i, c) in piece.text.chars().enumerate() {
                let s = Subword::new(c.to_string(), piece.word_final && i + 1 == n);
                ids.push(self.src_vocab.id(&s).unwrap_or(UNK));
            }
        }
        Ok(ids)
    }

    /// Target ids ending in `</s>`.
    pub fn target_ids(&self, words: &[String]) -> Result<Vec<TokenId>> {
        if words.is_empty() {
            return Err(Error::Empty("target sentence"));
        }
        self.segmenter().sentence(words)
    }

    pub fn pair(&self, src: &[String], trg: &[String]) -> Result<Pair> {
        Ok(Pair::new(self.source_ids(src)?, self.target_ids(trg)?))
    }

    pub fn pairs(&self, corpus: &ParallelCorpus) -> Result<Vec<Pair>> {
        corpus.iter().map(|(s, t)| self.pair(s, t)).collect()
    }

    pub fn render(&self, hypothesis: Hypothesis) -> Translation {
        let words = detokenize_ids(&self.trg_vocab, hypothesis.content()).words;
        let text = words.join(" ");
        Translation { hypothesis, words, text }
    }

    pub fn translate<S: AsRef<str>>(&self, words: &[S], opts: &SearchOptions) -> Result<Translation> {
        translate_with(&self.params, self, words, opts)
    }

    /// Corpus BLEU of `params` decoding every source of `corpus`.
    pub fn bleu_with(&self, params: &ModelParams, corpus: &ParallelCorpus, opts: &SearchOptions) -> Result<f64> {
        let hyps = corpus
            .src
            .iter()
            .map(|s| Ok(translate_with(params, self, s, opts)?.words))
            .collect::<Result<Vec<_>>>()?;
        bleu(&hyps, &corpus.trg)
    }

    /// Trains on `train_set` with dev-BLEU early stopping and keeps the best
    /// parameters.
    pub fn fit(
        &mut self,
        train_set: &ParallelCorpus,
        dev: &ParallelCorpus,
        optimizer: OptimizerState,
        config: &TrainConfig,
        dev_opts: &SearchOptions,
    ) -> Result<TrainOutcome> {
        let pairs = self.pairs(train_set)?;
        let outcome = train(self.params.clone(), optimizer, &pairs, config, |p| self.bleu_with(p, dev, dev_opts))?;
        self.params = outcome.params.clone();
        Ok(outcome)
    }

    /// Writes the model (with optional optimizer state), BPE codes and both
    /// vocabularies into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, optimizer: Option<&OptimizerState>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut ck = Checkpoint::from_model(&self.params);
        if let Some(opt) = optimizer {
            opt.write_checkpoint(&mut ck);
        }
        ck.save(dir.join(MODEL_FILE))?;
        write_file(dir.join(CODES_FILE), |w| self.merges.write_to(w))?;
        write_file(dir.join(SRC_VOCAB_FILE), |w| self.src_vocab.write_to(w))?;
        write_file(dir.join(TRG_VOCAB_FILE), |w| self.trg_vocab.write_to(w))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_optimizer(dir)?.0)
    }

    pub fn load_with_optimizer(dir: impl AsRef<Path>) -> Result<(Self, Option<OptimizerState>)> {
        let dir = dir.as_ref();
        let ck = Checkpoint::load(dir.join(MODEL_FILE))?;
        let params = ck.to_model()?;
        let opt = match ck.meta.contains_key("opt.algorithm") {
            true => Some(OptimizerState::read_checkpoint(&ck, params.tensors())?),
            false => None,
        };
        let merges = MergeTable::read_from(open(dir.join(CODES_FILE))?)?;
        let src_vocab = Vocabulary::read_from(open(dir.join(SRC_VOCAB_FILE))?)?;
        let trg_vocab = Vocabulary::read_from(open(dir.join(TRG_VOCAB_FILE))?)?;
        Ok((Self::new(params, merges, src_vocab, trg_vocab)?, opt))
    }
}

/// Decodes with `params` instead of the engine's own parameters.
pub fn translate_with<S: AsRef<str>>(
    params: &ModelParams,
    engine: &Engine,
    words: &[S],
    opts: &SearchOptions,
) -> Result<Translation> {
    let src = engine.source_ids(words)?;
    let result = beam_search(params, &src, opts)?;
    Ok(engine.render(result.best))
}

fn open(path: impl AsRef<Path>) -> Result<BufReader<File>> {
    let path = path.as_ref();
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

//! Python module `imtforge`: engines, interactive sessions, simulation and
//! metrics.

use imtforge::decode::SearchOptions;
use imtforge::engine::{tokenize, Engine, ParallelCorpus};
use imtforge::metrics;
use imtforge::model::ModelConfig;
use imtforge::session::{FeedbackEvent, SessionRecord};
use imtforge::simulate::{simulate as run_simulation, Level, SimulationConfig, SimulationReport};
use imtforge::synthetic::{copy_corpus, SyntheticLanguage};
use imtforge::train::{online_update, Algorithm, OptimizerState, StopReason, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: imtforge::Error) -> PyErr {
    use imtforge::Error::*;
    match e {
        InvalidPosition { .. } | InvalidFeedback(_) | AlphabetMismatch(_) | Invalid(_) | Empty(_) | Parse(_)
        | SessionInactive(_) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(err)
}

fn level(name: &str) -> PyResult<Level> {
    name.parse().map_err(err)
}

fn corpus(src: Vec<String>, trg: Vec<String>) -> PyResult<ParallelCorpus> {
    ParallelCorpus::new(src.iter().map(|s| tokenize(s)).collect(), trg.iter().map(|s| tokenize(s)).collect())
        .map_err(err)
}

fn lines(sentences: &[Vec<String>]) -> Vec<String> {
    sentences.iter().map(|s| s.join(" ")).collect()
}

/// A translation model with its BPE codes and vocabularies.
#[pyclass(name = "Engine", module = "imtforge")]
struct PyEngine {
    inner: Engine,
    optimizer: Option<OptimizerState>,
}

#[pymethods]
impl PyEngine {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Engine::load(path).map_err(err)?, optimizer: None })
    }

    /// Trains a new model; returns the engine and its (update, dev BLEU,
    /// train loss) history.
    #[staticmethod]
    #[pyo3(signature = (src, trg, dev_src, dev_trg, merges=100, dim=32, standard_lstm_output=false,
        optimizer="adam", lr=None, batch_size=8, eval_interval=200, patience=20, max_updates=3000,
        noise_std=0.0, seed=1, beam=1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        src: Vec<String>,
        trg: Vec<String>,
        dev_src: Vec<String>,
        dev_trg: Vec<String>,
        merges: usize,
        dim: usize,
        standard_lstm_output: bool,
        optimizer: &str,
        lr: Option<f64>,
        batch_size: usize,
        eval_interval: usize,
        patience: usize,
        max_updates: usize,
        noise_std: f64,
        seed: u64,
        beam: usize,
    ) -> PyResult<(Self, Vec<(usize, f64, f64)>)> {
        let train = corpus(src, trg)?;
        let dev = corpus(dev_src, dev_trg)?;
        let alg = algorithm(optimizer)?;
        let dims = ModelConfig {
            src_vocab: 0,
            trg_vocab: 0,
            embed_dim: dim,
            hidden_dim: dim,
            output_dim: dim,
            standard_lstm_output,
        };
        let cfg = TrainConfig { batch_size, eval_interval, patience, max_updates, noise_std, seed, ..Default::default() };
        let mut engine = Engine::initialize(&[&train], merges, dims, seed).map_err(err)?;
        let opt = OptimizerState::new(alg, lr.unwrap_or(alg.default_lr()), engine.params.tensors()).map_err(err)?;
        let out = engine.fit(&train, &dev, opt, &cfg, &SearchOptions::beam(beam)).map_err(err)?;
        if let StopReason::Diverged { update } = out.stop {
            return Err(PyRuntimeError::new_err(format!("training diverged at update {update}")));
        }
        let history = out.history.iter().map(|h| (h.update, h.dev_bleu, h.train_loss)).collect();
        Ok((Self { inner: engine, optimizer: None }, history))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path, None).map_err(err)
    }

    #[pyo3(signature = (text, beam=6))]
    fn translate(&self, text: &str, beam: usize) -> PyResult<String> {
        let words = tokenize(text);
        Ok(self.inner.translate(&words, &SearchOptions::beam(beam)).map_err(err)?.text)
    }

    /// One online update on a sentence pair; returns the loss before it.
    /// The optimizer state persists across calls with the same settings.
    #[pyo3(signature = (source, target, optimizer="sgd", lr=None, clip_norm=5.0))]
    fn adapt(&mut self, source: &str, target: &str, optimizer: &str, lr: Option<f64>, clip_norm: f64) -> PyResult<f64> {
        let alg = algorithm(optimizer)?;
        let lr = lr.unwrap_or(alg.default_lr());
        let fresh = self.optimizer.as_ref().is_none_or(|o| o.algorithm != alg || o.lr != lr);
        if fresh {
            self.optimizer = Some(OptimizerState::new(alg, lr, self.inner.params.tensors()).map_err(err)?);
        }
        let pair = self.inner.pair(&tokenize(source), &tokenize(target)).map_err(err)?;
        let opt = self.optimizer.as_mut().expect("optimizer was just set");
        online_update(&mut self.inner.params, opt, &pair.src, &pair.trg, clip_norm).map_err(err)
    }

    /// Hex digest of the parameters.
    #[getter]
    fn fingerprint(&self) -> String {
        format!("{:016x}", self.inner.params.fingerprint())
    }

    #[getter]
    fn vocab_sizes(&self) -> (usize, usize) {
        (self.inner.src_vocab.len(), self.inner.trg_vocab.len())
    }

    fn __repr__(&self) -> String {
        let c = self.inner.params.config();
        format!("Engine(vocab={}/{}, dims={}/{}/{})", c.src_vocab, c.trg_vocab, c.embed_dim, c.hidden_dim, c.output_dim)
    }
}

/// An interactive session on an engine.
#[pyclass(name = "Session", module = "imtforge")]
struct PySession {
    engine: Py<PyEngine>,
    inner: SessionRecord,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (engine, source, beam=6))]
    fn new(py: Python<'_>, engine: Py<PyEngine>, source: &str, beam: usize) -> PyResult<Self> {
        let inner = SessionRecord::start(&engine.borrow(py).inner, &tokenize(source), SearchOptions::beam(beam)).map_err(err)?;
        Ok(Self { engine, inner })
    }

    #[getter]
    fn text(&self) -> String {
        self.inner.text().to_owned()
    }

    #[getter]
    fn words(&self) -> Vec<String> {
        self.inner.words().to_vec()
    }

    #[getter]
    fn keystrokes(&self) -> usize {
        self.inner.keystrokes
    }

    #[getter]
    fn mouse_actions(&self) -> usize {
        self.inner.mouse_actions
    }

    #[getter]
    fn active(&self) -> bool {
        self.inner.is_active()
    }

    /// Validated prefix.
    #[getter]
    fn constraint(&self) -> String {
        self.inner.constraint.text()
    }

    fn char_feedback(&mut self, py: Python<'_>, position: usize, ch: char) -> PyResult<String> {
        let engine = self.engine.borrow(py);
        self.inner.apply_char_feedback(&engine.inner, position, ch).map_err(err)?;
        Ok(self.text())
    }

    fn word_feedback(&mut self, py: Python<'_>, position: usize, word: &str) -> PyResult<String> {
        let engine = self.engine.borrow(py);
        self.inner.apply_word_feedback(&engine.inner, position, word).map_err(err)?;
        Ok(self.text())
    }

    /// Accepts the hypothesis and returns the final text. With `adapt`, the
    /// engine learns from the accepted pair.
    #[pyo3(signature = (truncate_at=None, adapt=false, optimizer="sgd", lr=None))]
    fn accept(
        &mut self,
        py: Python<'_>,
        truncate_at: Option<usize>,
        adapt: bool,
        optimizer: &str,
        lr: Option<f64>,
    ) -> PyResult<String> {
        self.inner.accept(&self.engine.borrow(py).inner, truncate_at).map_err(err)?;
        if adapt {
            let source = self.inner.source_words.join(" ");
            self.engine.borrow_mut(py).adapt(&source, self.inner.text(), optimizer, lr, 5.0)?;
        }
        Ok(self.text())
    }

    /// `(kind, position, value, keystrokes, mouse_actions, hypothesis)` per
    /// event.
    fn log(&self) -> Vec<(String, Option<usize>, Option<String>, usize, usize, String)> {
        self.inner
            .log
            .iter()
            .map(|e| {
                let (pos, value) = match &e.event {
                    FeedbackEvent::Start => (None, None),
                    FeedbackEvent::Char { position, ch } => (Some(*position), Some(ch.to_string())),
                    FeedbackEvent::Word { position, word } => (Some(*position), Some(word.clone())),
                    FeedbackEvent::Accept { truncate_at } => (*truncate_at, None),
                };
                (e.event.kind().to_owned(), pos, value, e.keystrokes, e.mouse_actions, e.hypothesis.clone())
            })
            .collect()
    }
}

fn report_dict<'py>(py: Python<'py>, r: &SimulationReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("ksmr", r.ksmr().map_err(err)?)?;
    d.set_item("ter", r.ter())?;
    d.set_item("keystrokes", r.keystrokes())?;
    d.set_item("mouse_actions", r.mouse_actions())?;
    d.set_item("ref_chars", r.ref_chars())?;
    d.set_item("cumulative_ksmr", r.cumulative_ksmr())?;
    let per: Vec<(usize, usize, usize)> = r.sentences.iter().map(|s| (s.keystrokes, s.mouse_actions, s.ref_chars)).collect();
    d.set_item("sentences", per)?;
    Ok(d)
}

/// Simulated users correcting every test sentence to its reference.
#[pyfunction]
#[pyo3(signature = (engine, src, trg, level="char", adaptive=false, optimizer="sgd", lr=None, beam=6, clip_norm=5.0))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    engine: &PyEngine,
    src: Vec<String>,
    trg: Vec<String>,
    level: &str,
    adaptive: bool,
    optimizer: &str,
    lr: Option<f64>,
    beam: usize,
    clip_norm: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let alg = algorithm(optimizer)?;
    let config = SimulationConfig {
        level: self::level(level)?,
        adaptive,
        algorithm: alg,
        lr: lr.unwrap_or(alg.default_lr()),
        beam,
        clip_norm,
        ..Default::default()
    };
    let test = corpus(src, trg)?;
    let report = run_simulation(&mut engine.inner.clone(), &test, &config).map_err(err)?;
    report_dict(py, &report)
}

#[pyfunction]
fn bleu(hyps: Vec<String>, refs: Vec<String>) -> PyResult<f64> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize(s)).collect();
    metrics::bleu(&h, &r).map_err(err)
}

#[pyfunction]
fn ter(hyp: &str, reference: &str) -> PyResult<f64> {
    metrics::ter(&tokenize(hyp), &tokenize(reference)).map_err(err)
}

#[pyfunction]
fn ksmr(keystrokes: usize, mouse_actions: usize, reference_chars: usize) -> PyResult<f64> {
    metrics::ksmr(keystrokes, mouse_actions, reference_chars).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (tokens, window=100))]
fn repetition_rate(tokens: Vec<String>, window: usize) -> PyResult<f64> {
    metrics::repetition_rate(&tokens, window).map_err(err)
}

/// Synthetic parallel text: `copy`, `general`, `template` or `control`.
#[pyfunction]
#[pyo3(signature = (kind, size, seed=1, lexicon=60, language_seed=11))]
fn fixture(kind: &str, size: usize, seed: u64, lexicon: usize, language_seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    let lang = SyntheticLanguage::new(lexicon, language_seed);
    let c = match kind {
        "copy" => copy_corpus(size, seed),
        "general" => lang.general_corpus(size, seed),
        "template" => lang.template_corpus(3, size.div_ceil(3), seed).take(size),
        "control" => lang.control_corpus(&lang.general_corpus(1500, 12), size, seed),
        _ => return Err(PyValueError::new_err(format!("unknown fixture {kind:?}"))),
    };
    Ok((lines(&c.src), lines(&c.trg)))
}

#[pymodule(name = "imtforge")]
fn imtforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(ter, m)?)?;
    m.add_function(wrap_pyfunction!(ksmr, m)?)?;
    m.add_function(wrap_pyfunction!(repetition_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    Ok(())
}

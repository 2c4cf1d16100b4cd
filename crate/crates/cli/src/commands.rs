use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use imtforge::bpe::learn_bpe;
use imtforge::decode::SearchOptions;
use imtforge::engine::{read_sentences, tokenize, Engine, ParallelCorpus, HISTORY_FILE};
use imtforge::metrics::{
    bleu, bootstrap_ci, repetition_rate, restricted_repetition_rate, ter_edits, unseen_ngram_fraction,
    write_metric_report, MetricLine,
};
use imtforge::model::ModelConfig;
use imtforge::simulate::{simulate, static_and_adaptive, SimulationConfig, SimulationReport};
use imtforge::synthetic::{copy_corpus, token_stream, SyntheticLanguage};
use imtforge::train::{write_history, Algorithm, OptimizerState, StopReason, TrainConfig};
use imtforge_server::{AppState, ServiceConfig};

use crate::args::*;
use crate::error::{usage, CliError};
use crate::interactive;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::LearnBpe(a) => learn(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Interactive(a) => {
            let engine = load(&a.ckpt)?;
            let stdin = io::stdin();
            interactive::run(engine, &a, stdin.lock(), io::stdout().lock())
        }
        Command::Simulate(a) => simulate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingFile(path.to_owned()))
    }
}

fn load(ckpt: &Path) -> Result<Engine> {
    exists(ckpt)?;
    Ok(Engine::load(ckpt)?)
}

fn read_corpus(src: &Path, trg: &Path) -> Result<ParallelCorpus> {
    exists(src)?;
    exists(trg)?;
    ParallelCorpus::read(src, trg).map_err(|e| match e {
        imtforge::Error::Invalid(m) => usage(format!("{} / {}: {m}", src.display(), trg.display())),
        e => e.into(),
    })
}

fn positive(name: &str, x: usize) -> Result<()> {
    if x == 0 {
        return Err(usage(format!("--{name} must be at least 1")));
    }
    Ok(())
}

fn learning_rate(lr: Option<f64>, algorithm: Algorithm) -> Result<f64> {
    let lr = lr.unwrap_or_else(|| algorithm.default_lr());
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(usage(format!("--lr must be positive, got {lr}")));
    }
    Ok(lr)
}

fn learn(a: LearnBpeArgs) -> Result<()> {
    let mut sentences = Vec::new();
    for p in &a.input {
        exists(p)?;
        sentences.extend(read_sentences(p)?);
    }
    let table = learn_bpe(&sentences, a.merges)?;
    table.write_to(BufWriter::new(File::create(&a.out)?))?;
    eprintln!("learned {} merges from {} sentences", table.len(), sentences.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let train = read_corpus(&a.src, &a.trg)?;
    let dev = read_corpus(&a.dev_src, &a.dev_trg)?;
    for (name, x) in [("embed-dim", a.embed_dim), ("hidden-dim", a.hidden_dim), ("output-dim", a.output_dim), ("beam", a.beam)] {
        positive(name, x)?;
    }
    let algorithm: Algorithm = a.optimizer.into();
    let lr = learning_rate(a.lr, algorithm)?;
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        clip_norm: a.clip_norm,
        noise_std: a.noise_std,
        eval_interval: a.eval_interval,
        patience: a.patience,
        max_updates: a.max_updates,
        seed: a.seed,
    };
    cfg.validate().map_err(usage)?;
    let dims = ModelConfig {
        src_vocab: 0,
        trg_vocab: 0,
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        output_dim: a.output_dim,
        standard_lstm_output: a.standard_lstm_output,
    };
    let mut engine = Engine::initialize(&[&train], a.merges, dims, a.seed)?;
    let opt = OptimizerState::new(algorithm, lr, engine.params.tensors())?;
    let outcome = engine.fit(&train, &dev, opt, &cfg, &SearchOptions::beam(a.beam))?;
    engine.save(&a.out, None)?;
    let mut history = BufWriter::new(File::create(a.out.join(HISTORY_FILE))?);
    write_history(&outcome.history, &mut history)?;
    history.flush()?;
    println!(
        "stop {:?}; best dev BLEU {:.4} at update {}; vocabularies {}/{}",
        outcome.stop,
        outcome.best_bleu,
        outcome.best_update,
        engine.src_vocab.len(),
        engine.trg_vocab.len()
    );
    match outcome.stop {
        StopReason::Diverged { update } => Err(CliError::Diverged(update)),
        _ => Ok(()),
    }
}

fn translate(a: TranslateArgs) -> Result<()> {
    positive("beam", a.beam)?;
    let engine = load(&a.ckpt)?;
    let input: Box<dyn BufRead> = match &a.input {
        Some(p) => {
            exists(p)?;
            Box::new(BufReader::new(File::open(p)?))
        }
        None => Box::new(io::stdin().lock()),
    };
    let opts = SearchOptions::beam(a.beam);
    let mut out = io::stdout().lock();
    for line in input.lines() {
        let words = tokenize(&line?);
        if words.is_empty() {
            writeln!(out)?;
        } else {
            writeln!(out, "{}", engine.translate(&words, &opts)?.text)?;
        }
    }
    Ok(())
}

/// `report.csv` -> `report.static.csv`.
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn report_lines(name: &str, r: &SimulationReport, a: &SimulateArgs) -> Result<Vec<MetricLine>> {
    let n = r.sentences.len();
    let hyps: Vec<&[String]> = r.sentences.iter().map(|s| s.first_hypothesis.as_slice()).collect();
    let refs: Vec<&[String]> = r.references.iter().map(Vec::as_slice).collect();
    let bleu_ci = bootstrap_ci(
        n,
        |idx| {
            let h: Vec<&[String]> = idx.iter().map(|&i| hyps[i]).collect();
            let rf: Vec<&[String]> = idx.iter().map(|&i| refs[i]).collect();
            bleu(&h, &rf).unwrap_or(f64::NAN)
        },
        a.ci_level,
        a.resamples,
        a.seed,
    )?;
    let line = |metric: &str, value: f64, ci| MetricLine { name: format!("{name}.{metric}"), value, ci };
    Ok(vec![
        line("ksmr", r.ksmr()?, Some(r.ksmr_ci(a.ci_level, a.resamples, a.seed)?)),
        line("ter", r.ter(), Some(r.ter_ci(a.ci_level, a.resamples, a.seed)?)),
        line("bleu", bleu_ci.point, Some(bleu_ci)),
        line("keystrokes", r.keystrokes() as f64, None),
        line("mouse_actions", r.mouse_actions() as f64, None),
        line("ref_chars", r.ref_chars() as f64, None),
    ])
}

fn write_csv(path: &Path, r: &SimulationReport, timing: bool) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    r.write_csv(&mut out, timing)?;
    out.flush()?;
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut engine = load(&a.ckpt)?;
    let test = read_corpus(&a.test_src, &a.test_trg)?;
    if test.is_empty() {
        return Err(usage(format!("{} is empty", a.test_src.display())));
    }
    if !(a.ci_level > 0.0 && a.ci_level < 1.0) || a.resamples == 0 {
        return Err(usage("--ci-level must lie in (0, 1) and --resamples be positive"));
    }
    let config = SimulationConfig {
        level: a.level.into(),
        adaptive: a.adaptive,
        algorithm: a.online.algorithm(),
        lr: learning_rate(a.online.lr, a.online.algorithm())?,
        beam: a.beam,
        max_sentences: a.max_sentences,
        seed: a.seed,
        clip_norm: a.online.clip_norm,
        word_completion: a.word_completion,
    };
    config.validate().map_err(usage)?;
    let mut lines = Vec::new();
    if a.compare {
        let (stat, adapt) = static_and_adaptive(&engine, &test, &config)?;
        lines.extend(report_lines("static", &stat, &a)?);
        lines.extend(report_lines("adaptive", &adapt, &a)?);
        let gap = adapt.ksmr_gap_ci(&stat, a.ci_level, a.resamples, a.seed)?;
        lines.push(MetricLine { name: "gap.ksmr".into(), value: gap.point, ci: Some(gap) });
        if let Some(p) = &a.csv {
            write_csv(&tagged(p, "static"), &stat, a.timing)?;
            write_csv(&tagged(p, "adaptive"), &adapt, a.timing)?;
        }
    } else {
        let report = simulate(&mut engine, &test, &config)?;
        let name = if a.adaptive { "adaptive" } else { "static" };
        lines.extend(report_lines(name, &report, &a)?);
        if let Some(p) = &a.csv {
            write_csv(p, &report, a.timing)?;
        }
    }
    write_metric_report(&lines, io::stdout().lock())?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    exists(&a.hyp)?;
    exists(&a.reference)?;
    let hyps = read_sentences(&a.hyp)?;
    let refs = read_sentences(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(usage(format!("{} hypotheses but {} references", hyps.len(), refs.len())));
    }
    if refs.is_empty() || refs.iter().any(Vec::is_empty) {
        return Err(usage(format!("{}: references must be non-empty lines", a.reference.display())));
    }
    if a.rr_window == 0 {
        return Err(usage("--rr-window must be at least 1"));
    }
    let n = refs.len();
    let edits: Vec<usize> = hyps.iter().zip(&refs).map(|(h, r)| ter_edits(h, r)).collect();
    let ter_of = |idx: &[usize]| {
        let e: usize = idx.iter().map(|&i| edits[i]).sum();
        let w: usize = idx.iter().map(|&i| refs[i].len()).sum();
        e as f64 / w as f64
    };
    let bleu_of = |idx: &[usize]| {
        let h: Vec<&Vec<String>> = idx.iter().map(|&i| &hyps[i]).collect();
        let r: Vec<&Vec<String>> = idx.iter().map(|&i| &refs[i]).collect();
        bleu(&h, &r).unwrap_or(f64::NAN)
    };
    let bleu_ci = bootstrap_ci(n, bleu_of, a.ci_level, a.resamples, a.seed)?;
    let ter_ci = bootstrap_ci(n, ter_of, a.ci_level, a.resamples, a.seed)?;
    let ref_stream = token_stream(&refs);
    let mut lines = vec![
        MetricLine { name: "bleu".into(), value: bleu_ci.point, ci: Some(bleu_ci) },
        MetricLine { name: "ter".into(), value: ter_ci.point, ci: Some(ter_ci) },
        MetricLine { name: "rr".into(), value: repetition_rate(&ref_stream, a.rr_window)?, ci: None },
    ];
    if let Some(t) = &a.train {
        exists(t)?;
        let train = read_sentences(t)?;
        let train_stream = token_stream(&train);
        lines.push(MetricLine {
            name: "rrr".into(),
            value: restricted_repetition_rate(&ref_stream, &train_stream, a.rr_window)?,
            ci: None,
        });
        lines.push(MetricLine { name: "unf".into(), value: unseen_ngram_fraction(&ref_stream, &train_stream)?, ci: None });
    }
    write_metric_report(&lines, io::stdout().lock())?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    exists(&a.ckpt)?;
    let config = ServiceConfig {
        addr: a.addr,
        checkpoint: a.ckpt.clone(),
        adapt: a.adapt,
        algorithm: a.online.algorithm(),
        lr: learning_rate(a.online.lr, a.online.algorithm())?,
        clip_norm: a.online.clip_norm,
        beam: a.beam,
        max_sessions: a.max_sessions,
        session_ttl: Duration::from_secs(a.session_ttl),
        token: a.token.filter(|t| !t.is_empty()),
    };
    config.validate().map_err(usage)?;
    let state = AppState::load(config)?;
    eprintln!("listening on http://{}", a.addr);
    imtforge_server::run(state)?;
    Ok(())
}

fn fixture(a: FixtureArgs) -> Result<()> {
    positive("size", a.size)?;
    let lang = || SyntheticLanguage::new(a.lexicon, a.language_seed);
    let corpus = match a.kind {
        FixtureKind::Copy => copy_corpus(a.size, a.seed),
        FixtureKind::General => lang().general_corpus(a.size, a.seed),
        FixtureKind::Template => {
            positive("templates", a.templates)?;
            lang().template_corpus(a.templates, a.size.div_ceil(a.templates), a.seed).take(a.size)
        }
        FixtureKind::Control => {
            let l = lang();
            l.control_corpus(&l.general_corpus(a.train_size, a.train_seed), a.size, a.seed)
        }
    };
    corpus.write(&a.out_src, &a.out_trg)?;
    eprintln!("wrote {} sentence pairs", corpus.len());
    Ok(())
}

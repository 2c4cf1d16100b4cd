//! Acceptance run: one PASS/FAIL line per criterion. Tolerances are the
//! constants below. Set `IMTFORGE_ACCEPTANCE_STRICT=1` to turn any FAIL
//! into a nonzero exit status.

mod common;

use std::collections::{HashMap, VecDeque};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use imtforge::bpe::{MergeTable, Subword};
use imtforge::decode::{build_vocabulary_mask, masked_constrained_search, PrefixConstraint, SearchOptions};
use imtforge::engine::{Engine, ParallelCorpus};
use imtforge::gradcheck::finite_difference_check;
use imtforge::metrics::*;
use imtforge::model::{ModelConfig, ModelParams, ParamId};
use imtforge::simulate::*;
use imtforge::synthetic::{copy_corpus, token_stream, SyntheticLanguage};
use imtforge::tensor::Tensor;
use imtforge::train::*;
use imtforge::vocab::Vocabulary;
use imtforge_server::ServiceConfig;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const COPY_BLEU_MIN: f64 = 0.99;
const COPY_MAX_UPDATES: usize = 3000;
const FUZZ_SESSIONS: usize = 500;
const RANDOM_CONSTRAINTS: usize = 1000;
const METRIC_TOL: f64 = 1e-12;
const SAMPLED_LONG_PAIRS: usize = 1000;
const KSMR_EXAMPLE: f64 = 0.10;
const CI_LEVEL: f64 = 0.95;
const CI_RESAMPLES: usize = 1000;
const ADAPT_BUDGET_S: f64 = 15.0 * 60.0;
const CHAR_WORD_KS_RATIO: f64 = 0.7;
const LATENCY_BUDGET_MS: f64 = 300.0;
const LATENCY_MAX_TOKENS: usize = 20;
const STRESS_SESSIONS: usize = 8;
const STRESS_EVENTS: usize = 1000;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        self.failed += usize::from(!pass);
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn info(&self, name: &str, detail: String) {
        println!("INFO {name}: {detail}");
    }
}

fn random_params(cfg: ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(cfg, &mut rng).unwrap();
    // spread the initial weights so gradients are not all tiny
    for t in p.tensors_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::randn(&shape, 0.5, &mut rng);
    }
    p
}

fn gradient_check(r: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (k, standard) in [false, true].into_iter().enumerate() {
        let cfg = ModelConfig { src_vocab: 7, trg_vocab: 8, embed_dim: 6, hidden_dim: 5, output_dim: 8, standard_lstm_output: standard };
        let p = random_params(cfg, 100 + k as u64);
        let (src, trg) = ([4usize, 5, 6, 2], [5usize, 7, 3, 2]);
        let report = finite_difference_check(
            |ts: &[Tensor]| {
                let params = ModelParams::from_tensors(cfg, ts.to_vec())?;
                let (loss, grads) = sentence_nll_grad(&params, &src, &trg)?;
                let n = trg.len() as f64;
                Ok((loss / n, grads.into_iter().map(|mut g| { g.scale_in_place(1.0 / n); g }).collect()))
            },
            p.tensors(),
            GRAD_STEP,
            GRAD_REL_TOL,
        )
        .unwrap();
        ok &= report.passed();
        worst = worst.max(report.worst());
    }
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        "gradient correctness",
        ok && secs < 120.0,
        format!("max rel err {worst:.2e} (tol {GRAD_REL_TOL:.0e}) over all parameters, both hidden-state variants, {secs:.1}s"),
    );
}

fn copy_task(r: &mut Report) {
    let t0 = Instant::now();
    let corpus = copy_corpus(100, 7);
    let vocab = Vocabulary::from_subwords(('a'..='z').map(|c| Subword::new(c.to_string(), true))).unwrap();
    let cfg = ModelConfig {
        src_vocab: vocab.len(),
        trg_vocab: vocab.len(),
        embed_dim: 32,
        hidden_dim: 32,
        output_dim: 32,
        standard_lstm_output: false,
    };
    let params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut e = Engine::new(params, MergeTable::from_merges(vec![]).unwrap(), vocab.clone(), vocab).unwrap();
    let opt = OptimizerState::new(Algorithm::Adam, 0.005, e.params.tensors()).unwrap();
    let tc = TrainConfig { batch_size: 8, eval_interval: 100, patience: 5, max_updates: COPY_MAX_UPDATES, ..Default::default() };
    let out = e.fit(&corpus, &corpus, opt, &tc, &SearchOptions::beam(1)).unwrap();
    let first = out.history.iter().find(|h| h.dev_bleu >= COPY_BLEU_MIN).map(|h| h.update);
    let final_bleu = e.bleu_with(&e.params, &corpus, &SearchOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    r.line(
        "overfit oracle (copy task)",
        first.is_some_and(|u| u <= COPY_MAX_UPDATES) && final_bleu >= COPY_BLEU_MIN && secs < 600.0,
        format!(
            "vocab {}, training BLEU {final_bleu:.4} (min {COPY_BLEU_MIN}), first reached at update {first:?} (max {COPY_MAX_UPDATES}), {secs:.1}s",
            e.trg_vocab.len()
        ),
    );
}

fn fuzz_engine(seed: u64) -> Engine {
    let corpus = ParallelCorpus::from_lines(&[
        ("das haus ist klein", "the house is small"),
        ("das buch ist gut", "the book is good"),
        ("ein kleines haus", "a small house"),
        ("wir lesen zwei bücher", "we read two books"),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(4..=8);
    let dims = ModelConfig { src_vocab: 0, trg_vocab: 0, embed_dim: d, hidden_dim: d, output_dim: d, standard_lstm_output: rng.random_bool(0.5) };
    let mut e = Engine::initialize(&[&corpus], rng.random_range(0..20), dims, seed).unwrap();
    let shape = e.params[ParamId::Proj].shape().to_vec();
    e.params[ParamId::Proj] = Tensor::randn(&shape, rng.random_range(0.5..3.0), &mut rng);
    e
}

fn random_words(rng: &mut ChaCha8Rng, alphabet: &[char], max_words: usize) -> Vec<String> {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=6);
            (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
        })
        .collect()
}

fn inmt_exactness(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let engines: Vec<Engine> = (0..10).map(fuzz_engine).collect();
    let (mut exact, mut within, mut errors) = (0, 0, Vec::new());
    for i in 0..FUZZ_SESSIONS {
        let e = &engines[i % engines.len()];
        let src_alpha: Vec<char> = e.src_vocab.alphabet().into_iter().collect();
        let trg_alpha: Vec<char> = e.trg_vocab.alphabet().into_iter().collect();
        let source = random_words(&mut rng, &src_alpha, 6);
        let reference = random_words(&mut rng, &trg_alpha, 5);
        let level = if i % 4 == 3 { Level::Word } else { Level::Char };
        let opts = SearchOptions { beam: rng.random_range(1..=6), max_len: None, word_completion: rng.random_bool(0.2) };
        match simulate_inmt_sentence(e, &source, &reference, level, &opts) {
            Ok(out) => {
                exact += usize::from(out.session.words() == reference.as_slice());
                within += usize::from(out.record.keystrokes <= out.record.ref_chars);
            }
            Err(err) => errors.push(format!("{source:?} -> {reference:?}: {err}")),
        }
    }
    r.line(
        "INMT exactness",
        exact == FUZZ_SESSIONS && within == FUZZ_SESSIONS && errors.is_empty(),
        format!(
            "{exact}/{FUZZ_SESSIONS} sessions end at the reference, {within}/{FUZZ_SESSIONS} with keystrokes <= reference chars, {} errors{}",
            errors.len(),
            errors.first().map(|e| format!(" (first: {e})")).unwrap_or_default()
        ),
    );
}

fn brute_compatible(token: &Subword, prefix: &str) -> bool {
    let t: Vec<char> = token.text.chars().collect();
    let p: Vec<char> = prefix.chars().collect();
    let shared = t.len().min(p.len());
    (0..shared).all(|i| t[i] == p[i]) && (t.len() >= p.len() || !token.word_final)
}

fn prefix_and_mask(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let engines: Vec<Engine> = (20..30).map(fuzz_engine).collect();
    let (mut tried, mut extended, mut mask_ok, mut mask_checks) = (0, 0, 0, 0);
    while tried < RANDOM_CONSTRAINTS {
        let e = &engines[tried % engines.len()];
        let alpha: Vec<char> = e.trg_vocab.alphabet().into_iter().collect();
        let mut text: String = random_words(&mut rng, &alpha, 4).join(" ");
        let cut = rng.random_range(0..=text.chars().count());
        text = text.chars().take(cut).collect();
        let Ok(c) = PrefixConstraint::parse(&text) else { continue };
        tried += 1;
        let src = e.source_ids(&["das", "haus"]).unwrap();
        let opts = SearchOptions { beam: rng.random_range(1..=6), max_len: None, word_completion: rng.random_bool(0.3) };
        let res = masked_constrained_search(&e.params, e.segmenter(), &src, &c, &opts).unwrap();
        let all_extend = res.nbest.iter().all(|h| {
            let words = e.render(h.clone()).words;
            c.is_satisfied_by(&words.join(" "))
        });
        extended += usize::from(all_extend);

        let partial = c.partial();
        if !partial.is_empty() {
            mask_checks += 1;
            let mask = build_vocabulary_mask(partial, &e.trg_vocab);
            let agree = (0..e.trg_vocab.len()).all(|id| {
                let expected = !e.trg_vocab.is_reserved(id) && brute_compatible(e.trg_vocab.token(id), partial);
                mask.bits[id] == expected
            });
            mask_ok += usize::from(agree && mask.count == mask.bits.iter().filter(|&&b| b).count());
        }
    }
    let vocab = Vocabulary::from_subwords(
        ["integer", "intention", "entire", "full", "whole", "in", "tension"].map(|w| Subword::new(w, true)),
    )
    .unwrap();
    let mask = build_vocabulary_mask("int", &vocab);
    let int_tokens: Vec<&str> = mask.allowed().map(|id| vocab.token(id).text.as_str()).collect();
    r.line(
        "prefix/mask invariants",
        extended == RANDOM_CONSTRAINTS && mask_ok == mask_checks && int_tokens == ["integer", "intention"],
        format!(
            "{extended}/{RANDOM_CONSTRAINTS} constraints extended by every n-best output, masks equal brute force on {mask_ok}/{mask_checks} open prefixes, \"int\" -> {int_tokens:?}"
        ),
    );
}

fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut start = 0;
    for _ in 0..max_len {
        let end = out.len();
        for i in start..end {
            for t in 0..3u8 {
                let mut c = out[i].clone();
                c.push(t);
                out.push(c);
            }
        }
        start = end;
    }
    out
}

fn dist(a: &[u8], b: &[u8]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

fn move_block(s: &[u8], start: usize, len: usize, dest: usize) -> Vec<u8> {
    let mut order: Vec<usize> = (0..s.len()).filter(|i| !(start..start + len).contains(i)).collect();
    for (k, i) in (start..start + len).enumerate() {
        order.insert(dest + k, i);
    }
    order.iter().map(|&i| s[i]).collect()
}

/// Greedy best-shift-first TER by enumerating every block move.
fn naive_ter_edits(h: &[u8], r: &[u8]) -> usize {
    let mut cur = h.to_vec();
    let mut shifts = 0;
    loop {
        let d0 = dist(&cur, r);
        let n = cur.len();
        let mut best: Option<(usize, Vec<u8>)> = None;
        for len in (1..=n.min(10)).rev() {
            for start in 0..=n - len {
                for dest in (0..=n - len).filter(|&d| d != start) {
                    let cand = move_block(&cur, start, len, dest);
                    let d = dist(&cand, r);
                    if d < best.as_ref().map_or(d0, |b| b.0) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            Some((_, c)) => {
                cur = c;
                shifts += 1;
            }
            None => return shifts + d0,
        }
    }
}

/// Fewest block moves to reach every rearrangement of `h`.
fn shift_distances(h: &[u8]) -> HashMap<Vec<u8>, usize> {
    let mut seen = HashMap::from([(h.to_vec(), 0)]);
    let mut queue = VecDeque::from([h.to_vec()]);
    while let Some(s) = queue.pop_front() {
        let k = seen[&s];
        for len in 1..=s.len() {
            for start in 0..=s.len() - len {
                for dest in 0..=s.len() - len {
                    let c = move_block(&s, start, len, dest);
                    if !seen.contains_key(&c) {
                        seen.insert(c.clone(), k + 1);
                        queue.push_back(c);
                    }
                }
            }
        }
    }
    seen
}

fn naive_bleu(h: &[u8], r: &[u8]) -> f64 {
    if h.is_empty() {
        return if r.is_empty() { 1.0 } else { 0.0 };
    }
    let count = |s: &[u8], g: &[u8]| s.windows(g.len()).filter(|w| *w == g).count();
    let mut logs = Vec::new();
    for n in 1..=4 {
        if h.len() < n {
            continue;
        }
        let grams: Vec<&[u8]> = h.windows(n).collect();
        let mut matched = 0;
        for (i, g) in grams.iter().enumerate() {
            if grams[..i].contains(g) {
                continue;
            }
            matched += count(h, g).min(if r.len() >= n { count(r, g) } else { 0 });
        }
        logs.push(matched as f64 / grams.len() as f64);
    }
    let bp = if h.len() >= r.len() { 1.0 } else { (1.0 - r.len() as f64 / h.len() as f64).exp() };
    bp * logs.iter().product::<f64>().powf(1.0 / logs.len() as f64)
}

fn w(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn metric_oracles(r: &mut Report) {
    let t0 = Instant::now();
    let short = all_sequences(4);
    let long = all_sequences(6);
    let mut cases: Vec<(&Vec<u8>, &Vec<u8>)> = short.iter().flat_map(|h| short.iter().map(move |r| (h, r))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    cases.extend((0..SAMPLED_LONG_PAIRS).map(|_| (long.choose(&mut rng).unwrap(), long.choose(&mut rng).unwrap())));
    let mut reach_cache: HashMap<&Vec<u8>, HashMap<Vec<u8>, usize>> = HashMap::new();
    let (mut pairs, mut ter_eq, mut bounded, mut above_optimum, mut bleu_eq) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (h, rf) in cases {
        let reach = reach_cache.entry(h).or_insert_with(|| shift_distances(h));
        {
            pairs += 1;
            if (bleu(&[h], &[rf]).unwrap() - naive_bleu(h, rf)).abs() <= METRIC_TOL {
                bleu_eq += 1;
            }
            if rf.is_empty() {
                // TER is undefined without reference words
                ter_eq += usize::from(ter(h, rf).is_err());
                bounded += 1;
                continue;
            }
            let got = ter_edits(h, rf);
            let t = ter(h, rf).unwrap();
            ter_eq += usize::from(got == naive_ter_edits(h, rf) && (t - got as f64 / rf.len() as f64).abs() <= METRIC_TOL);
            let optimum = reach.iter().map(|(s, k)| k + dist(s, rf)).min().unwrap();
            bounded += usize::from(optimum <= got && got <= dist(h, rf));
            above_optimum += usize::from(got > optimum);
        }
    }

    let mut rep_ok = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= METRIC_TOL;
    let f1 = w("a b a b c");
    let f2 = w("x y x y x y");
    let f3 = w("p q p q r s r s");
    rep_ok.push(close(repetition_rate(&f1, 1000).unwrap(), 0.0));
    rep_ok.push(close(repetition_rate(&f2, 1000).unwrap(), 0.5f64.powf(0.25)));
    rep_ok.push(close(restricted_repetition_rate(&f2, &w("x y"), 1000).unwrap(), 0.5f64.powf(1.0 / 3.0)));
    rep_ok.push(close(repetition_rate(&f3, 4).unwrap(), 0.0));
    rep_ok.push(close(restricted_repetition_rate(&f3, &w("p q"), 4).unwrap(), 0.0));
    rep_ok.push(close(
        unseen_ngram_fraction(&f3, &w("p q r")).unwrap(),
        (0.25 + 4.0 / 7.0 + 5.0 / 6.0 + 1.0) / 4.0,
    ));
    let rep_pass = rep_ok.iter().filter(|&&b| b).count();

    let k = ksmr(6, 6, 120).unwrap();
    let pass = ter_eq == pairs && bounded == pairs && bleu_eq == pairs && rep_pass == rep_ok.len() && close(k, KSMR_EXAMPLE);
    r.line(
        "metric oracles",
        pass,
        format!(
            "{pairs} pairs (all up to 4 tokens, {SAMPLED_LONG_PAIRS} sampled up to 6): TER = exhaustive greedy oracle on {ter_eq}, within [optimum, edit distance] on {bounded}; BLEU = brute force on {bleu_eq}; RR/RRR/UNF fixtures {rep_pass}/{}; KSMR(6,6,120) = {k:.4}; {:.1}s",
            rep_ok.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
    r.info(
        "TER vs exact shift optimum",
        format!("greedy shift search costs more edits than the optimum on {above_optimum} of {pairs} pairs"),
    );
}

struct Desk {
    engine: Engine,
    train: ParallelCorpus,
    template: ParallelCorpus,
    control: ParallelCorpus,
}

/// The base model and fixtures shared by the desk-scale criteria.
fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let lang = SyntheticLanguage::new(60, 11);
        let train = lang.general_corpus(1500, 12);
        let dev = lang.general_corpus(60, 13);
        let dims = ModelConfig { src_vocab: 0, trg_vocab: 0, embed_dim: 48, hidden_dim: 48, output_dim: 48, standard_lstm_output: true };
        let mut engine = Engine::initialize(&[&train], 100, dims, 1).unwrap();
        let opt = OptimizerState::new(Algorithm::Adam, 0.005, engine.params.tensors()).unwrap();
        let cfg = TrainConfig { batch_size: 8, eval_interval: 250, patience: 4, max_updates: 3000, noise_std: 0.03, ..Default::default() };
        engine.fit(&train, &dev, opt, &cfg, &SearchOptions::beam(1)).unwrap();
        let template = lang.template_corpus(3, 20, 14);
        let control = lang.control_corpus(&train, 60, 15);
        Desk { engine, train, template, control }
    })
}

fn sim_config(level: Level) -> SimulationConfig {
    SimulationConfig { level, algorithm: Algorithm::Sgd, lr: 0.1, beam: 6, clip_norm: 5.0, ..Default::default() }
}

struct DeskRuns {
    char_static: SimulationReport,
    char_adaptive: SimulationReport,
    word_static: SimulationReport,
    word_adaptive: SimulationReport,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let d = desk();
        let (char_static, char_adaptive) = static_and_adaptive(&d.engine, &d.template, &sim_config(Level::Char)).unwrap();
        let (word_static, word_adaptive) = static_and_adaptive(&d.engine, &d.template, &sim_config(Level::Word)).unwrap();
        DeskRuns { char_static, char_adaptive, word_static, word_adaptive }
    })
}

fn crossings(a: &[f64], b: &[f64]) -> usize {
    let signs: Vec<i8> = a.iter().zip(b).map(|(x, y)| (x - y).signum() as i8).filter(|s| *s != 0).collect();
    signs.windows(2).filter(|p| p[0] != p[1]).count()
}

fn adaptation_direction(r: &mut Report) {
    let t0 = Instant::now();
    let d = desk();
    let runs = desk_runs();
    let (s, a) = (&runs.char_static, &runs.char_adaptive);
    let ks = s.ksmr_ci(CI_LEVEL, CI_RESAMPLES, 1).unwrap();
    let ka = a.ksmr_ci(CI_LEVEL, CI_RESAMPLES, 1).unwrap();
    let ts = s.ter_ci(CI_LEVEL, CI_RESAMPLES, 1).unwrap();
    let ta = a.ter_ci(CI_LEVEL, CI_RESAMPLES, 1).unwrap();
    let (cs, ca) = static_and_adaptive(&d.engine, &d.control, &sim_config(Level::Char)).unwrap();
    let gap = ca.ksmr_gap_ci(&cs, CI_LEVEL, CI_RESAMPLES, 1).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let train_stream = token_stream(&d.train.trg);
    let rrr_t = restricted_repetition_rate(&token_stream(&d.template.trg), &train_stream, 1000).unwrap();
    let rrr_c = restricted_repetition_rate(&token_stream(&d.control.trg), &train_stream, 1000).unwrap();

    let pass = d.template.len() == 60
        && ka.point < ks.point
        && ta.point < ts.point
        && ka.upper < ks.lower
        && ta.upper < ts.lower
        && gap.lower <= 0.0
        && 0.0 <= gap.upper
        && secs < ADAPT_BUDGET_S;
    r.line(
        "adaptation direction",
        pass,
        format!(
            "template (RRR {rrr_t:.3}): KSMR {:.3} [{:.3}, {:.3}] -> {:.3} [{:.3}, {:.3}], TER {:.3} [{:.3}, {:.3}] -> {:.3} [{:.3}, {:.3}]; control (RRR {rrr_c:.3}) KSMR gap {:.4} [{:.4}, {:.4}]; {secs:.0}s",
            ks.point, ks.lower, ks.upper, ka.point, ka.lower, ka.upper, ts.point, ts.lower, ts.upper, ta.point, ta.lower,
            ta.upper, gap.point, gap.lower, gap.upper
        ),
    );
    r.info(
        "cumulative KSMR curves",
        format!("static and adaptive cross {} time(s)", crossings(&s.cumulative_ksmr(), &a.cumulative_ksmr())),
    );
}

fn char_vs_word(r: &mut Report) {
    let runs = desk_runs();
    let ratio = |c: &SimulationReport, w: &SimulationReport| c.keystrokes() as f64 / w.keystrokes() as f64;
    let (ca, wa) = (&runs.char_adaptive, &runs.word_adaptive);
    let (cs, ws) = (&runs.char_static, &runs.word_static);
    let pass = ratio(ca, wa) <= CHAR_WORD_KS_RATIO && ca.ksmr().unwrap() < wa.ksmr().unwrap();
    r.line(
        "char vs word interaction",
        pass,
        format!(
            "adaptive system: keystrokes char {} / word {} = {:.3} (max {CHAR_WORD_KS_RATIO}), mouse actions {} / {}, KSMR {:.3} < {:.3}",
            ca.keystrokes(),
            wa.keystrokes(),
            ratio(ca, wa),
            ca.mouse_actions(),
            wa.mouse_actions(),
            ca.ksmr().unwrap(),
            wa.ksmr().unwrap()
        ),
    );
    r.info(
        "char vs word, static system",
        format!(
            "keystrokes {} / {} = {:.3}, KSMR {:.3} vs {:.3}",
            cs.keystrokes(),
            ws.keystrokes(),
            ratio(cs, ws),
            cs.ksmr().unwrap(),
            ws.ksmr().unwrap()
        ),
    );
}

fn descent_property(r: &mut Report) {
    let d = desk();
    let grid: Vec<f64> = learning_rate_grid().into_iter().filter(|&lr| (1e-6..=1e-2).contains(&lr)).collect();
    let mut pairs = d.engine.pairs(&d.template).unwrap();
    pairs.extend(d.engine.pairs(&d.control).unwrap());
    let step = |p: &Pair, lr: f64| -> Option<f64> {
        let mut params = d.engine.params.clone();
        let mut opt = OptimizerState::new(Algorithm::Sgd, lr, params.tensors()).unwrap();
        let ok = online_update(&mut params, &mut opt, &p.src, &p.trg, 5.0).is_ok() && params.is_finite();
        ok.then(|| sentence_nll(&params, &p.src, &p.trg).ok()).flatten().filter(|a| a.is_finite())
    };
    let (mut reduced, mut used, mut misses) = (0, HashMap::<String, usize>::new(), Vec::new());
    for (i, p) in pairs.iter().enumerate() {
        let before = sentence_nll(&d.engine.params, &p.src, &p.trg).unwrap();
        let Some((lr, after)) = grid.iter().find_map(|&lr| step(p, lr).map(|a| (lr, a))) else {
            misses.push(format!("pair {i}: diverged at every step size"));
            continue;
        };
        *used.entry(format!("{lr:e}")).or_default() += 1;
        if after < before {
            reduced += 1;
            continue;
        }
        let (_, grads) = sentence_nll_grad(&d.engine.params, &p.src, &p.trg).unwrap();
        let smaller = grid.iter().filter(|&&g| g < lr).find(|&&g| step(p, g).is_some_and(|a| a < before));
        misses.push(format!(
            "pair {i}: NLL {before:.3e} -> {after:.3e} at {lr:e}, gradient norm {:.3e}, first decreasing step size {smaller:?}",
            global_norm(&grads)
        ));
    }
    r.line(
        "descent property",
        reduced == pairs.len(),
        format!(
            "{reduced}/{} fixture pairs reduced by one SGD step at the largest non-diverging step size; used {used:?}{}",
            pairs.len(),
            misses.iter().map(|m| format!("; {m}")).collect::<String>()
        ),
    );
}

fn latency(r: &mut Report) {
    let d = desk();
    let mut lines = Vec::new();
    for (src, trg) in d.control.iter().chain(d.template.iter()) {
        if d.engine.source_ids(src).unwrap().len() <= LATENCY_MAX_TOKENS && d.engine.target_ids(trg).unwrap().len() <= LATENCY_MAX_TOKENS {
            lines.push((src.join(" "), trg.join(" ")));
        }
    }
    let corpus = ParallelCorpus::from_lines(&lines).unwrap();
    let stats = measure_latency(&d.engine, &corpus, &sim_config(Level::Char)).unwrap();
    let pass = stats.response.mean_ms < LATENCY_BUDGET_MS && stats.learning.mean_ms < LATENCY_BUDGET_MS;
    r.line(
        "latency",
        pass,
        format!(
            "{} sentences (<= {LATENCY_MAX_TOKENS} tokens), dims 48, beam 6: response mean {:.2} ms (p90 {:.2}, n {}), learning mean {:.2} ms (p90 {:.2}, n {}); budget {LATENCY_BUDGET_MS} ms",
            corpus.len(),
            stats.response.mean_ms,
            stats.response.p90_ms,
            stats.response.count,
            stats.learning.mean_ms,
            stats.learning.p90_ms,
            stats.learning.count
        ),
    );
}

fn serializability(r: &mut Report) {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let out = rt.block_on(async {
        let srv = common::start(ServiceConfig { adapt: true, max_sessions: 1000, ..Default::default() }).await;
        common::stress(&srv, STRESS_SESSIONS, STRESS_EVENTS, 5).await
    });
    let torn = out.fingerprints.values().filter(|fs| fs.iter().any(|f| f != &fs[0])).count();
    r.line(
        "service serializability",
        out.serializable(),
        format!(
            "{STRESS_SESSIONS} clients, {} events: {} accepts -> versions dense 1..={} (final {}), {} versions with mixed fingerprints, per-client monotone {}, {} busy rejections, {} unexpected responses",
            out.events,
            out.accepts,
            out.accepts,
            out.final_version,
            torn,
            out.monotone_per_client,
            out.conflicts,
            out.unexpected.len()
        ),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    gradient_check(&mut r);
    copy_task(&mut r);
    inmt_exactness(&mut r);
    prefix_and_mask(&mut r);
    metric_oracles(&mut r);
    adaptation_direction(&mut r);
    char_vs_word(&mut r);
    descent_property(&mut r);
    latency(&mut r);
    serializability(&mut r);
    println!("{} criteria failed", r.failed);
    let strict = std::env::var("IMTFORGE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if r.failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

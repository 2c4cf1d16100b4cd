use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use imtforge::decode::SearchOptions;
use imtforge::engine::{Engine, ParallelCorpus};
use imtforge::session::FeedbackEvent;
use imtforge::simulate::{simulate_inmt_sentence, Level};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imtforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(dir: &Path, kind: &str, size: usize, seed: u64) -> (PathBuf, PathBuf) {
    let (src, trg) = (dir.join(format!("{kind}{seed}.src")), dir.join(format!("{kind}{seed}.trg")));
    let o = run(&["fixture", "--kind", kind, "--size", &size.to_string(), "--seed", &seed.to_string(), "--out-src", p(&src), "--out-trg", p(&trg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (src, trg)
}

fn train_args<'a>(src: &'a Path, trg: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec!["train", "--src", p(src), "--trg", p(trg), "--dev-src", p(src), "--dev-trg", p(trg), "--out", p(out)]
}

struct Shared {
    dir: PathBuf,
    ckpt: PathBuf,
    test_src: PathBuf,
    test_trg: PathBuf,
}

/// A small model trained on general synthetic text, and a template test set.
fn shared() -> &'static Shared {
    static S: OnceLock<Shared> = OnceLock::new();
    S.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("imtforge-cli-shared");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let (src, trg) = fixture(&dir, "general", 300, 12);
        let (test_src, test_trg) = fixture(&dir, "template", 12, 14);
        let ckpt = dir.join("model");
        let mut args = train_args(&src, &trg, &ckpt);
        args.extend(["--merges", "40", "--embed-dim", "16", "--hidden-dim", "16", "--output-dim", "16"]);
        args.extend(["--standard-lstm-output", "--lr", "0.01", "--max-updates", "400", "--eval-interval", "100", "--beam", "1"]);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        Shared { dir, ckpt, test_src, test_trg }
    })
}

fn simulate_args<'a>(s: &'a Shared, level: &'a str) -> Vec<&'a str> {
    vec!["simulate", "--ckpt", p(&s.ckpt), "--test-src", p(&s.test_src), "--test-trg", p(&s.test_trg), "--level", level, "--resamples", "200"]
}

fn metric(out: &str, name: &str) -> f64 {
    let line = out.lines().find(|l| l.split('\t').next() == Some(name)).unwrap_or_else(|| panic!("no {name} in {out}"));
    line.split('\t').nth(1).unwrap().parse().unwrap()
}

#[test]
fn train_copy_task_writes_checkpoint_and_reproducible_history() {
    let dir = tempfile::tempdir().unwrap();
    let (src, trg) = fixture(dir.path(), "copy", 60, 7);
    let mut histories = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("model{k}"));
        let mut args = train_args(&src, &trg, &out);
        args.extend(["--merges", "0", "--embed-dim", "16", "--hidden-dim", "16", "--output-dim", "16"]);
        args.extend(["--lr", "0.01", "--max-updates", "150", "--eval-interval", "50", "--beam", "1", "--seed", "5"]);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        for f in ["model.ckpt", "bpe.codes", "src.vocab", "trg.vocab", "history.tsv"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        Engine::load(&out).unwrap();
        histories.push(std::fs::read(out.join("history.tsv")).unwrap());
    }
    assert_eq!(histories[0], histories[1]);
    assert_eq!(String::from_utf8_lossy(&histories[0]).lines().count(), 3);
}

#[test]
fn missing_file_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (src, trg) = fixture(dir.path(), "copy", 5, 1);
    let missing = dir.path().join("absent.src");
    let o = run(&train_args(&missing, &trg, &dir.path().join("m")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
    let o = run(&["evaluate", "--hyp", p(&src), "--ref", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.src"));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(run(&["simulate", "--nope"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--ckpt", "x", "--test-src", "a", "--test-trg", "b", "--level", "phrase"]).status.code(), Some(2));
    let s = shared();
    let mut args = simulate_args(s, "char");
    args.extend(["--beam", "0"]);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn divergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (src, trg) = fixture(dir.path(), "copy", 10, 2);
    let out = dir.path().join("m");
    let mut args = train_args(&src, &trg, &out);
    args.extend(["--merges", "0", "--embed-dim", "4", "--hidden-dim", "4", "--output-dim", "4"]);
    args.extend(["--optimizer", "sgd", "--lr", "1e300", "--clip-norm", "1e300", "--max-updates", "20", "--eval-interval", "10"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn config_overlay_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (src, trg) = fixture(dir.path(), "copy", 10, 3);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[train]\nmerges = 0\nembed_dim = 4\nhidden_dim = 4\noutput_dim = 4\nmax_updates = 40\neval_interval = 10\nbeam = 1\n",
    )
    .unwrap();
    let history = |out: &Path| std::fs::read_to_string(out.join("history.tsv")).unwrap().lines().count();

    let out = dir.path().join("a");
    let mut args = train_args(&src, &trg, &out);
    args.extend(["--config", p(&cfg)]);
    assert!(run(&args).status.success());
    assert_eq!(history(&out), 4);

    let out = dir.path().join("b");
    let mut args = train_args(&src, &trg, &out);
    args.extend(["--config", p(&cfg), "--max-updates", "20"]);
    assert!(run(&args).status.success());
    assert_eq!(history(&out), 2);

    std::fs::write(&cfg, "[train]\nwarp_factor = 9\n").unwrap();
    let out = dir.path().join("c");
    let mut args = train_args(&src, &trg, &out);
    args.extend(["--config", p(&cfg)]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warp-factor"));
}

#[test]
fn simulate_levels_optimizers_and_reproducible_csv() {
    let s = shared();
    let mut ksmr = Vec::new();
    for level in ["char", "word"] {
        let o = run(&simulate_args(s, level));
        assert!(o.status.success(), "{}", stderr(&o));
        ksmr.push(metric(&stdout(&o), "static.ksmr"));
    }
    assert!(ksmr[0] < ksmr[1], "char {} vs word {}", ksmr[0], ksmr[1]);

    let mut csvs = Vec::new();
    for k in 0..2 {
        let csv = s.dir.join(format!("run{k}.csv"));
        let mut args = simulate_args(s, "char");
        args.extend(["--adaptive", "--optimizer", "adadelta", "--lr", "0.1", "--seed", "9", "--csv", p(&csv)]);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(metric(&out, "adaptive.ksmr") > 0.0);
        assert!(out.contains("adaptive.ter\t") && out.contains("adaptive.bleu\t"));
        csvs.push((std::fs::read(&csv).unwrap(), out));
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8_lossy(&csvs[0].0).into_owned();
    assert!(text.starts_with("index,ks,ma,ref_chars,ter_first,iterations,rt_ms,lt_ms\n"));
    assert_eq!(text.lines().count(), 12 + 2);
}

#[test]
fn simulate_compare_writes_paired_reports() {
    let s = shared();
    let csv = s.dir.join("cmp.csv");
    let mut args = simulate_args(s, "char");
    args.extend(["--compare", "--csv", p(&csv)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for m in ["static.ksmr", "adaptive.ksmr", "static.ter", "adaptive.ter", "gap.ksmr"] {
        let line = out.lines().find(|l| l.starts_with(&format!("{m}\t"))).unwrap();
        let f: Vec<f64> = line.split('\t').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(f[1] <= f[0] && f[0] <= f[2], "{line}");
    }
    let gap = metric(&out, "gap.ksmr");
    assert!((gap - (metric(&out, "adaptive.ksmr") - metric(&out, "static.ksmr"))).abs() < 1e-6);
    assert!(s.dir.join("cmp.static.csv").exists() && s.dir.join("cmp.adaptive.csv").exists());
}

fn interact(ckpt: &Path, input: &str, extra: &[&str]) -> Output {
    let mut child = bin()
        .args(["interactive", "--ckpt", p(ckpt)])
        .args(extra)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn accepted_counters(out: &str) -> Vec<(usize, usize)> {
    out.lines()
        .filter_map(|l| l.strip_prefix("accepted keystrokes="))
        .map(|l| {
            let (ks, rest) = l.split_once(" mouse_actions=").unwrap();
            (ks.parse().unwrap(), rest.split(':').next().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn interactive_transcript_reproduces_simulation_counters() {
    let s = shared();
    let engine = Engine::load(&s.ckpt).unwrap();
    let test = ParallelCorpus::read(&s.test_src, &s.test_trg).unwrap();
    let mut script = String::new();
    let mut expected = Vec::new();
    for (k, (src, reference)) in test.iter().take(4).enumerate() {
        let level = if k % 2 == 0 { Level::Char } else { Level::Word };
        let outcome = simulate_inmt_sentence(&engine, src, reference, level, &SearchOptions::beam(6)).unwrap();
        script.push_str(&src.join(" "));
        script.push('\n');
        for entry in &outcome.session.log {
            match &entry.event {
                FeedbackEvent::Start => {}
                FeedbackEvent::Char { position, ch } => script.push_str(&format!("c {position} {ch}\n")),
                FeedbackEvent::Word { position, word } => script.push_str(&format!("w {position} {word}\n")),
                FeedbackEvent::Accept { truncate_at: None } => script.push_str("a\n"),
                FeedbackEvent::Accept { truncate_at: Some(p) } => script.push_str(&format!("a {p}\n")),
            }
        }
        expected.push((outcome.record.keystrokes, outcome.record.mouse_actions));
    }
    let o = interact(&s.ckpt, &script, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(accepted_counters(&stdout(&o)), expected);
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
}

#[test]
fn interactive_immediate_accept_eof_and_errors() {
    let s = shared();
    let o = interact(&s.ckpt, "", &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());

    let src = std::fs::read_to_string(&s.test_src).unwrap();
    let first = src.lines().next().unwrap();
    let o = interact(&s.ckpt, &format!("{first}\na\n"), &["--adapt", "--optimizer", "sgd"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(accepted_counters(&stdout(&o)), [(0, 1)]);
    assert!(stdout(&o).contains("updated (loss"));

    // bad commands and positions are reported and the session goes on
    let o = interact(&s.ckpt, &format!("{first}\nzap\nc 999 x\na\n"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(accepted_counters(&stdout(&o)), [(0, 1)]);
    assert!(stderr(&o).contains("unknown command") && stderr(&o).contains("invalid feedback position"));
}

#[test]
fn evaluate_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (hyp, reference) = (dir.path().join("h"), dir.path().join("r"));
    std::fs::write(&hyp, "a b c d\nthe cat sat down\n").unwrap();
    std::fs::write(&reference, "a b c e\nthe cat sat down\n").unwrap();
    let o = run(&["evaluate", "--hyp", p(&hyp), "--ref", p(&reference), "--train", p(&hyp)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((metric(&out, "ter") - 1.0 / 8.0).abs() < 1e-6);
    // clipped precisions 7/8, 5/6, 3/4, 1/2 and no brevity penalty
    let expected = (7.0 / 8.0 * 5.0 / 6.0 * 3.0 / 4.0 * 0.5f64).powf(0.25);
    assert!((metric(&out, "bleu") - expected).abs() < 1e-6);
    for m in ["rr", "rrr", "unf"] {
        metric(&out, m);
    }
    std::fs::write(&reference, "a b c e\n").unwrap();
    assert_eq!(run(&["evaluate", "--hyp", p(&hyp), "--ref", p(&reference)]).status.code(), Some(2));
}

#[test]
fn fixtures_have_requested_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["copy", "general", "template", "control"] {
        let (src, trg) = fixture(dir.path(), kind, 9, 4);
        let corpus = ParallelCorpus::read(&src, &trg).unwrap();
        assert_eq!(corpus.len(), 9, "{kind}");
    }
}

fn http(addr: &str, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_status_with_token_from_env() {
    let s = shared();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = bin()
        .args(["serve", "--ckpt", p(&s.ckpt), "--addr", &addr, "--adapt"])
        .env("IMTFORGE_TOKEN", "s3cret")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let get = |auth: &str| format!("GET /v1/status HTTP/1.1\r\nHost: x\r\n{auth}Connection: close\r\n\r\n");
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline && reply.is_none() {
        reply = http(&addr, &get("Authorization: Bearer s3cret\r\n"));
        std::thread::sleep(Duration::from_millis(50));
    }
    let denied = http(&addr, &get(""));
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server did not come up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"auth\":true") && !reply.contains("s3cret"), "{reply}");
    assert!(denied.unwrap().starts_with("HTTP/1.1 401"));
}

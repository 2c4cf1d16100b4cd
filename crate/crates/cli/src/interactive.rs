//! Line-oriented interactive session.
//!
//! With no open session, a line is a source sentence. Inside a session:
//!
//! ```text
//! c <pos> <char>   type <char> at character <pos>
//! w <pos> <word>   retype word <pos>
//! a [<pos>]        accept, optionally cut at character <pos>
//! q                drop the session
//! ```
//!
//! Every step prints the hypothesis with the running counters.

use std::io::{BufRead, IsTerminal, Write};

use imtforge::decode::SearchOptions;
use imtforge::engine::{tokenize, Engine};
use imtforge::session::SessionRecord;
use imtforge::train::{online_update, OptimizerState};

use crate::args::InteractiveArgs;
use crate::commands::Result;
use crate::error::usage;

#[derive(Debug, PartialEq)]
enum Action {
    Char(usize, char),
    Word(usize, String),
    Accept(Option<usize>),
    Quit,
}

fn parse(line: &str) -> std::result::Result<Action, String> {
    let (cmd, rest) = line.split_once(' ').unwrap_or((line, ""));
    let position = |s: &str| s.parse::<usize>().map_err(|_| format!("bad position {s:?}"));
    match cmd {
        "c" => {
            let (p, ch) = rest.split_once(' ').ok_or("usage: c <pos> <char>")?;
            let mut chars = ch.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(Action::Char(position(p)?, c)),
                _ => Err(format!("expected exactly one character, got {ch:?}")),
            }
        }
        "w" => {
            let (p, word) = rest.split_once(' ').ok_or("usage: w <pos> <word>")?;
            Ok(Action::Word(position(p)?, word.to_owned()))
        }
        "a" if rest.trim().is_empty() => Ok(Action::Accept(None)),
        "a" => Ok(Action::Accept(Some(position(rest.trim())?))),
        "q" => Ok(Action::Quit),
        _ => Err(format!("unknown command {line:?} (c, w, a, q)")),
    }
}

fn recoverable(e: &imtforge::Error) -> bool {
    use imtforge::Error::*;
    matches!(e, InvalidPosition { .. } | InvalidFeedback(_) | AlphabetMismatch(_) | Parse(_) | Empty(_))
}

fn show<W: Write>(out: &mut W, s: &SessionRecord) -> std::io::Result<()> {
    writeln!(out, "> {}", s.text())?;
    writeln!(out, "  keystrokes={} mouse_actions={}", s.keystrokes, s.mouse_actions)
}

pub fn run<R: BufRead, W: Write>(mut engine: Engine, args: &InteractiveArgs, input: R, mut out: W) -> Result<()> {
    if args.beam == 0 {
        return Err(usage("--beam must be at least 1"));
    }
    let lr = args.online.lr();
    if args.adapt && !(lr > 0.0 && lr.is_finite()) {
        return Err(usage(format!("--lr must be positive, got {lr}")));
    }
    let mut optimizer = match args.adapt {
        true => Some(OptimizerState::new(args.online.algorithm(), lr, engine.params.tensors())?),
        false => None,
    };
    let opts = SearchOptions::beam(args.beam);
    let prompt = std::io::stdin().is_terminal();
    let mut session: Option<SessionRecord> = None;
    for line in input.lines() {
        let line = line?;
        let Some(s) = session.as_mut() else {
            let words = tokenize(&line);
            if words.is_empty() {
                continue;
            }
            match SessionRecord::start(&engine, &words, opts) {
                Ok(s) => {
                    show(&mut out, &s)?;
                    session = Some(s);
                }
                Err(e) if recoverable(&e) => eprintln!("error: {e}"),
                Err(e) => return Err(e.into()),
            }
            continue;
        };
        let action = match parse(line.trim_end_matches(['\r', '\n'])) {
            Ok(a) => a,
            Err(msg) => {
                eprintln!("error: {msg}");
                continue;
            }
        };
        let result = match &action {
            Action::Char(p, c) => s.apply_char_feedback(&engine, *p, *c).map(|_| None),
            Action::Word(p, w) => s.apply_word_feedback(&engine, *p, w).map(|_| None),
            Action::Accept(cut) => s.accept(&engine, *cut).map(Some),
            Action::Quit => {
                session = None;
                writeln!(out, "dropped")?;
                continue;
            }
        };
        match result {
            Ok(None) => show(&mut out, s)?,
            Ok(Some(pair)) => {
                writeln!(out, "accepted keystrokes={} mouse_actions={}: {}", s.keystrokes, s.mouse_actions, s.text())?;
                if let Some(opt) = optimizer.as_mut() {
                    let loss = online_update(&mut engine.params, opt, &pair.source_ids, &pair.target_ids, args.online.clip_norm)?;
                    writeln!(out, "  updated (loss {loss:.4})")?;
                }
                session = None;
            }
            Err(e) if recoverable(&e) => eprintln!("error: {e}"),
            Err(e) => return Err(e.into()),
        }
        if prompt {
            eprint!("{}", if session.is_some() { "edit> " } else { "source> " });
        }
        out.flush()?;
    }
    Ok(())
}

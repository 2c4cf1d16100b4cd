//! JSON bodies of the `/v1` wire protocol.

use serde::{Deserialize, Serialize};

use imtforge::session::{FeedbackEvent, LogEntry, SessionRecord, SessionStatus};

/// Schema version carried in every request and response as `"v"`.
pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub v: Option<u32>,
    pub source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Char,
    Word,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Feedback {
    #[serde(default)]
    pub v: Option<u32>,
    pub kind: FeedbackKind,
    pub position: usize,
    pub text: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Accept {
    #[serde(default)]
    pub v: Option<u32>,
    #[serde(default)]
    pub truncate_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStamp {
    pub version: u64,
    /// Hex digest of the parameters the request was served from.
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub iteration: usize,
    pub kind: String,
    pub position: Option<usize>,
    pub text: Option<String>,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub hypothesis: String,
}

impl From<&LogEntry> for LogLine {
    fn from(e: &LogEntry) -> Self {
        let (position, text) = match &e.event {
            FeedbackEvent::Start => (None, None),
            FeedbackEvent::Char { position, ch } => (Some(*position), Some(ch.to_string())),
            FeedbackEvent::Word { position, word } => (Some(*position), Some(word.clone())),
            FeedbackEvent::Accept { truncate_at } => (*truncate_at, None),
        };
        LogLine {
            iteration: e.iteration,
            kind: e.event.kind().to_owned(),
            position,
            text,
            keystrokes: e.keystrokes,
            mouse_actions: e.mouse_actions,
            hypothesis: e.hypothesis.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub v: u32,
    pub session_id: u64,
    /// Only returned by session creation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner_token: Option<String>,
    pub source: String,
    pub hypothesis: String,
    /// Validated prefix; the hypothesis always starts with it.
    pub constraint: String,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub status: String,
    pub iterations: usize,
    pub model: ModelStamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<LogLine>>,
}

impl SessionView {
    pub fn new(rec: &SessionRecord, model: ModelStamp) -> Self {
        SessionView {
            v: WIRE_VERSION,
            session_id: rec.id,
            owner_token: None,
            source: rec.source_words.join(" "),
            hypothesis: rec.text().to_owned(),
            constraint: rec.constraint.text(),
            keystrokes: rec.keystrokes,
            mouse_actions: rec.mouse_actions,
            status: status_name(rec.status).to_owned(),
            iterations: rec.iterations(),
            model,
            log: None,
        }
    }
}

pub fn status_name(s: SessionStatus) -> &'static str {
    match s {
        SessionStatus::Active => "active",
        SessionStatus::Accepted => "accepted",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub v: u32,
    pub session_id: u64,
    pub source: String,
    pub target: String,
    pub keystrokes: usize,
    pub mouse_actions: usize,
    pub adapted: bool,
    /// Time spent in the online update, 0 when none ran.
    pub lt_ms: f64,
    /// Model after the update.
    pub model: ModelStamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub addr: String,
    pub checkpoint: String,
    pub adapt: bool,
    pub optimizer: String,
    pub lr: f64,
    pub beam: usize,
    pub max_sessions: usize,
    pub session_ttl_s: f64,
    pub auth: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub v: u32,
    pub model: ModelStamp,
    pub active_sessions: usize,
    pub uptime_s: f64,
    pub config: ConfigEcho,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

//! Shared model and session table behind the HTTP handlers.
//!
//! Decodes hold the model read lock for their whole duration and online
//! updates take the write lock, so every response is served from exactly
//! one model version. Each session has its own mutex; a request that finds
//! it held is rejected instead of queued.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard, TryLockError};
use std::time::{Duration, Instant};

use imtforge::decode::SearchOptions;
use imtforge::engine::{tokenize, Engine};
use imtforge::session::SessionRecord;
use imtforge::train::{online_update, Algorithm, OptimizerState};

use crate::api::*;
use crate::error::ApiError;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Model directory as written by `Engine::save`.
    pub checkpoint: PathBuf,
    pub adapt: bool,
    pub algorithm: Algorithm,
    pub lr: f64,
    pub clip_norm: f64,
    pub beam: usize,
    pub max_sessions: usize,
    pub session_ttl: Duration,
    /// Bearer token required on every request when set.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoint: PathBuf::from("model"),
            adapt: false,
            algorithm: Algorithm::Sgd,
            lr: Algorithm::Sgd.default_lr(),
            clip_norm: 5.0,
            beam: 6,
            max_sessions: 64,
            session_ttl: Duration::from_secs(1800),
            token: None,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> imtforge::Result<()> {
        let bad = |m: &str| Err(imtforge::Error::Invalid(m.into()));
        if self.max_sessions == 0 {
            return bad("max sessions must be at least 1");
        }
        if self.beam == 0 {
            return bad("beam must be at least 1");
        }
        if self.adapt && !(self.lr > 0.0) {
            return bad("learning rate must be positive when adaptation is enabled");
        }
        if !(self.clip_norm > 0.0) || self.session_ttl.is_zero() {
            return bad("clip norm and session ttl must be positive");
        }
        Ok(())
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            addr: self.addr.to_string(),
            checkpoint: self.checkpoint.display().to_string(),
            adapt: self.adapt,
            optimizer: self.algorithm.name().to_owned(),
            lr: self.lr,
            beam: self.beam,
            max_sessions: self.max_sessions,
            session_ttl_s: self.session_ttl.as_secs_f64(),
            auth: self.token.is_some(),
        }
    }
}

pub struct ModelSlot {
    pub engine: Engine,
    pub optimizer: OptimizerState,
    pub version: u64,
}

impl ModelSlot {
    pub fn stamp(&self) -> ModelStamp {
        ModelStamp { version: self.version, fingerprint: format!("{:016x}", self.engine.params.fingerprint()) }
    }
}

struct SessionSlot {
    owner: String,
    active: AtomicBool,
    touched_ms: AtomicU64,
    record: Mutex<SessionRecord>,
}

pub struct AppState {
    config: ServiceConfig,
    model: RwLock<ModelSlot>,
    sessions: Mutex<HashMap<u64, Arc<SessionSlot>>>,
    started: Instant,
    pending_faults: AtomicUsize,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

impl AppState {
    pub fn new(config: ServiceConfig, engine: Engine) -> imtforge::Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(config.algorithm, config.lr, engine.params.tensors())?;
        Ok(AppState {
            config,
            model: RwLock::new(ModelSlot { engine, optimizer, version: 0 }),
            sessions: Mutex::new(HashMap::new()),
            started: Instant::now(),
            pending_faults: AtomicUsize::new(0),
        })
    }

    /// Loads the model directory named by the configuration.
    pub fn load(config: ServiceConfig) -> imtforge::Result<Self> {
        let engine = Engine::load(&config.checkpoint)?;
        Self::new(config, engine)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn model(&self) -> RwLockReadGuard<'_, ModelSlot> {
        self.model.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn model_mut(&self) -> RwLockWriteGuard<'_, ModelSlot> {
        self.model.write().unwrap_or_else(PoisonError::into_inner)
    }

    /// Makes the next `n` online updates fail as if they had produced
    /// non-finite parameters.
    pub fn inject_update_failures(&self, n: usize) {
        self.pending_faults.fetch_add(n, Ordering::SeqCst);
    }

    fn take_fault(&self) -> bool {
        self.pending_faults.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok()
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn search_options(&self) -> SearchOptions {
        SearchOptions::beam(self.config.beam)
    }

    /// Drops sessions idle for longer than the ttl, skipping ones that are
    /// being served right now.
    fn sweep(&self, table: &mut HashMap<u64, Arc<SessionSlot>>) {
        let now = self.now_ms();
        let ttl = self.config.session_ttl.as_millis() as u64;
        table.retain(|_, s| {
            let idle = now.saturating_sub(s.touched_ms.load(Ordering::SeqCst));
            idle <= ttl || s.record.try_lock().is_err()
        });
    }

    fn slot(&self, id: u64) -> Result<Arc<SessionSlot>, ApiError> {
        let mut table = lock(&self.sessions);
        self.sweep(&mut table);
        table.get(&id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    /// The owned session's record, or 409 if another request holds it.
    fn claim<'a>(
        &self,
        slot: &'a SessionSlot,
        id: u64,
        owner: Option<&str>,
    ) -> Result<MutexGuard<'a, SessionRecord>, ApiError> {
        if owner != Some(slot.owner.as_str()) {
            return Err(ApiError::Forbidden);
        }
        let rec = match slot.record.try_lock() {
            Ok(g) => g,
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
            Err(TryLockError::WouldBlock) => {
                return Err(ApiError::Conflict(format!("session {id} is busy with another request")))
            }
        };
        slot.touched_ms.store(self.now_ms(), Ordering::SeqCst);
        if !rec.is_active() {
            return Err(ApiError::Conflict(format!("session {id} has already been accepted")));
        }
        Ok(rec)
    }

    pub fn create_session(&self, source: &str) -> Result<SessionView, ApiError> {
        let words = tokenize(source);
        if words.is_empty() {
            return Err(ApiError::BadRequest("source is empty".into()));
        }
        let (rec, stamp) = {
            let model = self.model();
            (SessionRecord::start(&model.engine, &words, self.search_options())?, model.stamp())
        };
        let owner = format!("{:032x}", rand::random::<u128>());
        let mut view = SessionView::new(&rec, stamp);
        view.owner_token = Some(owner.clone());

        let mut table = lock(&self.sessions);
        self.sweep(&mut table);
        let active = table.values().filter(|s| s.active.load(Ordering::SeqCst)).count();
        if active >= self.config.max_sessions {
            return Err(ApiError::TooManySessions(self.config.max_sessions));
        }
        let slot = SessionSlot {
            owner,
            active: AtomicBool::new(true),
            touched_ms: AtomicU64::new(self.now_ms()),
            record: Mutex::new(rec),
        };
        table.insert(view.session_id, Arc::new(slot));
        Ok(view)
    }

    pub fn feedback(&self, id: u64, owner: Option<&str>, fb: &Feedback) -> Result<SessionView, ApiError> {
        let slot = self.slot(id)?;
        let mut rec = self.claim(&slot, id, owner)?;
        let model = self.model();
        match fb.kind {
            FeedbackKind::Char => {
                let mut chars = fb.text.chars();
                let (Some(ch), None) = (chars.next(), chars.next()) else {
                    return Err(ApiError::BadRequest("char feedback needs exactly one character".into()));
                };
                rec.apply_char_feedback(&model.engine, fb.position, ch)?;
            }
            FeedbackKind::Word => {
                if fb.text.is_empty() || fb.text.chars().any(char::is_whitespace) {
                    return Err(ApiError::BadRequest("word feedback needs one non-empty word".into()));
                }
                rec.apply_word_feedback(&model.engine, fb.position, &fb.text)?;
            }
        }
        Ok(SessionView::new(&rec, model.stamp()))
    }

    /// Accepts the hypothesis and, when adaptation is on, applies one online
    /// update before returning. A failed update leaves the model and the
    /// session exactly as they were.
    pub fn accept(&self, id: u64, owner: Option<&str>, req: &Accept) -> Result<Accepted, ApiError> {
        let slot = self.slot(id)?;
        let mut rec = self.claim(&slot, id, owner)?;
        let mut model = self.model_mut();
        let backup = rec.clone();
        let pair = rec.accept(&model.engine, req.truncate_at)?;

        let mut lt_ms = 0.0;
        if self.config.adapt {
            let t0 = Instant::now();
            let mut params = model.engine.params.clone();
            let mut opt = model.optimizer.clone();
            if self.take_fault() {
                params.tensors_mut()[0].data_mut()[0] = f64::NAN;
            }
            let updated = online_update(&mut params, &mut opt, &pair.source_ids, &pair.target_ids, self.config.clip_norm)
                .and_then(|_| {
                    if params.is_finite() {
                        Ok(())
                    } else {
                        Err(imtforge::Error::NonFinite("updated parameters".into()))
                    }
                });
            if let Err(e) = updated {
                *rec = backup;
                return Err(ApiError::Internal(format!("online update failed, model unchanged: {e}")));
            }
            model.engine.params = params;
            model.optimizer = opt;
            model.version += 1;
            lt_ms = t0.elapsed().as_secs_f64() * 1e3;
        }
        slot.active.store(false, Ordering::SeqCst);
        Ok(Accepted {
            v: WIRE_VERSION,
            session_id: id,
            source: pair.source_words.join(" "),
            target: pair.target_words.join(" "),
            keystrokes: rec.keystrokes,
            mouse_actions: rec.mouse_actions,
            adapted: self.config.adapt,
            lt_ms,
            model: model.stamp(),
        })
    }

    /// Current state of a session with its full event log.
    pub fn session(&self, id: u64) -> Result<SessionView, ApiError> {
        let slot = self.slot(id)?;
        let rec = lock(&slot.record);
        let mut view = SessionView::new(&rec, self.model().stamp());
        view.log = Some(rec.log.iter().map(LogLine::from).collect());
        Ok(view)
    }

    pub fn status(&self) -> Status {
        let active = {
            let mut table = lock(&self.sessions);
            self.sweep(&mut table);
            table.values().filter(|s| s.active.load(Ordering::SeqCst)).count()
        };
        Status {
            v: WIRE_VERSION,
            model: self.model().stamp(),
            active_sessions: active,
            uptime_s: self.started.elapsed().as_secs_f64(),
            config: self.config.echo(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use imtforge::engine::ParallelCorpus;
    use imtforge::model::ModelConfig;

    fn state() -> AppState {
        let c = ParallelCorpus::from_lines(&[("ein haus", "a house")]).unwrap();
        let dims = ModelConfig { src_vocab: 0, trg_vocab: 0, embed_dim: 4, hidden_dim: 4, output_dim: 4, standard_lstm_output: false };
        AppState::new(ServiceConfig::default(), Engine::initialize(&[&c], 4, dims, 1).unwrap()).unwrap()
    }

    #[test]
    fn busy_session_conflicts() {
        let s = state();
        let view = s.create_session("ein haus").unwrap();
        let owner = view.owner_token.clone();
        let slot = s.slot(view.session_id).unwrap();
        let held = slot.record.lock().unwrap();
        let fb = Feedback { v: None, kind: FeedbackKind::Char, position: 0, text: "a".into() };
        assert!(matches!(s.feedback(view.session_id, owner.as_deref(), &fb), Err(ApiError::Conflict(_))));
        assert!(matches!(s.accept(view.session_id, owner.as_deref(), &Accept::default()), Err(ApiError::Conflict(_))));
        drop(held);
        assert!(s.feedback(view.session_id, owner.as_deref(), &fb).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(ServiceConfig::default().validate().is_ok());
        assert!(ServiceConfig { max_sessions: 0, ..Default::default() }.validate().is_err());
        assert!(ServiceConfig { adapt: true, lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(ServiceConfig { adapt: false, lr: 0.0, ..Default::default() }.validate().is_ok());
    }
}

//! Sessions and the per-frame pipeline, independent of the HTTP layer.
//!
//! Each session owns a smoothing window and a player state behind its own
//! lock. Frame analysis runs on the blocking pool with the lock released;
//! only the short transition step holds it.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use moodloop_core::aggregation::{aggregate, AggregationStrategy, SmoothingWindow};
use moodloop_core::emotion::Emotion;
use moodloop_core::frame::{analyze_frame, EmotionBackend, FaceDetector, FrameError, FrameSubmission};
use moodloop_core::library::{Library, TrackId};
use moodloop_core::metrics::{Metrics, Stage};
use moodloop_core::mood::{Mood, MoodConfig, PlaylistId};
use moodloop_core::player::{Advance, ChangeReason, PlayerError, PlayerState, PlaylistEngine, RandomSource};
use moodloop_core::time::{Clock, Timestamp};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

const EVENT_BUFFER: usize = 64;
const MAX_SESSION_ID_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session ids are 1 to 64 characters of letters, digits, '-' and '_'")]
    InvalidSessionId,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("frames must be at least {min_ms} ms apart; retry in {retry_ms} ms")]
    FrameTooSoon { min_ms: u64, retry_ms: u64 },
    #[error("frame captured at {captured} is older than the last accepted frame ({last})")]
    StaleFrame { captured: i64, last: i64 },
    #[error(transparent)]
    Player(#[from] PlayerError),
    #[error("unknown track {0}")]
    UnknownTrack(TrackId),
    #[error("file for track {0} is gone from the library")]
    FileVanished(TrackId),
    #[error("{0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Tunables copied from the config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub strategy: AggregationStrategy,
    pub smoothing_capacity: usize,
    pub min_frame_spacing_ms: u64,
    pub capture_interval_ms: u64,
    pub override_lockout_s: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            strategy: AggregationStrategy::default(),
            smoothing_capacity: 3,
            min_frame_spacing_ms: 500,
            capture_interval_ms: 3000,
            override_lockout_s: 120,
        }
    }
}

/// Everything the service needs injected.
pub struct Parts {
    pub settings: Settings,
    pub library: Arc<Library>,
    pub moods: MoodConfig,
    pub detector: Arc<dyn FaceDetector>,
    pub backend: Arc<dyn EmotionBackend>,
    pub clock: Arc<dyn Clock>,
    pub rng: Box<dyn RandomSource + Send>,
    pub metrics: Arc<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRef {
    pub track_id: TrackId,
    pub title: String,
}

/// What clients see of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u64,
    pub session_id: String,
    /// Label of the latest frame; `None` when it had no faces.
    pub detected_emotion: Option<Emotion>,
    pub smoothed_emotion: Option<Emotion>,
    pub face_count: usize,
    pub mood: Option<Mood>,
    pub playlist_id: Option<PlaylistId>,
    pub track: Option<TrackRef>,
    pub track_index: usize,
    pub playing: bool,
    pub override_active: bool,
    pub override_until_ms: Option<i64>,
    pub last_change_reason: ChangeReason,
    pub strategy_in_use: AggregationStrategy,
}

/// Per-session state. Holds labels and player state only; frames are
/// dropped as soon as they are analyzed.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionContext {
    pub session_id: String,
    pub window: SmoothingWindow,
    pub player: PlayerState,
    pub created_at: Timestamp,
    /// Server arrival time of the last accepted frame.
    pub last_frame_at: Option<Timestamp>,
    pub last_captured_at: Option<Timestamp>,
    pub detected: Option<Emotion>,
    pub face_count: usize,
    pub seq: u64,
    pub published: Option<StateSnapshot>,
}

struct Session {
    ctx: tokio::sync::Mutex<SessionContext>,
    events: broadcast::Sender<StateSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Next,
    Prev,
    TrackEnded,
    SelectTrack(TrackId),
    SelectPlaylist(Mood),
    SetPlaying(bool),
}

/// Wire form of a control request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRequest {
    pub command: String,
    pub track_id: Option<String>,
    pub mood: Option<String>,
    pub playing: Option<bool>,
}

impl TryFrom<ControlRequest> for Command {
    type Error = ServiceError;

    fn try_from(req: ControlRequest) -> Result<Self, ServiceError> {
        let missing = |field: &str| ServiceError::BadRequest(format!("command {} needs {field}", req.command));
        Ok(match req.command.as_str() {
            "next" => Command::Next,
            "prev" => Command::Prev,
            "track_ended" => Command::TrackEnded,
            "select_track" => Command::SelectTrack(TrackId::new(req.track_id.clone().ok_or_else(|| missing("track_id"))?)),
            "select_playlist" => Command::SelectPlaylist(Mood::new(req.mood.clone().ok_or_else(|| missing("mood"))?)),
            "set_playing" => Command::SetPlaying(req.playing.ok_or_else(|| missing("playing"))?),
            other => return Err(ServiceError::BadRequest(format!("unknown command {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaylistSummary {
    pub playlist_id: PlaylistId,
    pub mood: Mood,
    pub manual_only: bool,
    pub track_count: usize,
    pub tracks: Vec<TrackSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: TrackId,
    pub title: String,
    pub duration_s: Option<f64>,
}

pub struct MoodService {
    settings: Settings,
    engine: PlaylistEngine,
    moods: MoodConfig,
    detector: Arc<dyn FaceDetector>,
    backend: Arc<dyn EmotionBackend>,
    clock: Arc<dyn Clock>,
    rng: Mutex<Box<dyn RandomSource + Send>>,
    metrics: Arc<Metrics>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_SESSION_ID_LEN
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl MoodService {
    pub fn new(parts: Parts) -> Self {
        let engine = PlaylistEngine::new(parts.library, parts.settings.override_lockout_s);
        Self {
            settings: parts.settings,
            engine,
            moods: parts.moods,
            detector: parts.detector,
            backend: parts.backend,
            clock: parts.clock,
            rng: Mutex::new(parts.rng),
            metrics: parts.metrics,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn library(&self) -> &Library {
        self.engine.library()
    }

    pub fn moods(&self) -> &MoodConfig {
        &self.moods
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn create_session(&self) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.insert_session(&id);
        id
    }

    fn insert_session(&self, id: &str) -> Arc<Session> {
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        sessions
            .entry(id.to_owned())
            .or_insert_with(|| {
                let ctx = SessionContext {
                    session_id: id.to_owned(),
                    window: SmoothingWindow::new(self.settings.smoothing_capacity),
                    player: PlayerState::startup(id),
                    created_at: self.clock.now(),
                    last_frame_at: None,
                    last_captured_at: None,
                    detected: None,
                    face_count: 0,
                    seq: 0,
                    published: None,
                };
                let (events, _) = broadcast::channel(EVENT_BUFFER);
                Arc::new(Session { ctx: tokio::sync::Mutex::new(ctx), events })
            })
            .clone()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        let sessions = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        sessions.get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// A copy of the session's stored context.
    pub async fn context(&self, id: &str) -> Result<SessionContext, ServiceError> {
        Ok(self.session(id)?.ctx.lock().await.clone())
    }

    fn snapshot(&self, ctx: &SessionContext) -> StateSnapshot {
        let p = &ctx.player;
        StateSnapshot {
            seq: ctx.seq,
            session_id: ctx.session_id.clone(),
            detected_emotion: ctx.detected,
            smoothed_emotion: ctx.window.smoothed(),
            face_count: ctx.face_count,
            mood: p.current_mood.clone(),
            playlist_id: p.playlist_id.clone(),
            track: p
                .current_track(self.library())
                .map(|t| TrackRef { track_id: t.track_id.clone(), title: t.title.clone() }),
            track_index: p.track_index,
            playing: p.playing,
            override_active: p.override_active,
            override_until_ms: p.override_until.map(Timestamp::as_millis),
            last_change_reason: p.last_change_reason,
            strategy_in_use: self.settings.strategy,
        }
    }

    /// Bumps the sequence number and notifies subscribers if anything
    /// visible changed.
    fn publish(&self, session: &Session, ctx: &mut SessionContext) -> StateSnapshot {
        let snap = self.snapshot(ctx);
        if ctx.published.as_ref() == Some(&snap) {
            return snap;
        }
        ctx.seq += 1;
        let snap = StateSnapshot { seq: ctx.seq, ..snap };
        ctx.published = Some(snap.clone());
        // No receivers is fine.
        let _ = session.events.send(snap.clone());
        snap
    }

    pub async fn get_state(&self, id: &str) -> Result<StateSnapshot, ServiceError> {
        let session = self.session(id)?;
        let ctx = session.ctx.lock().await;
        Ok(self.snapshot(&ctx))
    }

    /// Current snapshot plus a receiver for later ones.
    pub async fn subscribe(&self, id: &str) -> Result<(StateSnapshot, broadcast::Receiver<StateSnapshot>), ServiceError> {
        let session = self.session(id)?;
        let rx = session.events.subscribe();
        let ctx = session.ctx.lock().await;
        Ok((self.snapshot(&ctx), rx))
    }

    /// Unknown but well-formed session ids are created on first use.
    pub async fn submit_frame(
        &self,
        id: &str,
        image_b64: String,
        captured_at: Option<Timestamp>,
    ) -> Result<StateSnapshot, ServiceError> {
        if !valid_session_id(id) {
            return Err(ServiceError::InvalidSessionId);
        }
        let session = self.insert_session(id);
        let arrived = self.clock.now();
        let captured = captured_at.unwrap_or(arrived);
        {
            let mut ctx = session.ctx.lock().await;
            if let Some(last) = ctx.last_frame_at {
                let gap = arrived.millis_since(last);
                let min = self.settings.min_frame_spacing_ms as i64;
                if gap < min {
                    return Err(ServiceError::FrameTooSoon {
                        min_ms: self.settings.min_frame_spacing_ms,
                        retry_ms: (min - gap.max(0)) as u64,
                    });
                }
            }
            if let Some(last) = ctx.last_captured_at {
                if captured < last {
                    return Err(ServiceError::StaleFrame { captured: captured.0, last: last.0 });
                }
            }
            ctx.last_frame_at = Some(arrived.max(ctx.last_frame_at.unwrap_or(arrived)));
            ctx.last_captured_at = Some(captured);
        }

        let submission = FrameSubmission::new(id, image_b64, captured);
        let (detector, backend, metrics) = (self.detector.clone(), self.backend.clone(), self.metrics.clone());
        let reading = tokio::task::spawn_blocking(move || analyze_frame(&submission, &*detector, &*backend, &metrics))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))??;

        let mut ctx = session.ctx.lock().await;
        if ctx.last_captured_at != Some(captured) {
            // A newer frame was accepted while this one was analyzed.
            return Ok(self.snapshot(&ctx));
        }
        ctx.face_count = reading.faces.len();
        if reading.is_empty() {
            ctx.detected = None;
            return Ok(self.publish(&session, &mut ctx));
        }

        let started = Instant::now();
        let verdict = aggregate(&reading, self.settings.strategy).expect("reading has faces");
        let smoothed = ctx.window.push(verdict.label);
        self.metrics.record_since(Stage::Aggregate, started);
        ctx.detected = Some(verdict.label);

        let started = Instant::now();
        let mood = self.moods.map_emotion(smoothed);
        let outcome = {
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            self.engine.on_mood_detected(&ctx.player, mood, &mut **rng, self.clock.now())
        };
        match outcome {
            Ok(next) => ctx.player = next,
            // The mood's playlist was empty or missing at scan time.
            Err(err) => log::warn!("session {id}: {err}"),
        }
        self.metrics.record_since(Stage::RetrieveSong, started);
        Ok(self.publish(&session, &mut ctx))
    }

    pub async fn control(&self, id: &str, command: Command) -> Result<StateSnapshot, ServiceError> {
        let session = self.session(id)?;
        let mut ctx = session.ctx.lock().await;
        let now = self.clock.now();
        let engine = &self.engine;
        let next = match command {
            Command::Next => engine.next_track(&ctx.player, Advance::User(now)),
            Command::Prev => engine.prev_track(&ctx.player, now),
            Command::TrackEnded => engine.next_track(&ctx.player, Advance::TrackEnded),
            Command::SetPlaying(playing) => engine.set_playing(&ctx.player, playing),
            Command::SelectTrack(track) => engine.select_track(&ctx.player, &track, now)?,
            Command::SelectPlaylist(mood) => {
                let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
                engine.select_playlist(&ctx.player, &mood, &mut **rng, now)?
            }
        };
        ctx.player = next;
        Ok(self.publish(&session, &mut ctx))
    }

    pub fn playlists(&self) -> Vec<PlaylistSummary> {
        self.library()
            .playlists()
            .iter()
            .map(|p| PlaylistSummary {
                playlist_id: p.id.clone(),
                mood: p.mood.clone(),
                manual_only: self.moods.is_manual_only(&p.mood),
                track_count: p.len(),
                tracks: p
                    .tracks
                    .iter()
                    .map(|t| TrackSummary { track_id: t.track_id.clone(), title: t.title.clone(), duration_s: t.duration_s })
                    .collect(),
            })
            .collect()
    }

    /// Path of a track's file, checked to still exist.
    pub fn audio_path(&self, track: &TrackId) -> Result<PathBuf, ServiceError> {
        let path = self.library().track_path(track).ok_or_else(|| ServiceError::UnknownTrack(track.clone()))?;
        if !path.is_file() {
            return Err(ServiceError::FileVanished(track.clone()));
        }
        Ok(path)
    }
}

//! Per-session player state machine.
//!
//! Detected moods switch playlists and start a random track; user actions
//! (picking a track or playlist, previous/next) take precedence and lock
//! out automatic switching for a while. Playlists wrap around in both
//! directions. All transitions are pure: they take a state and return the
//! next one.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::{Library, Track, TrackId};
use crate::mood::{Mood, PlaylistId};
use crate::time::Timestamp;

pub const DEFAULT_LOCKOUT_SECS: u64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeReason {
    Startup,
    AutoMood,
    ManualSelect,
    ManualNav,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerState {
    pub session_id: String,
    /// `None` until the first detection or manual pick.
    pub current_mood: Option<Mood>,
    pub playlist_id: Option<PlaylistId>,
    pub track_index: usize,
    pub playing: bool,
    pub override_active: bool,
    pub override_until: Option<Timestamp>,
    pub last_change_reason: ChangeReason,
}

impl PlayerState {
    pub fn startup(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            current_mood: None,
            playlist_id: None,
            track_index: 0,
            playing: false,
            override_active: false,
            override_until: None,
            last_change_reason: ChangeReason::Startup,
        }
    }

    /// Whether a manual override still blocks automatic switching at `now`.
    pub fn override_engaged(&self, now: Timestamp) -> bool {
        self.override_active && self.override_until.is_some_and(|until| now < until)
    }

    pub fn current_track<'a>(&self, library: &'a Library) -> Option<&'a Track> {
        let playlist = library.playlist(library.playlist_index(self.playlist_id.as_ref()?)?)?;
        playlist.tracks.get(self.track_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlayerError {
    #[error("no playlist for mood {0}")]
    UnknownMood(Mood),
    #[error("no track with id {0}")]
    UnknownTrack(TrackId),
}

/// Source of uniformly random playlist positions.
pub trait RandomSource {
    /// An index in `0..len`; `len` is at least one.
    fn pick_index(&mut self, len: usize) -> usize;
}

impl<R: rand::Rng + ?Sized> RandomSource for R {
    fn pick_index(&mut self, len: usize) -> usize {
        self.random_range(0..len)
    }
}

/// Replays fixed picks, each reduced modulo the playlist length. Yields 0
/// once exhausted.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRandom {
    picks: VecDeque<usize>,
}

impl ScriptedRandom {
    pub fn new(picks: impl IntoIterator<Item = usize>) -> Self {
        Self { picks: picks.into_iter().collect() }
    }
}

impl RandomSource for ScriptedRandom {
    fn pick_index(&mut self, len: usize) -> usize {
        self.picks.pop_front().unwrap_or(0) % len
    }
}

/// Who asked for a next-track step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    /// The next button; engages the lockout.
    User(Timestamp),
    /// The current track finished playing; keeps the lockout as it was.
    TrackEnded,
}

/// Transition rules over one library.
#[derive(Debug, Clone)]
pub struct PlaylistEngine {
    library: Arc<Library>,
    lockout_ms: i64,
}

impl PlaylistEngine {
    pub fn new(library: Arc<Library>, lockout_secs: u64) -> Self {
        Self { library, lockout_ms: (lockout_secs as i64).saturating_mul(1000) }
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn lockout_ms(&self) -> i64 {
        self.lockout_ms
    }

    fn mood_playlist(&self, mood: &Mood) -> Result<usize, PlayerError> {
        self.library.playlist_for_mood(mood).ok_or_else(|| PlayerError::UnknownMood(mood.clone()))
    }

    fn current_len(&self, state: &PlayerState) -> Option<usize> {
        let id = state.playlist_id.as_ref()?;
        self.library.playlist(self.library.playlist_index(id)?).map(|p| p.len())
    }

    fn engage_override(&self, state: &mut PlayerState, now: Timestamp) {
        state.override_active = true;
        state.override_until = Some(now.plus_millis(self.lockout_ms));
    }

    fn switch_to(&self, state: &mut PlayerState, playlist: usize, index: usize) {
        let p = &self.library.playlists()[playlist];
        state.current_mood = Some(p.mood.clone());
        state.playlist_id = Some(p.id.clone());
        state.track_index = index;
        state.playing = true;
    }

    /// Automatic reaction to a (smoothed, mapped) detection.
    ///
    /// Re-detecting the current mood keeps the current track. An unexpired
    /// override leaves the state alone; an expired one is cleared.
    pub fn on_mood_detected(
        &self,
        state: &PlayerState,
        mood: &Mood,
        rng: &mut dyn RandomSource,
        now: Timestamp,
    ) -> Result<PlayerState, PlayerError> {
        let playlist = self.mood_playlist(mood)?;
        let mut next = state.clone();
        if next.override_active {
            if next.override_engaged(now) {
                return Ok(next);
            }
            next.override_active = false;
            next.override_until = None;
        }
        if next.current_mood.as_ref() == Some(mood) {
            return Ok(next);
        }
        let len = self.library.playlists()[playlist].len();
        let index = rng.pick_index(len);
        self.switch_to(&mut next, playlist, index);
        next.last_change_reason = ChangeReason::AutoMood;
        Ok(next)
    }

    pub fn next_track(&self, state: &PlayerState, advance: Advance) -> PlayerState {
        let mut next = state.clone();
        let Some(len) = self.current_len(state) else {
            return next;
        };
        next.track_index = (state.track_index + 1) % len;
        if let Advance::User(now) = advance {
            next.last_change_reason = ChangeReason::ManualNav;
            self.engage_override(&mut next, now);
        }
        next
    }

    pub fn prev_track(&self, state: &PlayerState, now: Timestamp) -> PlayerState {
        let mut next = state.clone();
        let Some(len) = self.current_len(state) else {
            return next;
        };
        next.track_index = (state.track_index + len - 1) % len;
        next.last_change_reason = ChangeReason::ManualNav;
        self.engage_override(&mut next, now);
        next
    }

    /// Jumps to a specific track; its playlist's mood becomes the session mood.
    pub fn select_track(&self, state: &PlayerState, track: &TrackId, now: Timestamp) -> Result<PlayerState, PlayerError> {
        let location = self.library.locate(track).ok_or_else(|| PlayerError::UnknownTrack(track.clone()))?;
        let mut next = state.clone();
        self.switch_to(&mut next, location.playlist, location.index);
        next.last_change_reason = ChangeReason::ManualSelect;
        self.engage_override(&mut next, now);
        Ok(next)
    }

    /// Switches to a mood's playlist at a random track, even if it is the
    /// current one.
    pub fn select_playlist(
        &self,
        state: &PlayerState,
        mood: &Mood,
        rng: &mut dyn RandomSource,
        now: Timestamp,
    ) -> Result<PlayerState, PlayerError> {
        let playlist = self.mood_playlist(mood)?;
        let mut next = state.clone();
        let index = rng.pick_index(self.library.playlists()[playlist].len());
        self.switch_to(&mut next, playlist, index);
        next.last_change_reason = ChangeReason::ManualSelect;
        self.engage_override(&mut next, now);
        Ok(next)
    }

    /// Play or pause. Has no effect before anything has been chosen.
    pub fn set_playing(&self, state: &PlayerState, playing: bool) -> PlayerState {
        let mut next = state.clone();
        if next.playlist_id.is_some() {
            next.playing = playing;
        }
        next
    }
}

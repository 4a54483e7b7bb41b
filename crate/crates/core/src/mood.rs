//! Emotion-to-mood mapping and the mood-to-playlist table.
//!
//! The configuration document is TOML:
//!
//! ```toml
//! # moods that only a user can pick, never the detector
//! manual_only = ["focus"]
//!
//! [emotions]        # emotion label -> mood
//! surprise = "sad"
//!
//! [playlists]       # mood -> playlist directory under the library root
//! focus = "deep-focus"
//! ```
//!
//! Both tables are merged over the built-in defaults, so an empty document
//! is the default configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::Emotion;

/// A playlist category such as `happy` or `calm`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mood(String);

impl Mood {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Mood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Mood {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Identifier of a playlist; also the name of its directory in the library.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlaylistId(String);

impl PlaylistId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlaylistId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoodConfigError {
    #[error("mood config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid mood config: {0}")]
    ConfigInvalid(String),
}

pub const DEFAULT_MAPPING: [(Emotion, &str); Emotion::COUNT] = [
    (Emotion::Angry, "angry"),
    (Emotion::Disgust, "angry"),
    (Emotion::Fear, "sad"),
    (Emotion::Happy, "happy"),
    (Emotion::Sad, "sad"),
    (Emotion::Surprise, "happy"),
    (Emotion::Neutral, "calm"),
];

pub const DEFAULT_MOODS: [&str; 4] = ["happy", "sad", "angry", "calm"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MoodConfig {
    emotion_to_mood: [Mood; Emotion::COUNT],
    mood_to_playlist: BTreeMap<Mood, PlaylistId>,
    manual_only: BTreeSet<Mood>,
}

impl Default for MoodConfig {
    fn default() -> Self {
        Self {
            emotion_to_mood: DEFAULT_MAPPING.map(|(_, m)| Mood::new(m)),
            mood_to_playlist: DEFAULT_MOODS.iter().map(|m| (Mood::new(*m), PlaylistId::new(*m))).collect(),
            manual_only: BTreeSet::new(),
        }
    }
}

/// The document as written; every part optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoodConfigDoc {
    #[serde(default)]
    pub manual_only: Vec<String>,
    #[serde(default)]
    pub emotions: BTreeMap<String, String>,
    #[serde(default)]
    pub playlists: BTreeMap<String, String>,
}

impl MoodConfig {
    /// Total: every label maps to some mood.
    pub fn map_emotion(&self, label: Emotion) -> &Mood {
        &self.emotion_to_mood[label.index()]
    }

    pub fn playlist_for(&self, mood: &Mood) -> Option<&PlaylistId> {
        self.mood_to_playlist.get(mood)
    }

    pub fn mood_for_playlist(&self, playlist: &PlaylistId) -> Option<&Mood> {
        self.mood_to_playlist.iter().find(|(_, p)| *p == playlist).map(|(m, _)| m)
    }

    /// Every mood that has a playlist, sorted.
    pub fn moods(&self) -> impl Iterator<Item = &Mood> {
        self.mood_to_playlist.keys()
    }

    pub fn is_manual_only(&self, mood: &Mood) -> bool {
        self.manual_only.contains(mood)
    }

    /// Whether some emotion maps to `mood`.
    pub fn is_reachable(&self, mood: &Mood) -> bool {
        self.emotion_to_mood.iter().any(|m| m == mood)
    }

    pub fn from_doc(doc: &MoodConfigDoc) -> Result<Self, MoodConfigError> {
        let mut config = MoodConfig::default();
        for (mood, playlist) in &doc.playlists {
            if mood.trim().is_empty() || playlist.trim().is_empty() {
                return Err(MoodConfigError::ConfigInvalid("mood and playlist names must be non-empty".into()));
            }
            config.mood_to_playlist.insert(Mood::new(mood.trim()), PlaylistId::new(playlist.trim()));
        }

        let mut seen = [false; Emotion::COUNT];
        for (label, mood) in &doc.emotions {
            let emotion: Emotion = label
                .parse()
                .map_err(|_| MoodConfigError::ConfigInvalid(format!("unknown emotion label {label:?}")))?;
            if seen[emotion.index()] {
                return Err(MoodConfigError::ConfigInvalid(format!("emotion {emotion} mapped twice")));
            }
            seen[emotion.index()] = true;
            config.emotion_to_mood[emotion.index()] = Mood::new(mood.trim());
        }
        if !doc.emotions.is_empty() {
            for label in Emotion::ALL.into_iter().filter(|e| !seen[e.index()]) {
                log::warn!("mood config has no entry for {label}; using default mood {}", config.map_emotion(label));
            }
        }

        for (label, mood) in Emotion::ALL.iter().zip(&config.emotion_to_mood) {
            if !config.mood_to_playlist.contains_key(mood) {
                return Err(MoodConfigError::ConfigInvalid(format!(
                    "{label} maps to mood {mood:?}, which has no playlist"
                )));
            }
        }

        for mood in &doc.manual_only {
            let mood = Mood::new(mood.trim());
            if !config.mood_to_playlist.contains_key(&mood) {
                return Err(MoodConfigError::ConfigInvalid(format!("manual-only mood {mood:?} has no playlist")));
            }
            config.manual_only.insert(mood);
        }
        let unreachable: Vec<Mood> = config
            .moods()
            .filter(|m| !config.is_reachable(m) && !config.is_manual_only(m))
            .cloned()
            .collect();
        for mood in unreachable {
            log::warn!("no emotion maps to mood {mood}; it can only be chosen manually");
            config.manual_only.insert(mood);
        }
        Ok(config)
    }
}

/// Parses a TOML mood configuration document.
pub fn load_mood_config(source: &str) -> Result<MoodConfig, MoodConfigError> {
    let doc: MoodConfigDoc = toml::from_str(source).map_err(|e| MoodConfigError::Syntax(e.to_string()))?;
    MoodConfig::from_doc(&doc)
}

pub fn map_emotion(config: &MoodConfig, label: Emotion) -> &Mood {
    config.map_emotion(label)
}

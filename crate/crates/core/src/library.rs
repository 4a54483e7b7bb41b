//! The on-disk music library: one directory per playlist under a root,
//! plus an optional `library.toml` manifest.
//!
//! ```text
//! music/
//!   library.toml        optional: titles, mood overrides, mood config
//!   happy/a.mp3
//!   happy/b.mp3
//!   sad/c.ogg
//! ```
//!
//! The manifest's `[tracks."<relative path>"]` tables may set `title`,
//! `mood` (moving the track to that mood's playlist) and `duration_s`. Its
//! optional `[moods]` table is a mood configuration document.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mood::{Mood, MoodConfig, MoodConfigDoc, PlaylistId};

pub const MANIFEST_FILE: &str = "library.toml";

pub const AUDIO_EXTENSIONS: [&str; 9] = ["mp3", "ogg", "oga", "opus", "wav", "flac", "m4a", "aac", "webm"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(String);

impl TrackId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// Stable id derived from the library-relative path.
    pub fn for_path(relative: &str) -> Self {
        let digest = Sha256::digest(relative.as_bytes());
        Self(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: TrackId,
    pub title: String,
    /// Relative to the library root, `/`-separated.
    pub file_path: String,
    pub mood: Mood,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Playlist {
    pub id: PlaylistId,
    pub mood: Mood,
    pub tracks: Vec<Track>,
}

impl Playlist {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library at {0} has no playable tracks")]
    LibraryEmpty(PathBuf),
    #[error("no directory for any configured mood: {0:?}")]
    MoodMissing(Vec<Mood>),
    #[error("library root {0} is not a readable directory")]
    BadRoot(PathBuf),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("io error under {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTrack {
    pub title: Option<String>,
    pub mood: Option<String>,
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub moods: Option<MoodConfigDoc>,
    #[serde(default)]
    pub tracks: BTreeMap<String, ManifestTrack>,
}

impl Manifest {
    /// Reads `library.toml` under `root`; a missing file is an empty manifest.
    pub fn load(root: &Path) -> Result<Self, LibraryError> {
        let path = root.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| LibraryError::Manifest { path, message: e.to_string() }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(LibraryError::Io { path, source }),
        }
    }
}

/// What a scan found besides the playlists themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScanReport {
    /// Configured moods with no directory; excluded from the library.
    pub missing_moods: Vec<Mood>,
    /// Moods whose directory holds no playable track.
    pub empty_moods: Vec<Mood>,
    /// Files left out, with the reason.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Library {
    root: PathBuf,
    playlists: Vec<Playlist>,
    by_id: HashMap<PlaylistId, usize>,
    by_mood: HashMap<Mood, usize>,
    tracks: HashMap<TrackId, (usize, usize)>,
}

/// Where a track sits: playlist index and position within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackLocation {
    pub playlist: usize,
    pub index: usize,
}

impl Library {
    /// Builds a library from ready-made playlists. Empty playlists are dropped.
    pub fn from_playlists(root: impl Into<PathBuf>, playlists: Vec<Playlist>) -> Result<Self, LibraryError> {
        let root = root.into();
        let playlists: Vec<Playlist> = playlists.into_iter().filter(|p| !p.is_empty()).collect();
        if playlists.is_empty() {
            return Err(LibraryError::LibraryEmpty(root));
        }
        let mut tracks = HashMap::new();
        for (pi, p) in playlists.iter().enumerate() {
            for (ti, t) in p.tracks.iter().enumerate() {
                if tracks.insert(t.track_id.clone(), (pi, ti)).is_some() {
                    return Err(LibraryError::Manifest {
                        path: root.clone(),
                        message: format!("duplicate track id {}", t.track_id),
                    });
                }
            }
        }
        let by_id = playlists.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect();
        let by_mood = playlists.iter().enumerate().map(|(i, p)| (p.mood.clone(), i)).collect();
        Ok(Self { root, playlists, by_id, by_mood, tracks })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn playlists(&self) -> &[Playlist] {
        &self.playlists
    }

    pub fn playlist(&self, index: usize) -> Option<&Playlist> {
        self.playlists.get(index)
    }

    pub fn playlist_index(&self, id: &PlaylistId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn playlist_for_mood(&self, mood: &Mood) -> Option<usize> {
        self.by_mood.get(mood).copied()
    }

    pub fn locate(&self, id: &TrackId) -> Option<TrackLocation> {
        self.tracks.get(id).map(|&(playlist, index)| TrackLocation { playlist, index })
    }

    pub fn track(&self, id: &TrackId) -> Option<&Track> {
        self.locate(id).map(|l| &self.playlists[l.playlist].tracks[l.index])
    }

    pub fn track_path(&self, id: &TrackId) -> Option<PathBuf> {
        self.track(id).map(|t| self.root.join(&t.file_path))
    }

    pub fn track_count(&self) -> usize {
        self.tracks.len()
    }
}

fn is_audio(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| AUDIO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn default_title(file_name: &str) -> String {
    Path::new(file_name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(file_name)
        .to_string()
}

/// Scans `root` with the manifest found there, if any.
pub fn scan_library(root: &Path, config: &MoodConfig) -> Result<(Library, ScanReport), LibraryError> {
    let manifest = Manifest::load(root)?;
    scan_library_with(root, config, &manifest)
}

pub fn scan_library_with(
    root: &Path,
    config: &MoodConfig,
    manifest: &Manifest,
) -> Result<(Library, ScanReport), LibraryError> {
    let entries = std::fs::read_dir(root).map_err(|_| LibraryError::BadRoot(root.to_path_buf()))?;
    let root_is_empty = entries.filter_map(Result::ok).next().is_none();
    if root_is_empty {
        return Err(LibraryError::LibraryEmpty(root.to_path_buf()));
    }

    let mut report = ScanReport::default();
    // (file name, track) per mood, sorted at the end.
    let mut found: BTreeMap<Mood, Vec<(String, Track)>> = BTreeMap::new();
    let mut present_moods = Vec::new();

    for mood in config.moods() {
        let playlist = config.playlist_for(mood).expect("moods() only yields moods with playlists");
        let dir = root.join(playlist.as_str());
        if !dir.is_dir() {
            log::warn!("mood {mood}: no directory {}", dir.display());
            report.missing_moods.push(mood.clone());
            continue;
        }
        present_moods.push(mood.clone());
        let listing = std::fs::read_dir(&dir).map_err(|source| LibraryError::Io { path: dir.clone(), source })?;
        for entry in listing.filter_map(Result::ok) {
            let path = entry.path();
            let Some(file_name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
                continue;
            };
            if !is_audio(&path) {
                continue;
            }
            let relative = format!("{}/{}", playlist.as_str(), file_name);
            if let Err(e) = File::open(&path) {
                report.skipped.push((relative, format!("unreadable: {e}")));
                continue;
            }
            if path.is_dir() {
                continue;
            }
            let extra = manifest.tracks.get(&relative).cloned().unwrap_or_default();
            let track_mood = match extra.mood.as_deref().map(str::trim) {
                Some(m) => {
                    let m = Mood::new(m);
                    if config.playlist_for(&m).is_none() {
                        report.skipped.push((relative, format!("manifest mood {m} is not configured")));
                        continue;
                    }
                    m
                }
                None => mood.clone(),
            };
            let track = Track {
                track_id: TrackId::for_path(&relative),
                title: extra.title.clone().unwrap_or_else(|| default_title(&file_name)),
                file_path: relative,
                mood: track_mood.clone(),
                duration_s: extra.duration_s,
            };
            found.entry(track_mood).or_default().push((file_name, track));
        }
    }

    for path in manifest.tracks.keys() {
        if !found.values().flatten().any(|(_, t)| &t.file_path == path) && !report.skipped.iter().any(|(p, _)| p == path) {
            log::warn!("manifest entry {path} matches no scanned track");
        }
    }

    if present_moods.is_empty() {
        return Err(LibraryError::MoodMissing(report.missing_moods));
    }

    let mut playlists = Vec::new();
    for mood in config.moods() {
        let mut tracks = found.remove(mood).unwrap_or_default();
        if tracks.is_empty() {
            if present_moods.contains(mood) {
                report.empty_moods.push(mood.clone());
            }
            continue;
        }
        tracks.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.file_path.cmp(&b.1.file_path)));
        playlists.push(Playlist {
            id: config.playlist_for(mood).cloned().expect("configured"),
            mood: mood.clone(),
            tracks: tracks.into_iter().map(|(_, t)| t).collect(),
        });
    }
    let library = Library::from_playlists(root, playlists)?;
    Ok((library, report))
}

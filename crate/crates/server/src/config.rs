//! Server configuration file.
//!
//! ```toml
//! library_root = "music"
//! aggregation_strategy = "most_frequent"
//! smoothing_capacity = 3
//!
//! [detector]
//! kind = "haar"
//!
//! [backend]
//! kind = "remote"
//! url = "http://127.0.0.1:5000"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use moodloop_core::aggregation::AggregationStrategy;
use moodloop_core::frame::haar::DetectParams;
use moodloop_core::frame::{
    EmotionBackend, FaceDetector, FaceRegion, FixtureBackend, FixtureDetector, FixtureLabels, HaarDetector,
    RemoteBackend, StubDetector,
};
use moodloop_core::library::Manifest;
use moodloop_core::mood::{load_mood_config, MoodConfig, MoodConfigDoc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    pub library_root: PathBuf,
    /// Cadence hint for the browser client.
    pub capture_interval_ms: u64,
    pub aggregation_strategy: AggregationStrategy,
    pub smoothing_capacity: usize,
    pub override_lockout_s: u64,
    pub min_frame_spacing_ms: u64,
    /// Inline mood configuration. Mutually exclusive with `mood_config`.
    pub moods: Option<MoodConfigDoc>,
    pub mood_config: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub backend: BackendConfig,
    /// Directory of browser client files served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            library_root: PathBuf::from("music"),
            capture_interval_ms: 3000,
            aggregation_strategy: AggregationStrategy::default(),
            smoothing_capacity: 3,
            override_lockout_s: 120,
            min_frame_spacing_ms: 500,
            moods: None,
            mood_config: None,
            detector: DetectorConfig::default(),
            backend: BackendConfig::default(),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    Haar {
        /// Cascade XML; the bundled frontal-face cascade when absent.
        cascade: Option<PathBuf>,
        #[serde(default = "default_scale")]
        scale_factor: f64,
        #[serde(default = "default_neighbors")]
        min_neighbors: usize,
        #[serde(default = "default_min_size")]
        min_size: u32,
    },
    /// Regions from a fixture label file.
    Fixture { labels: PathBuf },
    /// Fixed regions, e.g. `["0,0,64,64"]`.
    Stub { regions: Vec<String> },
}

fn default_scale() -> f64 {
    DetectParams::default().scale_factor
}

fn default_neighbors() -> usize {
    DetectParams::default().min_neighbors
}

fn default_min_size() -> u32 {
    DetectParams::default().min_size
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Haar {
            cascade: None,
            scale_factor: default_scale(),
            min_neighbors: default_neighbors(),
            min_size: default_min_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Fixture { labels: PathBuf },
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_timeout() -> u64 {
    10_000
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Remote { url: "http://127.0.0.1:5000".into(), timeout_ms: default_timeout() }
    }
}

impl ServerConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.library_root);
        if let Some(p) = &mut self.mood_config {
            fix(p);
        }
        if let Some(p) = &mut self.static_dir {
            fix(p);
        }
        match &mut self.detector {
            DetectorConfig::Haar { cascade: Some(p), .. } | DetectorConfig::Fixture { labels: p } => fix(p),
            _ => {}
        }
        if let BackendConfig::Fixture { labels } = &mut self.backend {
            fix(labels);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.moods.is_some() && self.mood_config.is_some() {
            return Err(ConfigError::Invalid("set either [moods] or mood_config, not both".into()));
        }
        if self.smoothing_capacity == 0 {
            return Err(ConfigError::Invalid("smoothing_capacity must be at least 1".into()));
        }
        if let DetectorConfig::Haar { scale_factor, .. } = self.detector {
            if scale_factor <= 1.0 {
                return Err(ConfigError::Invalid("detector scale_factor must exceed 1".into()));
            }
        }
        Ok(())
    }

    /// Inline moods, then the `mood_config` file, then the library
    /// manifest's `[moods]`, then the defaults.
    pub fn mood_config(&self, manifest: &Manifest) -> Result<MoodConfig, ConfigError> {
        let invalid = |e: moodloop_core::mood::MoodConfigError| ConfigError::Invalid(e.to_string());
        if let Some(doc) = &self.moods {
            return MoodConfig::from_doc(doc).map_err(invalid);
        }
        if let Some(path) = &self.mood_config {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            return load_mood_config(&text).map_err(invalid);
        }
        match &manifest.moods {
            Some(doc) => MoodConfig::from_doc(doc).map_err(invalid),
            None => Ok(MoodConfig::default()),
        }
    }

    pub fn build_detector(&self) -> Result<Arc<dyn FaceDetector>, ConfigError> {
        Ok(match &self.detector {
            DetectorConfig::Haar { cascade, scale_factor, min_neighbors, min_size } => {
                let params = DetectParams { scale_factor: *scale_factor, min_neighbors: *min_neighbors, min_size: *min_size };
                match cascade {
                    Some(path) => Arc::new(HaarDetector::from_path(path, params).map_err(|e| ConfigError::Invalid(e.to_string()))?),
                    None => Arc::new(HaarDetector::frontal_face(params)),
                }
            }
            DetectorConfig::Fixture { labels } => Arc::new(FixtureDetector::new(load_labels(labels)?)),
            DetectorConfig::Stub { regions } => {
                let regions = regions
                    .iter()
                    .map(|r| r.parse::<FaceRegion>().map_err(ConfigError::Invalid))
                    .collect::<Result<_, _>>()?;
                Arc::new(StubDetector::new(regions))
            }
        })
    }

    pub fn build_backend(&self) -> Result<Arc<dyn EmotionBackend>, ConfigError> {
        Ok(match &self.backend {
            BackendConfig::Fixture { labels } => Arc::new(FixtureBackend::new(&load_labels(labels)?)),
            BackendConfig::Remote { url, timeout_ms } => {
                Arc::new(RemoteBackend::new(url, Duration::from_millis(*timeout_ms)))
            }
        })
    }
}

fn load_labels(path: &Path) -> Result<FixtureLabels, ConfigError> {
    FixtureLabels::load(path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ServerConfig::parse("").unwrap();
        assert_eq!(c, ServerConfig::default());
        assert_eq!((c.capture_interval_ms, c.smoothing_capacity, c.override_lockout_s, c.min_frame_spacing_ms), (3000, 3, 120, 500));
    }

    #[test]
    fn full_file() {
        let c = ServerConfig::parse(
            r#"
            library_root = "/srv/music"
            aggregation_strategy = "most_frequent"
            smoothing_capacity = 1
            [moods.emotions]
            neutral = "happy"
            [detector]
            kind = "stub"
            regions = ["0,0,10,10"]
            [backend]
            kind = "fixture"
            labels = "labels.txt"
            "#,
        )
        .unwrap();
        assert_eq!(c.aggregation_strategy, AggregationStrategy::MostFrequent);
        assert!(matches!(c.backend, BackendConfig::Fixture { .. }));
        let moods = c.mood_config(&Manifest::default()).unwrap();
        assert_eq!(moods.map_emotion(moodloop_core::Emotion::Neutral).as_str(), "happy");
    }

    #[test]
    fn rejects_conflicts_and_typos() {
        assert!(ServerConfig::parse("mood_config = \"m.toml\"\n[moods]\n").is_err());
        assert!(ServerConfig::parse("smoothing_capacity = 0").is_err());
        assert!(ServerConfig::parse("smoothing = 2").is_err());
        assert!(ServerConfig::parse("[detector]\nkind = \"cnn\"").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = ServerConfig::parse("[backend]\nkind = \"fixture\"\nlabels = \"l.txt\"").unwrap();
        c.resolve_paths(Path::new("/etc/moodloop"));
        assert_eq!(c.library_root, Path::new("/etc/moodloop/music"));
        assert_eq!(c.backend, BackendConfig::Fixture { labels: "/etc/moodloop/l.txt".into() });
    }
}

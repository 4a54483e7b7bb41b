//! Local HTTP service for the moodloop player, plus the startup glue that
//! turns a config file into a running service.

pub mod api;
pub mod config;
pub mod service;

use std::sync::Arc;

use moodloop_core::library::{scan_library_with, LibraryError, Manifest, ScanReport};
use moodloop_core::metrics::Metrics;
use moodloop_core::time::SystemClock;
use rand::SeedableRng;
use thiserror::Error;

use crate::config::{ConfigError, ServerConfig};
use crate::service::{MoodService, Parts, Settings};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] LibraryError),
}

impl Settings {
    pub fn from_config(config: &ServerConfig) -> Self {
        Self {
            strategy: config.aggregation_strategy,
            smoothing_capacity: config.smoothing_capacity,
            min_frame_spacing_ms: config.min_frame_spacing_ms,
            capture_interval_ms: config.capture_interval_ms,
            override_lockout_s: config.override_lockout_s,
        }
    }
}

/// Scans the library and wires detector, backend, clock and randomness
/// for production use.
pub fn build_service(config: &ServerConfig) -> Result<(MoodService, ScanReport), StartupError> {
    let manifest = Manifest::load(&config.library_root)?;
    let moods = config.mood_config(&manifest)?;
    let (library, report) = scan_library_with(&config.library_root, &moods, &manifest)?;
    let parts = Parts {
        settings: Settings::from_config(config),
        library: Arc::new(library),
        moods,
        detector: config.build_detector()?,
        backend: config.build_backend()?,
        clock: Arc::new(SystemClock),
        rng: Box::new(rand::rngs::StdRng::from_os_rng()),
        metrics: Arc::new(Metrics::new()),
    };
    Ok((MoodService::new(parts), report))
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
struct ServiceChapter;

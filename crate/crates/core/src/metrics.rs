//! Per-stage latency recording with min/max/avg summaries.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decode,
    Detect,
    Classify,
    Aggregate,
    RetrieveSong,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Decode, Stage::Detect, Stage::Classify, Stage::Aggregate, Stage::RetrieveSong];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Decode => "decode",
            Stage::Detect => "detect",
            Stage::Classify => "classify",
            Stage::Aggregate => "aggregate",
            Stage::RetrieveSong => "retrieve_song",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.as_str() == s)
            .ok_or_else(|| MetricsError::UnknownStage(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no samples recorded for stage {0}")]
    NoSamples(Stage),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub stage: Stage,
    pub count: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub avg_ms: f64,
}

impl TimingSummary {
    /// Summary of a non-empty sample slice.
    pub fn of(stage: Stage, samples: &[f64]) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::NoSamples(stage));
        }
        let min_ms = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ms = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        // Rounding in the sum can push the mean a hair outside [min, max].
        let avg_ms = mean.clamp(min_ms, max_ms);
        Ok(Self { stage, count: samples.len(), min_ms, max_ms, avg_ms })
    }
}

/// Bounded per-stage sample buffers. Oldest samples are evicted first.
#[derive(Debug)]
pub struct Metrics {
    capacity: usize,
    buffers: [Mutex<VecDeque<f64>>; 5],
}

impl Default for Metrics {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), buffers: Default::default() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Panics in debug builds on negative or non-finite input.
    pub fn record(&self, stage: Stage, elapsed_ms: f64) {
        debug_assert!(elapsed_ms.is_finite() && elapsed_ms >= 0.0, "bad sample {elapsed_ms}");
        let elapsed_ms = if elapsed_ms.is_finite() { elapsed_ms.max(0.0) } else { return };
        let mut buf = self.buffers[stage.index()].lock().unwrap_or_else(|e| e.into_inner());
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(elapsed_ms);
    }

    pub fn record_since(&self, stage: Stage, start: Instant) {
        self.record(stage, start.elapsed().as_secs_f64() * 1000.0);
    }

    pub fn samples(&self, stage: Stage) -> Vec<f64> {
        let buf = self.buffers[stage.index()].lock().unwrap_or_else(|e| e.into_inner());
        buf.iter().copied().collect()
    }

    pub fn summarize(&self, stage: Stage) -> Result<TimingSummary, MetricsError> {
        TimingSummary::of(stage, &self.samples(stage))
    }

    /// Summaries for every stage that has samples, in pipeline order.
    pub fn summaries(&self) -> Vec<TimingSummary> {
        Stage::ALL.into_iter().filter_map(|s| self.summarize(s).ok()).collect()
    }

    pub fn clear(&self) {
        for buf in &self.buffers {
            buf.lock().unwrap_or_else(|e| e.into_inner()).clear();
        }
    }
}

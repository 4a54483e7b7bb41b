//! Emotion-adaptive music playback.
//!
//! Webcam frames go through face detection and per-face expression
//! classification ([`frame`]), are reduced to one label per frame and
//! smoothed over time ([`aggregation`]), mapped onto a playlist mood
//! ([`mood`]) and drive a per-session player ([`player`]) over a scanned
//! music library ([`library`]). [`metrics`] times every stage and
//! [`corpus`] runs the aggregation strategies over an image directory.

pub mod aggregation;
pub mod corpus;
pub mod emotion;
pub mod frame;
pub mod library;
pub mod metrics;
pub mod mood;
pub mod player;
pub mod time;

pub use aggregation::{aggregate, AggregationResult, AggregationStrategy, SmoothingWindow};
pub use emotion::{Emotion, EmotionDistribution};
pub use frame::{FaceReading, FaceRegion, FrameReading};
pub use library::{scan_library, Library, Track, TrackId};
pub use metrics::{Metrics, Stage, TimingSummary};
pub use mood::{Mood, MoodConfig, PlaylistId};
pub use player::{PlayerState, PlaylistEngine};
pub use time::Timestamp;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/frames.md")]
    struct Frames;
    #[doc = include_str!("../../../book/src/aggregation.md")]
    struct Aggregation;
    #[doc = include_str!("../../../book/src/moods.md")]
    struct Moods;
    #[doc = include_str!("../../../book/src/player.md")]
    struct Player;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
}

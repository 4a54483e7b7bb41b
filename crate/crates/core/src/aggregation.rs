//! Reducing the faces of a frame to one dominant emotion, and damping
//! frame-to-frame flicker.
//!
//! Two image-level strategies are offered. *Highest percentage* picks the
//! single most confident face-level verdict in the frame. *Most frequent*
//! lets every face vote with its dominant label. For a group with one happy
//! face at 0.90 and two sad faces at 0.60 the first says happy and the
//! second says sad; with a single face they always agree.
//!
//! Tie-breaks are fixed so results are reproducible:
//!
//! * within a face, the label declared first in [`Emotion::ALL`] wins;
//! * for highest percentage, the earlier face wins;
//! * for most frequent, the tied label whose best face-level confidence is
//!   higher wins, then declaration order.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{Emotion, EmotionDistribution};
use crate::frame::FrameReading;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    #[default]
    HighestPercentage,
    MostFrequent,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 2] = [AggregationStrategy::HighestPercentage, AggregationStrategy::MostFrequent];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationStrategy::HighestPercentage => "highest_percentage",
            AggregationStrategy::MostFrequent => "most_frequent",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "highest_percentage" | "highest" => Ok(Self::HighestPercentage),
            "most_frequent" | "frequent" => Ok(Self::MostFrequent),
            _ => Err(format!("unknown aggregation strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("frame has no faces to aggregate")]
    NoFaces,
}

/// The frame-level verdict.
///
/// `score` is the winning confidence for
/// [`AggregationStrategy::HighestPercentage`] and the winning vote count for
/// [`AggregationStrategy::MostFrequent`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub label: Emotion,
    pub score: f64,
    pub strategy: AggregationStrategy,
    pub face_count: usize,
}

pub fn dominant_per_face(distribution: &EmotionDistribution) -> (Emotion, f64) {
    distribution.dominant()
}

pub fn aggregate(reading: &FrameReading, strategy: AggregationStrategy) -> Result<AggregationResult, AggregationError> {
    match strategy {
        AggregationStrategy::HighestPercentage => aggregate_highest_percentage(reading),
        AggregationStrategy::MostFrequent => aggregate_most_frequent(reading),
    }
}

pub fn aggregate_highest_percentage(reading: &FrameReading) -> Result<AggregationResult, AggregationError> {
    let mut best: Option<(Emotion, f64)> = None;
    for face in &reading.faces {
        let (label, score) = dominant_per_face(&face.distribution);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((label, score));
        }
    }
    let (label, score) = best.ok_or(AggregationError::NoFaces)?;
    Ok(AggregationResult {
        label,
        score,
        strategy: AggregationStrategy::HighestPercentage,
        face_count: reading.faces.len(),
    })
}

pub fn aggregate_most_frequent(reading: &FrameReading) -> Result<AggregationResult, AggregationError> {
    if reading.faces.is_empty() {
        return Err(AggregationError::NoFaces);
    }
    let mut votes = [0usize; Emotion::COUNT];
    let mut peak = [f64::NEG_INFINITY; Emotion::COUNT];
    for face in &reading.faces {
        let (label, score) = dominant_per_face(&face.distribution);
        votes[label.index()] += 1;
        peak[label.index()] = peak[label.index()].max(score);
    }
    // Iterating in declaration order with strict comparisons leaves the
    // earliest label in place on a full tie.
    let mut winner = Emotion::ALL[0];
    for label in Emotion::ALL.into_iter().skip(1) {
        let (i, w) = (label.index(), winner.index());
        if votes[i] > votes[w] || (votes[i] == votes[w] && peak[i] > peak[w]) {
            winner = label;
        }
    }
    Ok(AggregationResult {
        label: winner,
        score: votes[winner.index()] as f64,
        strategy: AggregationStrategy::MostFrequent,
        face_count: reading.faces.len(),
    })
}

/// The last few per-frame labels of one session, and the label they were
/// last smoothed to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingWindow {
    capacity: usize,
    entries: VecDeque<Emotion>,
    smoothed: Option<Emotion>,
}

impl SmoothingWindow {
    /// A capacity of zero is treated as one.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self { capacity, entries: VecDeque::with_capacity(capacity), smoothed: None }
    }

    /// Rebuilds a window from saved state; keeps only the newest `capacity`
    /// entries.
    pub fn from_parts(capacity: usize, entries: impl IntoIterator<Item = Emotion>, smoothed: Option<Emotion>) -> Self {
        let mut window = Self::new(capacity);
        for e in entries {
            window.append(e);
        }
        window.smoothed = smoothed;
        window
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = Emotion> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn smoothed(&self) -> Option<Emotion> {
        self.smoothed
    }

    fn append(&mut self, label: Emotion) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(label);
    }

    /// Appends `label` and returns the window's majority label.
    ///
    /// On a tied majority the previous smoothed label is kept if it is among
    /// the tied labels; otherwise the most recently seen tied label wins.
    pub fn push(&mut self, label: Emotion) -> Emotion {
        self.append(label);
        let mut counts = [0usize; Emotion::COUNT];
        for e in &self.entries {
            counts[e.index()] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        let tied = |e: Emotion| counts[e.index()] == top;
        let result = match self.smoothed {
            Some(prev) if tied(prev) => prev,
            _ => self
                .entries
                .iter()
                .rev()
                .copied()
                .find(|e| tied(*e))
                .unwrap_or(label),
        };
        self.smoothed = Some(result);
        result
    }
}

/// Value-style form of [`SmoothingWindow::push`].
pub fn smooth(mut window: SmoothingWindow, new_label: Emotion) -> (SmoothingWindow, Emotion) {
    let label = window.push(new_label);
    (window, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{FaceReading, FaceRegion};
    use crate::time::Timestamp;
    use Emotion::*;

    pub(crate) fn reading(faces: &[(Emotion, f64)]) -> FrameReading {
        FrameReading::new(
            Timestamp(0),
            faces
                .iter()
                .enumerate()
                .map(|(i, &(label, c))| FaceReading {
                    region: FaceRegion::new(i as u32 * 10, 0, 10, 10),
                    distribution: EmotionDistribution::peaked(label, c).unwrap(),
                })
                .collect(),
        )
    }

    #[test]
    fn group_example_splits_the_strategies() {
        let r = reading(&[(Happy, 0.9), (Sad, 0.6), (Sad, 0.6)]);
        let hp = aggregate_highest_percentage(&r).unwrap();
        assert_eq!((hp.label, hp.score, hp.face_count), (Happy, 0.9, 3));
        let mf = aggregate_most_frequent(&r).unwrap();
        assert_eq!((mf.label, mf.score, mf.face_count), (Sad, 2.0, 3));
    }

    #[test]
    fn single_face_strategies_coincide() {
        let r = reading(&[(Sad, 0.7)]);
        assert_eq!(aggregate_highest_percentage(&r).unwrap().label, Sad);
        assert_eq!(aggregate_highest_percentage(&r).unwrap().score, 0.7);
        let r = reading(&[(Angry, 0.8)]);
        let mf = aggregate_most_frequent(&r).unwrap();
        assert_eq!((mf.label, mf.score), (Angry, 1.0));
    }

    #[test]
    fn frequency_ties_go_to_higher_confidence() {
        let r = reading(&[(Happy, 0.8), (Sad, 0.7)]);
        let mf = aggregate_most_frequent(&r).unwrap();
        assert_eq!((mf.label, mf.score), (Happy, 1.0));
        let r = reading(&[(Sad, 0.8), (Happy, 0.7)]);
        assert_eq!(aggregate_most_frequent(&r).unwrap().label, Sad);
        // Equal confidence falls through to declaration order.
        let r = reading(&[(Sad, 0.6), (Fear, 0.6)]);
        assert_eq!(aggregate_most_frequent(&r).unwrap().label, Fear);
    }

    #[test]
    fn highest_percentage_ties_go_to_earlier_face() {
        let r = reading(&[(Sad, 0.6), (Angry, 0.6)]);
        assert_eq!(aggregate_highest_percentage(&r).unwrap().label, Sad);
    }

    #[test]
    fn empty_frames_have_no_verdict() {
        let r = reading(&[]);
        for s in AggregationStrategy::ALL {
            assert_eq!(aggregate(&r, s), Err(AggregationError::NoFaces));
        }
    }

    #[test]
    fn dominant_per_face_cases() {
        assert_eq!(dominant_per_face(&EmotionDistribution::peaked(Happy, 0.9).unwrap()), (Happy, 0.9));
        assert_eq!(dominant_per_face(&EmotionDistribution::uniform()), (Angry, 1.0 / 7.0));
    }

    #[test]
    fn smoothing_majority() {
        let w = SmoothingWindow::from_parts(5, [Sad, Sad], Some(Sad));
        let (w, label) = smooth(w, Happy);
        assert_eq!(w.entries().collect::<Vec<_>>(), vec![Sad, Sad, Happy]);
        assert_eq!(label, Sad);
    }

    #[test]
    fn capacity_one_is_passthrough() {
        let w = SmoothingWindow::from_parts(1, [Happy], Some(Happy));
        let (w, label) = smooth(w, Fear);
        assert_eq!(label, Fear);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn tie_keeps_previous_smoothed_label() {
        let w = SmoothingWindow::from_parts(4, [Happy, Sad, Happy], Some(Happy));
        assert_eq!(smooth(w, Sad).1, Happy);
    }

    #[test]
    fn tie_without_previous_takes_most_recent() {
        let w = SmoothingWindow::from_parts(4, [Happy, Sad, Angry], Some(Angry));
        // Counts after push: happy 1, sad 1, angry 1, fear 1; angry was the
        // previous verdict and is tied, so it stays.
        assert_eq!(smooth(w, Fear).1, Angry);
        let w = SmoothingWindow::from_parts(2, [Happy], Some(Neutral));
        assert_eq!(smooth(w, Sad).1, Sad);
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = SmoothingWindow::new(3);
        for e in [Angry, Sad, Sad, Happy, Happy] {
            w.push(e);
        }
        assert_eq!(w.entries().collect::<Vec<_>>(), vec![Sad, Happy, Happy]);
        assert_eq!(w.smoothed(), Some(Happy));
        assert_eq!(SmoothingWindow::new(0).capacity(), 1);
    }

    #[test]
    fn strategy_names() {
        assert_eq!("highest".parse::<AggregationStrategy>().unwrap(), AggregationStrategy::HighestPercentage);
        assert_eq!("most_frequent".parse::<AggregationStrategy>().unwrap(), AggregationStrategy::MostFrequent);
        assert!("mean".parse::<AggregationStrategy>().is_err());
        assert_eq!(serde_json::to_string(&AggregationStrategy::MostFrequent).unwrap(), "\"most_frequent\"");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = Emotion> {
            (0..Emotion::COUNT).prop_map(|i| Emotion::ALL[i])
        }

        proptest! {
            #[test]
            fn capacity_one_is_identity(labels in proptest::collection::vec(label(), 1..30)) {
                let mut w = SmoothingWindow::new(1);
                for l in labels {
                    prop_assert_eq!(w.push(l), l);
                }
            }

            #[test]
            fn window_never_exceeds_capacity(cap in 1usize..8, labels in proptest::collection::vec(label(), 0..40)) {
                let mut w = SmoothingWindow::new(cap);
                for l in labels {
                    w.push(l);
                    prop_assert!(w.len() <= cap);
                }
            }

            #[test]
            fn highest_percentage_ignores_order_when_scores_distinct(
                faces in proptest::collection::vec((label(), 0.2f64..1.0), 1..6),
                seed in any::<u64>(),
            ) {
                let mut scores: Vec<f64> = faces.iter().map(|f| f.1).collect();
                scores.sort_by(f64::total_cmp);
                scores.dedup();
                prop_assume!(scores.len() == faces.len());
                let r = reading(&faces);
                let mut shuffled = faces.clone();
                let n = shuffled.len();
                shuffled.rotate_left((seed as usize) % n);
                let a = aggregate_highest_percentage(&r).unwrap();
                let b = aggregate_highest_percentage(&reading(&shuffled)).unwrap();
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.score, b.score);
            }
        }
    }
}

//! The seven canonical facial-expression labels and per-face confidence
//! distributions over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the sum of a distribution's scores.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A facial-expression label.
///
/// The declaration order is the tie-break order used everywhere a choice
/// between equally scored labels has to be made: `Angry` wins over
/// `Disgust`, which wins over `Fear`, and so on down to `Neutral`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Disgust,
    Fear,
    Happy,
    Sad,
    Surprise,
    Neutral,
}

impl Emotion {
    pub const COUNT: usize = 7;

    /// All labels in tie-break order.
    pub const ALL: [Emotion; Emotion::COUNT] = [
        Emotion::Angry,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprise,
        Emotion::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprise => "surprise",
            Emotion::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown emotion label {0:?}")]
pub struct UnknownEmotion(pub String);

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| UnknownEmotion(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("score for {label} is {value}, outside [0, 1]")]
    OutOfRange { label: Emotion, value: f64 },
    #[error("scores sum to {0}, expected 1")]
    BadSum(f64),
}

/// Per-face confidence scores over all seven labels, summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreMap", into = "ScoreMap")]
pub struct EmotionDistribution {
    scores: [f64; Emotion::COUNT],
}

impl EmotionDistribution {
    /// Validates an already-normalized score vector indexed by [`Emotion::index`].
    pub fn new(scores: [f64; Emotion::COUNT]) -> Result<Self, DistributionError> {
        for label in Emotion::ALL {
            let value = scores[label.index()];
            if !(0.0..=1.0).contains(&value) {
                return Err(DistributionError::OutOfRange { label, value });
            }
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::BadSum(sum));
        }
        Ok(Self { scores })
    }

    /// `label` gets `confidence`; the remainder is spread evenly over the
    /// other six labels.
    pub fn peaked(label: Emotion, confidence: f64) -> Result<Self, DistributionError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(DistributionError::OutOfRange { label, value: confidence });
        }
        let rest = (1.0 - confidence) / (Emotion::COUNT - 1) as f64;
        let mut scores = [rest; Emotion::COUNT];
        scores[label.index()] = confidence;
        Self::new(scores)
    }

    pub fn uniform() -> Self {
        Self { scores: [1.0 / Emotion::COUNT as f64; Emotion::COUNT] }
    }

    pub fn score(&self, label: Emotion) -> f64 {
        self.scores[label.index()]
    }

    pub fn scores(&self) -> &[f64; Emotion::COUNT] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (Emotion, f64)> + '_ {
        Emotion::ALL.into_iter().map(|e| (e, self.scores[e.index()]))
    }

    /// Argmax label and its score. Ties go to the label declared first.
    pub fn dominant(&self) -> (Emotion, f64) {
        let mut best = (Emotion::ALL[0], self.scores[0]);
        for (label, score) in self.iter().skip(1) {
            if score > best.1 {
                best = (label, score);
            }
        }
        best
    }
}

/// Wire form: `{"angry": 0.01, "disgust": 0.0, ...}`.
#[derive(Serialize, Deserialize)]
struct ScoreMap {
    angry: f64,
    disgust: f64,
    fear: f64,
    happy: f64,
    sad: f64,
    surprise: f64,
    neutral: f64,
}

impl From<EmotionDistribution> for ScoreMap {
    fn from(d: EmotionDistribution) -> Self {
        let s = d.scores;
        ScoreMap { angry: s[0], disgust: s[1], fear: s[2], happy: s[3], sad: s[4], surprise: s[5], neutral: s[6] }
    }
}

impl TryFrom<ScoreMap> for EmotionDistribution {
    type Error = DistributionError;

    fn try_from(m: ScoreMap) -> Result<Self, Self::Error> {
        EmotionDistribution::new([m.angry, m.disgust, m.fear, m.happy, m.sad, m.surprise, m.neutral])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_case_insensitively() {
        assert_eq!("Happy".parse::<Emotion>().unwrap(), Emotion::Happy);
        assert_eq!(" neutral ".parse::<Emotion>().unwrap(), Emotion::Neutral);
        assert!("joy".parse::<Emotion>().is_err());
    }

    #[test]
    fn peaked_spreads_remainder_evenly() {
        let d = EmotionDistribution::peaked(Emotion::Happy, 0.9).unwrap();
        assert_eq!(d.score(Emotion::Happy), 0.9);
        for (label, score) in d.iter().filter(|(l, _)| *l != Emotion::Happy) {
            assert!((score - 0.1 / 6.0).abs() < 1e-12, "{label}");
        }
    }

    #[test]
    fn rejects_bad_sums_and_ranges() {
        assert!(matches!(
            EmotionDistribution::new([0.5; 7]),
            Err(DistributionError::BadSum(_))
        ));
        let mut s = [0.0; 7];
        s[0] = 1.5;
        s[1] = -0.5;
        assert!(matches!(EmotionDistribution::new(s), Err(DistributionError::OutOfRange { .. })));
    }

    #[test]
    fn dominant_uses_declared_order_on_ties() {
        assert_eq!(EmotionDistribution::uniform().dominant(), (Emotion::Angry, 1.0 / 7.0));
        let mut s = [0.0; 7];
        s[Emotion::Sad.index()] = 0.5;
        s[Emotion::Fear.index()] = 0.5;
        assert_eq!(EmotionDistribution::new(s).unwrap().dominant(), (Emotion::Fear, 0.5));
    }

    #[test]
    fn serde_round_trip_uses_label_keys() {
        let d = EmotionDistribution::peaked(Emotion::Sad, 0.4).unwrap();
        let json = serde_json::to_value(d).unwrap();
        assert_eq!(json["sad"], 0.4);
        let back: EmotionDistribution = serde_json::from_value(json).unwrap();
        assert_eq!(back, d);
    }
}

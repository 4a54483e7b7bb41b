use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{Frame, FrameError, FaceRegion};
use crate::emotion::{Emotion, EmotionDistribution};

/// Unnormalized scores as a backend reports them, indexed by
/// [`Emotion::index`]. Fractions and percentages are both fine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScores(pub [f64; Emotion::COUNT]);

impl RawScores {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Emotion, f64)>) -> Self {
        let mut scores = [0.0; Emotion::COUNT];
        for (label, value) in pairs {
            scores[label.index()] = value;
        }
        Self(scores)
    }
}

impl From<EmotionDistribution> for RawScores {
    fn from(d: EmotionDistribution) -> Self {
        Self(*d.scores())
    }
}

/// Scores one face crop.
pub trait EmotionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn infer(&self, frame: &Frame, region: FaceRegion) -> Result<RawScores, FrameError>;
}

/// Rescales raw scores to sum to one. Scores already summing to one within
/// 1e-9 pass through untouched.
pub fn normalize_scores(raw: RawScores) -> Result<EmotionDistribution, FrameError> {
    if let Some((label, value)) = Emotion::ALL
        .into_iter()
        .map(|e| (e, raw.0[e.index()]))
        .find(|(_, v)| !v.is_finite() || *v < 0.0)
    {
        return Err(FrameError::BackendFailure(format!("score for {label} is {value}")));
    }
    let total: f64 = raw.0.iter().sum();
    if total <= 0.0 {
        return Err(FrameError::NormalizationFailure);
    }
    if (total - 1.0).abs() <= 1e-9 {
        return EmotionDistribution::new(raw.0).map_err(|e| FrameError::BackendFailure(e.to_string()));
    }
    let scores = raw.0.map(|v| (v / total).clamp(0.0, 1.0));
    EmotionDistribution::new(scores).map_err(|e| FrameError::BackendFailure(e.to_string()))
}

pub fn classify_emotions(
    frame: &Frame,
    region: FaceRegion,
    backend: &dyn EmotionBackend,
) -> Result<EmotionDistribution, FrameError> {
    let (width, height) = frame.image.dimensions();
    if !region.fits(width, height) {
        return Err(FrameError::RegionOutOfBounds { region, width, height });
    }
    normalize_scores(backend.infer(frame, region)?)
}

/// Lookup key of a fixture label: a frame key (or any frame) and optionally
/// one face region within it.
///
/// Text form is `frame`, `frame#x,y,w,h`, `*` or `*#x,y,w,h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FixtureKey {
    pub frame: Option<String>,
    pub region: Option<FaceRegion>,
}

impl FixtureKey {
    pub fn frame(key: impl Into<String>) -> Self {
        Self { frame: Some(key.into()), region: None }
    }

    pub fn face(key: impl Into<String>, region: FaceRegion) -> Self {
        Self { frame: Some(key.into()), region: Some(region) }
    }

    pub fn any_frame(region: FaceRegion) -> Self {
        Self { frame: None, region: Some(region) }
    }

    pub fn wildcard() -> Self {
        Self { frame: None, region: None }
    }
}

impl fmt::Display for FixtureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.frame.as_deref().unwrap_or("*"))?;
        if let Some(region) = self.region {
            write!(f, "#{region}")?;
        }
        Ok(())
    }
}

impl FromStr for FixtureKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (frame, region) = match s.split_once('#') {
            Some((frame, region)) => (frame.trim(), Some(region.parse::<FaceRegion>()?)),
            None => (s.trim(), None),
        };
        if frame.is_empty() {
            return Err("empty fixture key".into());
        }
        let frame = (frame != "*").then(|| frame.to_string());
        Ok(Self { frame, region })
    }
}

#[derive(Debug, Error)]
pub enum FixtureParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("reading fixture labels: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureEntry {
    pub key: FixtureKey,
    pub label: Emotion,
    pub confidence: f64,
}

/// Parsed `key=label@confidence` mapping file.
///
/// Blank lines and lines starting with `#` are ignored. Confidences above 1
/// are read as percentages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureLabels {
    entries: Vec<FixtureEntry>,
}

impl FixtureLabels {
    pub fn parse(text: &str) -> Result<Self, FixtureParseError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| FixtureParseError::Syntax { line: n + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected key=label@confidence".into()))?;
            let key: FixtureKey = key.parse().map_err(syntax)?;
            let (label, confidence) = value
                .trim()
                .split_once('@')
                .ok_or_else(|| syntax(format!("expected label@confidence, got {value:?}")))?;
            let label: Emotion = label.parse().map_err(|e: crate::emotion::UnknownEmotion| syntax(e.to_string()))?;
            let confidence = parse_confidence(confidence).map_err(syntax)?;
            entries.push(FixtureEntry { key, label, confidence });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, FixtureParseError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (FixtureKey, Emotion, f64)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(key, label, confidence)| FixtureEntry { key, label, confidence })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}={}@{}\n", e.key, e.label, e.confidence))
            .collect()
    }
}

fn parse_confidence(text: &str) -> Result<f64, String> {
    let value: f64 = text.trim().parse().map_err(|e| format!("bad confidence {text:?}: {e}"))?;
    let value = if value > 1.0 && value <= 100.0 { value / 100.0 } else { value };
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(format!("confidence {text} outside [0, 1] and [0, 100]"))
    }
}

/// Deterministic stand-in for a trained classifier.
///
/// `label@c` yields a distribution with `label = c` and `(1 - c) / 6` on
/// every other label. Lookup tries `frame#region`, then `frame`, then
/// `*#region`, then `*`; a face with no matching key fails classification.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    table: HashMap<FixtureKey, (Emotion, f64)>,
}

impl FixtureBackend {
    pub fn new(labels: &FixtureLabels) -> Self {
        let mut table = HashMap::new();
        for entry in labels.entries() {
            // First mention wins, matching file order elsewhere.
            table.entry(entry.key.clone()).or_insert((entry.label, entry.confidence));
        }
        Self { table }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (FixtureKey, Emotion, f64)>) -> Self {
        Self::new(&FixtureLabels::from_entries(entries))
    }

    fn lookup(&self, frame: &str, region: FaceRegion) -> Option<(Emotion, f64)> {
        [
            FixtureKey::face(frame, region),
            FixtureKey::frame(frame),
            FixtureKey::any_frame(region),
            FixtureKey::wildcard(),
        ]
        .iter()
        .find_map(|k| self.table.get(k).copied())
    }
}

impl EmotionBackend for FixtureBackend {
    fn name(&self) -> &str {
        "fixture"
    }

    fn infer(&self, frame: &Frame, region: FaceRegion) -> Result<RawScores, FrameError> {
        let (label, confidence) = self
            .lookup(&frame.key, region)
            .ok_or_else(|| FrameError::BackendFailure(format!("no fixture label for {}#{region}", frame.key)))?;
        let dist = EmotionDistribution::peaked(label, confidence)
            .map_err(|e| FrameError::BackendFailure(e.to_string()))?;
        Ok(dist.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn frame(key: &str) -> Frame {
        Frame::with_key(key, RgbImage::new(100, 100))
    }

    struct Fixed(RawScores);

    impl EmotionBackend for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn infer(&self, _: &Frame, _: FaceRegion) -> Result<RawScores, FrameError> {
            Ok(self.0)
        }
    }

    const FACE: FaceRegion = FaceRegion::new(0, 0, 10, 10);

    #[test]
    fn fixture_passthrough_spreads_remainder() {
        let backend = FixtureBackend::from_entries([(FixtureKey::wildcard(), Emotion::Happy, 0.9)]);
        let d = classify_emotions(&frame("k"), FACE, &backend).unwrap();
        assert!((d.score(Emotion::Happy) - 0.9).abs() < 1e-12);
        for label in Emotion::ALL.into_iter().filter(|l| *l != Emotion::Happy) {
            assert!((d.score(label) - 0.1 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn percentages_are_normalized() {
        let raw = RawScores::from_pairs([(Emotion::Happy, 90.0), (Emotion::Sad, 10.0)]);
        let d = classify_emotions(&frame("k"), FACE, &Fixed(raw)).unwrap();
        assert!((d.score(Emotion::Happy) - 0.9).abs() < 1e-12);
        assert!((d.score(Emotion::Sad) - 0.1).abs() < 1e-12);
        assert_eq!(d.score(Emotion::Angry), 0.0);
    }

    #[test]
    fn all_zero_scores_fail_normalization() {
        let err = classify_emotions(&frame("k"), FACE, &Fixed(RawScores([0.0; 7]))).unwrap_err();
        assert!(matches!(err, FrameError::NormalizationFailure));
    }

    #[test]
    fn negative_or_nan_scores_are_backend_failures() {
        let mut s = [0.1; 7];
        s[2] = -0.1;
        assert!(matches!(normalize_scores(RawScores(s)), Err(FrameError::BackendFailure(_))));
        s[2] = f64::NAN;
        assert!(matches!(normalize_scores(RawScores(s)), Err(FrameError::BackendFailure(_))));
    }

    #[test]
    fn region_outside_image_is_rejected() {
        let backend = FixtureBackend::from_entries([(FixtureKey::wildcard(), Emotion::Happy, 0.9)]);
        let err = classify_emotions(&frame("k"), FaceRegion::new(95, 0, 10, 10), &backend).unwrap_err();
        assert!(matches!(err, FrameError::RegionOutOfBounds { .. }));
    }

    #[test]
    fn lookup_prefers_most_specific_key() {
        let labels = FixtureLabels::parse(
            "# comment\n\
             img1#0,0,10,10=sad@0.7\n\
             img1=angry@0.6\n\
             *#0,0,10,10=fear@55\n\
             *=neutral@1\n",
        )
        .unwrap();
        let backend = FixtureBackend::new(&labels);
        let dom = |key: &str, r: FaceRegion| classify_emotions(&frame(key), r, &backend).unwrap().dominant();
        assert_eq!(dom("img1", FACE), (Emotion::Sad, 0.7));
        assert_eq!(dom("img1", FaceRegion::new(1, 1, 5, 5)), (Emotion::Angry, 0.6));
        assert_eq!(dom("img2", FACE), (Emotion::Fear, 0.55));
        assert_eq!(dom("img2", FaceRegion::new(1, 1, 5, 5)).0, Emotion::Neutral);
    }

    #[test]
    fn missing_label_is_backend_failure() {
        let backend = FixtureBackend::default();
        assert!(matches!(
            classify_emotions(&frame("k"), FACE, &backend),
            Err(FrameError::BackendFailure(_))
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        for bad in ["x", "k=happy", "k=joy@0.5", "k=happy@2000", "=happy@0.5", "k#1,2=sad@0.1"] {
            let err = FixtureLabels::parse(&format!("\n{bad}\n")).unwrap_err();
            assert!(matches!(err, FixtureParseError::Syntax { line: 2, .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn text_form_round_trips() {
        let labels = FixtureLabels::parse("a#1,2,3,4=happy@0.9\n*=sad@0.25\nb=fear@0.5\n").unwrap();
        assert_eq!(FixtureLabels::parse(&labels.to_text()).unwrap(), labels);
    }
}

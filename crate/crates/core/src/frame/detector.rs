use std::path::Path;
use std::sync::Arc;

use super::haar::{DetectParams, HaarCascade};
use super::{sanitize_regions, FaceRegion, FixtureKey, FixtureLabels, Frame, FrameError};

/// Locates faces in a decoded frame.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, frame: &Frame) -> Result<Vec<FaceRegion>, FrameError>;
}

/// Runs `detector` and keeps only in-bounds, distinct regions. No face is an
/// empty list, not an error.
pub fn detect_faces(frame: &Frame, detector: &dyn FaceDetector) -> Result<Vec<FaceRegion>, FrameError> {
    let regions = detector.detect(frame)?;
    Ok(sanitize_regions(regions, &frame.image))
}

/// Returns the same regions for every frame.
#[derive(Debug, Clone, Default)]
pub struct StubDetector {
    regions: Vec<FaceRegion>,
}

impl StubDetector {
    pub fn new(regions: Vec<FaceRegion>) -> Self {
        Self { regions }
    }
}

impl FaceDetector for StubDetector {
    fn detect(&self, _frame: &Frame) -> Result<Vec<FaceRegion>, FrameError> {
        Ok(self.regions.clone())
    }
}

/// Faces come from a fixture label file: `key#x,y,w,h` entries give one
/// region each, in file order; a bare `key` entry stands for one face
/// covering the whole frame. Frames with no entry have no faces.
#[derive(Debug, Clone, Default)]
pub struct FixtureDetector {
    labels: Arc<FixtureLabels>,
}

impl FixtureDetector {
    pub fn new(labels: FixtureLabels) -> Self {
        Self { labels: Arc::new(labels) }
    }
}

impl FaceDetector for FixtureDetector {
    fn detect(&self, frame: &Frame) -> Result<Vec<FaceRegion>, FrameError> {
        let mine = |e: &&crate::frame::FixtureEntry| e.key.frame.as_deref() == Some(frame.key.as_str());
        let regions: Vec<FaceRegion> = self
            .labels
            .entries()
            .iter()
            .filter(mine)
            .filter_map(|e| e.key.region)
            .collect();
        if !regions.is_empty() {
            return Ok(regions);
        }
        let whole = self.labels.entries().iter().filter(mine).any(|e| e.key == FixtureKey::frame(&frame.key));
        Ok(if whole { vec![FaceRegion::full(&frame.image)] } else { Vec::new() })
    }
}

/// Cascade detector over the grayscale frame.
#[derive(Debug, Clone)]
pub struct HaarDetector {
    cascade: Arc<HaarCascade>,
    params: DetectParams,
}

impl HaarDetector {
    /// Uses the bundled frontal-face cascade.
    pub fn frontal_face(params: DetectParams) -> Self {
        Self { cascade: Arc::new(HaarCascade::frontal_face_default()), params }
    }

    pub fn from_path(path: &Path, params: DetectParams) -> Result<Self, FrameError> {
        let cascade = HaarCascade::load(path)
            .map_err(|e| FrameError::DetectorUnavailable(format!("{}: {e}", path.display())))?;
        Ok(Self { cascade: Arc::new(cascade), params })
    }

    pub fn params(&self) -> &DetectParams {
        &self.params
    }
}

impl FaceDetector for HaarDetector {
    fn detect(&self, frame: &Frame) -> Result<Vec<FaceRegion>, FrameError> {
        Ok(self.cascade.detect_rgb(&frame.image, &self.params))
    }
}

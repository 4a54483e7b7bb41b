//! Frame ingestion: decode a submitted image, find faces, and classify each
//! face's expression through a pluggable backend.
//!
//! Decoded rasters live only for the duration of [`analyze_frame`]; the
//! resulting [`FrameReading`] carries regions and distributions, never pixels.

mod backend;
mod detector;
pub mod haar;
mod remote;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use base64::Engine as _;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backend::{
    classify_emotions, normalize_scores, EmotionBackend, FixtureBackend, FixtureEntry, FixtureKey,
    FixtureLabels, FixtureParseError, RawScores,
};
pub use detector::{detect_faces, FaceDetector, FixtureDetector, HaarDetector, StubDetector};
pub use remote::RemoteBackend;

use crate::emotion::EmotionDistribution;
use crate::metrics::{Metrics, Stage};
use crate::time::Timestamp;

/// Decoded RGB raster.
pub type RasterImage = RgbImage;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("image payload is empty")]
    EmptyPayload,
    #[error("image payload is not valid base64: {0}")]
    InvalidEncoding(String),
    #[error("unsupported or corrupt image: {0}")]
    UnsupportedImageFormat(String),
    #[error("face detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("region {region} does not fit a {width}x{height} image")]
    RegionOutOfBounds { region: FaceRegion, width: u32, height: u32 },
    #[error("emotion backend failed: {0}")]
    BackendFailure(String),
    #[error("emotion backend returned all-zero scores")]
    NormalizationFailure,
}

impl FrameError {
    /// Whether the error is the submitter's fault (bad payload) rather than
    /// an unavailable detector or backend.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            FrameError::EmptyPayload
                | FrameError::InvalidEncoding(_)
                | FrameError::UnsupportedImageFormat(_)
                | FrameError::RegionOutOfBounds { .. }
        )
    }
}

/// One image posted by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSubmission {
    pub session_id: String,
    /// Base64 text of PNG or JPEG bytes. A `data:image/...;base64,` prefix is
    /// accepted and ignored.
    pub image_b64: String,
    pub captured_at: Timestamp,
}

impl FrameSubmission {
    pub fn new(session_id: impl Into<String>, image_b64: impl Into<String>, captured_at: Timestamp) -> Self {
        Self { session_id: session_id.into(), image_b64: image_b64.into(), captured_at }
    }
}

/// Axis-aligned face rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl FaceRegion {
    pub const fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn full(image: &RasterImage) -> Self {
        Self::new(0, 0, image.width(), image.height())
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    /// Intersection over union with another region.
    pub fn iou(&self, other: &FaceRegion) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = u64::from(x1 - x0) * u64::from(y1 - y0);
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

impl std::fmt::Display for FaceRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.width, self.height)
    }
}

impl std::str::FromStr for FaceRegion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("bad region {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(FaceRegion::new(x, y, w, h)),
            _ => Err(format!("region {s:?} must be x,y,width,height with positive size")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReading {
    pub region: FaceRegion,
    pub distribution: EmotionDistribution,
}

/// The faces found in one frame, in detector order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReading {
    pub captured_at: Timestamp,
    pub faces: Vec<FaceReading>,
}

impl FrameReading {
    pub fn new(captured_at: Timestamp, faces: Vec<FaceReading>) -> Self {
        Self { captured_at, faces }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// A decoded image plus the key fixture detectors and backends look it up by.
#[derive(Debug, Clone)]
pub struct Frame {
    pub key: String,
    pub image: RasterImage,
}

impl Frame {
    /// Keys the frame by its content digest.
    pub fn new(image: RasterImage) -> Self {
        let key = frame_digest(&image);
        Self { key, image }
    }

    pub fn with_key(key: impl Into<String>, image: RasterImage) -> Self {
        Self { key: key.into(), image }
    }
}

/// First 16 hex digits of SHA-256 over the raster's dimensions and pixels.
///
/// Independent of the transport encoding: the same pixels sent as PNG or as
/// base64 of PNG hash identically.
pub fn frame_digest(image: &RasterImage) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image.width().to_le_bytes());
    hasher.update(image.height().to_le_bytes());
    hasher.update(image.as_raw());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Base64 text of the PNG encoding of `image`.
pub fn encode_png_b64(image: &RasterImage) -> String {
    let mut bytes = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut bytes, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    base64::engine::general_purpose::STANDARD.encode(bytes.into_inner())
}

pub fn decode_frame(submission: &FrameSubmission) -> Result<RasterImage, FrameError> {
    decode_image_b64(&submission.image_b64)
}

pub fn decode_image_b64(payload: &str) -> Result<RasterImage, FrameError> {
    let mut text = payload.trim();
    if let Some(rest) = text.strip_prefix("data:") {
        text = rest.split_once(',').map(|(_, data)| data).unwrap_or("");
    }
    if text.is_empty() {
        return Err(FrameError::EmptyPayload);
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| FrameError::InvalidEncoding(e.to_string()))?;
    decode_image_bytes(&bytes)
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<RasterImage, FrameError> {
    if bytes.is_empty() {
        return Err(FrameError::EmptyPayload);
    }
    let format = image::guess_format(bytes)
        .map_err(|e| FrameError::UnsupportedImageFormat(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(FrameError::UnsupportedImageFormat(format!("{format:?}")));
    }
    let image = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| FrameError::UnsupportedImageFormat(e.to_string()))?;
    if image.width() == 0 || image.height() == 0 {
        return Err(FrameError::UnsupportedImageFormat("zero-sized image".into()));
    }
    Ok(image.to_rgb8())
}

/// Decode, detect and classify one submission.
///
/// A face whose classification fails is logged and dropped; the frame still
/// succeeds with the remaining faces.
pub fn analyze_frame(
    submission: &FrameSubmission,
    detector: &dyn FaceDetector,
    backend: &dyn EmotionBackend,
    metrics: &Metrics,
) -> Result<FrameReading, FrameError> {
    let started = Instant::now();
    let image = decode_frame(submission)?;
    metrics.record_since(Stage::Decode, started);
    let frame = Frame::new(image);
    analyze_decoded(&frame, submission.captured_at, detector, backend, metrics)
}

/// The detect and classify half of [`analyze_frame`], for callers that
/// already hold a decoded [`Frame`].
pub fn analyze_decoded(
    frame: &Frame,
    captured_at: Timestamp,
    detector: &dyn FaceDetector,
    backend: &dyn EmotionBackend,
    metrics: &Metrics,
) -> Result<FrameReading, FrameError> {
    let started = Instant::now();
    let regions = detect_faces(frame, detector)?;
    metrics.record_since(Stage::Detect, started);

    let started = Instant::now();
    let mut faces = Vec::with_capacity(regions.len());
    for region in regions {
        match classify_emotions(frame, region, backend) {
            Ok(distribution) => faces.push(FaceReading { region, distribution }),
            Err(err) => log::warn!("dropping face {region} in frame {}: {err}", frame.key),
        }
    }
    metrics.record_since(Stage::Classify, started);
    Ok(FrameReading::new(captured_at, faces))
}

/// Drops regions that fall outside the image and exact duplicates, keeping
/// detector order.
fn sanitize_regions(regions: Vec<FaceRegion>, image: &RasterImage) -> Vec<FaceRegion> {
    let mut seen = HashSet::new();
    regions
        .into_iter()
        .filter(|r| {
            if !r.fits(image.width(), image.height()) {
                log::warn!("detector returned out-of-bounds region {r}");
                return false;
            }
            seen.insert(*r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;
    use image::Rgb;

    fn tiny() -> RasterImage {
        RgbImage::from_fn(2, 2, |x, y| Rgb([x as u8 * 100, y as u8 * 100, 7]))
    }

    #[test]
    fn round_trips_a_two_by_two_png() {
        let sub = FrameSubmission::new("s", encode_png_b64(&tiny()), Timestamp(0));
        let img = decode_frame(&sub).unwrap();
        assert_eq!(img.dimensions(), (2, 2));
        assert_eq!(img, tiny());
    }

    #[test]
    fn accepts_data_url_prefix() {
        let payload = format!("data:image/png;base64,{}", encode_png_b64(&tiny()));
        assert_eq!(decode_image_b64(&payload).unwrap().dimensions(), (2, 2));
    }

    #[test]
    fn empty_payload_is_rejected() {
        assert!(matches!(decode_image_b64(""), Err(FrameError::EmptyPayload)));
        assert!(matches!(decode_image_b64("data:image/png;base64,"), Err(FrameError::EmptyPayload)));
    }

    #[test]
    fn truncated_payload_does_not_decode() {
        let full = encode_png_b64(&RgbImage::from_pixel(16, 16, Rgb([1, 2, 3])));
        let half = &full[..full.len() / 2];
        let err = decode_image_b64(half).unwrap_err();
        assert!(
            matches!(err, FrameError::InvalidEncoding(_) | FrameError::UnsupportedImageFormat(_)),
            "{err:?}"
        );
        // Valid base64 of truncated bytes.
        let bytes = base64::engine::general_purpose::STANDARD.decode(&full).unwrap();
        let cut = base64::engine::general_purpose::STANDARD.encode(&bytes[..bytes.len() / 2]);
        assert!(matches!(decode_image_b64(&cut), Err(FrameError::UnsupportedImageFormat(_))));
    }

    #[test]
    fn garbage_is_invalid_encoding() {
        assert!(matches!(decode_image_b64("not base64 !!"), Err(FrameError::InvalidEncoding(_))));
        let gif = base64::engine::general_purpose::STANDARD.encode(b"GIF89a\x01\x00\x01\x00");
        assert!(matches!(decode_image_b64(&gif), Err(FrameError::UnsupportedImageFormat(_))));
    }

    #[test]
    fn digest_ignores_encoding() {
        let img = tiny();
        let via_wire = decode_image_b64(&encode_png_b64(&img)).unwrap();
        assert_eq!(frame_digest(&img), frame_digest(&via_wire));
        assert_eq!(frame_digest(&img).len(), 16);
        let other = RgbImage::from_pixel(2, 2, Rgb([0, 0, 0]));
        assert_ne!(frame_digest(&img), frame_digest(&other));
    }

    #[test]
    fn region_parsing_and_bounds() {
        let r: FaceRegion = "10,10,50,50".parse().unwrap();
        assert_eq!(r, FaceRegion::new(10, 10, 50, 50));
        assert!(r.fits(60, 60));
        assert!(!r.fits(59, 60));
        assert!("1,2,0,3".parse::<FaceRegion>().is_err());
        assert!("1,2,3".parse::<FaceRegion>().is_err());
        assert_eq!(r.iou(&r), 1.0);
        assert_eq!(r.iou(&FaceRegion::new(100, 100, 5, 5)), 0.0);
    }

    #[test]
    fn three_face_group_matches_worked_scenario() {
        let image = RgbImage::from_pixel(200, 80, Rgb([40, 40, 40]));
        let regions = [FaceRegion::new(10, 10, 50, 50), FaceRegion::new(70, 10, 50, 50), FaceRegion::new(130, 10, 50, 50)];
        let detector = StubDetector::new(regions.to_vec());
        let backend = FixtureBackend::from_entries([
            (FixtureKey::any_frame(regions[0]), Emotion::Happy, 0.9),
            (FixtureKey::any_frame(regions[1]), Emotion::Sad, 0.6),
            (FixtureKey::any_frame(regions[2]), Emotion::Sad, 0.6),
        ]);
        let sub = FrameSubmission::new("s", encode_png_b64(&image), Timestamp(5));
        let reading = analyze_frame(&sub, &detector, &backend, &Metrics::default()).unwrap();
        let dominants: Vec<_> = reading.faces.iter().map(|f| f.distribution.dominant()).collect();
        assert_eq!(dominants, vec![(Emotion::Happy, 0.9), (Emotion::Sad, 0.6), (Emotion::Sad, 0.6)]);
        assert_eq!(reading.captured_at, Timestamp(5));
    }

    #[test]
    fn sanitize_drops_duplicates_and_strays() {
        let img = RgbImage::new(100, 100);
        let out = sanitize_regions(
            vec![
                FaceRegion::new(0, 0, 10, 10),
                FaceRegion::new(95, 95, 10, 10),
                FaceRegion::new(0, 0, 10, 10),
                FaceRegion::new(5, 5, 10, 10),
            ],
            &img,
        );
        assert_eq!(out, vec![FaceRegion::new(0, 0, 10, 10), FaceRegion::new(5, 5, 10, 10)]);
    }
}

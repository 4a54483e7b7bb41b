use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{EmotionBackend, FaceRegion, Frame, FrameError, RawScores};
use crate::emotion::Emotion;

/// Adapter for a facial-expression model served over HTTP.
///
/// Posts the face crop as a PNG data URL to `{base_url}/analyze` in the
/// shape DeepFace's REST server expects and reads back the per-emotion
/// scores, which may be percentages. Accepted response shapes are
/// `{"results": [{"emotion": {...}}]}`, `[{"emotion": {...}}]` and
/// `{"emotion": {...}}`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { endpoint: format!("{}/analyze", base_url.trim_end_matches('/')), agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl EmotionBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn infer(&self, frame: &Frame, region: FaceRegion) -> Result<RawScores, FrameError> {
        let crop = image::imageops::crop_imm(&frame.image, region.x, region.y, region.width, region.height).to_image();
        let mut png = std::io::Cursor::new(Vec::new());
        crop.write_to(&mut png, image::ImageFormat::Png)
            .map_err(|e| FrameError::BackendFailure(e.to_string()))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png.into_inner());
        let body = json!({
            "img": format!("data:image/png;base64,{b64}"),
            "actions": ["emotion"],
            "enforce_detection": false,
            "detector_backend": "skip",
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| FrameError::BackendFailure(format!("{}: {e}", self.endpoint)))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| FrameError::BackendFailure(format!("bad response body: {e}")))?;
        parse_emotion_scores(&value)
    }
}

pub(crate) fn parse_emotion_scores(value: &Value) -> Result<RawScores, FrameError> {
    let first = match value {
        Value::Array(items) => items.first(),
        Value::Object(map) => match map.get("results") {
            Some(Value::Array(items)) => items.first(),
            _ => Some(value),
        },
        _ => None,
    };
    let scores = first
        .and_then(|v| v.get("emotion"))
        .and_then(Value::as_object)
        .ok_or_else(|| FrameError::BackendFailure("response has no emotion scores".into()))?;
    let mut pairs = Vec::new();
    for (key, v) in scores {
        let Ok(label) = key.parse::<Emotion>() else {
            log::debug!("ignoring unknown label {key:?} from backend");
            continue;
        };
        let score = v
            .as_f64()
            .ok_or_else(|| FrameError::BackendFailure(format!("score for {key} is not a number")))?;
        pairs.push((label, score));
    }
    Ok(RawScores::from_pairs(pairs))
}

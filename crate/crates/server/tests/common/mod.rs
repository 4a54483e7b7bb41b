#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use moodloop_core::aggregation::AggregationStrategy;
use moodloop_core::emotion::Emotion;
use moodloop_core::frame::{encode_png_b64, frame_digest, FaceRegion, FixtureBackend, FixtureKey, StubDetector};
use moodloop_core::library::scan_library;
use moodloop_core::metrics::Metrics;
use moodloop_core::mood::MoodConfig;
use moodloop_core::player::ScriptedRandom;
use moodloop_core::time::{ManualClock, Timestamp};
use moodloop_server::api;
use moodloop_server::service::{MoodService, Parts, Settings};
use serde_json::Value;
use tower::ServiceExt;

pub const T0: Timestamp = Timestamp(1_700_000_000_000);

/// Tracks per mood directory in the test library.
pub const LIBRARY: [(&str, usize); 4] = [("happy", 3), ("sad", 4), ("angry", 2), ("calm", 2)];

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub service: Arc<MoodService>,
    pub app: Router,
    pub clock: Arc<ManualClock>,
}

/// A solid 32x32 frame; distinct shades give distinct fixture keys.
pub fn frame(shade: u8) -> (String, String) {
    let image = RgbImage::from_pixel(32, 32, Rgb([shade, 255 - shade, shade / 2]));
    (encode_png_b64(&image), frame_digest(&image))
}

pub fn write_library(root: &Path) {
    for (mood, n) in LIBRARY {
        std::fs::create_dir_all(root.join(mood)).unwrap();
        for i in 0..n {
            let bytes: Vec<u8> = (0..64u8).map(|b| b.wrapping_add(i as u8)).collect();
            std::fs::write(root.join(mood).join(format!("{mood}_{i}.mp3")), bytes).unwrap();
        }
    }
}

pub struct Options {
    pub strategy: AggregationStrategy,
    pub smoothing_capacity: usize,
    pub picks: Vec<usize>,
    pub labels: Vec<(u8, Emotion, f64)>,
}

impl Default for Options {
    fn default() -> Self {
        Self { strategy: AggregationStrategy::HighestPercentage, smoothing_capacity: 1, picks: Vec::new(), labels: Vec::new() }
    }
}

/// Fixture backend keyed by frame digest, stub detector with one face, a
/// manual clock at `T0` and scripted track picks.
pub fn harness(options: Options) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("music");
    write_library(&root);
    let moods = MoodConfig::default();
    let (library, _) = scan_library(&root, &moods).unwrap();
    let backend = FixtureBackend::from_entries(
        options.labels.iter().map(|(shade, label, c)| (FixtureKey::frame(frame(*shade).1), *label, *c)),
    );
    let clock = Arc::new(ManualClock::new(T0));
    let service = Arc::new(MoodService::new(Parts {
        settings: Settings {
            strategy: options.strategy,
            smoothing_capacity: options.smoothing_capacity,
            ..Settings::default()
        },
        library: Arc::new(library),
        moods,
        detector: Arc::new(StubDetector::new(vec![FaceRegion::new(0, 0, 16, 16)])),
        backend: Arc::new(backend),
        clock: clock.clone(),
        rng: Box::new(ScriptedRandom::new(options.picks)),
        metrics: Arc::new(Metrics::new()),
    }));
    let app = api::router(service.clone(), None);
    Harness { dir, service, app, clock }
}

impl Harness {
    pub fn music(&self) -> PathBuf {
        self.dir.path().join("music")
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let builder = Request::builder().method(method).uri(uri);
        let request = match body {
            Some(json) => builder.header("content-type", "application/json").body(Body::from(json.to_string())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let response = self.app.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    pub async fn new_session(&self) -> String {
        let (status, body) = self.call("POST", "/api/sessions", None).await;
        assert_eq!(status, StatusCode::CREATED);
        body["session_id"].as_str().unwrap().to_owned()
    }

    /// Posts a frame after moving the clock past the spacing floor.
    pub async fn post_frame(&self, session: &str, image_b64: &str) -> (StatusCode, Value) {
        let now = self.clock.advance_millis(1000);
        let body = serde_json::json!({ "image_b64": image_b64, "captured_at_ms": now.as_millis() });
        self.call("POST", &format!("/api/sessions/{session}/frames"), Some(body)).await
    }

    pub async fn command(&self, session: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", &format!("/api/sessions/{session}/control"), Some(body)).await
    }
}

/// Titles of the tracks in one mood's playlist, in playlist order.
pub fn titles(mood: &str) -> Vec<String> {
    let n = LIBRARY.iter().find(|(m, _)| *m == mood).unwrap().1;
    (0..n).map(|i| format!("{mood}_{i}")).collect()
}

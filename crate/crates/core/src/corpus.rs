//! Batch analysis of an image directory under both aggregation strategies.
//!
//! Every image is keyed by its file stem, so a fixture label file can refer
//! to `img_007` or `img_007#10,10,40,40` directly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationStrategy};
use crate::emotion::Emotion;
use crate::frame::{analyze_decoded, decode_image_bytes, EmotionBackend, FaceDetector, Frame, FrameError};
use crate::metrics::Metrics;
use crate::time::Timestamp;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no images found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("two images share the id {0:?}")]
    DuplicateImageId(String),
    #[error("image {image_id}: {source}")]
    Frame { image_id: String, source: FrameError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub image_id: String,
    pub face_count: usize,
    /// One label per requested strategy, in request order.
    pub labels: Vec<Emotion>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub strategies: Vec<AggregationStrategy>,
    /// Images with at least one face, sorted by id.
    pub images: Vec<ImageResult>,
    /// Images where no face was found, sorted by id. Not counted.
    pub no_faces: Vec<String>,
}

impl AnalysisReport {
    /// Per-label image counts for one strategy, indexed like [`Emotion::ALL`].
    pub fn counts(&self, strategy: AggregationStrategy) -> Option<[usize; Emotion::COUNT]> {
        let column = self.strategies.iter().position(|s| *s == strategy)?;
        let mut counts = [0; Emotion::COUNT];
        for image in &self.images {
            counts[image.labels[column].index()] += 1;
        }
        Some(counts)
    }

    pub fn label(&self, image_id: &str, strategy: AggregationStrategy) -> Option<Emotion> {
        let column = self.strategies.iter().position(|s| *s == strategy)?;
        let i = self.images.binary_search_by(|r| r.image_id.as_str().cmp(image_id)).ok()?;
        Some(self.images[i].labels[column])
    }
}

/// Image files directly inside `dir`, keyed and sorted by file stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, CorpusError> {
    let io = |source| CorpusError::Io { path: dir.to_path_buf(), source };
    let mut images = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            log::warn!("skipping non-UTF-8 file name {}", path.display());
            continue;
        };
        if images.insert(stem.to_owned(), path.clone()).is_some() {
            return Err(CorpusError::DuplicateImageId(stem.to_owned()));
        }
    }
    if images.is_empty() {
        return Err(CorpusError::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(images.into_iter().collect())
}

pub fn analyze_corpus(
    dir: &Path,
    detector: &dyn FaceDetector,
    backend: &dyn EmotionBackend,
    strategies: &[AggregationStrategy],
) -> Result<AnalysisReport, CorpusError> {
    let images = list_images(dir)?;
    let metrics = Metrics::new();
    let results = images
        .par_iter()
        .map(|(id, path)| {
            let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
            let frame_err = |source| CorpusError::Frame { image_id: id.clone(), source };
            let frame = Frame::with_key(id.clone(), decode_image_bytes(&bytes).map_err(frame_err)?);
            let reading = analyze_decoded(&frame, Timestamp(0), detector, backend, &metrics).map_err(frame_err)?;
            if reading.is_empty() {
                return Ok((id.clone(), None));
            }
            let labels = strategies
                .iter()
                .map(|s| aggregate(&reading, *s).expect("non-empty reading").label)
                .collect();
            Ok((id.clone(), Some(ImageResult { image_id: id.clone(), face_count: reading.faces.len(), labels })))
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;

    let mut report = AnalysisReport { strategies: strategies.to_vec(), images: Vec::new(), no_faces: Vec::new() };
    for (id, result) in results {
        match result {
            Some(r) => report.images.push(r),
            None => report.no_faces.push(id),
        }
    }
    Ok(report)
}

/// Writes the per-image table, one count block per strategy covering all
/// seven labels, and the list of faceless images. Blocks are separated by a
/// blank line.
pub fn write_report_to(report: &AnalysisReport, out: &mut dyn Write) -> Result<(), CorpusError> {
    let mut blocks: Vec<Vec<Vec<String>>> = Vec::new();

    let mut header = vec!["image_id".to_owned()];
    header.extend(report.strategies.iter().map(|s| s.as_str().to_owned()));
    let mut table = vec![header];
    for image in &report.images {
        let mut row = vec![image.image_id.clone()];
        row.extend(image.labels.iter().map(|l| l.as_str().to_owned()));
        table.push(row);
    }
    blocks.push(table);

    for strategy in &report.strategies {
        let counts = report.counts(*strategy).expect("strategy is in the report");
        let mut block = vec![vec![strategy.as_str().to_owned(), "count".to_owned()]];
        block.extend(Emotion::ALL.iter().map(|e| vec![e.as_str().to_owned(), counts[e.index()].to_string()]));
        blocks.push(block);
    }

    let mut faceless = vec![vec!["no_faces".to_owned()]];
    faceless.extend(report.no_faces.iter().map(|id| vec![id.clone()]));
    blocks.push(faceless);

    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.write_all(b"\n").map_err(csv::Error::from)?;
        }
        let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(&mut *out);
        for row in block {
            writer.write_record(row)?;
        }
        writer.flush().map_err(csv::Error::from)?;
    }
    Ok(())
}

pub fn write_report(report: &AnalysisReport, out_path: &Path) -> Result<(), CorpusError> {
    let mut bytes = Vec::new();
    write_report_to(report, &mut bytes)?;
    fs::write(out_path, bytes).map_err(|source| CorpusError::Io { path: out_path.to_path_buf(), source })
}

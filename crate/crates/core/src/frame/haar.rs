//! Viola-Jones cascade evaluation over OpenCV's HAAR cascade XML format.
//!
//! The scan mirrors `CascadeClassifier::detectMultiScale`: the image is
//! shrunk once per scale with fixed-point bilinear interpolation, every
//! window is variance-normalized over its inner border-less rectangle, and
//! raw hits are merged with the neighbour-count grouping rule.

use std::path::Path;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

use super::FaceRegion;

/// The stump-based 24x24 frontal face cascade shipped with OpenCV.
pub const FRONTAL_FACE_DEFAULT_XML: &str = include_str!("../../assets/haarcascade_frontalface_default.xml");

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("reading cascade: {0}")]
    Io(#[from] std::io::Error),
    #[error("cascade XML is malformed: {0}")]
    Xml(String),
    #[error("unsupported cascade: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    /// Multiplicative step between pyramid levels; must exceed 1.
    pub scale_factor: f64,
    /// Raw hits a grouped detection needs, exclusive lower bound.
    pub min_neighbors: usize,
    /// Smallest window side, in source pixels.
    pub min_size: u32,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { scale_factor: 1.1, min_neighbors: 5, min_size: 30 }
    }
}

#[derive(Debug, Clone, Copy)]
struct WeightedRect {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    weight: f32,
}

#[derive(Debug, Clone)]
struct Feature {
    rects: Vec<WeightedRect>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    left: i32,
    right: i32,
    feature: usize,
    threshold: f32,
}

#[derive(Debug, Clone)]
struct WeakClassifier {
    nodes: Vec<Node>,
    leaves: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Stage {
    threshold: f32,
    classifiers: Vec<WeakClassifier>,
}

#[derive(Debug, Clone)]
pub struct HaarCascade {
    window: (u32, u32),
    stages: Vec<Stage>,
    features: Vec<Feature>,
}

enum WindowResult {
    Hit,
    /// Rejected by the stage with this index.
    Rejected(usize),
    /// Flat or low-contrast window, never evaluated.
    Skipped,
}

impl HaarCascade {
    pub fn frontal_face_default() -> Self {
        Self::from_xml(FRONTAL_FACE_DEFAULT_XML).expect("bundled cascade parses")
    }

    pub fn load(path: &Path) -> Result<Self, CascadeError> {
        Self::from_xml(&std::fs::read_to_string(path)?)
    }

    pub fn from_xml(text: &str) -> Result<Self, CascadeError> {
        let doc = roxmltree::Document::parse(text).map_err(|e| CascadeError::Xml(e.to_string()))?;
        let cascade = doc
            .descendants()
            .find(|n| n.has_tag_name("cascade"))
            .ok_or_else(|| CascadeError::Xml("no <cascade> element".into()))?;

        let text_of = |name: &str| -> Result<&str, CascadeError> {
            child(cascade, name)
                .and_then(|n| n.text())
                .map(str::trim)
                .ok_or_else(|| CascadeError::Xml(format!("missing <{name}>")))
        };
        if text_of("stageType")? != "BOOST" {
            return Err(CascadeError::Unsupported("stage type is not BOOST".into()));
        }
        let feature_type = text_of("featureType")?;
        if feature_type != "HAAR" {
            return Err(CascadeError::Unsupported(format!("feature type {feature_type}")));
        }
        let width: u32 = parse_num(text_of("width")?)?;
        let height: u32 = parse_num(text_of("height")?)?;
        if width < 3 || height < 3 {
            return Err(CascadeError::Xml(format!("window {width}x{height} too small")));
        }

        let mut stages = Vec::new();
        let stages_node = child(cascade, "stages").ok_or_else(|| CascadeError::Xml("missing <stages>".into()))?;
        for stage in elements(stages_node) {
            let threshold = parse_num(
                child(stage, "stageThreshold")
                    .and_then(|n| n.text())
                    .ok_or_else(|| CascadeError::Xml("stage without threshold".into()))?,
            )?;
            let weak = child(stage, "weakClassifiers").ok_or_else(|| CascadeError::Xml("stage without classifiers".into()))?;
            let mut classifiers = Vec::new();
            for wc in elements(weak) {
                classifiers.push(parse_weak(wc)?);
            }
            stages.push(Stage { threshold, classifiers });
        }

        let mut features = Vec::new();
        let features_node = child(cascade, "features").ok_or_else(|| CascadeError::Xml("missing <features>".into()))?;
        for feature in elements(features_node) {
            if child(feature, "tilted").and_then(|n| n.text()).map(str::trim) == Some("1") {
                return Err(CascadeError::Unsupported("tilted features".into()));
            }
            let rects_node = child(feature, "rects").ok_or_else(|| CascadeError::Xml("feature without rects".into()))?;
            let mut rects = Vec::new();
            for r in elements(rects_node) {
                let nums: Vec<&str> = r.text().unwrap_or("").split_whitespace().collect();
                let [x, y, w, h, weight] = nums[..] else {
                    return Err(CascadeError::Xml(format!("bad rect {:?}", r.text())));
                };
                let rect = WeightedRect {
                    x: parse_num(x)?,
                    y: parse_num(y)?,
                    w: parse_num(w)?,
                    h: parse_num(h)?,
                    weight: parse_num(weight)?,
                };
                if rect.x + rect.w > width || rect.y + rect.h > height {
                    return Err(CascadeError::Xml("feature rect outside window".into()));
                }
                rects.push(rect);
            }
            features.push(Feature { rects });
        }

        for stage in &stages {
            for wc in &stage.classifiers {
                for node in &wc.nodes {
                    if node.feature >= features.len() {
                        return Err(CascadeError::Xml(format!("feature index {} out of range", node.feature)));
                    }
                }
            }
        }
        if stages.is_empty() {
            return Err(CascadeError::Xml("cascade has no stages".into()));
        }
        Ok(Self { window: (width, height), stages, features })
    }

    pub fn window(&self) -> (u32, u32) {
        self.window
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn detect_rgb(&self, image: &RgbImage, params: &DetectParams) -> Vec<FaceRegion> {
        self.detect(&to_gray(image), params)
    }

    pub fn detect(&self, gray: &GrayImage, params: &DetectParams) -> Vec<FaceRegion> {
        let raw = self.detect_ungrouped(gray, params);
        group_rectangles(&raw, params.min_neighbors, 0.2)
    }

    /// Every window that passes all stages, before grouping.
    pub fn detect_ungrouped(&self, gray: &GrayImage, params: &DetectParams) -> Vec<FaceRegion> {
        let (img_w, img_h) = gray.dimensions();
        let scale_factor = params.scale_factor.max(1.0001);
        let mut scales = Vec::new();
        let mut factor = 1.0f64;
        loop {
            let win_w = cv_round(f64::from(self.window.0) * factor);
            let win_h = cv_round(f64::from(self.window.1) * factor);
            if win_w > img_w as i64 || win_h > img_h as i64 {
                break;
            }
            if win_w >= i64::from(params.min_size) && win_h >= i64::from(params.min_size) {
                scales.push(factor);
            }
            factor *= scale_factor;
        }
        scales
            .par_iter()
            .map(|&f| self.scan_scale(gray, f))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    fn scan_scale(&self, gray: &GrayImage, factor: f64) -> Vec<FaceRegion> {
        let (img_w, img_h) = gray.dimensions();
        let sw = cv_round(f64::from(img_w) / factor) as u32;
        let sh = cv_round(f64::from(img_h) / factor) as u32;
        let (ww, wh) = self.window;
        if sw < ww || sh < wh {
            return Vec::new();
        }
        let scaled = resize_linear(gray, sw, sh);
        let integral = Integral::new(&scaled, sw, sh);
        let win_w = cv_round(f64::from(ww) * factor) as u32;
        let win_h = cv_round(f64::from(wh) * factor) as u32;
        let step = if factor > 2.0 { 1 } else { 2 };

        let mut hits = Vec::new();
        let mut y = 0;
        while y + wh <= sh {
            let mut x = 0;
            while x + ww <= sw {
                match self.evaluate(&integral, x, y) {
                    WindowResult::Hit => {
                        let rx = cv_round(f64::from(x) * factor) as u32;
                        let ry = cv_round(f64::from(y) * factor) as u32;
                        if rx + win_w <= img_w && ry + win_h <= img_h {
                            hits.push(FaceRegion::new(rx, ry, win_w, win_h));
                        }
                    }
                    WindowResult::Rejected(0) => x += step,
                    _ => {}
                }
                x += step;
            }
            y += step;
        }
        hits
    }

    fn evaluate(&self, integral: &Integral, x: u32, y: u32) -> WindowResult {
        let (ww, wh) = self.window;
        let area = f64::from((ww - 2) * (wh - 2));
        let sum = integral.sum(x + 1, y + 1, ww - 2, wh - 2) as f64;
        let sqsum = integral.sqsum(x + 1, y + 1, ww - 2, wh - 2) as f64;
        let nf = area * sqsum - sum * sum;
        if nf <= 0.0 {
            return WindowResult::Skipped;
        }
        let norm = (1.0 / nf.sqrt()) as f32;
        if area as f32 * norm >= 0.1 {
            return WindowResult::Skipped;
        }

        for (si, stage) in self.stages.iter().enumerate() {
            let mut total = 0.0f32;
            for wc in &stage.classifiers {
                let mut idx = 0i32;
                loop {
                    let node = &wc.nodes[idx as usize];
                    let value = self.features[node.feature].calc(integral, x, y) * norm;
                    idx = if value < node.threshold { node.left } else { node.right };
                    if idx <= 0 {
                        break;
                    }
                }
                total += wc.leaves[(-idx) as usize];
            }
            if total < stage.threshold {
                return WindowResult::Rejected(si);
            }
        }
        WindowResult::Hit
    }
}

impl Feature {
    fn calc(&self, integral: &Integral, x: u32, y: u32) -> f32 {
        self.rects
            .iter()
            .map(|r| r.weight * integral.sum(x + r.x, y + r.y, r.w, r.h) as f32)
            .sum()
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn elements<'a, 'i>(node: roxmltree::Node<'a, 'i>) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, CascadeError> {
    s.trim().parse().map_err(|_| CascadeError::Xml(format!("bad number {s:?}")))
}

fn parse_weak(wc: roxmltree::Node) -> Result<WeakClassifier, CascadeError> {
    let numbers = |name: &str| -> Result<Vec<&str>, CascadeError> {
        Ok(child(wc, name)
            .and_then(|n| n.text())
            .ok_or_else(|| CascadeError::Xml(format!("weak classifier without <{name}>")))?
            .split_whitespace()
            .collect())
    };
    let raw_nodes = numbers("internalNodes")?;
    if raw_nodes.is_empty() || raw_nodes.len() % 4 != 0 {
        return Err(CascadeError::Xml("internalNodes must come in groups of four".into()));
    }
    let mut nodes = Vec::new();
    for chunk in raw_nodes.chunks(4) {
        nodes.push(Node {
            left: parse_num(chunk[0])?,
            right: parse_num(chunk[1])?,
            feature: parse_num(chunk[2])?,
            threshold: parse_num(chunk[3])?,
        });
    }
    let leaves = numbers("leafValues")?
        .into_iter()
        .map(parse_num)
        .collect::<Result<Vec<f32>, _>>()?;
    for node in &nodes {
        for link in [node.left, node.right] {
            let ok = if link > 0 { (link as usize) < nodes.len() } else { ((-link) as usize) < leaves.len() };
            if !ok {
                return Err(CascadeError::Xml(format!("dangling tree link {link}")));
            }
        }
    }
    Ok(WeakClassifier { nodes, leaves })
}

/// Round half to even, like `cvRound`.
fn cv_round(v: f64) -> i64 {
    v.round_ties_even() as i64
}

/// BT.601 luma with 14-bit fixed-point weights.
pub fn to_gray(image: &RgbImage) -> GrayImage {
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        let [r, g, b] = image.get_pixel(x, y).0;
        let y = (u32::from(r) * 4899 + u32::from(g) * 9617 + u32::from(b) * 1868 + (1 << 13)) >> 14;
        image::Luma([y as u8])
    })
}

/// Bilinear resize with 11-bit fixed-point coefficients and half-pixel
/// centres.
fn resize_linear(src: &GrayImage, dw: u32, dh: u32) -> Vec<u8> {
    let (sw, sh) = src.dimensions();
    let raw = src.as_raw();
    if (sw, sh) == (dw, dh) {
        return raw.clone();
    }
    const ONE: i32 = 1 << 11;
    let taps = |dst: u32, src_len: u32| -> Vec<(usize, usize, i32, i32)> {
        let scale = f64::from(src_len) / f64::from(dst);
        (0..dst)
            .map(|d| {
                let f = (f64::from(d) + 0.5) * scale - 0.5;
                let mut s = f.floor();
                let mut frac = f - s;
                if s < 0.0 {
                    s = 0.0;
                    frac = 0.0;
                }
                if s >= f64::from(src_len - 1) {
                    s = f64::from(src_len - 1);
                    frac = 0.0;
                }
                let s0 = s as usize;
                let s1 = (s0 + 1).min(src_len as usize - 1);
                let c0 = ((1.0 - frac) * f64::from(ONE)).round() as i32;
                (s0, s1, c0, ONE - c0)
            })
            .collect()
    };
    let xs = taps(dw, sw);
    let ys = taps(dh, sh);
    let sw = sw as usize;

    let hrow = |row: usize| -> Vec<i32> {
        let line = &raw[row * sw..(row + 1) * sw];
        xs.iter()
            .map(|&(s0, s1, c0, c1)| i32::from(line[s0]) * c0 + i32::from(line[s1]) * c1)
            .collect()
    };
    let mut out = Vec::with_capacity(dw as usize * dh as usize);
    let mut cache: Option<(usize, Vec<i32>)> = None;
    for &(r0, r1, c0, c1) in &ys {
        let row0 = match cache.take() {
            Some((r, v)) if r == r0 => v,
            _ => hrow(r0),
        };
        let row1 = if r1 == r0 { row0.clone() } else { hrow(r1) };
        for (a, b) in row0.iter().zip(&row1) {
            let v = (i64::from(*a) * i64::from(c0) + i64::from(*b) * i64::from(c1) + (1 << 21)) >> 22;
            out.push(v.clamp(0, 255) as u8);
        }
        cache = Some((r1, row1));
    }
    out
}

/// Summed-area tables of pixel values and squared values, one row and
/// column larger than the image.
struct Integral {
    stride: usize,
    sum: Vec<u32>,
    sqsum: Vec<u64>,
}

impl Integral {
    fn new(pixels: &[u8], w: u32, h: u32) -> Self {
        let stride = w as usize + 1;
        let mut sum = vec![0u32; stride * (h as usize + 1)];
        let mut sqsum = vec![0u64; stride * (h as usize + 1)];
        for y in 0..h as usize {
            let mut row = 0u32;
            let mut row_sq = 0u64;
            for x in 0..w as usize {
                let p = u32::from(pixels[y * w as usize + x]);
                row += p;
                row_sq += u64::from(p * p);
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sqsum[i] = sqsum[i - stride] + row_sq;
            }
        }
        Self { stride, sum, sqsum }
    }

    fn corners(&self, x: u32, y: u32, w: u32, h: u32) -> [usize; 4] {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        [y0 * self.stride + x0, y0 * self.stride + x1, y1 * self.stride + x0, y1 * self.stride + x1]
    }

    fn sum(&self, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let [a, b, c, d] = self.corners(x, y, w, h);
        self.sum[d].wrapping_add(self.sum[a]).wrapping_sub(self.sum[b]).wrapping_sub(self.sum[c])
    }

    fn sqsum(&self, x: u32, y: u32, w: u32, h: u32) -> u64 {
        let [a, b, c, d] = self.corners(x, y, w, h);
        self.sqsum[d] + self.sqsum[a] - self.sqsum[b] - self.sqsum[c]
    }
}

/// Clusters similar rectangles, keeps clusters with more than
/// `min_neighbors` members as their average, then drops clusters sitting
/// inside a better-supported larger one.
pub fn group_rectangles(rects: &[FaceRegion], min_neighbors: usize, eps: f64) -> Vec<FaceRegion> {
    if min_neighbors == 0 || rects.is_empty() {
        return rects.to_vec();
    }
    let similar = |a: &FaceRegion, b: &FaceRegion| {
        let delta = eps * f64::from(a.width.min(b.width) + a.height.min(b.height)) * 0.5;
        let close = |p: u32, q: u32| (f64::from(p) - f64::from(q)).abs() <= delta;
        close(a.x, b.x) && close(a.y, b.y) && close(a.x + a.width, b.x + b.width) && close(a.y + a.height, b.y + b.height)
    };

    let mut parent: Vec<usize> = (0..rects.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..rects.len() {
        for j in 0..i {
            if similar(&rects[i], &rects[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    // Classes numbered in order of first appearance.
    let mut class_of_root = std::collections::HashMap::new();
    let mut sums: Vec<[u64; 4]> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        let root = find(&mut parent, i);
        let class = *class_of_root.entry(root).or_insert_with(|| {
            sums.push([0; 4]);
            counts.push(0);
            sums.len() - 1
        });
        let s = &mut sums[class];
        s[0] += u64::from(r.x);
        s[1] += u64::from(r.y);
        s[2] += u64::from(r.width);
        s[3] += u64::from(r.height);
        counts[class] += 1;
    }
    let averaged: Vec<FaceRegion> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            let k = 1.0 / n as f32;
            let avg = |v: u64| (v as f32 * k).round_ties_even() as u32;
            FaceRegion::new(avg(s[0]), avg(s[1]), avg(s[2]), avg(s[3]))
        })
        .collect();

    let mut out = Vec::new();
    for (i, r1) in averaged.iter().enumerate() {
        let n1 = counts[i];
        if n1 <= min_neighbors {
            continue;
        }
        let swallowed = averaged.iter().enumerate().any(|(j, r2)| {
            let n2 = counts[j];
            if j == i || n2 <= min_neighbors {
                return false;
            }
            let dx = (r2.width as f64 * eps).round_ties_even() as i64;
            let dy = (r2.height as f64 * eps).round_ties_even() as i64;
            let (x1, y1, w1, h1) = (i64::from(r1.x), i64::from(r1.y), i64::from(r1.width), i64::from(r1.height));
            let (x2, y2, w2, h2) = (i64::from(r2.x), i64::from(r2.y), i64::from(r2.width), i64::from(r2.height));
            x1 >= x2 - dx
                && y1 >= y2 - dy
                && x1 + w1 <= x2 + w2 + dx
                && y1 + h1 <= y2 + h2 + dy
                && (n2 > n1.max(3) || n1 < 3)
        });
        if !swallowed {
            out.push(*r1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cascade_parses() {
        let c = HaarCascade::frontal_face_default();
        assert_eq!(c.window(), (24, 24));
        assert_eq!(c.stage_count(), 25);
    }

    #[test]
    fn rejects_non_haar_cascades() {
        let lbp = FRONTAL_FACE_DEFAULT_XML.replacen("<featureType>HAAR</featureType>", "<featureType>LBP</featureType>", 1);
        assert!(matches!(HaarCascade::from_xml(&lbp), Err(CascadeError::Unsupported(_))));
        assert!(matches!(HaarCascade::from_xml("<opencv_storage/>"), Err(CascadeError::Xml(_))));
        assert!(matches!(HaarCascade::from_xml("not xml"), Err(CascadeError::Xml(_))));
    }

    #[test]
    fn integral_sums_match_brute_force() {
        let (w, h) = (7u32, 5u32);
        let px: Vec<u8> = (0..w * h).map(|i| (i * 37 % 251) as u8).collect();
        let ii = Integral::new(&px, w, h);
        for (x, y, rw, rh) in [(0, 0, 7, 5), (1, 2, 3, 2), (6, 4, 1, 1), (2, 0, 0, 3)] {
            let mut s = 0u64;
            let mut sq = 0u64;
            for yy in y..y + rh {
                for xx in x..x + rw {
                    let p = u64::from(px[(yy * w + xx) as usize]);
                    s += p;
                    sq += p * p;
                }
            }
            assert_eq!(u64::from(ii.sum(x, y, rw, rh)), s);
            assert_eq!(ii.sqsum(x, y, rw, rh), sq);
        }
    }

    #[test]
    fn resize_keeps_flat_images_flat() {
        let img = GrayImage::from_pixel(40, 30, image::Luma([77]));
        let small = resize_linear(&img, 17, 13);
        assert_eq!(small.len(), 17 * 13);
        assert!(small.iter().all(|&p| p == 77));
    }

    #[test]
    fn resize_halves_a_ramp_by_averaging_pairs() {
        let img = GrayImage::from_fn(8, 1, |x, _| image::Luma([(x * 10) as u8]));
        assert_eq!(resize_linear(&img, 4, 1), vec![5, 25, 45, 65]);
    }

    #[test]
    fn grouping_needs_enough_neighbours() {
        let hits: Vec<_> = (0..6).map(|i| FaceRegion::new(100 + i, 100, 50, 50)).collect();
        // OpenCV averages x = 102.5 in f32 and rounds half to even.
        assert_eq!(group_rectangles(&hits, 5, 0.2), vec![FaceRegion::new(102, 100, 50, 50)]);
        assert!(group_rectangles(&hits[..5], 5, 0.2).is_empty());
        assert_eq!(group_rectangles(&hits, 0, 0.2).len(), 6);
    }

    #[test]
    fn grouping_drops_small_cluster_inside_big_one() {
        let mut hits: Vec<_> = (0..10).map(|_| FaceRegion::new(100, 100, 100, 100)).collect();
        hits.extend((0..4).map(|_| FaceRegion::new(120, 120, 40, 40)));
        assert_eq!(group_rectangles(&hits, 3, 0.2), vec![FaceRegion::new(100, 100, 100, 100)]);
    }

    #[test]
    fn gray_uses_bt601_weights() {
        let img = RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        assert_eq!(to_gray(&img).get_pixel(0, 0).0[0], 76);
        let img = RgbImage::from_pixel(1, 1, image::Rgb([255, 255, 255]));
        assert_eq!(to_gray(&img).get_pixel(0, 0).0[0], 255);
    }
}

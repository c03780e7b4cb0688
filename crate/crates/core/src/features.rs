//! Unit-norm feature vectors and the ways of obtaining them: a built-in
//! colour/layout descriptor over raw RGB rasters, or precomputed feature
//! files produced by any external encoder.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl;
use crate::shots::Shot;
use crate::{Error, Result};

/// Vectors with a smaller L2 norm than this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

/// Tolerance on the unit-norm invariant.
pub const UNIT_TOL: f64 = 1e-6;

/// Side of the mean-pooled grayscale thumbnail in [`frame_descriptor`].
const THUMB: usize = 8;

/// A finite real vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps a vector that is already unit-norm, checking the invariant.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector has dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature vector has non-finite entries".into()));
        }
        let n = l2_norm(&values);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput(format!("feature vector norm {n} is not 1")));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<FeatureVector> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("cannot normalize a non-finite vector".into()));
    }
    let n = l2_norm(v);
    if n <= MIN_NORM {
        return Err(Error::DegenerateVector(n));
    }
    Ok(FeatureVector(v.iter().map(|x| x / n).collect()))
}

/// Cosine similarity of two unit vectors (their dot product).
pub fn cosine_sim(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-frame features of one video. Frame `i` is `features[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    features: Vec<FeatureVector>,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, features: Vec<FeatureVector>) -> Result<Self> {
        if let Some(first) = features.first() {
            let d = first.dim();
            if let Some(i) = features.iter().position(|f| f.dim() != d) {
                return Err(Error::InvalidInput(format!(
                    "frame {i} has dimension {}, expected {d}",
                    features[i].dim()
                )));
            }
        }
        Ok(FrameSequence {
            video_id: video_id.into(),
            features,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.features.len()
    }

    /// Feature dimension, or 0 for an empty sequence.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::dim)
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn frame(&self, index: usize) -> Option<&FeatureVector> {
        self.features.get(index)
    }
}

/// An RGB8 raster, row-major, three bytes per pixel.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "raster data has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::format(jsonl::source_name(path), 0, e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Raster::new(w as usize, h as usize, img.into_raw())
    }
}

/// Output dimension of [`frame_descriptor`] for a given bin count.
pub fn descriptor_dim(bins: usize) -> usize {
    bins * bins * bins + THUMB * THUMB
}

/// Colour histogram (`bins`³ cells, L1-normalized) concatenated with an 8×8
/// mean-pooled grayscale thumbnail rescaled to [0, 1], then L2-normalized.
///
/// A thumbnail with zero range contributes all zeros.
pub fn frame_descriptor(image: &Raster, bins: usize) -> Result<FeatureVector> {
    if image.data.is_empty() || image.width == 0 || image.height == 0 {
        return Err(Error::InvalidInput("empty raster".into()));
    }
    if image.width < THUMB || image.height < THUMB {
        return Err(Error::InvalidInput(format!(
            "raster {}x{} is smaller than {THUMB}x{THUMB}",
            image.width, image.height
        )));
    }
    if !matches!(bins, 2 | 4 | 8) {
        return Err(Error::InvalidInput(format!("bins must be 2, 4 or 8, got {bins}")));
    }
    if image.data.len() != image.width * image.height * 3 {
        return Err(Error::InvalidInput("raster data length does not match its size".into()));
    }

    let mut out = vec![0.0; descriptor_dim(bins)];
    let (hist, thumb) = out.split_at_mut(bins * bins * bins);

    let width = 256 / bins;
    for px in image.data.chunks_exact(3) {
        let (r, g, b) = (px[0] as usize / width, px[1] as usize / width, px[2] as usize / width);
        hist[(r * bins + g) * bins + b] += 1.0;
    }
    let total = (image.width * image.height) as f64;
    hist.iter_mut().for_each(|h| *h /= total);

    for by in 0..THUMB {
        let (y0, y1) = (by * image.height / THUMB, (by + 1) * image.height / THUMB);
        for bx in 0..THUMB {
            let (x0, x1) = (bx * image.width / THUMB, (bx + 1) * image.width / THUMB);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let [r, g, b] = image.pixel(x, y);
                    sum += 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                }
            }
            thumb[by * THUMB + bx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    let lo = thumb.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = thumb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        thumb.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        thumb.iter_mut().for_each(|v| *v = 0.0);
    }

    normalize(&out)
}

/// Per-shot features: the clustering feature plus both endpoint frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotFeatures {
    pub shot_feature: FeatureVector,
    pub first_frame: FeatureVector,
    pub last_frame: FeatureVector,
}

/// Shot index (position in the unfiltered shot list) to its features.
pub type ShotFeatureSet = BTreeMap<usize, ShotFeatures>;

/// Mean of the shot's frame features, renormalized, plus its endpoints.
pub fn shot_feature(shot: &Shot, frames: &FrameSequence) -> Result<ShotFeatures> {
    if shot.start > shot.end || shot.end >= frames.frame_count() {
        return Err(Error::InvalidInput(format!(
            "shot [{}, {}] outside {} frames",
            shot.start,
            shot.end,
            frames.frame_count()
        )));
    }
    let mut mean = vec![0.0; frames.dim()];
    for f in &frames.features()[shot.start..=shot.end] {
        for (m, v) in mean.iter_mut().zip(f.as_slice()) {
            *m += v;
        }
    }
    Ok(ShotFeatures {
        shot_feature: normalize(&mean)?,
        first_frame: frames.features()[shot.start].clone(),
        last_frame: frames.features()[shot.end].clone(),
    })
}

/// Computes [`ShotFeatures`] for every listed shot, keyed by shot index.
pub fn shot_feature_set<'a>(
    shots: impl IntoIterator<Item = &'a Shot>,
    frames: &FrameSequence,
) -> Result<ShotFeatureSet> {
    shots
        .into_iter()
        .map(|s| Ok((s.index, shot_feature(s, frames)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Frame,
    Shot,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    video_id: String,
    dim: usize,
    kind: FeatureKind,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRow<V> {
    index: usize,
    feature: V,
}

/// Contents of a feature file after validation and renormalization.
#[derive(Debug, Clone)]
pub struct FeatureFile {
    pub video_id: String,
    pub kind: FeatureKind,
    pub rows: Vec<(usize, FeatureVector)>,
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    let source = jsonl::source_name(path);
    // Rows are parsed as raw JSON numbers so that NaN/inf spelled as strings
    // or nulls surface as a format error on the right line.
    let (header, rows) = jsonl::read_with_header::<FeatureHeader, FeatureRow<Vec<serde_json::Value>>>(path)?;
    let header_line = header.line;
    let header = header.value;
    if header.dim == 0 {
        return Err(Error::format(&source, header_line, "dim must be at least 1"));
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut prev: Option<usize> = None;
    for row in rows {
        let line = row.line;
        let FeatureRow { index, feature } = row.value;
        if feature.len() != header.dim {
            return Err(Error::format(
                &source,
                line,
                format!("feature has dimension {}, header declares {}", feature.len(), header.dim),
            ));
        }
        let values = feature
            .iter()
            .map(|v| v.as_f64().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::format(&source, line, "non-finite or non-numeric feature value"))?;
        if let Some(p) = prev {
            if index <= p {
                return Err(Error::format(&source, line, "indices must be strictly increasing"));
            }
        }
        prev = Some(index);
        let v = normalize(&values).map_err(|e| Error::format(&source, line, e.to_string()))?;
        out.push((index, v));
    }
    Ok(FeatureFile {
        video_id: header.video_id,
        kind: header.kind,
        rows: out,
    })
}

/// Loads a frame-kind feature file; indices must run 0, 1, 2, ...
pub fn load_precomputed(path: &Path) -> Result<FrameSequence> {
    let source = jsonl::source_name(path);
    let file = read_feature_file(path)?;
    if file.kind != FeatureKind::Frame {
        return Err(Error::format(&source, 1, "expected kind \"frame\""));
    }
    let mut features = Vec::with_capacity(file.rows.len());
    for (expected, (index, v)) in file.rows.into_iter().enumerate() {
        if index != expected {
            return Err(Error::format(
                &source,
                0,
                format!("frame indices must be contiguous from 0; found {index} at position {expected}"),
            ));
        }
        features.push(v);
    }
    FrameSequence::new(file.video_id, features)
}

/// Loads a shot-kind feature file, keyed by shot index.
pub fn load_shot_features(path: &Path) -> Result<(String, BTreeMap<usize, FeatureVector>)> {
    let file = read_feature_file(path)?;
    if file.kind != FeatureKind::Shot {
        return Err(Error::format(jsonl::source_name(path), 1, "expected kind \"shot\""));
    }
    Ok((file.video_id, file.rows.into_iter().collect()))
}

/// Replaces computed clustering features with externally supplied ones.
pub fn override_shot_features(set: &mut ShotFeatureSet, external: &BTreeMap<usize, FeatureVector>) {
    for (index, entry) in set.iter_mut() {
        if let Some(v) = external.get(index) {
            entry.shot_feature = v.clone();
        }
    }
}

pub fn write_feature_file<'a>(
    path: &Path,
    video_id: &str,
    kind: FeatureKind,
    rows: impl IntoIterator<Item = (usize, &'a FeatureVector)>,
) -> Result<()> {
    let rows: Vec<_> = rows.into_iter().collect();
    let dim = rows.first().map_or(0, |(_, v)| v.dim());
    let mut w = jsonl::create(path)?;
    jsonl::write_line(
        &mut w,
        &FeatureHeader {
            video_id: video_id.to_string(),
            dim,
            kind,
        },
    )?;
    for (index, v) in rows {
        jsonl::write_line(&mut w, &FeatureRow { index, feature: v.as_slice() })?;
    }
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn write_frame_sequence(path: &Path, frames: &FrameSequence) -> Result<()> {
    write_feature_file(
        path,
        &frames.video_id,
        FeatureKind::Frame,
        frames.features().iter().enumerate(),
    )
}

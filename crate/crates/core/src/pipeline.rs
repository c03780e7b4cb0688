//! The pseudo-dataset pipeline for a batch of videos: detect or ingest
//! shots, filter, cluster shots into pseudo cameras, and emit instances.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{override_shot_features, shot_feature_set, FeatureVector, FrameSequence};
use crate::instances::{build_instances, InstanceConfig, PseudoInstance, VideoInput};
use crate::kmeans::{assign_cameras, CameraAssignment, DEFAULT_MAX_ITERS};
use crate::shots::{apply_filters, detect_cuts, DetectorConfig, ShotList};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub instances: InstanceConfig,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: DetectorConfig::default(),
            instances: InstanceConfig::default(),
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// One input video.
#[derive(Debug, Clone)]
pub struct VideoSource {
    pub frames: FrameSequence,
    /// Ingested shot list; detected from `frames` when absent.
    pub shots: Option<ShotList>,
    /// Clustering features that replace the computed shot means.
    pub shot_features: Option<BTreeMap<usize, FeatureVector>>,
}

impl VideoSource {
    pub fn new(frames: FrameSequence) -> Self {
        VideoSource {
            frames,
            shots: None,
            shot_features: None,
        }
    }
}

/// Everything the pipeline produced for one video.
#[derive(Debug, Clone)]
pub struct VideoResult {
    pub shots: ShotList,
    pub filtered: ShotList,
    /// Absent when the video was rejected by the filters.
    pub assignment: Option<CameraAssignment>,
    pub instances: Vec<PseudoInstance>,
}

pub fn process_video(source: &VideoSource, cfg: &PipelineConfig) -> Result<VideoResult> {
    let frames = &source.frames;
    let shots = match &source.shots {
        Some(list) => {
            if list.video_id != frames.video_id || list.frame_count != frames.frame_count() {
                return Err(Error::InvalidInput(format!(
                    "shot list for {} ({} frames) does not match features for {} ({} frames)",
                    list.video_id,
                    list.frame_count,
                    frames.video_id,
                    frames.frame_count()
                )));
            }
            list.clone()
        }
        None => detect_cuts(frames, &cfg.detector)?,
    };
    let filtered = apply_filters(&shots);
    if !filtered.accepted {
        return Ok(VideoResult {
            shots,
            filtered,
            assignment: None,
            instances: Vec::new(),
        });
    }
    let mut features = shot_feature_set(&filtered.shots, frames)?;
    if let Some(external) = &source.shot_features {
        override_shot_features(&mut features, external);
    }
    let ic = &cfg.instances;
    let assignment = assign_cameras(&filtered, &features, ic.k, ic.seed, cfg.max_iters)?;
    let instances = build_instances(
        &VideoInput {
            shots: &filtered,
            features: &features,
        },
        &assignment,
        ic,
    )?;
    Ok(VideoResult {
        shots,
        filtered,
        assignment: Some(assignment),
        instances,
    })
}

/// Runs every video in parallel; results keep the input order.
pub fn process_videos(sources: &[VideoSource], cfg: &PipelineConfig) -> Result<Vec<VideoResult>> {
    let mut seen = BTreeSet::new();
    for s in sources {
        if !seen.insert(s.frames.video_id.as_str()) {
            return Err(Error::InvalidInput(format!("video {} given twice", s.frames.video_id)));
        }
    }
    sources.par_iter().map(|s| process_video(s, cfg)).collect()
}

//! Pseudo-labeled instances: each hard cut in a filtered video becomes a
//! k-way choice between the shot that really followed and one hard
//! negative per other pseudo camera.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{cosine_sim, FrameSequence, ShotFeatureSet};
use crate::jsonl;
use crate::kmeans::CameraAssignment;
use crate::model::Example;
use crate::shots::{Shot, ShotList, Transition};
use crate::{Error, Result};

/// Past frames handed to the model.
pub const PAST_LEN: usize = 16;
/// Frame stride between consecutive past frames.
pub const PAST_STRIDE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Most similar shot from every other pseudo camera.
    MostSimilar,
    /// A random shot from every other pseudo camera.
    Random,
    /// The globally most similar shots, ignoring cameras.
    Top5NoCluster,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MostSimilar => "most_similar",
            Strategy::Random => "random",
            Strategy::Top5NoCluster => "top5_no_cluster",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most_similar" => Ok(Strategy::MostSimilar),
            "random" => Ok(Strategy::Random),
            "top5_no_cluster" => Ok(Strategy::Top5NoCluster),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub shot_id: usize,
    pub camera_id: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoInstance {
    pub video_id: String,
    pub anchor_shot: usize,
    pub switch_frame: usize,
    /// Oldest first; the last entry is the anchor's final frame.
    pub past_frames: Vec<usize>,
    pub past_offsets: Vec<usize>,
    pub candidates: Vec<Candidate>,
    pub gt_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub gt_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    /// Switch gaps are drawn uniformly from `1..=gap_max`.
    pub gap_max: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            strategy: Strategy::MostSimilar,
            k: crate::kmeans::DEFAULT_K,
            seed: 0,
            gap_max: 1,
        }
    }
}

/// Generator for everything random about one video, derived from the
/// global seed and the video id so results do not depend on video order.
pub fn video_rng(seed: u64, video_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(video_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

fn similarity(feats: &ShotFeatureSet, anchor: &Shot, other: usize) -> Result<f64> {
    let a = feats
        .get(&anchor.index)
        .ok_or_else(|| Error::InvalidInput(format!("no features for shot {}", anchor.index)))?;
    let b = feats
        .get(&other)
        .ok_or_else(|| Error::InvalidInput(format!("no features for shot {other}")))?;
    cosine_sim(&a.last_frame, &b.first_frame)
}

/// Picks the candidates for the cut from `anchor` to `gt`.
///
/// Returns `Ok(None)` (a skip) when some camera has no eligible shot, or
/// for [`Strategy::Top5NoCluster`] when fewer than `k - 1` shots are
/// eligible. Eligible shots are the retained shots other than the anchor
/// and the ground truth.
pub fn select_candidates<R: Rng>(
    anchor: &Shot,
    gt: &Shot,
    shots: &ShotList,
    assign: &CameraAssignment,
    feats: &ShotFeatureSet,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Option<CandidateSet>> {
    let k = assign.k;
    let eligible: Vec<&Shot> = shots
        .shots
        .iter()
        .filter(|s| s.index != anchor.index && s.index != gt.index)
        .collect();

    let make = |s: &Shot, camera_id: usize| Candidate {
        shot_id: s.index,
        camera_id,
        frame: s.start,
    };

    if strategy == Strategy::Top5NoCluster {
        if eligible.len() < k.saturating_sub(1) {
            return Ok(None);
        }
        let mut scored: Vec<(f64, &Shot)> = eligible
            .iter()
            .map(|s| Ok((similarity(feats, anchor, s.index)?, *s)))
            .collect::<Result<_>>()?;
        let by_sim = |a: &(f64, &Shot), b: &(f64, &Shot)| b.0.total_cmp(&a.0).then(a.1.index.cmp(&b.1.index));
        scored.sort_by(by_sim);
        scored.truncate(k - 1);
        scored.push((similarity(feats, anchor, gt.index)?, gt));
        scored.sort_by(by_sim);
        let candidates: Vec<Candidate> = scored.iter().enumerate().map(|(r, (_, s))| make(s, r)).collect();
        let gt_index = candidates.iter().position(|c| c.shot_id == gt.index).unwrap_or(0);
        return Ok(Some(CandidateSet { candidates, gt_index }));
    }

    let gt_camera = assign
        .camera_of(gt.index)
        .ok_or_else(|| Error::InvalidInput(format!("shot {} has no camera", gt.index)))?;
    let mut candidates = Vec::with_capacity(k);
    for camera in 0..k {
        if camera == gt_camera {
            candidates.push(make(gt, camera));
            continue;
        }
        let members: Vec<&Shot> = eligible
            .iter()
            .copied()
            .filter(|s| assign.camera_of(s.index) == Some(camera))
            .collect();
        if members.is_empty() {
            return Ok(None);
        }
        let pick = match strategy {
            Strategy::Random => members[rng.random_range(0..members.len())],
            _ => {
                let mut best = members[0];
                let mut best_sim = similarity(feats, anchor, best.index)?;
                for s in &members[1..] {
                    let sim = similarity(feats, anchor, s.index)?;
                    if sim > best_sim {
                        best = s;
                        best_sim = sim;
                    }
                }
                best
            }
        };
        candidates.push(make(pick, camera));
    }
    Ok(Some(CandidateSet {
        candidates,
        gt_index: gt_camera,
    }))
}

/// The past frames sampled from `anchor` for a switch at frame `t`: stride
/// 5 back from the anchor's last frame, clamped at its first frame, oldest
/// first, with their offsets `t - frame`.
pub fn past_window(anchor: &Shot, t: usize) -> (Vec<usize>, Vec<usize>) {
    let frames: Vec<usize> = (0..PAST_LEN)
        .rev()
        .map(|back| anchor.end.saturating_sub(back * PAST_STRIDE).max(anchor.start))
        .collect();
    let offsets = frames.iter().map(|f| t - f).collect();
    (frames, offsets)
}

/// One filtered video with the features the builder needs.
pub struct VideoInput<'a> {
    /// Shot list after filtering.
    pub shots: &'a ShotList,
    pub features: &'a ShotFeatureSet,
}

/// Builds every instance of one accepted video.
///
/// Each pair of consecutive retained shots that are adjacent in the video
/// and joined by a hard cut yields at most one instance.
pub fn build_instances(
    video: &VideoInput<'_>,
    assign: &CameraAssignment,
    cfg: &InstanceConfig,
) -> Result<Vec<PseudoInstance>> {
    let shots = video.shots;
    if !shots.accepted {
        return Err(Error::InvalidInput(format!(
            "video {} was rejected by the filters",
            shots.video_id
        )));
    }
    if cfg.gap_max == 0 {
        return Err(Error::InvalidInput("gap_max must be at least 1".into()));
    }
    if assign.k != cfg.k {
        return Err(Error::InvalidInput(format!(
            "assignment has k = {}, config has k = {}",
            assign.k, cfg.k
        )));
    }
    let mut rng = video_rng(cfg.seed, &shots.video_id);
    let mut out = Vec::new();
    for pair in shots.shots.windows(2) {
        let (anchor, gt) = (&pair[0], &pair[1]);
        if gt.transition_in != Transition::Hard || gt.start != anchor.end + 1 {
            continue;
        }
        let gap = rng.random_range(1..=cfg.gap_max).min(gt.len());
        let t = gt.start + gap - 1;
        let Some(set) = select_candidates(anchor, gt, shots, assign, video.features, cfg.strategy, &mut rng)? else {
            continue;
        };
        let (past_frames, past_offsets) = past_window(anchor, t);
        out.push(PseudoInstance {
            video_id: shots.video_id.clone(),
            anchor_shot: anchor.index,
            switch_frame: t,
            past_frames,
            past_offsets,
            candidates: set.candidates,
            gt_index: set.gt_index,
        });
    }
    Ok(out)
}

/// Checks every structural invariant of an instance against the video's
/// unfiltered shot list.
pub fn validate_instance(inst: &PseudoInstance, shots: &ShotList, k: usize) -> std::result::Result<(), String> {
    let shot = |id: usize| shots.shot(id).ok_or_else(|| format!("unknown shot {id}"));
    let anchor = shot(inst.anchor_shot)?;
    let gt = shot(inst.anchor_shot + 1)?;
    if inst.candidates.len() != k {
        return Err(format!("{} candidates, expected {k}", inst.candidates.len()));
    }
    let mut cams: Vec<usize> = inst.candidates.iter().map(|c| c.camera_id).collect();
    if cams.windows(2).any(|w| w[0] >= w[1]) {
        return Err("candidates are not sorted by camera id".into());
    }
    cams.sort_unstable();
    if cams != (0..k).collect::<Vec<_>>() {
        return Err(format!("camera ids {cams:?} are not a permutation of 0..{k}"));
    }
    if inst.gt_index >= k || inst.candidates[inst.gt_index].shot_id != gt.index {
        return Err("ground-truth candidate is not the anchor's successor".into());
    }
    let mut ids: Vec<usize> = inst.candidates.iter().map(|c| c.shot_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err("duplicate candidate shots".into());
    }
    for c in &inst.candidates {
        if c.shot_id == anchor.index {
            return Err("anchor shot appears among candidates".into());
        }
        let s = shot(c.shot_id)?;
        if c.frame != s.start {
            return Err(format!("candidate {} frame {} is not its first frame", c.shot_id, c.frame));
        }
        if s.transition_in == Transition::Gradual {
            return Err(format!("candidate {} is a gradual shot", c.shot_id));
        }
    }
    if anchor.transition_in == Transition::Gradual || gt.transition_in != Transition::Hard {
        return Err("anchor/ground-truth pair is not a retained hard cut".into());
    }
    if inst.switch_frame < gt.start || inst.switch_frame > gt.end {
        return Err("switch frame lies outside the ground-truth shot".into());
    }
    if inst.past_frames.len() != PAST_LEN || inst.past_offsets.len() != PAST_LEN {
        return Err("past window has the wrong length".into());
    }
    let floor = inst.switch_frame - anchor.end;
    for (f, o) in inst.past_frames.iter().zip(&inst.past_offsets) {
        if *f < anchor.start || *f > anchor.end {
            return Err(format!("past frame {f} outside the anchor shot"));
        }
        if inst.switch_frame - f != *o || *o < floor || *o < 1 {
            return Err(format!("offset {o} for frame {f} is inconsistent"));
        }
    }
    if inst.past_offsets.windows(2).any(|w| w[1] > w[0]) {
        return Err("offsets increase toward the most recent frame".into());
    }
    Ok(())
}

/// Header line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, instances: &[PseudoInstance]) -> Result<()> {
    let mut w = jsonl::create(path)?;
    jsonl::write_line(&mut w, header)?;
    for inst in instances {
        jsonl::write_line(&mut w, inst)?;
    }
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<PseudoInstance>)> {
    let source = jsonl::source_name(path);
    let (header, records) = jsonl::read_with_header::<DatasetHeader, PseudoInstance>(path)?;
    let k = header.value.k;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let inst = r.value;
        if inst.candidates.len() != k || inst.gt_index >= k {
            return Err(Error::format(&source, r.line, format!("instance is not {k}-way")));
        }
        if inst.past_frames.len() != PAST_LEN || inst.past_offsets.len() != PAST_LEN {
            return Err(Error::format(&source, r.line, format!("expected {PAST_LEN} past frames")));
        }
        out.push(inst);
    }
    Ok((header.value, out))
}

/// Looks up the features an instance refers to.
pub fn resolve(inst: &PseudoInstance, frames: &FrameSequence) -> Result<Example> {
    let get = |f: usize| {
        frames.frame(f).map(|v| v.as_slice()).ok_or_else(|| {
            Error::InvalidInput(format!(
                "frame {f} of {} is beyond its {} frames",
                inst.video_id,
                frames.frame_count()
            ))
        })
    };
    let past = inst.past_frames.iter().map(|&f| get(f)).collect::<Result<Vec<_>>>()?;
    let cands = inst.candidates.iter().map(|c| get(c.frame)).collect::<Result<Vec<_>>>()?;
    Example::new(&past, inst.past_offsets.clone(), &cands, inst.gt_index)
}

/// Resolves a whole dataset against per-video frame features.
pub fn resolve_all(instances: &[PseudoInstance], videos: &HashMap<String, FrameSequence>) -> Result<Vec<Example>> {
    instances
        .iter()
        .map(|inst| {
            let frames = videos.get(&inst.video_id).ok_or_else(|| {
                Error::InvalidInput(format!("no frame features for video {}", inst.video_id))
            })?;
            resolve(inst, frames)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{normalize, shot_feature_set, FeatureVector};
    use crate::kmeans::assign_cameras;
    use crate::shots::apply_filters;
    use proptest::prelude::*;
    use super::Strategy;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn shot(index: usize, start: usize, end: usize) -> Shot {
        Shot {
            video_id: "v".into(),
            index,
            start,
            end,
            transition_in: if index == 0 { Transition::VideoStart } else { Transition::Hard },
        }
    }

    /// A video whose shots are `lens` frames long with random features and
    /// the given camera labels.
    struct Fixture {
        list: ShotList,
        frames: FrameSequence,
        feats: ShotFeatureSet,
        assign: CameraAssignment,
    }

    fn fixture(lens: &[usize], cameras: &[usize], k: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Vec::new();
        let mut shots = Vec::new();
        for (i, &l) in lens.iter().enumerate() {
            let start = frames.len();
            for _ in 0..l {
                let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                frames.push(normalize(&v).unwrap());
            }
            shots.push(shot(i, start, frames.len() - 1));
        }
        let n = frames.len();
        let frames = FrameSequence::new("v", frames).unwrap();
        let list = ShotList::new("v", n, shots);
        let feats = shot_feature_set(&list.shots, &frames).unwrap();
        let assign = CameraAssignment {
            video_id: "v".into(),
            k,
            seed: 0,
            cameras: cameras.iter().copied().enumerate().collect::<BTreeMap<_, _>>(),
            centroids: vec![],
            inertia: 0.0,
            inertia_history: vec![],
        };
        Fixture {
            list,
            frames,
            feats,
            assign,
        }
    }

    fn brute_force_most_similar(fx: &Fixture, anchor: usize, gt: usize, camera: usize) -> Option<usize> {
        let last = &fx.feats[&anchor].last_frame;
        let mut best: Option<(f64, usize)> = None;
        for s in &fx.list.shots {
            if s.index == anchor || s.index == gt || fx.assign.cameras[&s.index] != camera {
                continue;
            }
            let first: &FeatureVector = &fx.feats[&s.index].first_frame;
            let sim: f64 = last.as_slice().iter().zip(first.as_slice()).map(|(a, b)| a * b).sum();
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, s.index));
            }
        }
        best.map(|(_, i)| i)
    }

    #[test]
    fn one_shot_per_camera_skips() {
        let fx = fixture(&[10; 6], &[0, 1, 2, 3, 4, 5], 6, 1);
        let s = &fx.list.shots;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = select_candidates(&s[0], &s[1], &fx.list, &fx.assign, &fx.feats, Strategy::MostSimilar, &mut rng).unwrap();
        assert_eq!(r, None);
    }

    #[test]
    fn two_per_camera_matches_brute_force() {
        let cams = [0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5];
        for seed in 0..20 {
            let fx = fixture(&[8; 12], &cams, 6, seed);
            let s = &fx.list.shots;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let set = select_candidates(&s[0], &s[1], &fx.list, &fx.assign, &fx.feats, Strategy::MostSimilar, &mut rng)
                .unwrap()
                .unwrap();
            assert_eq!(set.gt_index, 1);
            assert_eq!(set.candidates[1].shot_id, 1);
            // Camera 0 holds the anchor, so its only eligible member is shot 6.
            assert_eq!(set.candidates[0].shot_id, 6);
            for c in &set.candidates {
                if c.camera_id != 1 {
                    assert_eq!(Some(c.shot_id), brute_force_most_similar(&fx, 0, 1, c.camera_id));
                }
                assert_eq!(c.frame, s[c.shot_id].start);
            }
        }
    }

    #[test]
    fn random_strategy_is_seeded() {
        let cams = [0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5];
        let fx = fixture(&[8; 18], &cams, 6, 3);
        let s = &fx.list.shots;
        let run = || {
            let mut rng = video_rng(17, "v");
            select_candidates(&s[4], &s[5], &fx.list, &fx.assign, &fx.feats, Strategy::Random, &mut rng)
                .unwrap()
                .unwrap()
        };
        assert_eq!(run(), run());
        let set = run();
        for c in &set.candidates {
            assert_eq!(fx.assign.cameras[&c.shot_id], c.camera_id);
            assert!(c.shot_id != 4);
        }
    }

    #[test]
    fn top5_ranks_by_similarity() {
        let cams = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let fx = fixture(&[8; 12], &cams, 6, 9);
        let s = &fx.list.shots;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = select_candidates(&s[2], &s[3], &fx.list, &fx.assign, &fx.feats, Strategy::Top5NoCluster, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(set.candidates.len(), 6);
        assert_eq!(set.candidates[set.gt_index].shot_id, 3);
        let last = &fx.feats[&2].last_frame;
        let sim = |id: usize| cosine_sim(last, &fx.feats[&id].first_frame).unwrap();
        // Brute force: the five best non-anchor, non-gt shots.
        let mut others: Vec<usize> = (0..12).filter(|&i| i != 2 && i != 3).collect();
        others.sort_by(|a, b| sim(*b).total_cmp(&sim(*a)));
        let mut expect: Vec<usize> = others[..5].to_vec();
        expect.push(3);
        let mut got: Vec<usize> = set.candidates.iter().map(|c| c.shot_id).collect();
        for (r, c) in set.candidates.iter().enumerate() {
            assert_eq!(c.camera_id, r);
        }
        assert!(set.candidates.windows(2).all(|w| sim(w[0].shot_id) >= sim(w[1].shot_id)));
        got.sort();
        expect.sort();
        assert_eq!(got, expect);

        let small = fixture(&[8; 5], &[0; 5], 6, 9);
        let s = &small.list.shots;
        let r = select_candidates(&s[0], &s[1], &small.list, &small.assign, &small.feats, Strategy::Top5NoCluster, &mut rng);
        assert_eq!(r.unwrap(), None);
    }

    #[test]
    fn offsets_follow_switch_frame() {
        let anchor = shot(1, 200, 299);
        let (frames, offsets) = past_window(&anchor, 300);
        assert_eq!(*frames.last().unwrap(), 299);
        assert_eq!(*offsets.last().unwrap(), 1);
        assert_eq!(frames[0], 299 - 15 * 5);
        // A gap of 28 frames puts the switch at 327: most recent offset 28.
        let (_, offsets) = past_window(&anchor, 300 + 28 - 1);
        assert_eq!(*offsets.last().unwrap(), 28);
    }

    #[test]
    fn single_frame_anchor_pads() {
        let anchor = shot(1, 40, 40);
        let (frames, offsets) = past_window(&anchor, 41);
        assert_eq!(frames, vec![40; PAST_LEN]);
        assert_eq!(offsets, vec![1; PAST_LEN]);

        let short = shot(1, 40, 52);
        let (frames, _) = past_window(&short, 53);
        assert_eq!(&frames[PAST_LEN - 3..], &[42, 47, 52]);
        assert!(frames[..PAST_LEN - 3].iter().all(|&f| f == 40));
    }

    #[test]
    fn eleven_shots_at_most_ten_instances() {
        let cams = [0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4];
        let fx = fixture(&[20; 11], &cams, 6, 5);
        let list = apply_filters(&fx.list);
        assert!(list.accepted);
        let cfg = InstanceConfig::default();
        let video = VideoInput {
            shots: &list,
            features: &fx.feats,
        };
        let out = build_instances(&video, &fx.assign, &cfg).unwrap();
        assert!(out.len() <= 10);
        for inst in &out {
            validate_instance(inst, &fx.list, 6).unwrap();
            assert_eq!(inst.switch_frame, fx.list.shots[inst.anchor_shot + 1].start);
        }
    }

    #[test]
    fn rejected_video_is_an_error() {
        let fx = fixture(&[20; 8], &[0, 1, 2, 3, 4, 5, 0, 1], 6, 5);
        let video = VideoInput {
            shots: &fx.list,
            features: &fx.feats,
        };
        assert!(build_instances(&video, &fx.assign, &InstanceConfig::default()).is_err());
    }

    #[test]
    fn gradual_shots_never_appear() {
        let mut fx = fixture(&[20; 24], &[0; 24], 6, 8);
        for i in [3, 10, 17] {
            fx.list.shots[i].transition_in = Transition::Gradual;
        }
        let filtered = apply_filters(&fx.list);
        let feats = shot_feature_set(&filtered.shots, &fx.frames).unwrap();
        let assign = assign_cameras(&filtered, &feats, 6, 0, 100).unwrap();
        for strategy in [Strategy::MostSimilar, Strategy::Random, Strategy::Top5NoCluster] {
            let cfg = InstanceConfig {
                strategy,
                gap_max: 4,
                ..InstanceConfig::default()
            };
            let video = VideoInput {
                shots: &filtered,
                features: &feats,
            };
            let out = build_instances(&video, &assign, &cfg).unwrap();
            assert!(!out.is_empty());
            for inst in &out {
                validate_instance(inst, &fx.list, 6).unwrap();
                // Shots after a dropped gradual shot are not adjacent to an anchor.
                assert!(![2, 3, 9, 10, 16, 17].contains(&inst.anchor_shot));
            }
        }
    }

    #[test]
    fn dataset_file_round_trip_and_errors() {
        let cams: Vec<usize> = (0..14).map(|i| i % 6).collect();
        let fx = fixture(&[12; 14], &cams, 6, 2);
        let video = VideoInput {
            shots: &fx.list,
            features: &fx.feats,
        };
        let cfg = InstanceConfig {
            gap_max: 3,
            ..InstanceConfig::default()
        };
        let out = build_instances(&video, &fx.assign, &cfg).unwrap();
        assert!(!out.is_empty());
        let header = DatasetHeader {
            strategy: cfg.strategy,
            k: 6,
            seed: cfg.seed,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &header, &out).unwrap();
        let (h, back) = read_dataset(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, out);

        let text = std::fs::read_to_string(&p).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, r#"{"strategy":"most_similar","k":6,"seed":0}"#);
        let broken = p.with_file_name("broken.jsonl");
        std::fs::write(&broken, format!("{first}\n{{\"video_id\":\"v\"}}\n")).unwrap();
        match read_dataset(&broken) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a format error, got {other:?}"),
        }

        let mut videos = HashMap::new();
        videos.insert("v".to_string(), fx.frames.clone());
        let examples = resolve_all(&out, &videos).unwrap();
        assert_eq!(examples.len(), out.len());
        assert!(resolve_all(&out, &HashMap::new()).is_err());
    }

    #[test]
    fn strategy_names() {
        for s in [Strategy::MostSimilar, Strategy::Random, Strategy::Top5NoCluster] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("best".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn built_instances_are_valid_and_oracle_equivalent(
            seed in any::<u64>(),
            n_shots in 11usize..30,
            gap_max in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lens: Vec<usize> = (0..n_shots).map(|_| rng.random_range(1..30)).collect();
            let cams: Vec<usize> = (0..n_shots).map(|_| rng.random_range(0..6)).collect();
            let fx = fixture(&lens, &cams, 6, seed);
            let video = VideoInput { shots: &fx.list, features: &fx.feats };
            let cfg = InstanceConfig { gap_max, seed, ..InstanceConfig::default() };
            let out = build_instances(&video, &fx.assign, &cfg).unwrap();
            prop_assert!(out.len() < n_shots);
            for inst in &out {
                prop_assert_eq!(validate_instance(inst, &fx.list, 6), Ok(()));
                let gt = inst.anchor_shot + 1;
                for c in &inst.candidates {
                    if c.shot_id != gt {
                        prop_assert_eq!(
                            Some(c.shot_id),
                            brute_force_most_similar(&fx, inst.anchor_shot, gt, c.camera_id)
                        );
                    }
                }
            }
        }
    }
}

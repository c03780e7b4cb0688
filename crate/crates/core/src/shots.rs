//! Shot boundaries: a built-in cut detector over per-frame features,
//! shot-list files from external detectors, and video-level filtering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{dot, FrameSequence};
use crate::jsonl;
use crate::{Error, Result};

/// Videos need at least this many hard transitions to be used.
pub const MIN_HARD_TRANSITIONS: usize = 10;

/// How a shot was entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Hard,
    Gradual,
    VideoStart,
}

/// An inclusive frame interval of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shot {
    pub video_id: String,
    /// Position in the unfiltered shot list; stable across filtering.
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub transition_in: Transition,
}

impl Shot {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotList {
    pub video_id: String,
    pub frame_count: usize,
    pub shots: Vec<Shot>,
    pub accepted: bool,
}

impl ShotList {
    /// Builds a list and derives `accepted` from its hard transitions.
    pub fn new(video_id: impl Into<String>, frame_count: usize, shots: Vec<Shot>) -> Self {
        let mut list = ShotList {
            video_id: video_id.into(),
            frame_count,
            shots,
            accepted: false,
        };
        list.accepted = list.hard_transitions() >= MIN_HARD_TRANSITIONS;
        list
    }

    pub fn hard_transitions(&self) -> usize {
        self.shots
            .iter()
            .filter(|s| s.transition_in == Transition::Hard)
            .count()
    }

    pub fn shot(&self, index: usize) -> Option<&Shot> {
        self.shots.iter().find(|s| s.index == index)
    }

    /// Checks that shots are ordered, disjoint and (unless `allow_gaps`)
    /// tile `[0, frame_count)` exactly.
    pub fn check(&self, allow_gaps: bool) -> std::result::Result<(), String> {
        let mut next_start = 0usize;
        let mut prev_index: Option<usize> = None;
        for (pos, s) in self.shots.iter().enumerate() {
            if s.start > s.end {
                return Err(format!("shot {} has start {} > end {}", s.index, s.start, s.end));
            }
            if s.end >= self.frame_count {
                return Err(format!(
                    "shot {} ends at {} beyond frame_count {}",
                    s.index, s.end, self.frame_count
                ));
            }
            if pos > 0 && s.start < next_start {
                return Err(format!("shot {} overlaps its predecessor", s.index));
            }
            if !allow_gaps && s.start != next_start {
                return Err(format!(
                    "shot {} starts at {}, expected {}",
                    s.index, s.start, next_start
                ));
            }
            if prev_index.is_some_and(|p| s.index <= p) {
                return Err(format!("shot index {} out of order", s.index));
            }
            if (s.index == 0) != (s.transition_in == Transition::VideoStart) {
                return Err(format!(
                    "shot {} has transition {:?}; only the first shot starts the video",
                    s.index, s.transition_in
                ));
            }
            prev_index = Some(s.index);
            next_start = s.end + 1;
        }
        if !allow_gaps && next_start != self.frame_count {
            return Err(format!(
                "shots cover {} frames, header declares {}",
                next_start, self.frame_count
            ));
        }
        Ok(())
    }
}

/// Parameters of the built-in detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub hard_k: f64,
    pub gradual_window: usize,
    pub gradual_theta: f64,
    pub min_shot_len: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hard_k: 3.0,
            gradual_window: 10,
            gradual_theta: 0.5,
            min_shot_len: 5,
        }
    }
}

/// Half-width of the neighbourhood in which a cut must be a strict maximum.
const PEAK_RADIUS: usize = 2;

/// Frame-to-frame dissimilarities `d[t] = 1 - cos(f_t, f_{t+1})`.
pub fn frame_dissimilarities(frames: &FrameSequence) -> Vec<f64> {
    frames
        .features()
        .windows(2)
        .map(|w| 1.0 - dot(w[0].as_slice(), w[1].as_slice()))
        .collect()
}

/// Windowed drift `D[t] = 1 - cos(f_{t-w}, f_t)` for `t >= w`; entries
/// before `w` are zero.
pub fn windowed_drift(frames: &FrameSequence, window: usize) -> Vec<f64> {
    let f = frames.features();
    (0..f.len())
        .map(|t| {
            if t < window {
                0.0
            } else {
                1.0 - dot(f[t - window].as_slice(), f[t].as_slice())
            }
        })
        .collect()
}

fn is_strict_peak(d: &[f64], t: usize) -> bool {
    let lo = t.saturating_sub(PEAK_RADIUS);
    let hi = (t + PEAK_RADIUS).min(d.len() - 1);
    (lo..=hi).all(|s| s == t || d[t] > d[s])
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Finds shot boundaries in a feature sequence.
///
/// A hard cut sits between `t` and `t+1` when `d[t]` is a strict maximum
/// over `t±2`, exceeds `mean + hard_k * std` of the dissimilarities that
/// are not such local maxima, and exceeds `mean + std` of all of them. The
/// first test keeps densely cut videos working (peaks would otherwise
/// inflate the spread); the second keeps noise peaks out. A gradual transition is declared where the
/// windowed drift exceeds `gradual_theta` with no hard cut inside the
/// window; it is placed at the steepest single step inside that window.
/// Shots shorter than `min_shot_len` are merged into their predecessor
/// (the first shot absorbs its successor instead).
pub fn detect_cuts(frames: &FrameSequence, cfg: &DetectorConfig) -> Result<ShotList> {
    let n = frames.frame_count();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "cut detection needs at least 2 frames, got {n}"
        )));
    }
    if !(cfg.hard_k > 0.0) {
        return Err(Error::InvalidInput("hard_k must be positive".into()));
    }
    if cfg.gradual_window < 2 {
        return Err(Error::InvalidInput("gradual_window must be at least 2".into()));
    }

    let d = frame_dissimilarities(frames);
    let peaks: Vec<bool> = (0..d.len()).map(|t| is_strict_peak(&d, t)).collect();
    let background = d.iter().zip(&peaks).filter(|(_, p)| !**p).map(|(v, _)| *v);
    let (mu, sigma) = mean_std(background);
    let (mu_all, sigma_all) = mean_std(d.iter().copied());
    let threshold = (mu + cfg.hard_k * sigma).max(mu_all + sigma_all);

    // boundary[s] = Some(kind) when a new shot starts at frame s.
    let mut boundary: Vec<Option<Transition>> = vec![None; n];
    for t in 0..d.len() {
        if peaks[t] && d[t] > threshold {
            boundary[t + 1] = Some(Transition::Hard);
        }
    }

    let w = cfg.gradual_window;
    let drift = windowed_drift(frames, w);
    let mut t = w;
    while t < n {
        if drift[t] <= cfg.gradual_theta {
            t += 1;
            continue;
        }
        let run_start = t;
        while t < n && drift[t] > cfg.gradual_theta {
            t += 1;
        }
        let peak = (run_start..t).fold(run_start, |best, s| if drift[s] > drift[best] { s } else { best });
        let window = peak - w..peak;
        let spiked = (peak - w + 1..=peak).any(|s| boundary[s] == Some(Transition::Hard));
        if !spiked {
            let steepest = window.clone().fold(window.start, |best, s| if d[s] > d[best] { s } else { best });
            if boundary[steepest + 1].is_none() {
                boundary[steepest + 1] = Some(Transition::Gradual);
            }
        }
    }

    let mut shots: Vec<(usize, usize, Transition)> = Vec::new();
    let mut start = 0usize;
    let mut kind = Transition::VideoStart;
    for s in 1..=n {
        let next = if s < n { boundary[s] } else { Some(Transition::VideoStart) };
        if let Some(next_kind) = next {
            shots.push((start, s - 1, kind));
            start = s;
            kind = next_kind;
        }
    }

    let min_len = cfg.min_shot_len.max(1);
    let mut merged: Vec<(usize, usize, Transition)> = Vec::with_capacity(shots.len());
    for (s, e, k) in shots {
        match merged.last_mut() {
            Some(prev) if e + 1 - s < min_len => prev.1 = e,
            _ => merged.push((s, e, k)),
        }
    }
    if merged.len() >= 2 && merged[0].1 + 1 - merged[0].0 < min_len {
        let second = merged.remove(1);
        merged[0].1 = second.1;
    }

    let shots = merged
        .into_iter()
        .enumerate()
        .map(|(index, (start, end, transition_in))| Shot {
            video_id: frames.video_id.clone(),
            index,
            start,
            end,
            transition_in,
        })
        .collect();
    Ok(ShotList::new(frames.video_id.clone(), n, shots))
}

/// Drops gradually-entered shots and recomputes `accepted`. Remaining shots
/// keep their original indices.
pub fn apply_filters(list: &ShotList) -> ShotList {
    let shots = list
        .shots
        .iter()
        .filter(|s| s.transition_in != Transition::Gradual)
        .cloned()
        .collect();
    ShotList::new(list.video_id.clone(), list.frame_count, shots)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotListHeader {
    video_id: String,
    frame_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotRecord {
    video_id: String,
    start: usize,
    end: usize,
    transition_in: Transition,
}

/// Reads a shot-list file and validates that it tiles the declared frames.
pub fn ingest_shot_list(path: &Path) -> Result<ShotList> {
    let source = jsonl::source_name(path);
    let (header, records) = jsonl::read_with_header::<ShotListHeader, ShotRecord>(path)?;
    let header = header.value;
    let mut shots = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        let r = rec.value;
        if r.video_id != header.video_id {
            return Err(Error::format(
                &source,
                rec.line,
                format!("video_id {:?} differs from header {:?}", r.video_id, header.video_id),
            ));
        }
        let shot = Shot {
            video_id: r.video_id,
            index,
            start: r.start,
            end: r.end,
            transition_in: r.transition_in,
        };
        // Per-record checks so errors point at the offending line.
        if let Some(prev) = shots.last() {
            let prev: &Shot = prev;
            if shot.start <= prev.end {
                return Err(Error::format(&source, rec.line, "shot overlaps its predecessor"));
            }
            if shot.start != prev.end + 1 {
                return Err(Error::format(&source, rec.line, "gap between shots"));
            }
        } else if shot.start != 0 {
            return Err(Error::format(&source, rec.line, "first shot must start at frame 0"));
        }
        if shot.start > shot.end || shot.end >= header.frame_count {
            return Err(Error::format(
                &source,
                rec.line,
                format!("shot [{}, {}] invalid for {} frames", shot.start, shot.end, header.frame_count),
            ));
        }
        if (index == 0) != (shot.transition_in == Transition::VideoStart) {
            return Err(Error::format(
                &source,
                rec.line,
                "exactly the first shot must be tagged video_start",
            ));
        }
        shots.push(shot);
    }
    let list = ShotList::new(header.video_id, header.frame_count, shots);
    list.check(false).map_err(|m| Error::format(&source, 0, m))?;
    Ok(list)
}

pub fn write_shot_list(path: &Path, list: &ShotList) -> Result<()> {
    let mut w = jsonl::create(path)?;
    jsonl::write_line(
        &mut w,
        &ShotListHeader {
            video_id: list.video_id.clone(),
            frame_count: list.frame_count,
        },
    )?;
    for s in &list.shots {
        jsonl::write_line(
            &mut w,
            &ShotRecord {
                video_id: s.video_id.clone(),
                start: s.start,
                end: s.end,
                transition_in: s.transition_in,
            },
        )?;
    }
    std::io::Write::flush(&mut w)?;
    Ok(())
}

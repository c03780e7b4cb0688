//! Synthetic "multi-camera" edited videos with known camera identities, and
//! the adjusted Rand index used to score cluster recovery against them.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::features::{normalize, FeatureVector, FrameSequence};
use crate::shots::{Shot, ShotList, Transition};
use crate::{Error, Result};

/// Largest pairwise cosine allowed between camera means.
pub const MAX_MEAN_COSINE: f64 = 0.2;

/// Describes a family of videos sharing one set of cameras and one editing
/// habit. Individual videos differ in their shot sequence and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cameras: usize,
    pub dim: usize,
    /// Pairwise cosine between camera means, in `[0, MAX_MEAN_COSINE]`.
    pub mean_cosine: f64,
    /// Per-coordinate standard deviation of the frame noise.
    pub within_noise: f64,
    /// AR(1) coefficient of the frame noise inside a shot, in `[0, 1)`.
    pub smoothing: f64,
    pub shot_len_range: [usize; 2],
    pub n_shots: usize,
    /// Camera that usually follows each camera. `None` draws a single
    /// random cycle over all cameras from `seed`.
    pub successor_rule: Option<Vec<usize>>,
    /// Probability of following `successor_rule`; otherwise a uniformly
    /// random camera other than the current one and the rule's choice.
    pub successor_determinism: f64,
    /// Per-coordinate standard deviation of a slowly drifting component
    /// shared by all cameras, so that shots close in time look alike.
    pub scene_drift: f64,
    /// Per-frame AR(1) coefficient of the drift, in `[0, 1)`.
    pub drift_smoothing: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_cameras: 6,
            dim: 32,
            mean_cosine: 0.1,
            within_noise: 0.04,
            smoothing: 0.9,
            shot_len_range: [12, 30],
            n_shots: 60,
            successor_rule: None,
            successor_determinism: 0.9,
            scene_drift: 0.0,
            drift_smoothing: 0.99,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_cameras < 2 {
            return bad(format!("n_cameras must be at least 2, got {}", self.n_cameras));
        }
        if self.dim < self.n_cameras + 1 {
            return bad(format!("dim must exceed n_cameras, got {}", self.dim));
        }
        if !(0.0..=MAX_MEAN_COSINE).contains(&self.mean_cosine) {
            return bad(format!("mean_cosine {} outside [0, {MAX_MEAN_COSINE}]", self.mean_cosine));
        }
        if !(self.within_noise >= 0.0 && self.within_noise.is_finite()) {
            return bad("within_noise must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad("smoothing must lie in [0, 1)".into());
        }
        if !(self.scene_drift >= 0.0 && self.scene_drift.is_finite()) {
            return bad("scene_drift must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.drift_smoothing) {
            return bad("drift_smoothing must lie in [0, 1)".into());
        }
        let [lo, hi] = self.shot_len_range;
        if lo < 5 || hi < lo {
            return bad(format!("shot_len_range {lo}..{hi} must satisfy 5 <= lo <= hi"));
        }
        if self.n_shots == 0 {
            return bad("n_shots must be positive".into());
        }
        if !(self.successor_determinism > 0.0 && self.successor_determinism <= 1.0) {
            return bad("successor_determinism must lie in (0, 1]".into());
        }
        if let Some(rule) = &self.successor_rule {
            if rule.len() != self.n_cameras
                || rule.iter().enumerate().any(|(c, &n)| n >= self.n_cameras || n == c)
            {
                return bad("successor_rule must map every camera to a different camera".into());
            }
        }
        Ok(())
    }

    /// Unit camera means with pairwise cosine exactly `mean_cosine`:
    /// orthonormalized Gaussian draws mixed with one shared direction.
    pub fn camera_means(&self) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.n_cameras + 1);
        while basis.len() < self.n_cameras + 1 {
            let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            if let Ok(u) = normalize(&v) {
                basis.push(u.into_inner());
            }
        }
        let shared = basis.pop().unwrap_or_default();
        let (a, b) = ((1.0 - self.mean_cosine).sqrt(), self.mean_cosine.sqrt());
        basis
            .iter()
            .map(|e| {
                let v: Vec<f64> = e.iter().zip(&shared).map(|(x, s)| a * x + b * s).collect();
                normalize(&v).expect("mixture of orthonormal vectors has unit norm")
            })
            .collect()
    }

    pub fn successor(&self) -> Vec<usize> {
        if let Some(rule) = &self.successor_rule {
            return rule.clone();
        }
        // Sattolo's algorithm: a uniformly random single cycle.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let mut order: Vec<usize> = (0..self.n_cameras).collect();
        for i in (1..self.n_cameras).rev() {
            let j = rng.random_range(0..i);
            order.swap(i, j);
        }
        let mut rule = vec![0; self.n_cameras];
        for i in 0..self.n_cameras {
            rule[order[i]] = order[(i + 1) % self.n_cameras];
        }
        rule
    }

    /// Smallest distance between camera means over the expected norm of
    /// the frame noise.
    pub fn separation(&self) -> f64 {
        let between = (2.0 - 2.0 * self.mean_cosine).sqrt();
        between / (self.within_noise * (self.dim as f64).sqrt())
    }
}

/// One generated video and its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub frames: FrameSequence,
    /// True camera of each shot, in shot order.
    pub cameras: Vec<usize>,
    pub shots: ShotList,
}

pub fn video_id(spec: &SyntheticSpec, index: u64) -> String {
    format!("synth-{}-{index:04}", spec.seed)
}

/// First video of the family described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedVideo> {
    generate_video(spec, 0)
}

/// Video number `index` of the family. Cameras and the successor rule are
/// shared; the shot sequence and noise come from a per-video stream.
pub fn generate_video(spec: &SyntheticSpec, index: u64) -> Result<GeneratedVideo> {
    spec.validate()?;
    let means = spec.camera_means();
    let rule = spec.successor();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index.wrapping_add(1));

    let n = spec.n_cameras;
    let mut cameras = Vec::with_capacity(spec.n_shots);
    let mut current = rng.random_range(0..n);
    cameras.push(current);
    for _ in 1..spec.n_shots {
        let follow = rule[current];
        let others: Vec<usize> = (0..n).filter(|&c| c != current && c != follow).collect();
        current = if others.is_empty() || rng.random::<f64>() < spec.successor_determinism {
            follow
        } else {
            others[rng.random_range(0..others.len())]
        };
        cameras.push(current);
    }

    let id = video_id(spec, index);
    let [lo, hi] = spec.shot_len_range;
    let innovation = (1.0 - spec.smoothing * spec.smoothing).sqrt();
    let mut drift_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    drift_rng.set_stream(u64::MAX - 1 - index);
    let drift_innovation = (1.0 - spec.drift_smoothing * spec.drift_smoothing).sqrt();
    let mut drift: Vec<f64> = (0..spec.dim)
        .map(|_| spec.scene_drift * drift_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut frames = Vec::new();
    let mut shots = Vec::with_capacity(spec.n_shots);
    for (i, &cam) in cameras.iter().enumerate() {
        let len = rng.random_range(lo..=hi);
        let start = frames.len();
        let mut noise: Vec<f64> = (0..spec.dim)
            .map(|_| spec.within_noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for j in 0..len {
            if j > 0 {
                for x in noise.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *x = spec.smoothing * *x + innovation * spec.within_noise * e;
                }
            }
            if spec.scene_drift > 0.0 && !frames.is_empty() {
                for x in drift.iter_mut() {
                    let e: f64 = drift_rng.sample(StandardNormal);
                    *x = spec.drift_smoothing * *x + drift_innovation * spec.scene_drift * e;
                }
            }
            let v: Vec<f64> = means[cam]
                .as_slice()
                .iter()
                .zip(&noise)
                .zip(&drift)
                .map(|((m, e), g)| m + e + g)
                .collect();
            frames.push(normalize(&v)?);
        }
        shots.push(Shot {
            video_id: id.clone(),
            index: i,
            start,
            end: frames.len() - 1,
            transition_in: if i == 0 { Transition::VideoStart } else { Transition::Hard },
        });
    }
    let frame_count = frames.len();
    Ok(GeneratedVideo {
        frames: FrameSequence::new(id.clone(), frames)?,
        cameras,
        shots: ShotList::new(id, frame_count, shots),
    })
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

fn counts<L: Eq + Hash + Clone>(labels: impl Iterator<Item = L>) -> HashMap<L, u64> {
    let mut m = HashMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Adjusted Rand index between two labelings, from the contingency table.
///
/// Returns 1.0 when the chance-corrected denominator vanishes, which only
/// happens when both labelings describe the same partition.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + Hash + Clone,
    B: Eq + Hash + Clone,
{
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "labelings have different lengths: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("need at least two labels".into()));
    }
    let joint = counts(a.iter().cloned().zip(b.iter().cloned()));
    let index: f64 = joint.values().map(|&n| pairs(n)).sum();
    let sum_a: f64 = counts(a.iter().cloned()).values().map(|&n| pairs(n)).sum();
    let sum_b: f64 = counts(b.iter().cloned()).values().map(|&n| pairs(n)).sum();
    let expected = sum_a * sum_b / pairs(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

//! Seeded K-Means (k-means++ initialisation, Lloyd iterations) and the
//! pseudo-camera assignment built on it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, ShotFeatureSet};
use crate::jsonl;
use crate::shots::ShotList;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each input point, in input order.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after the initial assignment and after every Lloyd step.
    pub inertia_history: Vec<f64>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(p, centroids)).unzip()
}

fn distinct_count(points: &[&[f64]]) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for p in points {
        if !seen.iter().any(|q| q == p) {
            seen.push(p);
        }
    }
    seen.len()
}

/// Greedy k-means++: each new centroid is the best of a few D²-weighted
/// draws, judged by the potential it leaves behind.
fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            // At least k distinct points exist, so some weight is positive.
            let pick = WeightedIndex::new(&d2)
                .map(|w| w.sample(rng))
                .unwrap_or_else(|_| d2.iter().position(|v| *v > 0.0).unwrap_or(0));
            let next: Vec<f64> = points
                .iter()
                .zip(&d2)
                .map(|(p, &d)| d.min(squared_distance(p, points[pick])))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centroids.push(points[pick].to_vec());
        d2 = next;
    }
    centroids
}

/// Moves the centroid of every empty cluster onto the point farthest from
/// its own centroid (lowest index on ties), one cluster at a time.
fn reseed_empty(
    points: &[&[f64]],
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) -> bool {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut changed = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..points.len()).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
        counts[labels[far]] -= 1;
        centroids[j] = points[far].to_vec();
        labels[far] = j;
        dists[far] = 0.0;
        counts[j] = 1;
        changed = true;
    }
    changed
}

/// Cluster means, summed left to right over points in input order.
fn means(points: &[&[f64]], labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = previous.len();
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((s, n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Seeded K-Means over points of equal dimension.
///
/// Returns [`Error::TooFewShots`] when there are fewer distinct points than
/// `k`, since no assignment could then leave every cluster non-empty.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let points: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewShots {
            have: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points have mixed dimensions".into()));
    }
    let distinct = distinct_count(&points);
    if distinct < k {
        return Err(Error::TooFewShots { have: distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);
    let (mut labels, mut dists) = assign(&points, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];

    for _ in 0..max_iters {
        centroids = means(&points, &labels, &centroids);
        let (mut next, mut next_d) = assign(&points, &centroids);
        let reseeded = reseed_empty(&points, &mut centroids, &mut next, &mut next_d);
        if reseeded {
            (next, next_d) = assign(&points, &centroids);
        }
        history.push(next_d.iter().sum());
        let stable = !reseeded && next == labels;
        labels = next;
        dists = next_d;
        if stable {
            break;
        }
    }

    // A reassignment right after reseeding can empty another cluster; repair
    // until every cluster owns a point. Labels stay nearest-centroid.
    for _ in 0..points.len() {
        if !reseed_empty(&points, &mut centroids, &mut labels, &mut dists) {
            break;
        }
        (labels, dists) = assign(&points, &centroids);
        history.push(dists.iter().sum());
    }

    let inertia = dists.iter().sum();
    Ok(KMeansResult {
        labels,
        centroids,
        inertia,
        inertia_history: history,
    })
}

/// Shot-to-pseudo-camera mapping of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraAssignment {
    pub video_id: String,
    pub k: usize,
    pub seed: u64,
    pub cameras: BTreeMap<usize, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
}

impl CameraAssignment {
    pub fn camera_of(&self, shot: usize) -> Option<usize> {
        self.cameras.get(&shot).copied()
    }

    /// Shots of each camera, in shot order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (&s, &c) in &self.cameras {
            out[c].push(s);
        }
        out
    }
}

/// Clusters the retained shots of a video into `k` pseudo cameras.
pub fn assign_cameras(
    shots: &ShotList,
    features: &ShotFeatureSet,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<CameraAssignment> {
    let mut ids = Vec::with_capacity(shots.shots.len());
    let mut points: Vec<&FeatureVector> = Vec::with_capacity(shots.shots.len());
    for s in &shots.shots {
        let f = features.get(&s.index).ok_or_else(|| {
            Error::InvalidInput(format!("no features for shot {} of {}", s.index, shots.video_id))
        })?;
        ids.push(s.index);
        points.push(&f.shot_feature);
    }
    let points: Vec<&[f64]> = points.iter().map(|f| f.as_slice()).collect();
    let result = kmeans(&points, k, seed, max_iters)?;
    Ok(CameraAssignment {
        video_id: shots.video_id.clone(),
        k,
        seed,
        cameras: ids.into_iter().zip(result.labels).collect(),
        centroids: result.centroids,
        inertia: result.inertia,
        inertia_history: result.inertia_history,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentHeader {
    video_id: String,
    k: usize,
    seed: u64,
    inertia: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignmentRecord {
    shot_id: usize,
    camera: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AssignmentLine {
    Header(AssignmentHeader),
    Record(AssignmentRecord),
}

/// Writes one header-plus-records section per video.
pub fn write_assignments(path: &Path, assignments: &[CameraAssignment]) -> Result<()> {
    let mut w = jsonl::create(path)?;
    for a in assignments {
        jsonl::write_line(
            &mut w,
            &AssignmentHeader {
                video_id: a.video_id.clone(),
                k: a.k,
                seed: a.seed,
                inertia: a.inertia,
            },
        )?;
        for (&shot_id, &camera) in &a.cameras {
            jsonl::write_line(&mut w, &AssignmentRecord { shot_id, camera })?;
        }
    }
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// Reads back an assignment file. Centroids are not stored and come back empty.
pub fn read_assignments(path: &Path) -> Result<Vec<CameraAssignment>> {
    let source = jsonl::source_name(path);
    let mut out: Vec<CameraAssignment> = Vec::new();
    for (line, text) in jsonl::read_lines(path)? {
        match jsonl::parse_line::<AssignmentLine>(&source, line, &text)? {
            AssignmentLine::Header(h) => out.push(CameraAssignment {
                video_id: h.video_id,
                k: h.k,
                seed: h.seed,
                cameras: BTreeMap::new(),
                centroids: Vec::new(),
                inertia: h.inertia,
                inertia_history: Vec::new(),
            }),
            AssignmentLine::Record(r) => {
                let a = out
                    .last_mut()
                    .ok_or_else(|| Error::format(&source, line, "record before any header"))?;
                if r.camera >= a.k {
                    return Err(Error::format(&source, line, format!("camera {} >= k {}", r.camera, a.k)));
                }
                a.cameras.insert(r.shot_id, r.camera);
            }
        }
    }
    Ok(out)
}

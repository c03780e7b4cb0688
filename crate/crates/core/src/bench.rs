//! End-to-end runs on synthetic videos: how well pseudo cameras recover the
//! true cameras, and how well a model trained on the resulting pseudo
//! dataset predicts the next camera.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::features::FrameSequence;
use crate::instances::{resolve_all, PseudoInstance, Strategy};
use crate::model::{Example, ModelConfig};
use crate::pipeline::{process_videos, PipelineConfig, VideoResult, VideoSource};
use crate::synthetic::{adjusted_rand_index, generate_video, GeneratedVideo, SyntheticSpec};
use crate::train::{random_baseline, run_seeds, split_by_video, EvalReport, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_videos: u64,
    pub ari_min: f64,
    pub accuracy_min: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_videos: 12,
            ari_min: 0.9,
            accuracy_min: 50.0,
        }
    }
}

/// Synthetic videos pushed through the pipeline.
pub struct SyntheticRun {
    pub videos: Vec<GeneratedVideo>,
    pub results: Vec<VideoResult>,
}

impl SyntheticRun {
    pub fn generate(spec: &SyntheticSpec, n_videos: u64, cfg: &PipelineConfig) -> Result<Self> {
        let videos: Vec<GeneratedVideo> = (0..n_videos).map(|i| generate_video(spec, i)).collect::<Result<_>>()?;
        let sources: Vec<VideoSource> = videos.iter().map(|v| VideoSource::new(v.frames.clone())).collect();
        let results = process_videos(&sources, cfg)?;
        Ok(SyntheticRun { videos, results })
    }

    pub fn instances(&self) -> Vec<PseudoInstance> {
        self.results.iter().flat_map(|r| r.instances.iter().cloned()).collect()
    }

    pub fn frames(&self) -> HashMap<String, FrameSequence> {
        self.videos
            .iter()
            .map(|v| (v.frames.video_id.clone(), v.frames.clone()))
            .collect()
    }

    /// ARI between pseudo cameras and true cameras for every clustered video.
    pub fn ari(&self) -> Result<Vec<f64>> {
        self.videos
            .iter()
            .zip(&self.results)
            .filter_map(|(v, r)| r.assignment.as_ref().map(|a| (v, r, a)))
            .map(|(truth, result, assign)| {
                let mut pseudo = Vec::new();
                let mut real = Vec::new();
                for s in &result.filtered.shots {
                    // The true shot that contains the detected shot's first frame.
                    let t = truth.shots.shots.partition_point(|x| x.start <= s.start) - 1;
                    pseudo.push(assign.camera_of(s.index).expect("every retained shot is clustered"));
                    real.push(truth.cameras[t]);
                }
                adjusted_rand_index(&pseudo, &real)
            })
            .collect()
    }
}

/// Splits by video and resolves both sides against the generated frames.
pub fn split_examples(
    instances: &[PseudoInstance],
    frames: &HashMap<String, FrameSequence>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let (train, test) = split_by_video(instances, ratio, seed)?;
    Ok((resolve_all(&train, frames)?, resolve_all(&test, frames)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub ari_per_video: Vec<f64>,
    pub ari_mean: f64,
    pub ari_pass: bool,
    pub n_instances: usize,
    pub n_train: usize,
    pub accuracy: EvalReport,
    pub random_baseline: f64,
    pub learn_pass: bool,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.ari_pass && self.learn_pass
    }

    pub fn lines(&self, cfg: &BenchConfig) -> Vec<String> {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        vec![
            format!(
                "{} cluster recovery: mean ARI {:.4} over {} videos (gate {:.2})",
                verdict(self.ari_pass),
                self.ari_mean,
                self.ari_per_video.len(),
                cfg.ari_min
            ),
            format!(
                "{} learnability: test accuracy {} over {} instances (gate {:.2}, random {:.2})",
                verdict(self.learn_pass),
                self.accuracy.summary(),
                self.accuracy.n_instances,
                cfg.accuracy_min,
                self.random_baseline
            ),
        ]
    }
}

/// Generates videos, builds the pseudo dataset, trains on a video split and
/// scores both gates.
pub fn run_bench(
    spec: &SyntheticSpec,
    bench: &BenchConfig,
    pipeline: &PipelineConfig,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<BenchReport> {
    let run = SyntheticRun::generate(spec, bench.n_videos, pipeline)?;
    let ari = run.ari()?;
    if ari.is_empty() {
        return Err(Error::InvalidInput("no synthetic video passed the filters".into()));
    }
    let ari_mean = ari.iter().sum::<f64>() / ari.len() as f64;
    let instances = run.instances();
    let (train_set, test_set) = split_examples(&instances, &run.frames(), train.split_ratio, pipeline.instances.seed)?;
    let (accuracy, _) = run_seeds(model, train, &train_set, &test_set)?;
    let random = random_baseline(&test_set, pipeline.instances.seed)?;
    Ok(BenchReport {
        ari_pass: ari.iter().all(|&a| a >= bench.ari_min),
        ari_mean,
        ari_per_video: ari,
        n_instances: instances.len(),
        n_train: train_set.len(),
        learn_pass: accuracy.mean >= bench.accuracy_min,
        accuracy,
        random_baseline: random,
    })
}

/// Trains once on `train_strategy` instances and evaluates on most-similar
/// instances of the held-out videos.
pub fn strategy_accuracy(
    spec: &SyntheticSpec,
    n_videos: u64,
    pipeline: &PipelineConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    train_strategy: Strategy,
) -> Result<EvalReport> {
    let mut eval_cfg = *pipeline;
    eval_cfg.instances.strategy = Strategy::MostSimilar;
    let eval_run = SyntheticRun::generate(spec, n_videos, &eval_cfg)?;
    let frames = eval_run.frames();
    let (_, test_set) = split_examples(&eval_run.instances(), &frames, train.split_ratio, pipeline.instances.seed)?;

    let mut train_cfg = *pipeline;
    train_cfg.instances.strategy = train_strategy;
    let train_run = SyntheticRun::generate(spec, n_videos, &train_cfg)?;
    let (train_set, _) = split_examples(&train_run.instances(), &frames, train.split_ratio, pipeline.instances.seed)?;
    Ok(run_seeds(model, train, &train_set, &test_set)?.0)
}

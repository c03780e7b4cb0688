//! Training loop, accuracy evaluation and multi-seed aggregation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instances::PseudoInstance;
use crate::model::{Example, ModelConfig, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub optimizer: Optimizer,
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            batch_size: 8,
            seeds: vec![0, 1, 2],
            optimizer: Optimizer::Adam,
            split_ratio: 0.8,
        }
    }
}

impl TrainConfig {
    /// Ten epochs at learning rate 1e-5, batch size 2, three seeds.
    pub fn paper_parity() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-5,
            batch_size: 2,
            seeds: vec![0, 1, 2],
            ..TrainConfig::default()
        }
    }

    pub fn apply_paper_parity(&mut self) {
        let p = TrainConfig::paper_parity();
        self.epochs = p.epochs;
        self.lr = p.lr;
        self.batch_size = p.batch_size;
        self.seeds = p.seeds;
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidInput(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        Ok(())
    }
}

/// Splits instances so that no video lands on both sides.
pub fn split_by_video(
    instances: &[PseudoInstance],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<PseudoInstance>, Vec<PseudoInstance>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut videos: Vec<&str> = instances
        .iter()
        .map(|i| i.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if videos.len() < 2 {
        return Err(Error::CannotSplit(format!(
            "{} distinct video(s); need at least 2",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos.shuffle(&mut rng);
    let n_train = ((ratio * videos.len() as f64).round() as usize).clamp(1, videos.len() - 1);
    let train_videos: BTreeSet<&str> = videos[..n_train].iter().copied().collect();
    let (train, test) = instances
        .iter()
        .cloned()
        .partition(|i| train_videos.contains(i.video_id.as_str()));
    Ok((train, test))
}

pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

struct AdamState {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

fn step(params: &mut ModelParams, grad: &ModelParams, cfg: &TrainConfig, adam: &mut AdamState) {
    match cfg.optimizer {
        Optimizer::Sgd => params.add_scaled(grad, -cfg.lr),
        Optimizer::Adam => {
            let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
            adam.t += 1;
            let c1 = 1.0 - b1.powi(adam.t);
            let c2 = 1.0 - b2.powi(adam.t);
            let ms = adam.m.tensors_mut();
            let vs = adam.v.tensors_mut();
            for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= cfg.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Trains a fresh model. Deterministic given `seed`, independent of the
/// number of worker threads.
pub fn train(examples: &[Example], model: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot train on an empty dataset".into()))?;
    let (d_f, k) = (first.d_f(), first.k());
    if examples.iter().any(|e| e.d_f() != d_f || e.k() != k) {
        return Err(Error::InvalidInput("instances disagree on feature dim or k".into()));
    }
    let mut params = ModelParams::init(model, d_f, k, seed)?;
    let mut adam = AdamState {
        m: params.zeros_like(),
        v: params.zeros_like(),
        t: 0,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut losses = vec![0.0; examples.len()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| params.loss_and_grad(&examples[i]))
                .collect::<Result<_>>()?;
            let mut total = params.zeros_like();
            for (&i, (loss, g)) in batch.iter().zip(&results) {
                losses[i] = *loss;
                total.add_scaled(g, 1.0);
            }
            let inv = 1.0 / batch.len() as f64;
            for t in total.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= inv);
            }
            step(&mut params, &total, cfg, &mut adam);
        }
        loss_history.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(TrainOutcome { params, loss_history })
}

/// Percentage of examples whose prediction equals the ground truth.
pub fn evaluate_with<F>(examples: &[Example], mut predict: F) -> Result<f64>
where
    F: FnMut(&Example) -> Result<usize>,
{
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty dataset".into()));
    }
    let mut correct = 0usize;
    for ex in examples {
        if predict(ex)? == ex.gt {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / examples.len() as f64)
}

pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty dataset".into()));
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|ex| Ok(params.predict(ex)? == ex.gt))
        .collect::<Result<_>>()?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

/// Accuracy of a predictor that picks a candidate uniformly at random.
pub fn random_baseline(examples: &[Example], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate_with(examples, |ex| Ok(rng.random_range(0..ex.k())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub n_instances: usize,
}

impl EvalReport {
    pub fn from_accuracies(per_seed: Vec<f64>, n_instances: usize) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::InvalidInput("need at least one seed".into()));
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = (per_seed.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(EvalReport {
            per_seed,
            mean,
            std,
            n_instances,
        })
    }

    /// `MM.MM±S.SS`.
    pub fn summary(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

/// Trains and evaluates once per configured seed.
pub fn run_seeds(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Example],
    test_set: &[Example],
) -> Result<(EvalReport, Vec<ModelParams>)> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    let runs: Vec<(f64, ModelParams)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = train(train_set, model, cfg, seed)?;
            Ok((evaluate(&out.params, test_set)?, out.params))
        })
        .collect::<Result<_>>()?;
    let (acc, params): (Vec<f64>, Vec<ModelParams>) = runs.into_iter().unzip();
    Ok((EvalReport::from_accuracies(acc, test_set.len())?, params))
}

#[derive(Serialize)]
struct ReportFile<'a, C: Serialize> {
    per_seed: &'a [f64],
    mean: f64,
    std: f64,
    n_instances: usize,
    summary: String,
    config: &'a C,
}

/// Writes the report JSON and returns the one-line summary.
pub fn write_report<C: Serialize>(path: &Path, report: &EvalReport, config: &C) -> Result<String> {
    let file = ReportFile {
        per_seed: &report.per_seed,
        mean: report.mean,
        std: report.std,
        n_instances: report.n_instances,
        summary: report.summary(),
        config,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(std::io::Error::from)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(report.summary())
}

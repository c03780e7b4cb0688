//! The `pseudocam` command line.
//!
//! Settings resolve in the order defaults, `--config` file, the
//! `--paper-parity` preset, then individual flags. Every command writes
//! the resolved settings to `<output>.config.toml`, headed by the command
//! line as a comment.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, BenchConfig};
use crate::features::{
    frame_descriptor, load_precomputed, load_shot_features, write_frame_sequence, FeatureVector, FrameSequence,
    Raster,
};
use crate::instances::{read_dataset, resolve_all, write_dataset, DatasetHeader, InstanceConfig, Strategy};
use crate::kmeans::write_assignments;
use crate::model::{Example, ModelConfig, ModelParams};
use crate::pipeline::{process_videos, PipelineConfig, VideoSource};
use crate::shots::{apply_filters, detect_cuts, ingest_shot_list, write_shot_list, DetectorConfig};
use crate::synthetic::{generate_video, SyntheticSpec};
use crate::train::{evaluate, run_seeds, split_by_video, train, write_report, EvalReport, Optimizer, TrainConfig};
use crate::{Error, Result};

/// Every tunable setting, flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub strategy: Strategy,
    pub gap_max: usize,
    pub max_iters: usize,
    pub bins: usize,
    pub hard_k: f64,
    pub gradual_window: usize,
    pub gradual_theta: f64,
    pub min_shot_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub tau: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub optimizer: Optimizer,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub paper_parity: bool,
    pub n_videos: u64,
    pub ari_min: f64,
    pub accuracy_min: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let det = DetectorConfig::default();
        let inst = InstanceConfig::default();
        let model = ModelConfig::default();
        let tr = TrainConfig::default();
        let bench = BenchConfig::default();
        RunConfig {
            seed: inst.seed,
            k: inst.k,
            strategy: inst.strategy,
            gap_max: inst.gap_max,
            max_iters: crate::kmeans::DEFAULT_MAX_ITERS,
            bins: 4,
            hard_k: det.hard_k,
            gradual_window: det.gradual_window,
            gradual_theta: det.gradual_theta,
            min_shot_len: det.min_shot_len,
            d_model: model.d_model,
            n_layers: model.n_layers,
            tau: model.tau,
            epochs: tr.epochs,
            lr: tr.lr,
            batch_size: tr.batch_size,
            seeds: tr.seeds,
            optimizer: tr.optimizer,
            split_ratio: tr.split_ratio,
            split_seed: 0,
            paper_parity: false,
            n_videos: bench.n_videos,
            ari_min: bench.ari_min,
            accuracy_min: bench.accuracy_min,
        }
    }
}

impl RunConfig {
    pub fn from_toml(source: &str, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::format(source, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::from_toml(&path.display().to_string(), &text)
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            hard_k: self.hard_k,
            gradual_window: self.gradual_window,
            gradual_theta: self.gradual_theta,
            min_shot_len: self.min_shot_len,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detector: self.detector(),
            instances: InstanceConfig {
                strategy: self.strategy,
                k: self.k,
                seed: self.seed,
                gap_max: self.gap_max,
            },
            max_iters: self.max_iters,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            tau: self.tau,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seeds: self.seeds.clone(),
            optimizer: self.optimizer,
            split_ratio: self.split_ratio,
        }
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            n_videos: self.n_videos,
            ari_min: self.ari_min,
            accuracy_min: self.accuracy_min,
        }
    }

    fn apply_paper_parity(&mut self) {
        let p = TrainConfig::paper_parity();
        self.paper_parity = true;
        self.epochs = p.epochs;
        self.lr = p.lr;
        self.batch_size = p.batch_size;
        self.seeds = p.seeds;
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("k must be at least 2, got {}", self.k)));
        }
        if self.gap_max == 0 {
            return Err(Error::InvalidInput("gap_max must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("seeds must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pseudocam", version, about = "Pseudo-labeled multi-camera view recommendation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with settings; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of pseudo cameras.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long, global = true)]
    pub gap_max: Option<usize>,
    /// Ten epochs at lr 1e-5, batch 2, three seeds.
    #[arg(long, global = true)]
    pub paper_parity: bool,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect shots in one video given as a frame-feature file or a PNG directory.
    DetectShots {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Video id for a PNG directory; defaults to the directory name.
        #[arg(long)]
        video_id: Option<String>,
        /// Also write the computed frame features.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Build a pseudo dataset and camera assignments from frame features.
    BuildDataset {
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        /// Shot lists to use instead of detection, matched by video id.
        #[arg(long = "shots", num_args = 1..)]
        shots: Vec<PathBuf>,
        /// Shot-kind feature files that replace the clustering features.
        #[arg(long = "shot-features", num_args = 1..)]
        shot_features: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Defaults to `<output>.assignments.jsonl`.
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Train one model on the training videos of a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Accuracy of a checkpoint on the held-out videos (or all videos).
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        all: bool,
    },
    /// Train and evaluate once per seed and write the mean±std report.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the synthetic benchmark and print pass/fail per gate.
    Bench {
        /// Synthetic video spec (TOML); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write synthetic videos as frame-feature files and true shot lists.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        n_videos: u64,
    },
}

fn read_text(path: &Path) -> Result<String> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

/// Defaults, then the config file, then the preset, then flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cfg.paper_parity || common.paper_parity {
        cfg.apply_paper_parity();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.k {
        cfg.k = k;
    }
    if let Some(s) = common.strategy {
        cfg.strategy = s;
    }
    if let Some(g) = common.gap_max {
        cfg.gap_max = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    output.with_file_name(name)
}

fn write_resolved(output: &Path, cfg: &RunConfig, argv: &[OsString]) -> Result<()> {
    let body = toml::to_string(cfg).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let command: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let text = format!("# {}\n{body}", command.join(" "));
    let path = sibling(output, ".config.toml");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_synthetic_spec(path: Option<&Path>) -> Result<SyntheticSpec> {
    let Some(path) = path else {
        return Ok(SyntheticSpec::default());
    };
    let text = read_text(path)?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::format(path.display().to_string(), line, e.message().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

fn load_frames_dir(dir: &Path, video_id: &str, bins: usize) -> Result<FrameSequence> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG frames in {}", dir.display())));
    }
    let features = files
        .iter()
        .map(|p| frame_descriptor(&Raster::load(p)?, bins))
        .collect::<Result<Vec<FeatureVector>>>()?;
    FrameSequence::new(video_id, features)
}

fn load_all_frames(paths: &[PathBuf]) -> Result<HashMap<String, FrameSequence>> {
    let mut out = HashMap::new();
    for p in paths {
        let seq = load_precomputed(p)?;
        let id = seq.video_id.clone();
        if out.insert(id.clone(), seq).is_some() {
            return Err(Error::InvalidInput(format!("features for video {id} given twice")));
        }
    }
    Ok(out)
}

/// Loads a dataset and splits it by video; `all` keeps everything on the test side.
fn load_split(
    dataset: &Path,
    features: &[PathBuf],
    cfg: &RunConfig,
    all: bool,
) -> Result<(DatasetHeader, Vec<Example>, Vec<Example>)> {
    let (header, instances) = read_dataset(dataset)?;
    if instances.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no instances", dataset.display())));
    }
    let frames = load_all_frames(features)?;
    if all {
        return Ok((header, Vec::new(), resolve_all(&instances, &frames)?));
    }
    let (tr, te) = split_by_video(&instances, cfg.split_ratio, cfg.split_seed)?;
    Ok((header, resolve_all(&tr, &frames)?, resolve_all(&te, &frames)?))
}

#[derive(Serialize)]
struct EvalFile<'a> {
    accuracy: f64,
    n_instances: usize,
    checkpoint: String,
    config: &'a RunConfig,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli, argv: &[OsString]) -> Result<i32> {
    if let Some(jobs) = cli.common.jobs {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::DetectShots {
            input,
            output,
            video_id,
            features_out,
        } => {
            let frames = if input.is_dir() {
                let id = video_id.unwrap_or_else(|| {
                    input
                        .file_name()
                        .map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned())
                });
                load_frames_dir(&input, &id, cfg.bins)?
            } else {
                load_precomputed(&input)?
            };
            let list = detect_cuts(&frames, &cfg.detector())?;
            write_shot_list(&output, &list)?;
            if let Some(p) = features_out {
                write_frame_sequence(&p, &frames)?;
            }
            write_resolved(&output, &cfg, argv)?;
            let filtered = apply_filters(&list);
            println!(
                "{}: {} shots, {} hard transitions, {}",
                list.video_id,
                list.shots.len(),
                list.hard_transitions(),
                if filtered.accepted { "accepted" } else { "rejected" }
            );
        }
        Command::BuildDataset {
            features,
            shots,
            shot_features,
            output,
            assignments,
        } => {
            let mut lists = BTreeMap::new();
            for p in &shots {
                let l = ingest_shot_list(p)?;
                lists.insert(l.video_id.clone(), l);
            }
            let mut externals = BTreeMap::new();
            for p in &shot_features {
                let (id, map) = load_shot_features(p)?;
                externals.insert(id, map);
            }
            let sources = features
                .iter()
                .map(|p| {
                    let frames = load_precomputed(p)?;
                    let id = frames.video_id.clone();
                    Ok(VideoSource {
                        shots: lists.remove(&id),
                        shot_features: externals.remove(&id),
                        frames,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(id) = lists.keys().chain(externals.keys()).next() {
                return Err(Error::InvalidInput(format!("no frame features for video {id}")));
            }
            let pipeline = cfg.pipeline();
            let results = process_videos(&sources, &pipeline)?;
            let instances: Vec<_> = results.iter().flat_map(|r| r.instances.iter().cloned()).collect();
            let header = DatasetHeader {
                strategy: cfg.strategy,
                k: cfg.k,
                seed: cfg.seed,
            };
            write_dataset(&output, &header, &instances)?;
            let assigned: Vec<_> = results.iter().filter_map(|r| r.assignment.clone()).collect();
            let apath = assignments.unwrap_or_else(|| sibling(&output, ".assignments.jsonl"));
            write_assignments(&apath, &assigned)?;
            write_resolved(&output, &cfg, argv)?;
            let accepted = results.iter().filter(|r| r.filtered.accepted).count();
            println!(
                "{} instances from {accepted} of {} videos ({} rejected)",
                instances.len(),
                results.len(),
                results.len() - accepted
            );
        }
        Command::Train {
            dataset,
            features,
            output,
        } => {
            let (_, train_set, _) = load_split(&dataset, &features, &cfg, false)?;
            let out = train(&train_set, &cfg.model(), &cfg.train(), cfg.seed)?;
            out.params.save(&output)?;
            write_resolved(&output, &cfg, argv)?;
            let losses: Vec<String> = out.loss_history.iter().map(|l| format!("{l:.4}")).collect();
            println!("trained on {} instances; epoch losses {}", train_set.len(), losses.join(" "));
        }
        Command::Evaluate {
            dataset,
            features,
            checkpoint,
            output,
            all,
        } => {
            let params = ModelParams::load(&checkpoint)?;
            let (_, _, test_set) = load_split(&dataset, &features, &cfg, all)?;
            let accuracy = evaluate(&params, &test_set)?;
            let file = EvalFile {
                accuracy,
                n_instances: test_set.len(),
                checkpoint: checkpoint.display().to_string(),
                config: &cfg,
            };
            let text = serde_json::to_string_pretty(&file).map_err(std::io::Error::from)?;
            std::fs::write(&output, text + "\n")?;
            write_resolved(&output, &cfg, argv)?;
            println!("accuracy {accuracy:.2} on {} instances", test_set.len());
        }
        Command::Report {
            dataset,
            features,
            output,
        } => {
            let (_, train_set, test_set) = load_split(&dataset, &features, &cfg, false)?;
            let (report, _): (EvalReport, _) = run_seeds(&cfg.model(), &cfg.train(), &train_set, &test_set)?;
            let line = write_report(&output, &report, &cfg)?;
            write_resolved(&output, &cfg, argv)?;
            println!("{line}");
        }
        Command::Bench { spec, output } => {
            let mut spec = load_synthetic_spec(spec.as_deref())?;
            if cli.common.seed.is_some() {
                spec.seed = cfg.seed;
            }
            let bench = cfg.bench();
            let report = run_bench(&spec, &bench, &cfg.pipeline(), &cfg.model(), &cfg.train())?;
            let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?;
            std::fs::write(&output, text + "\n")?;
            write_resolved(&output, &cfg, argv)?;
            for line in report.lines(&bench) {
                println!("{line}");
            }
            if !report.passed() {
                return Ok(1);
            }
        }
        Command::Synth {
            spec,
            out_dir,
            n_videos,
        } => {
            let mut spec = load_synthetic_spec(spec.as_deref())?;
            if cli.common.seed.is_some() {
                spec.seed = cfg.seed;
            }
            std::fs::create_dir_all(&out_dir)?;
            for i in 0..n_videos {
                let v = generate_video(&spec, i)?;
                let id = &v.frames.video_id;
                write_frame_sequence(&out_dir.join(format!("{id}.features.jsonl")), &v.frames)?;
                write_shot_list(&out_dir.join(format!("{id}.shots.jsonl")), &v.shots)?;
            }
            write_resolved(&out_dir.join("synth"), &cfg, argv)?;
            println!("wrote {n_videos} videos to {}", out_dir.display());
        }
    }
    Ok(0)
}

/// Entry point used by the binary: parses `argv`, runs, and maps errors
/// to exit codes.
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

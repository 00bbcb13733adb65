//! Command-line front end. Settings come from defaults, then an optional
//! TOML file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{distance_matrix, write_text, EvalError, ThresholdPolicy};
use crate::ingestion::{
    read_landmark_file, write_landmark_file, write_sequence_file, DatasetManifest, IngestError, ManifestEntry,
    ManifestError, Split,
};
use crate::model::{LandmarkSubset, RawTrajectory};
use crate::network::{pair_distance, similarity_score, Activation, CellKind};
use crate::pipeline::{
    embed, evaluate, fit, fit_alignment, AlignConfig, PipelineError, Preprocessing, RunConfig,
};
use crate::procrustes::{align_trajectory, MeanShape};
use crate::segmentation::{segment_cycle, SegmentationConfig};
use crate::synthgen::{generate_cohort, SynthConfig, SynthError};
use crate::training::{load_checkpoint, save_checkpoint, write_loss_csv, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::File { .. } => "file",
            CliError::Ingest(_) => "ingest",
            CliError::Manifest(_) => "manifest",
            CliError::Pipeline(_) => "pipeline",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Synth(_) => "synth",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "gaitkit", version, about = "Gait recognition from body-landmark trajectories")]
pub struct Cli {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Seed for every random draw [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Landmark subset, e.g. 0-32, 11-32, 23-32 or 11,12,23-32 [default: 0-32]
    #[arg(long, global = true)]
    pub landmarks: Option<LandmarkSubset>,
    /// Frames per gait sequence [default: 6]
    #[arg(long = "n-frames", global = true)]
    pub n_frames: Option<usize>,
    /// Hidden units per direction [default: 128]
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Recurrent cell: rnn, lstm or gru [default: gru]
    #[arg(long, global = true)]
    pub cell: Option<CellKind>,
    /// Run a backward direction per layer [default: true]
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub bidirectional: Option<bool>,
    /// Stacked layers, 1 or 2 [default: 2]
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stack: Option<u8>,
    /// Contrastive margin m [default: 1.0]
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// ADAM learning rate [default: 0.0001]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Pairs per batch [default: 32]
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Training epochs [default: 10]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Procrustes dimensions, 2 or 3 [default: 3]
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dims: Option<u8>,
    /// Let Procrustes fit a scale factor [default: true]
    #[arg(long = "allow-scale", global = true, num_args = 0..=1, default_missing_value = "true")]
    pub allow_scale: Option<bool>,
    /// Verification distance threshold τ [default: margin / 2]
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Candidate activation: tanh or relu [default: tanh]
    #[arg(long, global = true)]
    pub activation: Option<Activation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort as landmark JSONL plus train/test manifests.
    Synth(SynthArgs),
    /// Cut one gait cycle out of every trajectory.
    Segment(SegmentArgs),
    /// Fit the Procrustes mean shape on training trajectories.
    FitAlign(FitAlignArgs),
    /// Train a model; writes a checkpoint and a per-epoch loss CSV.
    Train(TrainArgs),
    /// Rank-1 and verification metrics on held-out records.
    Eval(EvalArgs),
    /// Distance, head score and accept/deny for two recordings.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Subjects [default: 20]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Trajectories per subject [default: 8]
    #[arg(long = "per-subject")]
    pub per_subject: Option<usize>,
    /// Frames per trajectory [default: 100]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Spread of subject parameters around the template [default: 0.25]
    #[arg(long)]
    pub separation: Option<f64>,
    /// Landmark noise sigma [default: 0.005]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Subjects written to the training split; the rest go to test [default: 60%]
    #[arg(long = "train-subjects")]
    pub train_subjects: Option<usize>,
}

/// Trajectories come from a JSONL file or a manifest.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Landmark JSONL file
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Dataset manifest; record ids of the form file#index
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Segmented-sequence JSONL
    #[arg(long)]
    pub out: PathBuf,
    /// Align to this mean shape before segmenting.
    #[arg(long)]
    pub mean: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitAlignArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Mean-shape JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log path [default: checkpoint path with .loss.csv]
    #[arg(long = "loss-csv")]
    pub loss_csv: Option<PathBuf>,
    /// Positive training pairs [default: 200]
    #[arg(long)]
    pub positives: Option<usize>,
    /// Negative training pairs [default: 200]
    #[arg(long)]
    pub negatives: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory for report.json, distances.csv, breakdown.csv and loss.csv.
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Verify pairs with the similarity head instead of τ.
    #[arg(long)]
    pub head: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Landmark JSONL; the first record is used.
    pub a: PathBuf,
    pub b: PathBuf,
}

// A closed pipe (e.g. `| head`) is not an error worth a panic.
fn emit(value: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{value}");
}

/// Layout of the `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub landmarks: Option<String>,
    pub threshold: Option<f64>,
    pub head_verification: Option<bool>,
    pub positive_pairs: Option<usize>,
    pub negative_pairs: Option<usize>,
    pub segmentation: Option<SegmentationConfig>,
    pub align: Option<AlignConfig>,
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
}

/// Fully merged settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub synth: SynthConfig,
    landmarks_set: bool,
}

impl Settings {
    pub fn resolve(file: Option<&Path>, flags: &Flags) -> Result<Self, CliError> {
        let fc: FileConfig = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::File {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let mut run = RunConfig::default();
        let mut synth = SynthConfig {
            separation: 0.25,
            ..SynthConfig::default()
        };
        let mut landmarks_set = false;
        if let Some(t) = fc.train {
            run.train = t;
        }
        if let Some(s) = fc.segmentation {
            run.segmentation = s;
        }
        if let Some(a) = fc.align {
            run.align = a;
        }
        if let Some(s) = fc.synth {
            synth = s;
        }
        if let Some(l) = fc.landmarks {
            run.landmarks = l.parse().map_err(|e| CliError::Config(format!("landmarks: {e}")))?;
            landmarks_set = true;
        }
        run.threshold = fc.threshold.or(run.threshold);
        run.head_verification = fc.head_verification.unwrap_or(run.head_verification);
        run.positive_pairs = fc.positive_pairs.unwrap_or(run.positive_pairs);
        run.negative_pairs = fc.negative_pairs.unwrap_or(run.negative_pairs);
        if let Some(seed) = fc.seed {
            run.train.seed = seed;
            synth.seed = seed;
        }

        let f = flags;
        if let Some(seed) = f.seed {
            run.train.seed = seed;
            synth.seed = seed;
        }
        if let Some(l) = &f.landmarks {
            run.landmarks = l.clone();
            landmarks_set = true;
        }
        if let Some(n) = f.n_frames {
            run.segmentation.n_frames = n;
        }
        let t = &mut run.train;
        t.hidden_dim = f.hidden.unwrap_or(t.hidden_dim);
        t.cell = f.cell.unwrap_or(t.cell);
        t.bidirectional = f.bidirectional.unwrap_or(t.bidirectional);
        t.layers = f.stack.map_or(t.layers, usize::from);
        t.margin = f.margin.unwrap_or(t.margin);
        t.learning_rate = f.lr.unwrap_or(t.learning_rate);
        t.batch_size = f.batch.unwrap_or(t.batch_size);
        t.epochs = f.epochs.unwrap_or(t.epochs);
        t.activation = f.activation.unwrap_or(t.activation);
        run.align.dims = f.dims.map_or(run.align.dims, usize::from);
        run.align.allow_scale = f.allow_scale.unwrap_or(run.align.allow_scale);
        run.threshold = f.threshold.or(run.threshold);

        run.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        run.segmentation
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(run.align.dims == 2 || run.align.dims == 3) {
            return Err(CliError::Config("dims must be 2 or 3".into()));
        }
        Ok(Self {
            run,
            synth,
            landmarks_set,
        })
    }
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
        _ => CliError::Config(e.to_string().trim_end().to_string()),
    })?;
    let settings = Settings::resolve(cli.config.as_deref(), &cli.flags)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &settings),
        Command::Segment(a) => cmd_segment(&a, &settings),
        Command::FitAlign(a) => cmd_fit_align(&a, &settings),
        Command::Train(a) => cmd_train(&a, &settings),
        Command::Eval(a) => cmd_eval(&a, &settings),
        Command::Compare(a) => cmd_compare(&a, &settings),
    }
}

/// Exit code for the binary; errors go to stderr as JSON.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            match e {
                CliError::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn load_input(input: &InputArgs) -> Result<Vec<RawTrajectory>, CliError> {
    match (&input.input, &input.manifest) {
        (Some(p), _) => Ok(read_landmark_file(p)?),
        (None, Some(m)) => load_manifest_records(m),
        (None, None) => Err(CliError::Config("pass --input or --manifest".into())),
    }
}

/// Resolves `file#index` record ids relative to the manifest's directory.
pub fn load_manifest_records(path: &Path) -> Result<Vec<RawTrajectory>, CliError> {
    let manifest = DatasetManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut files: BTreeMap<String, Vec<RawTrajectory>> = BTreeMap::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let (file, idx) = e
            .record_id
            .rsplit_once('#')
            .ok_or_else(|| file_err(path, format!("record id `{}` is not file#index", e.record_id)))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| file_err(path, format!("bad record index in `{}`", e.record_id)))?;
        if !files.contains_key(file) {
            files.insert(file.to_string(), read_landmark_file(dir.join(file))?);
        }
        let traj = files[file]
            .get(idx)
            .ok_or_else(|| file_err(path, format!("`{}` is past the end of {file}", e.record_id)))?;
        if traj.subject_id != e.subject_id {
            return Err(file_err(
                path,
                format!("`{}` holds subject {}, manifest says {}", e.record_id, traj.subject_id, e.subject_id),
            ));
        }
        out.push(traj.clone());
    }
    Ok(out)
}

fn manifest_for(split: Split, file: &str, trajs: &[RawTrajectory]) -> Result<DatasetManifest, CliError> {
    let entries = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| ManifestEntry {
            record_id: format!("{file}#{i}"),
            subject_id: t.subject_id.clone(),
            view_deg: t.view_deg,
            condition: t.condition.clone(),
        })
        .collect();
    Ok(DatasetManifest::new(split, entries)?)
}

fn cmd_synth(a: &SynthArgs, s: &Settings) -> Result<(), CliError> {
    let mut cfg = s.synth.clone();
    cfg.subjects = a.subjects.unwrap_or(cfg.subjects);
    cfg.trajectories_per_subject = a.per_subject.unwrap_or(cfg.trajectories_per_subject);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.separation = a.separation.unwrap_or(cfg.separation);
    cfg.noise_sigma = a.noise.unwrap_or(cfg.noise_sigma);
    let n_train = a.train_subjects.unwrap_or(cfg.subjects * 3 / 5).min(cfg.subjects);
    let cohort = generate_cohort(&cfg)?;
    let (train, test) = cohort.split_at(n_train * cfg.trajectories_per_subject);
    std::fs::create_dir_all(&a.out).map_err(|e| file_err(&a.out, e))?;
    for (split, name, part) in [(Split::Train, "train", train), (Split::Test, "test", test)] {
        let file = format!("{name}.jsonl");
        write_landmark_file(part, a.out.join(&file))?;
        let manifest = manifest_for(split, &file, part)?;
        manifest.save(a.out.join(format!("{name}.manifest.json")))?;
    }
    emit(
        serde_json::json!({
            "train_records": train.len(),
            "test_records": test.len(),
            "out": a.out.display().to_string(),
        })
    );
    Ok(())
}

/// The saved mean-shape artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanShapeArtifact {
    pub landmarks: LandmarkSubset,
    pub dims: usize,
    pub allow_scale: bool,
    pub mean_shape: MeanShape,
}

fn cmd_fit_align(a: &FitAlignArgs, s: &Settings) -> Result<(), CliError> {
    let trajs = load_input(&a.input)?;
    let mean = fit_alignment(&trajs, &s.run.landmarks, &s.run.align)?;
    let art = MeanShapeArtifact {
        landmarks: s.run.landmarks.clone(),
        dims: s.run.align.dims,
        allow_scale: s.run.align.allow_scale,
        mean_shape: mean,
    };
    let json = serde_json::to_string_pretty(&art).expect("artifact serializes");
    std::fs::write(&a.out, json).map_err(|e| file_err(&a.out, e))?;
    Ok(())
}

fn cmd_segment(a: &SegmentArgs, s: &Settings) -> Result<(), CliError> {
    let trajs = load_input(&a.input)?;
    let art: Option<MeanShapeArtifact> = match &a.mean {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| file_err(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| file_err(p, e))?)
        }
        None => None,
    };
    let mut seqs = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let t = match &art {
            Some(m) => align_trajectory(t, &m.mean_shape, &m.landmarks, m.allow_scale)
                .map_err(PipelineError::from)?,
            None => t.clone(),
        };
        let seq = segment_cycle(&t, &s.run.segmentation).map_err(|source| PipelineError::Segmentation {
            subject: t.subject_id.clone(),
            source,
        })?;
        seqs.push(seq);
    }
    write_sequence_file(&seqs, &a.out)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, s: &Settings) -> Result<(), CliError> {
    let trajs = load_input(&a.input)?;
    let mut run = s.run.clone();
    run.positive_pairs = a.positives.unwrap_or(run.positive_pairs);
    run.negative_pairs = a.negatives.unwrap_or(run.negative_pairs);
    let ckpt = fit(&trajs, &run)?;
    save_checkpoint(&ckpt, &a.out)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_loss_csv(&ckpt.loss_history, &loss_path)?;
    emit(
        serde_json::json!({
            "checkpoint": a.out.display().to_string(),
            "loss_csv": loss_path.display().to_string(),
            "final_loss": ckpt.loss_history.last(),
            "feature_dim": ckpt.params.preprocessing.feature_dim(),
        })
    );
    Ok(())
}

fn check_landmarks(s: &Settings, pre: &Preprocessing) -> Result<(), CliError> {
    if s.landmarks_set && s.run.landmarks != pre.subset {
        return Err(CliError::Config(format!(
            "--landmarks {} does not match the checkpoint's {}",
            s.run.landmarks, pre.subset
        )));
    }
    Ok(())
}

fn policy(s: &Settings, head: bool, margin: f64) -> ThresholdPolicy {
    let mut run = s.run.clone();
    run.head_verification |= head;
    run.policy(margin)
}

fn cmd_eval(a: &EvalArgs, s: &Settings) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    check_landmarks(s, &ckpt.params.preprocessing)?;
    let trajs = load_input(&a.input)?;
    let policy = policy(s, a.head, ckpt.params.model.margin);
    let report = evaluate(&ckpt.params, &trajs, policy)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| file_err(&a.out_dir, e))?;
    write_text(&a.out_dir.join("report.json"), &report.to_json())?;
    write_text(&a.out_dir.join("breakdown.csv"), &report.breakdown_csv())?;
    let items = embed(&ckpt.params, &trajs)?;
    let ids: Vec<_> = items
        .iter()
        .enumerate()
        .map(|(i, e)| (format!("{}#{i}", e.subject_id()), e.embedding.clone()))
        .collect();
    write_text(&a.out_dir.join("distances.csv"), &distance_matrix(&ids)?.to_csv())?;
    write_loss_csv(&ckpt.loss_history, &a.out_dir.join("loss.csv"))?;
    emit(report.to_json());
    Ok(())
}

fn cmd_compare(a: &CompareArgs, s: &Settings) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let pre = &ckpt.params.preprocessing;
    check_landmarks(s, pre)?;
    let first = |p: &Path| -> Result<RawTrajectory, CliError> {
        read_landmark_file(p)?
            .into_iter()
            .next()
            .ok_or_else(|| file_err(p, "no records"))
    };
    let ta = first(&a.a)?;
    let tb = first(&a.b)?;
    let model = &ckpt.params.model;
    let ea = model.encode(&pre.tensor(&ta)?).map_err(PipelineError::from)?;
    let eb = model.encode(&pre.tensor(&tb)?).map_err(PipelineError::from)?;
    let d = pair_distance(&ea, &eb).map_err(PipelineError::from)?;
    let score = similarity_score(&model.head, &ea, &eb).map_err(PipelineError::from)?;
    let tau = s.run.threshold.unwrap_or(model.margin / 2.0);
    emit(
        serde_json::json!({
            "distance": d,
            "similarity_score": score,
            "threshold": tau,
            "decision": if d < tau { "accept" } else { "deny" },
        })
    );
    Ok(())
}

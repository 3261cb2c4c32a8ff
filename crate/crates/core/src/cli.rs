//! Command-line front end: `synth`, `pseudo-label`, `match`, `assemble`,
//! `eval` and `losses`.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
//! 3 infeasible input (more triplets than queries).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::assembler::{assemble, AssembleConfig, DecodeContext};
use crate::cost_matrix::CostWeights;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig, LossInput};
use crate::metrics::{
    evaluate_video, FrameAveraging, MetricsConfig, MetricsReport, TrackletAveraging, VideoEval,
};
use crate::par::{process_in_batches, with_threads, Execution};
use crate::pseudo_id::assign_ids_video;
use crate::schema_io::{
    read_tracklets, write_gt_stream, write_pred_stream, write_tracklets, FrameGroundTruth,
    FramePrediction, JsonlReader, ObjectlessSet, Record, RelationVocab, Tracklet, VideoGroups,
};
use crate::synth::{generate, random_script, ScriptEntry, ScriptShape, SynthConfig};
use crate::temporal_matcher::{match_video, MatchConfig, PenaltyScope, DEFAULT_PENALTY};

/// Environment variable giving the default worker count.
pub const THREADS_ENV: &str = "TCDSG_THREADS";

/// Videos held in memory at once by the streaming subcommands.
const VIDEO_BATCH: usize = 32;

#[derive(Debug, Parser)]
#[command(
    name = "tcdsg",
    version,
    about = "Temporally consistent scene-graph matching, tracklet assembly and temporal Recall@K",
    args_override_self = true
)]
struct Cli {
    /// JSON object whose keys set flags of the subcommand (e.g. {"topk": 20}); explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads; defaults to $TCDSG_THREADS, else one per core
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic ground truth, oracle predictions and true tracklets
    Synth(SynthArgs),
    /// Assign instance ids to ground-truth entities by consecutive-frame box overlap
    PseudoLabel(PseudoLabelArgs),
    /// Temporally consistent query-to-triplet assignment for every frame
    Match(MatchArgs),
    /// Build predicted tracklets from per-frame top-k predictions
    Assemble(AssembleArgs),
    /// Compute R@K, mR@K and tR@K
    Eval(EvalArgs),
    /// Compute reference training-loss values for matched pairs
    Losses(LossesArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Seed of the first video; video i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    videos: u32,
    #[arg(long, default_value_t = 50)]
    frames: u32,
    #[arg(long, default_value_t = 3)]
    agents: u32,
    /// Number of prediction slots per frame
    #[arg(long, default_value_t = 10)]
    queries: u32,
    /// Size of the subject and object class spaces
    #[arg(long, default_value_t = 2)]
    entity_classes: u32,
    #[arg(long, default_value_t = 4)]
    relations: u32,
    /// The last N relation classes take no object
    #[arg(long, default_value_t = 1)]
    objectless_relations: u32,
    /// JSON array of {subject, object?, relation, start, end}; drawn at random when absent
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Random script: maximum simultaneously active relations
    #[arg(long, default_value_t = 2)]
    lanes: u32,
    /// Random script: number of distinct triplet keys
    #[arg(long, default_value_t = 4)]
    keys: u32,
    /// Random script: shortest active stretch in frames
    #[arg(long, default_value_t = 3)]
    min_len: u32,
    /// Random script: longest active stretch in frames
    #[arg(long, default_value_t = 12)]
    max_len: u32,
    /// Standard deviation of box-corner noise, in normalized units
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Probability of replacing a predicted relation
    #[arg(long, default_value_t = 0.0)]
    flip: f64,
    /// Probability of dropping a prediction
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    /// Output ground-truth JSONL
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Output prediction JSONL
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Output true tracklets (JSON)
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Output class vocabulary (JSON)
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PseudoLabelArgs {
    /// Input ground-truth JSONL; existing ids are replaced
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, default_value_t = crate::pseudo_id::DEFAULT_IOU_THRESH)]
    iou: f64,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScopeArg {
    /// Penalize only queries whose triplet was forced this frame
    Forced,
    /// Penalize every query holding a registered triplet
    Registered,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Cost term weights (JSON); missing keys keep their defaults
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PENALTY)]
    penalty: f64,
    #[arg(long, value_enum, default_value_t = ScopeArg::Registered)]
    penalty_scope: ScopeArg,
    /// Output JSONL, one line per frame
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AssembleArgs {
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Predictions kept per frame
    #[arg(long, default_value_t = 20)]
    topk: usize,
    /// Missing frames a tracklet may bridge
    #[arg(long, default_value_t = 0)]
    gap: u32,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Output tracklets (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FrameAvgArg {
    PerFrame,
    Micro,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrackletAvgArg {
    PerVideo,
    Micro,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Predicted tracklets (JSON); assembled from --pred when absent
    #[arg(long, value_name = "FILE")]
    tracklets: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,
    /// Comma-separated K values
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    k: Vec<usize>,
    /// Predictions kept per frame when assembling tracklets
    #[arg(long, default_value_t = 20)]
    topk: usize,
    #[arg(long, default_value_t = 0)]
    gap: u32,
    /// Spatial IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Temporal IoU threshold
    #[arg(long, default_value_t = 0.5)]
    tiou: f64,
    #[arg(long, value_enum, default_value_t = FrameAvgArg::PerFrame)]
    frame_avg: FrameAvgArg,
    #[arg(long, value_enum, default_value_t = TrackletAvgArg::PerVideo)]
    tracklet_avg: TrackletAvgArg,
    /// Keep every F-th frame of each video
    #[arg(long, default_value_t = 1)]
    subsample: u32,
    /// Output report (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LossesArgs {
    /// JSON {"pairs": [...], "background": [...]}
    #[arg(long, value_name = "FILE")]
    pairs: PathBuf,
    /// Loss weights, focal parameters and running class means (JSON)
    #[arg(long, value_name = "FILE")]
    loss_config: Option<PathBuf>,
    /// Output report (JSON)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Output file that only appears at `path` once fully written.
struct AtomicWriter {
    inner: BufWriter<NamedTempFile>,
    path: PathBuf,
}

impl AtomicWriter {
    fn create(path: &Path) -> Result<Self> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner: BufWriter::new(tmp),
            path: path.to_owned(),
        })
    }

    fn write_with(
        &mut self,
        f: impl FnOnce(&mut BufWriter<NamedTempFile>) -> std::io::Result<()>,
    ) -> Result<()> {
        f(&mut self.inner).map_err(|e| Error::io(&self.path, e))
    }

    fn commit(self) -> Result<()> {
        let path = self.path.clone();
        let tmp = self
            .inner
            .into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = AtomicWriter::create(path)?;
    w.write_with(|out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")
    })?;
    w.commit()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        Error::validation(path.display().to_string(), format!("malformed {what}: {e}"))
    })
}

fn load_vocab(path: Option<&Path>) -> Result<Option<RelationVocab>> {
    path.map(RelationVocab::load).transpose()
}

fn decode_context(vocab: Option<&RelationVocab>) -> DecodeContext {
    match vocab {
        Some(v) => DecodeContext {
            objectless: v.objectless_relations(),
            subject_background: Some(v.subject_classes.len() as u32),
        },
        None => DecodeContext {
            objectless: ObjectlessSet::default(),
            subject_background: None,
        },
    }
}

type Groups<T> = VideoGroups<JsonlReader<BufReader<File>, T>>;

fn groups<T: Record>(path: &Path, vocab: Option<&RelationVocab>) -> Result<Groups<T>> {
    let reader = JsonlReader::open(path, vocab.cloned())?;
    Ok(VideoGroups::new(reader, path.display().to_string()))
}

/// Pairs the videos of two streams, which must list the same videos in the
/// same order.
fn zip_videos<A: Record, B: Record>(
    mut a: impl Iterator<Item = Result<Vec<A>>>,
    mut b: impl Iterator<Item = Result<Vec<B>>>,
) -> impl Iterator<Item = Result<(Vec<A>, Vec<B>)>> {
    std::iter::from_fn(move || match (a.next(), b.next()) {
        (None, None) => None,
        (Some(Err(e)), _) | (_, Some(Err(e))) => Some(Err(e)),
        (Some(Ok(x)), Some(Ok(y))) => {
            let (vx, vy) = (x[0].video_id().to_owned(), y[0].video_id().to_owned());
            if vx == vy {
                Some(Ok((x, y)))
            } else {
                Some(Err(Error::Alignment(format!(
                    "ground truth lists video {vx:?} where predictions list {vy:?}"
                ))))
            }
        }
        (Some(Ok(x)), None) => Some(Err(Error::Alignment(format!(
            "video {:?} has no predictions",
            x[0].video_id()
        )))),
        (None, Some(Ok(y))) => Some(Err(Error::Alignment(format!(
            "video {:?} has no ground truth",
            y[0].video_id()
        )))),
    })
}

fn synth_configs(args: &SynthArgs) -> Result<Vec<SynthConfig>> {
    let script: Option<Vec<ScriptEntry>> = args
        .script
        .as_deref()
        .map(|p| read_json(p, "script"))
        .transpose()?;
    let shape = ScriptShape {
        lanes: args.lanes,
        keys: args.keys,
        min_len: args.min_len,
        max_len: args.max_len,
    };
    (0..args.videos)
        .map(|i| {
            let mut cfg = SynthConfig {
                seed: args.seed.wrapping_add(u64::from(i)),
                video_id: None,
                frames: args.frames,
                agents: args.agents,
                n_queries: args.queries,
                entity_classes: args.entity_classes,
                relations: args.relations,
                objectless_relations: args.objectless_relations,
                script: Vec::new(),
                jitter: args.jitter,
                flip: args.flip,
                drop: args.drop,
                width: args.width,
                height: args.height,
            };
            cfg.script = match &script {
                Some(s) => s.clone(),
                None => random_script(&cfg, &shape)?,
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn run_synth(args: &SynthArgs, exec: Execution) -> Result<String> {
    if args.videos == 0 {
        return Err(Error::InvalidArgument("--videos must be at least 1".into()));
    }
    let configs = synth_configs(args)?;
    let vocab = configs[0].vocab();
    let mut gt_out = AtomicWriter::create(&args.gt)?;
    let mut pred_out = AtomicWriter::create(&args.pred)?;
    let mut truth = Vec::new();
    let mut frames = 0;
    process_in_batches(
        configs.into_iter().map(Ok),
        VIDEO_BATCH,
        exec,
        |c| generate(&c),
        |out| {
            gt_out.write_with(|w| write_gt_stream(w, &out.gt))?;
            pred_out.write_with(|w| write_pred_stream(w, &out.preds))?;
            frames += out.gt.len();
            truth.extend(out.truth);
            Ok(())
        },
    )?;
    gt_out.commit()?;
    pred_out.commit()?;
    if let Some(path) = &args.truth {
        let mut w = AtomicWriter::create(path)?;
        w.write_with(|out| write_tracklets(out, &truth))?;
        w.commit()?;
    }
    if let Some(path) = &args.vocab {
        write_json(path, &vocab)?;
    }
    Ok(format!(
        "synth: {} videos, {frames} frames, {} true tracklets",
        args.videos,
        truth.len()
    ))
}

fn run_pseudo_label(args: &PseudoLabelArgs, exec: Execution) -> Result<String> {
    let vocab = load_vocab(args.vocab.as_deref())?;
    let mut out = AtomicWriter::create(&args.out)?;
    let mut next_id = 0u64;
    let mut frames = 0;
    let iou = args.iou;
    process_in_batches(
        groups::<FrameGroundTruth>(&args.gt, vocab.as_ref())?,
        VIDEO_BATCH,
        exec,
        |video| assign_ids_video(&video, iou, 0),
        |(mut video, used)| {
            // ids were assigned from 0 per video; shift into a global range
            for f in &mut video {
                for t in &mut f.triplets {
                    t.subject.id = t.subject.id.map(|i| i + next_id);
                    if let Some(o) = &mut t.object {
                        o.id = o.id.map(|i| i + next_id);
                    }
                }
            }
            next_id += used;
            frames += video.len();
            out.write_with(|w| write_gt_stream(w, &video))
        },
    )?;
    out.commit()?;
    Ok(format!(
        "pseudo-label: {frames} frames, {next_id} instance ids"
    ))
}

fn run_match(args: &MatchArgs, exec: Execution) -> Result<String> {
    let vocab = load_vocab(args.vocab.as_deref())?;
    let weights: CostWeights = match &args.weights {
        Some(p) => read_json(p, "cost weights")?,
        None => CostWeights::default(),
    };
    let config = MatchConfig {
        weights,
        penalty: args.penalty,
        penalty_scope: match args.penalty_scope {
            ScopeArg::Forced => PenaltyScope::Forced,
            ScopeArg::Registered => PenaltyScope::Registered,
        },
    };
    config.validate()?;
    let mut out = AtomicWriter::create(&args.out)?;
    let (mut frames, mut assigned, mut forced, mut diagnostics) = (0, 0, 0, 0);
    let pairs = zip_videos(
        groups::<FrameGroundTruth>(&args.gt, vocab.as_ref())?,
        groups::<FramePrediction>(&args.pred, vocab.as_ref())?,
    );
    process_in_batches(
        pairs,
        VIDEO_BATCH,
        exec,
        |(g, p)| match_video(&p, &g, &config),
        |results| {
            for r in &results {
                assigned += r.assignments.len();
                forced += r.forced().count();
                diagnostics += r.diagnostics.len();
            }
            frames += results.len();
            out.write_with(|w| {
                for r in &results {
                    serde_json::to_writer(&mut *w, r)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })
        },
    )?;
    out.commit()?;
    Ok(format!(
        "match: {frames} frames, {assigned} assignments ({forced} forced), {diagnostics} diagnostics"
    ))
}

fn run_assemble(args: &AssembleArgs, exec: Execution) -> Result<String> {
    let vocab = load_vocab(args.vocab.as_deref())?;
    let ctx = decode_context(vocab.as_ref());
    let config = AssembleConfig {
        topk: args.topk,
        gap_tolerance: args.gap,
    };
    if config.topk == 0 {
        return Err(Error::InvalidArgument("--topk must be at least 1".into()));
    }
    let mut tracklets = Vec::new();
    let mut videos = 0;
    process_in_batches(
        groups::<FramePrediction>(&args.pred, vocab.as_ref())?,
        VIDEO_BATCH,
        exec,
        |video| assemble(&video, &config, &ctx),
        |t| {
            videos += 1;
            tracklets.extend(t);
            Ok(())
        },
    )?;
    let mut out = AtomicWriter::create(&args.out)?;
    out.write_with(|w| write_tracklets(w, &tracklets))?;
    out.commit()?;
    Ok(format!(
        "assemble: {videos} videos, {} tracklets",
        tracklets.len()
    ))
}

fn run_eval(args: &EvalArgs, exec: Execution) -> Result<String> {
    let vocab = load_vocab(args.vocab.as_deref())?;
    let ctx = decode_context(vocab.as_ref());
    let mut ks = args.k.clone();
    ks.sort_unstable();
    ks.dedup();
    let config = MetricsConfig {
        ks,
        iou_thresh: args.iou,
        tiou_thresh: args.tiou,
        frame_averaging: match args.frame_avg {
            FrameAvgArg::PerFrame => FrameAveraging::PerFrame,
            FrameAvgArg::Micro => FrameAveraging::Micro,
        },
        tracklet_averaging: match args.tracklet_avg {
            TrackletAvgArg::PerVideo => TrackletAveraging::PerVideo,
            TrackletAvgArg::Micro => TrackletAveraging::Micro,
        },
        subsample: args.subsample,
        assemble: AssembleConfig {
            topk: args.topk,
            gap_tolerance: args.gap,
        },
    };
    config.validate()?;
    let given: Option<HashMap<String, Vec<Tracklet>>> = match &args.tracklets {
        Some(p) => {
            if config.subsample > 1 {
                return Err(Error::InvalidArgument(
                    "--tracklets cannot be combined with --subsample".into(),
                ));
            }
            let mut by_video: HashMap<String, Vec<Tracklet>> = HashMap::new();
            for t in read_tracklets(p)? {
                by_video.entry(t.video_id.clone()).or_default().push(t);
            }
            Some(by_video)
        }
        None => None,
    };
    let pairs = zip_videos(
        groups::<FrameGroundTruth>(&args.gt, vocab.as_ref())?,
        groups::<FramePrediction>(&args.pred, vocab.as_ref())?,
    );
    let mut videos: Vec<VideoEval> = Vec::new();
    process_in_batches(
        pairs,
        VIDEO_BATCH,
        exec,
        |(g, p)| {
            let t = given
                .as_ref()
                .map(|m| m.get(&g[0].video_id).map_or(&[][..], Vec::as_slice));
            evaluate_video(&g, &p, t, &config, &ctx)
        },
        |v| {
            videos.push(v);
            Ok(())
        },
    )?;
    let report = MetricsReport::from_videos(&videos, &config, vocab.as_ref());
    write_json(&args.out, &report)?;
    let parts: Vec<String> = config
        .ks
        .iter()
        .map(|k| {
            format!(
                "R@{k}={:.4} mR@{k}={:.4} tR@{k}={:.4}",
                report.recall[k], report.mean_recall[k], report.temporal_recall[k]
            )
        })
        .collect();
    Ok(format!(
        "eval: {} videos, {}",
        videos.len(),
        parts.join(" ")
    ))
}

fn run_losses(args: &LossesArgs) -> Result<String> {
    let input: LossInput = read_json(&args.pairs, "loss pairs")?;
    let config: LossConfig = match &args.loss_config {
        Some(p) => read_json(p, "loss config")?,
        None => LossConfig::default(),
    };
    let report = total_loss(&input, &config)?;
    write_json(&args.out, &report)?;
    let b = &report.breakdown;
    Ok(format!(
        "losses: {} pairs, total={:.6} (giou={:.6} l1={:.6} obj={:.6} rel={:.6} cs={:.6})",
        input.pairs.len(),
        b.total,
        b.giou,
        b.l1,
        b.obj,
        b.rel,
        b.cs
    ))
}

const SUBCOMMANDS: [&str; 6] = [
    "synth",
    "pseudo-label",
    "match",
    "assemble",
    "eval",
    "losses",
];

/// Finds the `--config` path in raw arguments.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Converts a JSON config object into flag tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let value: serde_json::Value = read_json(path, "config")?;
    let loc = path.display().to_string();
    let serde_json::Value::Object(map) = value else {
        return Err(Error::validation(loc, "config must be a JSON object"));
    };
    let mut tokens = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(Error::validation(loc, "config files cannot nest --config"));
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            _ => Err(Error::validation(
                loc.clone(),
                format!("unsupported value for {key:?}"),
            )),
        };
        match &v {
            serde_json::Value::Bool(true) => tokens.push(flag.into()),
            serde_json::Value::Bool(false) => {}
            serde_json::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                tokens.push(flag.into());
                tokens.push(parts.join(",").into());
            }
            other => {
                tokens.push(flag.into());
                tokens.push(scalar(other)?.into());
            }
        }
    }
    Ok(tokens)
}

/// Inserts config-file flags right after the subcommand so that flags given
/// explicitly, which come later, override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let tokens = config_tokens(&path)?;
    let pos = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| Error::InvalidArgument("--config needs a subcommand".into()))?;
    let mut out = args[..=pos].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) if !s.trim().is_empty() => Some(s.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{THREADS_ENV}={s:?} is not a thread count"))
            })?),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(Error::InvalidArgument(
            "thread count must be at least 1".into(),
        ));
    }
    Ok(n)
}

fn execute(cli: &Cli) -> Result<String> {
    let threads = threads(cli.threads)?;
    let exec = if threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    with_threads(threads, || match &cli.command {
        Command::Synth(a) => run_synth(a, exec),
        Command::PseudoLabel(a) => run_pseudo_label(a, exec),
        Command::Match(a) => run_match(a, exec),
        Command::Assemble(a) => run_assemble(a, exec),
        Command::Eval(a) => run_eval(a, exec),
        Command::Losses(a) => run_losses(a),
    })?
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. The summary goes to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

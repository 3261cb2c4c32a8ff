//! Frame-level Recall@K and mean Recall@K, and tracklet-level temporal
//! Recall@K, all with one triplet per query per frame.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::assembler::{assemble, select_topk, AssembleConfig, DecodeContext, SelectedPrediction};
use crate::error::{Error, Result};
use crate::geometry::{iou, temporal_iou, BBox, Interval};
use crate::schema_io::{
    ClassId, FrameGroundTruth, FramePrediction, QueryId, RelationVocab, Tracklet,
};
use crate::temporal_matcher::TripletKey;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameAveraging {
    /// Mean of per-frame recall over frames with at least one gt triplet.
    #[default]
    PerFrame,
    /// Matched over total gt triplets across the dataset.
    Micro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackletAveraging {
    /// Mean of per-video recall over videos with at least one gt tracklet.
    #[default]
    PerVideo,
    /// Matched over total gt tracklets across the dataset.
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub ks: Vec<usize>,
    pub iou_thresh: f64,
    pub tiou_thresh: f64,
    pub frame_averaging: FrameAveraging,
    pub tracklet_averaging: TrackletAveraging,
    /// Keep every n-th frame of each video before evaluation.
    pub subsample: u32,
    pub assemble: AssembleConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ks: vec![20, 50],
            iou_thresh: 0.5,
            tiou_thresh: 0.5,
            frame_averaging: FrameAveraging::PerFrame,
            tracklet_averaging: TrackletAveraging::PerVideo,
            subsample: 1,
            assemble: AssembleConfig::default(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument(
                "K values must be positive and non-empty".into(),
            ));
        }
        for (name, t) in [("iou", self.iou_thresh), ("temporal iou", self.tiou_thresh)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!(
                    "{name} threshold {t} outside [0, 1]"
                )));
            }
        }
        if self.subsample == 0 {
            return Err(Error::InvalidArgument(
                "subsample factor must be at least 1".into(),
            ));
        }
        if self.assemble.topk == 0 {
            return Err(Error::InvalidArgument("top-k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub matched: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.matched += other.matched;
        self.total += other.total;
    }

    pub fn recall(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matched as f64 / self.total as f64)
    }
}

/// Matching outcome for one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    pub tally: Tally,
    pub per_predicate: BTreeMap<ClassId, Tally>,
}

fn spatial_ok(
    iou_thresh: f64,
    ps: &BBox,
    po: Option<&BBox>,
    gs: &BBox,
    go: Option<&BBox>,
) -> Option<f64> {
    let s = iou(ps, gs);
    if s < iou_thresh {
        return None;
    }
    match (po, go) {
        (_, None) => Some(s),
        (Some(p), Some(g)) => {
            let o = iou(p, g);
            (o >= iou_thresh).then_some((s + o) / 2.0)
        }
        (None, Some(_)) => None,
    }
}

/// Greedy one-to-one matching of `selected` (confidence order) against a
/// frame's triplets. Each prediction takes the eligible unmatched triplet
/// with the highest mean box IoU, ties going to the earlier triplet.
pub fn frame_recall(
    gt: &FrameGroundTruth,
    selected: &[SelectedPrediction],
    iou_thresh: f64,
) -> FrameMatch {
    let mut used = vec![false; gt.triplets.len()];
    let mut out = FrameMatch::default();
    for t in &gt.triplets {
        out.per_predicate.entry(t.relation).or_default().total += 1;
    }
    out.tally.total = gt.triplets.len();
    for p in selected {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in gt.triplets.iter().enumerate() {
            if used[i] || t.label() != p.triplet {
                continue;
            }
            let go = t.object.as_ref().map(|o| &o.bbox);
            if let Some(score) = spatial_ok(
                iou_thresh,
                &p.subject_box,
                p.object_box.as_ref(),
                &t.subject.bbox,
                go,
            ) {
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((i, score));
                }
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            out.tally.matched += 1;
            out.per_predicate
                .entry(gt.triplets[i].relation)
                .or_default()
                .matched += 1;
        }
    }
    out
}

/// Frame-level counts at one K, mergeable by summation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameCounts {
    pub recall_sum: f64,
    pub frames_with_gt: usize,
    pub tally: Tally,
    pub per_predicate: BTreeMap<ClassId, Tally>,
}

impl FrameCounts {
    fn add_frame(&mut self, m: &FrameMatch) {
        if let Some(r) = m.tally.recall() {
            self.recall_sum += r;
            self.frames_with_gt += 1;
        }
        self.tally.add(m.tally);
        for (rel, t) in &m.per_predicate {
            self.per_predicate.entry(*rel).or_default().add(*t);
        }
    }

    pub fn merge(&mut self, other: &FrameCounts) {
        self.recall_sum += other.recall_sum;
        self.frames_with_gt += other.frames_with_gt;
        self.tally.add(other.tally);
        for (rel, t) in &other.per_predicate {
            self.per_predicate.entry(*rel).or_default().add(*t);
        }
    }

    pub fn recall(&self, averaging: FrameAveraging) -> f64 {
        match averaging {
            FrameAveraging::PerFrame if self.frames_with_gt > 0 => {
                self.recall_sum / self.frames_with_gt as f64
            }
            FrameAveraging::PerFrame => 0.0,
            FrameAveraging::Micro => self.tally.recall().unwrap_or(0.0),
        }
    }

    /// Unweighted mean of per-predicate recall over predicates with gt.
    pub fn mean_recall(&self) -> f64 {
        let recalls: Vec<f64> = self
            .per_predicate
            .values()
            .filter_map(Tally::recall)
            .collect();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }
}

/// Pairs each gt frame with the prediction frame of the same video and
/// index; a missing prediction frame counts as empty.
fn frame_counts(
    gt: &[FrameGroundTruth],
    preds: &[FramePrediction],
    k: usize,
    iou_thresh: f64,
    ctx: &DecodeContext,
) -> Result<FrameCounts> {
    let by_frame: HashMap<(&str, u32), &FramePrediction> = preds
        .iter()
        .map(|p| ((p.video_id.as_str(), p.frame_idx), p))
        .collect();
    let mut counts = FrameCounts::default();
    for g in gt {
        let selected = match by_frame.get(&(g.video_id.as_str(), g.frame_idx)) {
            Some(p) => select_topk(p, k, ctx)?,
            None => Vec::new(),
        };
        counts.add_frame(&frame_recall(g, &selected, iou_thresh));
    }
    Ok(counts)
}

/// R@K for every configured K.
pub fn recall_at_k(
    gt: &[FrameGroundTruth],
    preds: &[FramePrediction],
    config: &MetricsConfig,
    ctx: &DecodeContext,
) -> Result<BTreeMap<usize, f64>> {
    config
        .ks
        .iter()
        .map(|&k| {
            Ok((
                k,
                frame_counts(gt, preds, k, config.iou_thresh, ctx)?.recall(config.frame_averaging),
            ))
        })
        .collect()
}

/// mR@K for every configured K.
pub fn mean_recall_at_k(
    gt: &[FrameGroundTruth],
    preds: &[FramePrediction],
    config: &MetricsConfig,
    ctx: &DecodeContext,
) -> Result<BTreeMap<usize, f64>> {
    config
        .ks
        .iter()
        .map(|&k| {
            Ok((
                k,
                frame_counts(gt, preds, k, config.iou_thresh, ctx)?.mean_recall(),
            ))
        })
        .collect()
}

/// Maximal runs of consecutive frames carrying the same triplet key.
/// Input frames must belong to one video and be sorted by index.
pub fn gt_tracklets(frames: &[FrameGroundTruth]) -> Result<Vec<Tracklet>> {
    struct Run {
        tracklet: Tracklet,
        last: u32,
    }
    let mut open: BTreeMap<TripletKey, Run> = BTreeMap::new();
    let mut done: Vec<(TripletKey, Tracklet)> = Vec::new();
    let mut prev: Option<(&str, u32)> = None;
    for frame in frames {
        let f = frame.frame_idx;
        if let Some((v, p)) = prev {
            if v != frame.video_id || f <= p {
                return Err(Error::validation(
                    format!("{}@{f}", frame.video_id),
                    "gt frames must be one video in increasing frame order",
                ));
            }
        }
        prev = Some((&frame.video_id, f));
        for t in &frame.triplets {
            let key = t.key().ok_or_else(|| {
                Error::validation(
                    format!("{}@{f}", frame.video_id),
                    "triplet without instance ids; run pseudo-label first",
                )
            })?;
            match open.get_mut(&key) {
                Some(run) if run.last + 1 == f => {
                    run.last = f;
                    run.tracklet.interval = Interval::new(run.tracklet.interval.start(), f)?;
                    run.tracklet.subject_boxes.push(t.subject.bbox);
                    if let (Some(ob), Some(o)) = (&mut run.tracklet.object_boxes, &t.object) {
                        ob.push(o.bbox);
                    }
                }
                Some(run) if run.last == f => {
                    return Err(Error::validation(
                        format!("{}@{f}", frame.video_id),
                        format!("triplet {key:?} appears twice in one frame"),
                    ));
                }
                _ => {
                    let fresh = Run {
                        tracklet: Tracklet {
                            video_id: frame.video_id.clone(),
                            triplet: t.label(),
                            interval: Interval::single(f),
                            subject_boxes: vec![t.subject.bbox],
                            object_boxes: t.object.map(|o| vec![o.bbox]),
                            score: 1.0,
                            query: None,
                        },
                        last: f,
                    };
                    if let Some(old) = open.insert(key, fresh) {
                        done.push((key, old.tracklet));
                    }
                }
            }
        }
    }
    done.extend(open.into_iter().map(|(k, r)| (k, r.tracklet)));
    done.sort_by_key(|(k, t)| (t.interval.start(), *k));
    Ok(done.into_iter().map(|(_, t)| t).collect())
}

/// Mean subject and object IoU over the frames both tracklets cover.
fn mean_overlap_iou(a: &Tracklet, b: &Tracklet) -> Option<(f64, Option<f64>)> {
    let overlap = a.interval.intersection(&b.interval)?;
    let (mut s, mut o) = (0.0, 0.0);
    for f in overlap.start()..=overlap.end() {
        let (sa, oa) = a.boxes_at(f)?;
        let (sb, ob) = b.boxes_at(f)?;
        s += iou(&sa, &sb);
        if let (Some(x), Some(y)) = (oa, ob) {
            o += iou(&x, &y);
        }
    }
    let n = f64::from(overlap.len());
    Some((s / n, b.triplet.object.map(|_| o / n)))
}

/// Whether a predicted tracklet may match a gt tracklet, and with which
/// temporal IoU.
pub fn tracklet_match(
    pred: &Tracklet,
    gt: &Tracklet,
    iou_thresh: f64,
    tiou_thresh: f64,
) -> Option<f64> {
    if pred.triplet != gt.triplet {
        return None;
    }
    let tiou = temporal_iou(&pred.interval, &gt.interval);
    if tiou < tiou_thresh || tiou == 0.0 {
        return None;
    }
    let (s, o) = mean_overlap_iou(pred, gt)?;
    (s >= iou_thresh && o.is_none_or(|o| o >= iou_thresh)).then_some(tiou)
}

/// Predicted tracklets ranked by score descending, then query, start, end.
pub fn rank_tracklets(tracklets: &[Tracklet]) -> Vec<&Tracklet> {
    let mut ranked: Vec<&Tracklet> = tracklets.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.query.cmp(&b.query))
            .then(a.interval.cmp(&b.interval))
            .then(a.triplet.cmp(&b.triplet))
    });
    ranked
}

/// Matched gt tracklets of one video using its `k` best predicted
/// tracklets. Each prediction, in score order, takes the eligible unmatched
/// gt tracklet with the highest temporal IoU, ties going to the earlier one.
pub fn video_temporal_recall(
    gt: &[Tracklet],
    preds: &[Tracklet],
    k: usize,
    iou_thresh: f64,
    tiou_thresh: f64,
) -> Tally {
    let mut used = vec![false; gt.len()];
    let mut matched = 0;
    for p in rank_tracklets(preds).into_iter().take(k) {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gt.iter().enumerate() {
            if used[i] {
                continue;
            }
            if let Some(t) = tracklet_match(p, g, iou_thresh, tiou_thresh) {
                if best.is_none_or(|(_, b)| t > b) {
                    best = Some((i, t));
                }
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            matched += 1;
        }
    }
    Tally {
        matched,
        total: gt.len(),
    }
}

/// tR@K over videos. `gt` and `preds` may hold several videos each.
pub fn temporal_recall_at_k(
    gt: &[Tracklet],
    preds: &[Tracklet],
    config: &MetricsConfig,
) -> BTreeMap<usize, f64> {
    let mut videos: BTreeMap<&str, (Vec<Tracklet>, Vec<Tracklet>)> = BTreeMap::new();
    for t in gt {
        videos.entry(&t.video_id).or_default().0.push(t.clone());
    }
    for t in preds {
        videos.entry(&t.video_id).or_default().1.push(t.clone());
    }
    config
        .ks
        .iter()
        .map(|&k| {
            let tallies: Vec<Tally> = videos
                .values()
                .map(|(g, p)| video_temporal_recall(g, p, k, config.iou_thresh, config.tiou_thresh))
                .collect();
            (k, average_tracklets(&tallies, config.tracklet_averaging))
        })
        .collect()
}

fn average_tracklets(tallies: &[Tally], averaging: TrackletAveraging) -> f64 {
    match averaging {
        TrackletAveraging::PerVideo => {
            let r: Vec<f64> = tallies.iter().filter_map(Tally::recall).collect();
            if r.is_empty() {
                0.0
            } else {
                r.iter().sum::<f64>() / r.len() as f64
            }
        }
        TrackletAveraging::Micro => {
            let mut sum = Tally::default();
            tallies.iter().for_each(|t| sum.add(*t));
            sum.recall().unwrap_or(0.0)
        }
    }
}

/// Frame renumbering that keeps every `factor`-th gt frame of a video, by
/// position, and maps kept frames to consecutive ordinals.
#[derive(Clone, Debug)]
pub struct Subsample {
    map: HashMap<u32, u32>,
}

impl Subsample {
    pub fn from_gt(frames: &[FrameGroundTruth], factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument(
                "subsample factor must be at least 1".into(),
            ));
        }
        let map = frames
            .iter()
            .step_by(factor as usize)
            .enumerate()
            .map(|(ordinal, f)| (f.frame_idx, ordinal as u32))
            .collect();
        Ok(Self { map })
    }

    pub fn apply_gt(&self, frames: &[FrameGroundTruth]) -> Vec<FrameGroundTruth> {
        frames
            .iter()
            .filter_map(|f| {
                self.map.get(&f.frame_idx).map(|&o| FrameGroundTruth {
                    frame_idx: o,
                    ..f.clone()
                })
            })
            .collect()
    }

    pub fn apply_pred(&self, frames: &[FramePrediction]) -> Vec<FramePrediction> {
        frames
            .iter()
            .filter_map(|f| {
                self.map.get(&f.frame_idx).map(|&o| FramePrediction {
                    frame_idx: o,
                    ..f.clone()
                })
            })
            .collect()
    }
}

/// Mergeable evaluation state of one video.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VideoEval {
    pub video_id: String,
    pub frames: BTreeMap<usize, FrameCounts>,
    pub tracklets: BTreeMap<usize, Tally>,
    pub gt_tracklets: usize,
    pub pred_tracklets: usize,
    pub pred_tracklets_by_query: BTreeMap<QueryId, usize>,
}

/// Evaluates one video. Predicted tracklets are assembled from `preds`
/// unless given.
pub fn evaluate_video(
    gt: &[FrameGroundTruth],
    preds: &[FramePrediction],
    tracklets: Option<&[Tracklet]>,
    config: &MetricsConfig,
    ctx: &DecodeContext,
) -> Result<VideoEval> {
    let video_id = gt
        .first()
        .map(|f| f.video_id.clone())
        .or_else(|| preds.first().map(|f| f.video_id.clone()))
        .unwrap_or_default();
    let (gt, preds) = if config.subsample > 1 {
        if tracklets.is_some() {
            return Err(Error::InvalidArgument(
                "precomputed tracklets cannot be combined with subsampling".into(),
            ));
        }
        let s = Subsample::from_gt(gt, config.subsample)?;
        (s.apply_gt(gt), s.apply_pred(preds))
    } else {
        (gt.to_vec(), preds.to_vec())
    };

    let mut out = VideoEval {
        video_id,
        ..Default::default()
    };
    for &k in &config.ks {
        out.frames
            .insert(k, frame_counts(&gt, &preds, k, config.iou_thresh, ctx)?);
    }
    let gt_t = gt_tracklets(&gt)?;
    let assembled;
    let pred_t = match tracklets {
        Some(t) => t,
        None => {
            assembled = assemble(&preds, &config.assemble, ctx)?;
            &assembled
        }
    };
    for &k in &config.ks {
        out.tracklets.insert(
            k,
            video_temporal_recall(&gt_t, pred_t, k, config.iou_thresh, config.tiou_thresh),
        );
    }
    out.gt_tracklets = gt_t.len();
    out.pred_tracklets = pred_t.len();
    for t in pred_t {
        if let Some(q) = t.query {
            *out.pred_tracklets_by_query.entry(q).or_default() += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateRecall {
    pub recall: f64,
    pub matched: usize,
    pub gt: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KCounts {
    pub frame_matched: usize,
    pub tracklet_matched: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub videos: usize,
    pub gt_frames: usize,
    pub gt_instances: usize,
    pub gt_tracklets: usize,
    pub pred_tracklets: usize,
    pub matched: BTreeMap<usize, KCounts>,
    pub pred_tracklets_by_query: BTreeMap<String, BTreeMap<QueryId, usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "R")]
    pub recall: BTreeMap<usize, f64>,
    #[serde(rename = "mR")]
    pub mean_recall: BTreeMap<usize, f64>,
    #[serde(rename = "tR")]
    pub temporal_recall: BTreeMap<usize, f64>,
    /// K, then relation name (or index without a vocabulary).
    pub per_predicate: BTreeMap<usize, BTreeMap<String, PredicateRecall>>,
    pub counts: ReportCounts,
    pub config: MetricsConfig,
}

impl MetricsReport {
    /// Merges per-video results in the given order.
    pub fn from_videos(
        videos: &[VideoEval],
        config: &MetricsConfig,
        vocab: Option<&RelationVocab>,
    ) -> Self {
        let mut report = MetricsReport {
            recall: BTreeMap::new(),
            mean_recall: BTreeMap::new(),
            temporal_recall: BTreeMap::new(),
            per_predicate: BTreeMap::new(),
            counts: ReportCounts {
                videos: videos.len(),
                ..Default::default()
            },
            config: config.clone(),
        };
        let name = |rel: ClassId| {
            vocab
                .and_then(|v| v.relation_classes.get(rel as usize))
                .map_or_else(|| rel.to_string(), |c| c.name.clone())
        };
        for &k in &config.ks {
            let mut fc = FrameCounts::default();
            let mut tallies = Vec::with_capacity(videos.len());
            for v in videos {
                if let Some(c) = v.frames.get(&k) {
                    fc.merge(c);
                }
                tallies.push(v.tracklets.get(&k).copied().unwrap_or_default());
            }
            report.recall.insert(k, fc.recall(config.frame_averaging));
            report.mean_recall.insert(k, fc.mean_recall());
            report
                .temporal_recall
                .insert(k, average_tracklets(&tallies, config.tracklet_averaging));
            report.per_predicate.insert(
                k,
                fc.per_predicate
                    .iter()
                    .map(|(rel, t)| {
                        (
                            name(*rel),
                            PredicateRecall {
                                recall: t.recall().unwrap_or(0.0),
                                matched: t.matched,
                                gt: t.total,
                            },
                        )
                    })
                    .collect(),
            );
            report.counts.matched.insert(
                k,
                KCounts {
                    frame_matched: fc.tally.matched,
                    tracklet_matched: tallies.iter().map(|t| t.matched).sum(),
                },
            );
            report.counts.gt_instances = fc.tally.total;
            report.counts.gt_frames = fc.frames_with_gt;
        }
        for v in videos {
            report.counts.gt_tracklets += v.gt_tracklets;
            report.counts.pred_tracklets += v.pred_tracklets;
            if !v.pred_tracklets_by_query.is_empty() {
                report
                    .counts
                    .pred_tracklets_by_query
                    .insert(v.video_id.clone(), v.pred_tracklets_by_query.clone());
            }
        }
        report
    }
}

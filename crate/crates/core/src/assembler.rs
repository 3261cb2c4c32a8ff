//! Inference-side tracklet construction from per-frame top-k predictions.
//!
//! A query that keeps predicting the same triplet on consecutive frames
//! forms one tracklet. A missing frame or a label change starts a new one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Interval};
use crate::schema_io::{
    ClassId, ClassScores, FramePrediction, ObjectlessSet, QueryId, QueryPrediction, Tracklet,
    TripletLabel,
};

/// A query's decoded triplet in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedPrediction {
    pub query: QueryId,
    pub triplet: TripletLabel,
    pub confidence: f64,
    pub subject_box: BBox,
    pub object_box: Option<BBox>,
}

/// Class-space facts needed to decode predictions.
#[derive(Clone, Debug, Default)]
pub struct DecodeContext {
    pub objectless: ObjectlessSet,
    /// Background subject class for top-1 predictions. Full distributions
    /// always use their last entry.
    pub subject_background: Option<ClassId>,
}

/// Index and value of the maximum; ties go to the lowest index.
fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    values
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best, (i, v)| match best {
            Some((_, bv)) if v <= bv => best,
            _ => Some((i, v)),
        })
}

/// Decodes a prediction, or `None` when its subject is background.
pub fn decode(qp: &QueryPrediction, ctx: &DecodeContext) -> Result<Option<SelectedPrediction>> {
    let missing = |what: &str| {
        Error::InvalidArgument(format!("query {}: empty {what} distribution", qp.query))
    };
    let (subject, relation, object, confidence) = match &qp.scores {
        ClassScores::Full {
            subject,
            object,
            relation,
        } => {
            let (s, ps) = argmax(subject).ok_or_else(|| missing("subject"))?;
            if s + 1 == subject.len() {
                return Ok(None);
            }
            let (r, pr) = argmax(relation).ok_or_else(|| missing("relation"))?;
            let r = r as ClassId;
            if ctx.objectless.contains(r) {
                (s as ClassId, r, None, ps * pr)
            } else {
                let fg = &object[..object.len().saturating_sub(1)];
                let (o, po) = argmax(fg).ok_or_else(|| missing("object"))?;
                (s as ClassId, r, Some(o as ClassId), ps * po * pr)
            }
        }
        ClassScores::Top1 {
            subject,
            object,
            relation,
        } => {
            if ctx.subject_background == Some(subject.class) {
                return Ok(None);
            }
            match object {
                Some(o) if !ctx.objectless.contains(relation.class) => (
                    subject.class,
                    relation.class,
                    Some(o.class),
                    subject.score * o.score * relation.score,
                ),
                _ => (
                    subject.class,
                    relation.class,
                    None,
                    subject.score * relation.score,
                ),
            }
        }
    };
    let object_box = match object {
        Some(_) => Some(qp.object_box.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "query {}: object predicted without an object box",
                qp.query
            ))
        })?),
        None => None,
    };
    Ok(Some(SelectedPrediction {
        query: qp.query,
        triplet: TripletLabel {
            subject,
            object,
            relation,
        },
        confidence: confidence.clamp(0.0, 1.0),
        subject_box: qp.subject_box,
        object_box,
    }))
}

/// Product of the top subject, object and relation probabilities. The
/// object factor is dropped for objectless relations; background subjects
/// score 0.
pub fn confidence(qp: &QueryPrediction, ctx: &DecodeContext) -> Result<f64> {
    Ok(decode(qp, ctx)?.map_or(0.0, |s| s.confidence))
}

/// The `k` most confident non-background predictions, ordered by
/// confidence descending then query ascending.
pub fn select_topk(
    frame: &FramePrediction,
    k: usize,
    ctx: &DecodeContext,
) -> Result<Vec<SelectedPrediction>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }
    let mut selected = Vec::with_capacity(frame.predictions.len());
    for qp in &frame.predictions {
        if let Some(s) = decode(qp, ctx)? {
            selected.push(s);
        }
    }
    selected.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.query.cmp(&b.query))
    });
    selected.truncate(k);
    Ok(selected)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleConfig {
    pub topk: usize,
    /// Missing frames a run may bridge. Bridged frames repeat the last boxes.
    pub gap_tolerance: u32,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            topk: 20,
            gap_tolerance: 0,
        }
    }
}

struct Run {
    triplet: TripletLabel,
    start: u32,
    last: u32,
    subject_boxes: Vec<BBox>,
    object_boxes: Option<Vec<BBox>>,
    confidence_sum: f64,
    members: u32,
}

impl Run {
    fn open(frame: u32, s: &SelectedPrediction) -> Self {
        Self {
            triplet: s.triplet,
            start: frame,
            last: frame,
            subject_boxes: vec![s.subject_box],
            object_boxes: s.object_box.map(|b| vec![b]),
            confidence_sum: s.confidence,
            members: 1,
        }
    }

    fn extend(&mut self, frame: u32, s: &SelectedPrediction) {
        for _ in self.last + 1..frame {
            let held = *self.subject_boxes.last().expect("runs are never empty");
            self.subject_boxes.push(held);
            if let Some(ob) = &mut self.object_boxes {
                let held = *ob.last().expect("runs are never empty");
                ob.push(held);
            }
        }
        self.subject_boxes.push(s.subject_box);
        if let (Some(ob), Some(b)) = (&mut self.object_boxes, s.object_box) {
            ob.push(b);
        }
        self.last = frame;
        self.confidence_sum += s.confidence;
        self.members += 1;
    }

    fn close(self, video_id: &str, query: QueryId) -> Tracklet {
        Tracklet {
            video_id: video_id.to_owned(),
            triplet: self.triplet,
            interval: Interval::new(self.start, self.last).expect("runs only grow forward"),
            subject_boxes: self.subject_boxes,
            object_boxes: self.object_boxes,
            score: self.confidence_sum / f64::from(self.members),
            query: Some(query),
        }
    }
}

/// Groups one video's frames into tracklets, sorted by (start, query, end).
pub fn assemble(
    frames: &[FramePrediction],
    config: &AssembleConfig,
    ctx: &DecodeContext,
) -> Result<Vec<Tracklet>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let video = first.video_id.as_str();
    let mut open: BTreeMap<QueryId, Run> = BTreeMap::new();
    let mut done = Vec::new();
    let mut prev: Option<u32> = None;
    for frame in frames {
        if frame.video_id != video {
            return Err(Error::InvalidArgument(format!(
                "assemble expects one video, found {video:?} and {:?}",
                frame.video_id
            )));
        }
        let f = frame.frame_idx;
        if prev.is_some_and(|p| f <= p) {
            return Err(Error::validation(
                format!("{video}@{f}"),
                format!(
                    "frames out of order (after frame {})",
                    prev.unwrap_or_default()
                ),
            ));
        }
        prev = Some(f);

        // Close runs that can no longer be continued.
        let stale: Vec<QueryId> = open
            .iter()
            .filter(|(_, r)| f - r.last - 1 > config.gap_tolerance)
            .map(|(q, _)| *q)
            .collect();
        for q in stale {
            done.push(open.remove(&q).expect("key just listed").close(video, q));
        }

        for s in select_topk(frame, config.topk, ctx)? {
            match open.remove(&s.query) {
                Some(mut run) if run.triplet == s.triplet => {
                    run.extend(f, &s);
                    open.insert(s.query, run);
                }
                other => {
                    if let Some(run) = other {
                        done.push(run.close(video, s.query));
                    }
                    open.insert(s.query, Run::open(f, &s));
                }
            }
        }
    }
    done.extend(open.into_iter().map(|(q, r)| r.close(video, q)));
    done.sort_by_key(|t| (t.interval.start(), t.query, t.interval.end()));
    Ok(done)
}

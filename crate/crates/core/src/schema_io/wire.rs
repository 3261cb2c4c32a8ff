//! On-disk record shapes and their validated conversions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    ClassId, ClassScores, Entity, FrameGroundTruth, FramePrediction, GtTriplet, InstanceId,
    QueryPrediction, RelationVocab, Scored, Tracklet, TripletLabel, SIMPLEX_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Interval};

#[derive(Debug, Serialize, Deserialize)]
pub struct EntityWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<InstanceId>,
    pub cls: ClassId,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GtTripletWire {
    pub sub: EntityWire,
    pub obj: Option<EntityWire>,
    pub rel: ClassId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GtLine {
    pub video_id: String,
    pub frame_idx: u32,
    pub width: u32,
    pub height: u32,
    pub triplets: Vec<GtTripletWire>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct QueryWire {
    pub q: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<Scored>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj: Option<Scored>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel: Option<Scored>,
    pub sub_box: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj_box: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub union_box: Option<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredLine {
    pub video_id: String,
    pub frame_idx: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub preds: Vec<QueryWire>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrackletWire {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<u32>,
    pub subject_class: ClassId,
    pub object_class: Option<ClassId>,
    pub relation: ClassId,
    pub start: u32,
    pub end: u32,
    pub score: f64,
    pub subject_boxes: Vec<BBox>,
    pub object_boxes: Option<Vec<BBox>>,
}

fn pixel_box(raw: [f64; 4], width: u32, height: u32, loc: &str, what: &str) -> Result<BBox> {
    let (w, h) = (f64::from(width), f64::from(height));
    let [x1, y1, x2, y2] = raw;
    if raw.iter().any(|v| !v.is_finite()) || x1 > x2 || y1 > y2 {
        return Err(Error::validation(
            loc,
            format!("{what} box {raw:?} is malformed"),
        ));
    }
    if x1 < 0.0 || y1 < 0.0 || x2 > w || y2 > h {
        return Err(Error::validation(
            loc,
            format!("{what} box {raw:?} exceeds the {width}x{height} frame"),
        ));
    }
    BBox::new(x1 / w, y1 / h, x2 / w, y2 / h).map_err(|e| Error::validation(loc, e.to_string()))
}

fn normalized_box(raw: [f64; 4], loc: &str, what: &str) -> Result<BBox> {
    BBox::try_from(raw).map_err(|e| Error::validation(loc, format!("{what}: {e}")))
}

fn to_pixels(b: &BBox, width: u32, height: u32) -> [f64; 4] {
    let (w, h) = (f64::from(width), f64::from(height));
    [b.x1() * w, b.y1() * h, b.x2() * w, b.y2() * h]
}

fn check_class(cls: ClassId, n: usize, loc: &str, what: &str) -> Result<()> {
    if cls as usize >= n {
        return Err(Error::validation(
            loc,
            format!("{what} class {cls} out of range ({n} classes)"),
        ));
    }
    Ok(())
}

impl FrameGroundTruth {
    pub(crate) fn from_wire(
        line: GtLine,
        loc: &str,
        vocab: Option<&RelationVocab>,
    ) -> Result<Self> {
        if line.width == 0 || line.height == 0 {
            return Err(Error::validation(
                loc,
                "frame width and height must be positive",
            ));
        }
        let (w, h) = (line.width, line.height);
        let entity = |e: EntityWire, what: &str| -> Result<Entity> {
            Ok(Entity {
                id: e.id,
                class: e.cls,
                bbox: pixel_box(e.bbox, w, h, loc, what)?,
            })
        };
        let mut triplets = Vec::with_capacity(line.triplets.len());
        let mut keys = HashSet::new();
        for t in line.triplets {
            let subject = entity(t.sub, "subject")?;
            let object = t.obj.map(|o| entity(o, "object")).transpose()?;
            if let Some(v) = vocab {
                check_class(subject.class, v.subject_classes.len(), loc, "subject")?;
                check_class(t.rel, v.relation_classes.len(), loc, "relation")?;
                if let Some(o) = &object {
                    check_class(o.class, v.object_classes.len(), loc, "object")?;
                }
                match (v.is_objectless(t.rel), object.is_some()) {
                    (true, true) => {
                        return Err(Error::validation(
                            loc,
                            format!("relation {} is objectless but an object is given", t.rel),
                        ))
                    }
                    (false, false) => {
                        return Err(Error::validation(
                            loc,
                            format!("relation {} requires an object", t.rel),
                        ))
                    }
                    _ => {}
                }
            }
            let triplet = GtTriplet {
                subject,
                object,
                relation: t.rel,
            };
            if let Some(key) = triplet.key() {
                if !keys.insert(key) {
                    return Err(Error::validation(
                        loc,
                        format!("duplicate triplet {key:?} in frame"),
                    ));
                }
            }
            triplets.push(triplet);
        }
        Ok(Self {
            video_id: line.video_id,
            frame_idx: line.frame_idx,
            width: w,
            height: h,
            triplets,
        })
    }

    pub(crate) fn to_wire(&self) -> GtLine {
        let (w, h) = (self.width, self.height);
        let entity = |e: &Entity| EntityWire {
            id: e.id,
            cls: e.class,
            bbox: to_pixels(&e.bbox, w, h),
        };
        GtLine {
            video_id: self.video_id.clone(),
            frame_idx: self.frame_idx,
            width: w,
            height: h,
            triplets: self
                .triplets
                .iter()
                .map(|t| GtTripletWire {
                    sub: entity(&t.subject),
                    obj: t.object.as_ref().map(entity),
                    rel: t.relation,
                })
                .collect(),
        }
    }
}

fn check_simplex(probs: &[f64], loc: &str, what: &str) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::validation(loc, format!("{what} is empty")));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::validation(
            loc,
            format!("{what} has negative or non-finite entries"),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::validation(
            loc,
            format!("{what} sums to {sum}, not 1"),
        ));
    }
    Ok(())
}

fn check_score(s: &Scored, loc: &str, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&s.score) {
        return Err(Error::validation(
            loc,
            format!("{what} score {} outside [0, 1]", s.score),
        ));
    }
    Ok(())
}

impl QueryPrediction {
    fn from_wire(
        q: QueryWire,
        size: Option<(u32, u32)>,
        loc: &str,
        vocab: Option<&RelationVocab>,
    ) -> Result<Self> {
        let loc = format!("{loc} (query {})", q.q);
        let loc = loc.as_str();
        let to_box = |raw: [f64; 4], what: &str| match size {
            Some((w, h)) => pixel_box(raw, w, h, loc, what),
            None => normalized_box(raw, loc, what),
        };
        let full = q.sub_probs.is_some() || q.obj_probs.is_some() || q.rel_probs.is_some();
        let top1 = q.sub.is_some() || q.obj.is_some() || q.rel.is_some();
        let scores = match (full, top1) {
            (true, true) => {
                return Err(Error::validation(
                    loc,
                    "mixes probability vectors with top-1 scores",
                ))
            }
            (false, false) => return Err(Error::validation(loc, "no class scores")),
            (true, false) => {
                let (Some(subject), Some(object), Some(relation)) =
                    (q.sub_probs, q.obj_probs, q.rel_probs)
                else {
                    return Err(Error::validation(
                        loc,
                        "sub_probs, obj_probs and rel_probs must all be present",
                    ));
                };
                check_simplex(&subject, loc, "sub_probs")?;
                check_simplex(&object, loc, "obj_probs")?;
                check_simplex(&relation, loc, "rel_probs")?;
                if subject.len() < 2 || object.len() < 2 {
                    return Err(Error::validation(
                        loc,
                        "subject and object distributions need a class and a background entry",
                    ));
                }
                if let Some(v) = vocab {
                    let expect = [
                        v.subject_classes.len() + 1,
                        v.object_classes.len() + 1,
                        v.relation_classes.len(),
                    ];
                    if [subject.len(), object.len(), relation.len()] != expect {
                        return Err(Error::validation(
                            loc,
                            format!("distribution lengths do not match the vocabulary {expect:?}"),
                        ));
                    }
                }
                if q.obj_box.is_none() {
                    return Err(Error::validation(
                        loc,
                        "obj_box is required with full distributions",
                    ));
                }
                ClassScores::Full {
                    subject,
                    object,
                    relation,
                }
            }
            (false, true) => {
                let (Some(subject), Some(relation)) = (q.sub, q.rel) else {
                    return Err(Error::validation(loc, "top-1 form needs sub and rel"));
                };
                check_score(&subject, loc, "subject")?;
                check_score(&relation, loc, "relation")?;
                if let Some(o) = &q.obj {
                    check_score(o, loc, "object")?;
                    if q.obj_box.is_none() {
                        return Err(Error::validation(
                            loc,
                            "obj_box is required when obj is given",
                        ));
                    }
                }
                ClassScores::Top1 {
                    subject,
                    object: q.obj,
                    relation,
                }
            }
        };
        Ok(Self {
            query: q.q,
            scores,
            subject_box: to_box(q.sub_box, "subject")?,
            object_box: q.obj_box.map(|b| to_box(b, "object")).transpose()?,
            union_box: q.union_box.map(|b| to_box(b, "union")).transpose()?,
        })
    }

    fn to_wire(&self) -> QueryWire {
        let mut w = QueryWire {
            q: self.query,
            sub_box: self.subject_box.to_array(),
            obj_box: self.object_box.map(|b| b.to_array()),
            union_box: self.union_box.map(|b| b.to_array()),
            ..Default::default()
        };
        match &self.scores {
            ClassScores::Full {
                subject,
                object,
                relation,
            } => {
                w.sub_probs = Some(subject.clone());
                w.obj_probs = Some(object.clone());
                w.rel_probs = Some(relation.clone());
            }
            ClassScores::Top1 {
                subject,
                object,
                relation,
            } => {
                w.sub = Some(*subject);
                w.obj = *object;
                w.rel = Some(*relation);
            }
        }
        w
    }
}

impl FramePrediction {
    pub(crate) fn from_wire(
        line: PredLine,
        loc: &str,
        vocab: Option<&RelationVocab>,
    ) -> Result<Self> {
        let size = match (line.width, line.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => Some((w, h)),
            (None, None) => None,
            _ => {
                return Err(Error::validation(
                    loc,
                    "width and height must both be positive or both absent",
                ))
            }
        };
        let mut seen = HashSet::new();
        let mut predictions = Vec::with_capacity(line.preds.len());
        for q in line.preds {
            if !seen.insert(q.q) {
                return Err(Error::validation(
                    loc,
                    format!("duplicate query index {}", q.q),
                ));
            }
            predictions.push(QueryPrediction::from_wire(q, size, loc, vocab)?);
        }
        Ok(Self {
            video_id: line.video_id,
            frame_idx: line.frame_idx,
            predictions,
        })
    }

    /// Normalized-coordinate form (no `width`/`height`).
    pub(crate) fn to_wire(&self) -> PredLine {
        PredLine {
            video_id: self.video_id.clone(),
            frame_idx: self.frame_idx,
            width: None,
            height: None,
            preds: self
                .predictions
                .iter()
                .map(QueryPrediction::to_wire)
                .collect(),
        }
    }
}

impl Tracklet {
    pub(crate) fn from_wire(w: TrackletWire, loc: &str) -> Result<Self> {
        let interval =
            Interval::new(w.start, w.end).map_err(|e| Error::validation(loc, e.to_string()))?;
        if !w.score.is_finite() {
            return Err(Error::validation(loc, "tracklet score is not finite"));
        }
        let t = Tracklet {
            video_id: w.video_id,
            triplet: TripletLabel {
                subject: w.subject_class,
                object: w.object_class,
                relation: w.relation,
            },
            interval,
            subject_boxes: w.subject_boxes,
            object_boxes: w.object_boxes,
            score: w.score,
            query: w.query,
        };
        t.validate()
            .map_err(|e| Error::validation(loc, e.to_string()))?;
        Ok(t)
    }

    pub(crate) fn to_wire(&self) -> TrackletWire {
        TrackletWire {
            video_id: self.video_id.clone(),
            query: self.query,
            subject_class: self.triplet.subject,
            object_class: self.triplet.object,
            relation: self.triplet.relation,
            start: self.interval.start(),
            end: self.interval.end(),
            score: self.score,
            subject_boxes: self.subject_boxes.clone(),
            object_boxes: self.object_boxes.clone(),
        }
    }
}

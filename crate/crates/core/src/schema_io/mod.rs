//! Data model for videos, ground truth, predictions and tracklets.
//!
//! On disk every record is one JSON object per line. Ground-truth boxes are
//! stored in pixels and normalized on ingestion; prediction boxes are pixel
//! boxes when the line carries `width`/`height` and normalized otherwise.
//! In memory every box is a normalized [`BBox`].

mod stream;
mod wire;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Interval};
use crate::temporal_matcher::TripletKey;

pub use stream::{
    read_gt_stream, read_pred_stream, read_tracklets, write_gt_stream, write_pred_stream,
    write_tracklets, JsonlReader, Record, VideoGroups,
};

pub type ClassId = u32;
pub type InstanceId = u64;
pub type QueryId = u32;

/// Tolerance on the sum of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationClass {
    pub name: String,
    #[serde(default)]
    pub objectless: bool,
}

/// Class names for the three prediction branches. Relation classes flagged
/// `objectless` have no object participant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationVocab {
    pub subject_classes: Vec<String>,
    pub object_classes: Vec<String>,
    pub relation_classes: Vec<RelationClass>,
}

impl RelationVocab {
    pub fn validate(&self) -> Result<()> {
        fn unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<()> {
            let mut seen = HashSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(Error::validation(
                        "vocabulary",
                        format!("duplicate {what} class {n:?}"),
                    ));
                }
            }
            Ok(())
        }
        unique("subject", self.subject_classes.iter().map(String::as_str))?;
        unique("object", self.object_classes.iter().map(String::as_str))?;
        unique(
            "relation",
            self.relation_classes.iter().map(|r| r.name.as_str()),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: RelationVocab = serde_json::from_str(&text)
            .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn is_objectless(&self, relation: ClassId) -> bool {
        self.relation_classes
            .get(relation as usize)
            .is_some_and(|r| r.objectless)
    }

    pub fn objectless_relations(&self) -> ObjectlessSet {
        ObjectlessSet(
            self.relation_classes
                .iter()
                .enumerate()
                .filter(|(_, r)| r.objectless)
                .map(|(i, _)| i as ClassId)
                .collect(),
        )
    }
}

/// Relation classes that take no object. Empty when no vocabulary is known.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjectlessSet(HashSet<ClassId>);

impl ObjectlessSet {
    pub fn new(relations: impl IntoIterator<Item = ClassId>) -> Self {
        Self(relations.into_iter().collect())
    }

    pub fn contains(&self, relation: ClassId) -> bool {
        self.0.contains(&relation)
    }
}

/// A subject or object instance in one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entity {
    pub id: Option<InstanceId>,
    pub class: ClassId,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtTriplet {
    pub subject: Entity,
    /// `None` only for objectless relations.
    pub object: Option<Entity>,
    pub relation: ClassId,
}

impl GtTriplet {
    /// Identity used by the temporal matcher; `None` until instance ids are known.
    pub fn key(&self) -> Option<TripletKey> {
        let subject_id = self.subject.id?;
        let object_id = match &self.object {
            Some(o) => Some(o.id?),
            None => None,
        };
        Some(TripletKey {
            subject_id,
            object_id,
            relation: self.relation,
        })
    }

    pub fn label(&self) -> TripletLabel {
        TripletLabel {
            subject: self.subject.class,
            object: self.object.map(|o| o.class),
            relation: self.relation,
        }
    }

    pub fn is_objectless(&self) -> bool {
        self.object.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameGroundTruth {
    pub video_id: String,
    pub frame_idx: u32,
    pub width: u32,
    pub height: u32,
    pub triplets: Vec<GtTriplet>,
}

/// Top-1 class and its score for one branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    #[serde(rename = "cls")]
    pub class: ClassId,
    pub score: f64,
}

/// Per-branch classification output of a query.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassScores {
    /// Full distributions. Subject and object vectors end with the background class.
    Full {
        subject: Vec<f64>,
        object: Vec<f64>,
        relation: Vec<f64>,
    },
    /// Reduced form accepted for assembly and evaluation. `object == None`
    /// marks an objectless prediction.
    Top1 {
        subject: Scored,
        object: Option<Scored>,
        relation: Scored,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPrediction {
    pub query: QueryId,
    pub scores: ClassScores,
    pub subject_box: BBox,
    pub object_box: Option<BBox>,
    pub union_box: Option<BBox>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_idx: u32,
    pub predictions: Vec<QueryPrediction>,
}

/// Class labels of an action tracklet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletLabel {
    pub subject: ClassId,
    pub object: Option<ClassId>,
    pub relation: ClassId,
}

/// A temporally contiguous triplet instance with one box per covered frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub video_id: String,
    pub triplet: TripletLabel,
    pub interval: Interval,
    pub subject_boxes: Vec<BBox>,
    /// Absent for objectless relations.
    pub object_boxes: Option<Vec<BBox>>,
    pub score: f64,
    /// Originating query for predicted tracklets.
    pub query: Option<QueryId>,
}

impl Tracklet {
    pub fn validate(&self) -> Result<()> {
        let len = self.interval.len() as usize;
        let loc = format!("tracklet {}@{}", self.video_id, self.interval.start());
        if self.subject_boxes.len() != len {
            return Err(Error::validation(
                loc,
                format!(
                    "{} subject boxes for an interval of {len} frames",
                    self.subject_boxes.len()
                ),
            ));
        }
        match (&self.object_boxes, self.triplet.object) {
            (Some(ob), Some(_)) if ob.len() != len => Err(Error::validation(
                loc,
                format!("{} object boxes for an interval of {len} frames", ob.len()),
            )),
            (Some(_), None) => Err(Error::validation(
                loc,
                "object boxes given for an objectless triplet",
            )),
            (None, Some(_)) => Err(Error::validation(loc, "object boxes missing")),
            _ => Ok(()),
        }
    }

    /// Boxes at `frame`, if the tracklet covers it.
    pub fn boxes_at(&self, frame: u32) -> Option<(BBox, Option<BBox>)> {
        if !self.interval.contains(frame) {
            return None;
        }
        let i = (frame - self.interval.start()) as usize;
        Some((
            self.subject_boxes[i],
            self.object_boxes.as_ref().map(|o| o[i]),
        ))
    }
}

/// Converts the pixel extent of a mask to a normalized box.
pub fn mask_extent_to_box(points: &[(f64, f64)], width: u32, height: u32) -> Result<BBox> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("mask has no points".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("frame has zero size".into()));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let mut ext = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    for &(x, y) in points {
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return Err(Error::InvalidArgument(format!(
                "mask point ({x}, {y}) outside a {width}x{height} frame"
            )));
        }
        ext[0] = ext[0].min(x);
        ext[1] = ext[1].min(y);
        ext[2] = ext[2].max(x);
        ext[3] = ext[3].max(y);
    }
    BBox::new(ext[0] / w, ext[1] / h, ext[2] / w, ext[3] / h)
}

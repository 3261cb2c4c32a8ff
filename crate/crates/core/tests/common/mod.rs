//! Fixture builders shared by the integration test targets.
#![allow(dead_code)]

use tcdsg::geometry::BBox;
use tcdsg::schema_io::{
    ClassId, ClassScores, Entity, FrameGroundTruth, FramePrediction, GtTriplet, QueryPrediction,
};
use tcdsg::synth::{generate, random_script, ScriptShape, SynthConfig, SynthOutput};

pub fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).expect("valid test box")
}

/// Synth config with a random script of the given shape.
pub fn synth_config(seed: u64, frames: u32, shape: ScriptShape) -> SynthConfig {
    let mut cfg = SynthConfig {
        seed,
        frames,
        ..SynthConfig::default()
    };
    cfg.script = random_script(&cfg, &shape).expect("valid script shape");
    cfg
}

pub fn synth(cfg: &SynthConfig) -> SynthOutput {
    generate(cfg).expect("valid synth config")
}

pub fn one_hot(len: usize, hot: usize) -> Vec<f64> {
    (0..len).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
}

/// A query with one-hot distributions over `classes` foreground entity
/// classes (plus background) and `relations` relations.
pub fn query(
    q: u32,
    classes: usize,
    relations: usize,
    labels: (ClassId, ClassId, ClassId),
    sub: BBox,
    obj: BBox,
) -> QueryPrediction {
    QueryPrediction {
        query: q,
        scores: ClassScores::Full {
            subject: one_hot(classes + 1, labels.0 as usize),
            object: one_hot(classes + 1, labels.1 as usize),
            relation: one_hot(relations, labels.2 as usize),
        },
        subject_box: sub,
        object_box: Some(obj),
        union_box: None,
    }
}

pub fn triplet(
    sub: (u64, ClassId, BBox),
    obj: Option<(u64, ClassId, BBox)>,
    relation: ClassId,
) -> GtTriplet {
    GtTriplet {
        subject: Entity {
            id: Some(sub.0),
            class: sub.1,
            bbox: sub.2,
        },
        object: obj.map(|(id, class, bbox)| Entity {
            id: Some(id),
            class,
            bbox,
        }),
        relation,
    }
}

pub fn gt_frame(video: &str, f: u32, triplets: Vec<GtTriplet>) -> FrameGroundTruth {
    FrameGroundTruth {
        video_id: video.into(),
        frame_idx: f,
        width: 640,
        height: 480,
        triplets,
    }
}

pub fn pred_frame(video: &str, f: u32, predictions: Vec<QueryPrediction>) -> FramePrediction {
    FramePrediction {
        video_id: video.into(),
        frame_idx: f,
        predictions,
    }
}

/// Minimum total cost over all injective maps from columns to rows,
/// by enumeration. Returns the cost and, per column, the chosen row.
pub fn exhaustive_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    fn go(
        cost: &[Vec<f64>],
        col: usize,
        used: &mut Vec<bool>,
        acc: f64,
        pick: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        let cols = cost.first().map_or(0, Vec::len);
        if col == cols {
            if acc < best.0 {
                *best = (acc, pick.clone());
            }
            return;
        }
        for r in 0..cost.len() {
            if !used[r] {
                used[r] = true;
                pick.push(r);
                go(cost, col + 1, used, acc + cost[r][col], pick, best);
                pick.pop();
                used[r] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    go(
        cost,
        0,
        &mut vec![false; cost.len()],
        0.0,
        &mut Vec::new(),
        &mut best,
    );
    best
}

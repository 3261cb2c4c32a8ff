//! Instance ids for detections that lack them, inferred from box overlap
//! with the previous frame.

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::schema_io::{ClassId, FrameGroundTruth, InstanceId};

pub const DEFAULT_IOU_THRESH: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Subject,
    Object,
}

/// One distinct entity of a frame. Entities with equal role, class and box
/// are the same detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub role: Role,
    pub class: ClassId,
    pub bbox: BBox,
}

fn detections(frame: &FrameGroundTruth) -> Vec<Detection> {
    let mut out: Vec<Detection> = Vec::new();
    let mut push = |d: Detection| {
        if !out.contains(&d) {
            out.push(d);
        }
    };
    for t in &frame.triplets {
        push(Detection {
            role: Role::Subject,
            class: t.subject.class,
            bbox: t.subject.bbox,
        });
        if let Some(o) = &t.object {
            push(Detection {
                role: Role::Object,
                class: o.class,
                bbox: o.bbox,
            });
        }
    }
    out
}

/// Greedy highest-IoU matching of `current` against `previous`, restricted
/// to equal role and class and IoU >= `thresh`. Ties go to the earlier
/// previous detection, then the earlier current one. Returns, per current
/// detection, the matched previous index.
pub fn match_detections(
    previous: &[Detection],
    current: &[Detection],
    thresh: f64,
) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in previous.iter().enumerate() {
        for (j, c) in current.iter().enumerate() {
            if p.role == c.role && p.class == c.class {
                let v = iou(&p.bbox, &c.bbox);
                if v >= thresh {
                    pairs.push((v, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut prev_used = vec![false; previous.len()];
    let mut out = vec![None; current.len()];
    for (_, i, j) in pairs {
        if !prev_used[i] && out[j].is_none() {
            prev_used[i] = true;
            out[j] = Some(i);
        }
    }
    out
}

/// Assigns ids to one video's frames, replacing any existing ids. Fresh ids
/// count up from `first_id`; returns the frames and the next unused id.
///
/// Only the immediately preceding frame of the stream is consulted, so an
/// entity that disappears for a frame comes back with a new id.
pub fn assign_ids_video(
    frames: &[FrameGroundTruth],
    thresh: f64,
    first_id: InstanceId,
) -> Result<(Vec<FrameGroundTruth>, InstanceId)> {
    if !(0.0..=1.0).contains(&thresh) || thresh == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold {thresh} outside (0, 1]"
        )));
    }
    let mut next = first_id;
    let mut previous: Vec<(Detection, InstanceId)> = Vec::new();
    let mut out = Vec::with_capacity(frames.len());
    for (n, frame) in frames.iter().enumerate() {
        if n > 0 {
            let p = &frames[n - 1];
            if p.video_id != frame.video_id || p.frame_idx >= frame.frame_idx {
                return Err(Error::validation(
                    format!("{}@{}", frame.video_id, frame.frame_idx),
                    "frames must be one video in increasing frame order",
                ));
            }
        }
        let current = detections(frame);
        let prev_dets: Vec<Detection> = previous.iter().map(|(d, _)| *d).collect();
        let matched = match_detections(&prev_dets, &current, thresh);
        let ids: Vec<InstanceId> = matched
            .iter()
            .map(|m| match m {
                Some(i) => previous[*i].1,
                None => {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        let id_of = |role: Role, class: ClassId, bbox: BBox| {
            let d = Detection { role, class, bbox };
            ids[current
                .iter()
                .position(|c| *c == d)
                .expect("every entity is a detection")]
        };
        let mut labeled = frame.clone();
        for t in &mut labeled.triplets {
            t.subject.id = Some(id_of(Role::Subject, t.subject.class, t.subject.bbox));
            if let Some(o) = &mut t.object {
                o.id = Some(id_of(Role::Object, o.class, o.bbox));
            }
        }
        out.push(labeled);
        previous = current.into_iter().zip(ids).collect();
    }
    Ok((out, next))
}

/// Assigns ids to a stream of videos, each video contiguous and sorted.
/// Ids are unique across the whole stream.
pub fn assign_ids(frames: &[FrameGroundTruth], thresh: f64) -> Result<Vec<FrameGroundTruth>> {
    let mut out = Vec::with_capacity(frames.len());
    let mut next = 0;
    for video in frames.chunk_by(|a, b| a.video_id == b.video_id) {
        let (labeled, n) = assign_ids_video(video, thresh, next)?;
        out.extend(labeled);
        next = n;
    }
    Ok(out)
}

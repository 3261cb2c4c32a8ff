//! Seeded synthetic videos: ground truth with known tracklets, plus
//! one-hot oracle predictions with optional box jitter, label flips and
//! dropout.
//!
//! Agent `i` of `A` lives in the vertical lane `x in [i/A, (i+1)/A]` and
//! bounces inside it, moving at most 0.01 per frame, so boxes of one agent
//! overlap with IoU well above 0.5 on successive frames and boxes of
//! different agents never overlap.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Interval};
use crate::schema_io::{
    ClassId, ClassScores, Entity, FrameGroundTruth, FramePrediction, GtTriplet, QueryId,
    QueryPrediction, RelationClass, RelationVocab, Tracklet, TripletLabel,
};

const BOX_HEIGHT: f64 = 0.2;
const BOX_LANE_FRACTION: f64 = 0.6;
const MAX_SPEED: f64 = 0.01;

const TAG_MOTION: u64 = 1;
const TAG_JITTER_SUBJECT: u64 = 2;
const TAG_JITTER_OBJECT: u64 = 3;
const TAG_FLIP: u64 = 4;
const TAG_DROP: u64 = 5;
const TAG_SCRIPT: u64 = 6;

/// One scripted relation: `subject` (and `object`, unless objectless)
/// hold `relation` on frames `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub subject: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<u32>,
    pub relation: ClassId,
    pub start: u32,
    pub end: u32,
}

impl ScriptEntry {
    fn key(&self) -> (u32, Option<u32>, ClassId) {
        (self.subject, self.object, self.relation)
    }

    fn active(&self, frame: u32) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Defaults to `synth-<seed>`.
    pub video_id: Option<String>,
    pub frames: u32,
    pub agents: u32,
    pub n_queries: u32,
    /// Size of both the subject and the object class space.
    pub entity_classes: u32,
    pub relations: u32,
    /// The last `objectless_relations` relation classes take no object.
    pub objectless_relations: u32,
    pub script: Vec<ScriptEntry>,
    pub jitter: f64,
    pub flip: f64,
    pub drop: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            video_id: None,
            frames: 50,
            agents: 3,
            n_queries: 10,
            entity_classes: 2,
            relations: 4,
            objectless_relations: 1,
            script: Vec::new(),
            jitter: 0.0,
            flip: 0.0,
            drop: 0.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub gt: Vec<FrameGroundTruth>,
    pub preds: Vec<FramePrediction>,
    pub truth: Vec<Tracklet>,
    pub vocab: RelationVocab,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one (seed, frame, entity, purpose) cell.
fn cell_rng(seed: u64, frame: u64, entity: u64, tag: u64) -> ChaCha8Rng {
    let h = [frame, entity, tag]
        .iter()
        .fold(splitmix(seed), |h, &x| splitmix(h ^ x));
    ChaCha8Rng::seed_from_u64(h)
}

/// Triangle wave with period 2 and range [0, 1].
fn bounce(u: f64) -> f64 {
    let r = u.rem_euclid(2.0);
    if r <= 1.0 {
        r
    } else {
        2.0 - r
    }
}

impl SynthConfig {
    pub fn video_id(&self) -> String {
        self.video_id
            .clone()
            .unwrap_or_else(|| format!("synth-{}", self.seed))
    }

    pub fn is_objectless(&self, relation: ClassId) -> bool {
        relation < self.relations && relation >= self.relations - self.objectless_relations
    }

    pub fn vocab(&self) -> RelationVocab {
        let names = (0..self.entity_classes)
            .map(|c| format!("class{c}"))
            .collect::<Vec<_>>();
        RelationVocab {
            subject_classes: names.clone(),
            object_classes: names,
            relation_classes: (0..self.relations)
                .map(|r| RelationClass {
                    name: format!("rel{r}"),
                    objectless: self.is_objectless(r),
                })
                .collect(),
        }
    }

    pub fn agent_class(&self, agent: u32) -> ClassId {
        agent % self.entity_classes
    }

    /// True box of `agent` at `frame`.
    pub fn agent_box(&self, agent: u32, frame: u32) -> BBox {
        let lane = 1.0 / f64::from(self.agents);
        let w = BOX_LANE_FRACTION * lane;
        let range_x = lane - w;
        let range_y = 1.0 - BOX_HEIGHT;
        let mut rng = cell_rng(self.seed, 0, u64::from(agent), TAG_MOTION);
        let vy = rng.random_range(0.2 * MAX_SPEED..=MAX_SPEED);
        let vx = rng.random_range(0.0..=MAX_SPEED.min(range_x / 20.0));
        let (py, px) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let t = f64::from(frame);
        let x1 = f64::from(agent) * lane + range_x * bounce(px + vx * t / range_x);
        let y1 = range_y * bounce(py + vy * t / range_y);
        BBox::from_corners_clamped(x1, y1, x1 + w, y1 + BOX_HEIGHT)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frames == 0 || self.agents == 0 || self.n_queries == 0 {
            return bad("frames, agents and queries must be positive".into());
        }
        if self.entity_classes == 0
            || self.relations == 0
            || self.objectless_relations > self.relations
        {
            return bad("need at least one entity class and one relation, and no more objectless relations than relations".into());
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!(
                "jitter {} must be finite and non-negative",
                self.jitter
            ));
        }
        for (name, p) in [("flip", self.flip), ("drop", self.drop)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be positive".into());
        }
        for (i, e) in self.script.iter().enumerate() {
            let at = |m: &str| Err(Error::InvalidArgument(format!("script entry {i}: {m}")));
            if e.start > e.end || e.end >= self.frames {
                return at(&format!(
                    "interval [{}, {}] outside [0, {})",
                    e.start, e.end, self.frames
                ));
            }
            if e.subject >= self.agents || e.object.is_some_and(|o| o >= self.agents) {
                return at("agent index out of range");
            }
            if e.object == Some(e.subject) {
                return at("subject and object are the same agent");
            }
            if e.relation >= self.relations {
                return at(&format!("relation {} out of range", e.relation));
            }
            if self.is_objectless(e.relation) != e.object.is_none() {
                return at("an object must be given exactly for relations that are not objectless");
            }
        }
        let mut by_key: HashMap<_, Vec<&ScriptEntry>> = HashMap::new();
        for e in &self.script {
            by_key.entry(e.key()).or_default().push(e);
        }
        for (key, mut entries) in by_key {
            entries.sort_by_key(|e| e.start);
            for w in entries.windows(2) {
                if w[0].end + 1 >= w[1].start {
                    return Err(Error::InvalidArgument(format!(
                        "script entries for {key:?} at [{}, {}] and [{}, {}] overlap or touch",
                        w[0].start, w[0].end, w[1].start, w[1].end
                    )));
                }
            }
        }
        Ok(())
    }

    /// Query of every script entry. A recurring key keeps its query; a new
    /// key takes the lowest query no other key has used, falling back to
    /// the lowest free query. A query is free one frame after its last use.
    pub fn allocate_queries(&self) -> Result<Vec<QueryId>> {
        let mut order: Vec<usize> = (0..self.script.len()).collect();
        order.sort_by_key(|&i| (self.script[i].start, i));
        let nq = self.n_queries as usize;
        let mut busy_until: Vec<Option<u32>> = vec![None; nq];
        let mut owner: Vec<bool> = vec![false; nq];
        let mut key_query: HashMap<_, usize> = HashMap::new();
        let mut out = vec![0; self.script.len()];
        for i in order {
            let e = &self.script[i];
            let free = |q: usize| busy_until[q].is_none_or(|end| end + 1 < e.start);
            let q = key_query
                .get(&e.key())
                .copied()
                .filter(|&q| free(q))
                .or_else(|| (0..nq).find(|&q| !owner[q] && free(q)))
                .or_else(|| (0..nq).find(|&q| free(q)))
                .ok_or_else(|| Error::Infeasible {
                    context: format!("synth script at frame {}", e.start),
                    gt: self.script.iter().filter(|o| o.active(e.start)).count(),
                    queries: nq,
                })?;
            busy_until[q] = Some(e.end);
            owner[q] = true;
            key_query.entry(e.key()).or_insert(q);
            out[i] = q as QueryId;
        }
        Ok(out)
    }

    fn jittered(&self, b: BBox, frame: u32, entry: usize, tag: u64) -> BBox {
        if self.jitter == 0.0 {
            return b;
        }
        let mut rng = cell_rng(self.seed, u64::from(frame), entry as u64, tag);
        let mut z = || self.jitter * rng.sample::<f64, _>(StandardNormal);
        BBox::from_corners_clamped(b.x1() + z(), b.y1() + z(), b.x2() + z(), b.y2() + z())
    }

    fn predicted_relation(&self, relation: ClassId, frame: u32, entry: usize) -> ClassId {
        if self.flip == 0.0 {
            return relation;
        }
        let mut rng = cell_rng(self.seed, u64::from(frame), entry as u64, TAG_FLIP);
        if rng.random::<f64>() >= self.flip {
            return relation;
        }
        let objectless = self.is_objectless(relation);
        let others: Vec<ClassId> = (0..self.relations)
            .filter(|&r| r != relation && self.is_objectless(r) == objectless)
            .collect();
        if others.is_empty() {
            relation
        } else {
            others[rng.random_range(0..others.len())]
        }
    }

    fn dropped(&self, frame: u32, entry: usize) -> bool {
        self.drop > 0.0
            && cell_rng(self.seed, u64::from(frame), entry as u64, TAG_DROP).random::<f64>()
                < self.drop
    }

    fn one_hot(len: u32, hot: u32) -> Vec<f64> {
        (0..len).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
    }

    fn background(&self, query: QueryId) -> QueryPrediction {
        let c = self.entity_classes;
        let whole = BBox::from_corners_clamped(0.0, 0.0, 1.0, 1.0);
        QueryPrediction {
            query,
            scores: ClassScores::Full {
                subject: Self::one_hot(c + 1, c),
                object: Self::one_hot(c + 1, c),
                relation: vec![1.0 / f64::from(self.relations); self.relations as usize],
            },
            subject_box: whole,
            object_box: Some(whole),
            union_box: None,
        }
    }

    fn label(&self, e: &ScriptEntry) -> TripletLabel {
        TripletLabel {
            subject: self.agent_class(e.subject),
            object: e.object.map(|o| self.agent_class(o)),
            relation: e.relation,
        }
    }
}

/// Generates one video.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let queries = config.allocate_queries()?;
    let video_id = config.video_id();
    let c = config.entity_classes;

    let mut gt = Vec::with_capacity(config.frames as usize);
    let mut preds = Vec::with_capacity(config.frames as usize);
    for f in 0..config.frames {
        let mut triplets = Vec::new();
        // `None` marks a dropped prediction
        let mut by_query: HashMap<QueryId, Option<QueryPrediction>> = HashMap::new();
        for (i, e) in config
            .script
            .iter()
            .enumerate()
            .filter(|(_, e)| e.active(f))
        {
            let entity = |agent: u32| Entity {
                id: Some(u64::from(agent)),
                class: config.agent_class(agent),
                bbox: config.agent_box(agent, f),
            };
            let subject = entity(e.subject);
            let object = e.object.map(entity);
            triplets.push(GtTriplet {
                subject,
                object,
                relation: e.relation,
            });

            let q = queries[i];
            if config.dropped(f, i) {
                by_query.insert(q, None);
                continue;
            }
            let sub_box = config.jittered(subject.bbox, f, i, TAG_JITTER_SUBJECT);
            let obj_box = object.map(|o| config.jittered(o.bbox, f, i, TAG_JITTER_OBJECT));
            by_query.insert(
                q,
                Some(QueryPrediction {
                    query: q,
                    scores: ClassScores::Full {
                        subject: SynthConfig::one_hot(c + 1, subject.class),
                        object: SynthConfig::one_hot(c + 1, object.map_or(c, |o| o.class)),
                        relation: SynthConfig::one_hot(
                            config.relations,
                            config.predicted_relation(e.relation, f, i),
                        ),
                    },
                    subject_box: sub_box,
                    object_box: Some(obj_box.unwrap_or(sub_box)),
                    union_box: None,
                }),
            );
        }
        gt.push(FrameGroundTruth {
            video_id: video_id.clone(),
            frame_idx: f,
            width: config.width,
            height: config.height,
            triplets,
        });
        let predictions = (0..config.n_queries)
            .filter_map(|q| {
                by_query
                    .remove(&q)
                    .unwrap_or_else(|| Some(config.background(q)))
            })
            .collect();
        preds.push(FramePrediction {
            video_id: video_id.clone(),
            frame_idx: f,
            predictions,
        });
    }

    let mut truth: Vec<Tracklet> = config
        .script
        .iter()
        .zip(&queries)
        .map(|(e, &q)| {
            let frames = e.start..=e.end;
            Ok(Tracklet {
                video_id: video_id.clone(),
                triplet: config.label(e),
                interval: Interval::new(e.start, e.end)?,
                subject_boxes: frames
                    .clone()
                    .map(|f| config.agent_box(e.subject, f))
                    .collect(),
                object_boxes: e
                    .object
                    .map(|o| frames.map(|f| config.agent_box(o, f)).collect()),
                score: 1.0,
                query: Some(q),
            })
        })
        .collect::<Result<_>>()?;
    truth.sort_by_key(|t| (t.interval.start(), t.query));

    Ok(SynthOutput {
        gt,
        preds,
        truth,
        vocab: config.vocab(),
    })
}

/// Shape of a randomly drawn script.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptShape {
    /// Upper bound on simultaneously active entries.
    pub lanes: u32,
    /// Number of distinct (subject, object, relation) keys to draw from.
    pub keys: u32,
    pub min_len: u32,
    pub max_len: u32,
}

impl Default for ScriptShape {
    fn default() -> Self {
        Self {
            lanes: 2,
            keys: 4,
            min_len: 3,
            max_len: 12,
        }
    }
}

/// Draws a valid script from `config.seed`. Each lane alternates active
/// stretches of `min_len..=max_len` frames with gaps of 1 to 3 frames.
pub fn random_script(config: &SynthConfig, shape: &ScriptShape) -> Result<Vec<ScriptEntry>> {
    if shape.lanes == 0 || shape.keys == 0 || shape.min_len == 0 || shape.min_len > shape.max_len {
        return Err(Error::InvalidArgument(format!(
            "invalid script shape {shape:?}"
        )));
    }
    let with_object = config.relations - config.objectless_relations;
    if config.agents < 2 && config.objectless_relations == 0 {
        return Err(Error::InvalidArgument(
            "one agent needs an objectless relation".into(),
        ));
    }
    let mut rng = cell_rng(config.seed, u64::MAX, 0, TAG_SCRIPT);
    let mut keys: Vec<(u32, Option<u32>, ClassId)> = Vec::new();
    for _ in 0..shape.keys.saturating_mul(50) {
        if keys.len() == shape.keys as usize {
            break;
        }
        let subject = rng.random_range(0..config.agents);
        let objectless = config.agents < 2
            || with_object == 0
            || (config.objectless_relations > 0
                && rng.random_bool(
                    f64::from(config.objectless_relations) / f64::from(config.relations),
                ));
        let key = if objectless {
            (
                subject,
                None,
                with_object + rng.random_range(0..config.objectless_relations),
            )
        } else {
            let mut object = rng.random_range(0..config.agents - 1);
            if object >= subject {
                object += 1;
            }
            (subject, Some(object), rng.random_range(0..with_object))
        };
        if !keys.contains(&key) {
            keys.push(key);
        }
    }

    let mut script: Vec<ScriptEntry> = Vec::new();
    for _ in 0..shape.lanes {
        let mut t = rng.random_range(0..3u32);
        while t < config.frames {
            let len = rng.random_range(shape.min_len..=shape.max_len);
            let end = (t + len - 1).min(config.frames - 1);
            let clear = |k: &(u32, Option<u32>, ClassId), s: &[ScriptEntry]| {
                s.iter()
                    .all(|e| e.key() != *k || e.end + 1 < t || end + 1 < e.start)
            };
            for _ in 0..keys.len() {
                let k = keys[rng.random_range(0..keys.len())];
                if clear(&k, &script) {
                    script.push(ScriptEntry {
                        subject: k.0,
                        object: k.1,
                        relation: k.2,
                        start: t,
                        end,
                    });
                    break;
                }
            }
            t = end + 1 + rng.random_range(1..=3);
        }
    }
    script.sort_by_key(|e| (e.start, e.end, e.subject, e.object, e.relation));
    Ok(script)
}

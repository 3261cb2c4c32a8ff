//! Per-frame Hungarian matching with cross-frame triplet → query locking.
//!
//! The first time a ground-truth triplet is matched, its query is recorded in
//! a per-video [`TripletRegistry`]. In later frames that triplet is assigned
//! to the recorded query without consulting the solver, and a large penalty
//! is added to the locked query rows so the solver steers new triplets away
//! from them. Penalized rows stay in the solver: under query scarcity a new
//! triplet may still land on one, which is reported as a diagnostic.

mod hungarian;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use hungarian::{assignment_cost, hungarian};

use crate::cost_matrix::{build_cost_matrix, CostWeights};
use crate::error::{Error, Result};
use crate::schema_io::{ClassId, FrameGroundTruth, FramePrediction, InstanceId, QueryId};

/// Penalty added to locked query rows.
pub const DEFAULT_PENALTY: f64 = 1e6;

/// Identity of a ground-truth triplet within one video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub subject_id: InstanceId,
    /// `None` for objectless relations.
    pub object_id: Option<InstanceId>,
    pub relation: ClassId,
}

/// Insert-only map from triplet identity to the query it was first matched to.
#[derive(Clone, Debug, Default)]
pub struct TripletRegistry {
    map: HashMap<TripletKey, QueryId>,
    locked: BTreeSet<QueryId>,
}

impl TripletRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &TripletKey) -> Option<QueryId> {
        self.map.get(key).copied()
    }

    /// Records `key → query` unless `key` is already present; returns the
    /// query the key is locked to.
    pub fn register(&mut self, key: TripletKey, query: QueryId) -> QueryId {
        let q = *self.map.entry(key).or_insert(query);
        self.locked.insert(q);
        q
    }

    /// Queries that hold at least one triplet.
    pub fn locked_queries(&self) -> &BTreeSet<QueryId> {
        &self.locked
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Which query rows receive the penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScope {
    /// Only rows whose triplet is present (and force-assigned) in the frame.
    Forced,
    /// Every query held by the registry, present or not.
    #[default]
    Registered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub weights: CostWeights,
    pub penalty: f64,
    pub penalty_scope: PenaltyScope,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            penalty: DEFAULT_PENALTY,
            penalty_scope: PenaltyScope::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.penalty.is_finite() && self.penalty > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty must be positive and finite, got {}",
                self.penalty
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    #[serde(rename = "q")]
    pub query: QueryId,
    pub gt: usize,
    /// Came from the registry rather than the solver.
    pub forced: bool,
}

/// Corner cases that only arise when queries are scarce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchDiagnostic {
    /// Two present triplets are locked to one query; the cheaper stays forced,
    /// the other goes back to the solver.
    Collision {
        query: QueryId,
        kept_gt: usize,
        returned_gt: usize,
    },
    /// The locked query is absent from this frame's predictions.
    MissingQuery { query: QueryId, gt: usize },
    /// The solver placed a triplet on a query already holding a forced one.
    SharedQuery { query: QueryId, gt: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub video_id: String,
    pub frame_idx: u32,
    /// Sorted by ground-truth index.
    #[serde(rename = "assign")]
    pub assignments: Vec<Assignment>,
    /// Queries supervised as background, ascending.
    #[serde(rename = "background_queries")]
    pub unmatched_queries: Vec<QueryId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<MatchDiagnostic>,
}

impl MatchResult {
    pub fn forced(&self) -> impl Iterator<Item = &Assignment> {
        self.assignments.iter().filter(|a| a.forced)
    }

    pub fn query_of(&self, gt: usize) -> Option<QueryId> {
        self.assignments
            .iter()
            .find(|a| a.gt == gt)
            .map(|a| a.query)
    }
}

/// Matches one frame, consulting and extending `registry`.
pub fn match_frame(
    preds: &FramePrediction,
    gt: &FrameGroundTruth,
    config: &MatchConfig,
    registry: &mut TripletRegistry,
) -> Result<MatchResult> {
    let costs = build_cost_matrix(preds, gt, &config.weights)?;
    let context = || format!("video {:?} frame {}", gt.video_id, gt.frame_idx);
    let keys = gt
        .triplets
        .iter()
        .enumerate()
        .map(|(j, t)| {
            t.key().ok_or_else(|| {
                Error::validation(
                    context(),
                    format!("triplet {j} lacks instance ids; run pseudo-label first"),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let row_of: HashMap<QueryId, usize> = preds
        .predictions
        .iter()
        .enumerate()
        .map(|(r, p)| (p.query, r))
        .collect();
    let query_at = |r: usize| preds.predictions[r].query;

    let mut diagnostics = Vec::new();
    let mut pool = Vec::new();
    let mut forced_by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (j, key) in keys.iter().enumerate() {
        match registry.get(key) {
            Some(q) => match row_of.get(&q) {
                Some(&r) => forced_by_row.entry(r).or_default().push(j),
                None => {
                    diagnostics.push(MatchDiagnostic::MissingQuery { query: q, gt: j });
                    pool.push(j);
                }
            },
            None => pool.push(j),
        }
    }

    let mut assignments = Vec::with_capacity(keys.len());
    for (&r, gts) in &forced_by_row {
        let kept = *gts
            .iter()
            .min_by(|&&a, &&b| costs.get(r, a).total_cmp(&costs.get(r, b)).then(a.cmp(&b)))
            .expect("non-empty group");
        for &j in gts.iter().filter(|&&j| j != kept) {
            diagnostics.push(MatchDiagnostic::Collision {
                query: query_at(r),
                kept_gt: kept,
                returned_gt: j,
            });
            pool.push(j);
        }
        assignments.push(Assignment {
            query: query_at(r),
            gt: kept,
            forced: true,
        });
    }
    pool.sort_unstable();

    let mut penalized: BTreeSet<usize> = forced_by_row.keys().copied().collect();
    if config.penalty_scope == PenaltyScope::Registered {
        penalized.extend(
            registry
                .locked_queries()
                .iter()
                .filter_map(|q| row_of.get(q).copied()),
        );
    }

    if !pool.is_empty() {
        let mut reduced = costs.select_cols(&pool);
        for &r in &penalized {
            reduced.add_to_row(r, config.penalty);
        }
        let solved = hungarian(&reduced).map_err(|_| Error::Infeasible {
            context: context(),
            gt: keys.len(),
            queries: preds.predictions.len(),
        })?;
        for (r, c) in solved {
            let j = pool[c];
            let q = query_at(r);
            if forced_by_row.contains_key(&r) {
                diagnostics.push(MatchDiagnostic::SharedQuery { query: q, gt: j });
            }
            registry.register(keys[j], q);
            assignments.push(Assignment {
                query: q,
                gt: j,
                forced: false,
            });
        }
    }
    assignments.sort_by_key(|a| a.gt);

    let used: BTreeSet<QueryId> = assignments.iter().map(|a| a.query).collect();
    let mut unmatched_queries: Vec<QueryId> = preds
        .predictions
        .iter()
        .map(|p| p.query)
        .filter(|q| !used.contains(q))
        .collect();
    unmatched_queries.sort_unstable();

    Ok(MatchResult {
        video_id: gt.video_id.clone(),
        frame_idx: gt.frame_idx,
        assignments,
        unmatched_queries,
        diagnostics,
    })
}

/// Checks that prediction and ground-truth frames pair up one to one.
pub fn check_alignment(preds: &[FramePrediction], gts: &[FrameGroundTruth]) -> Result<()> {
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.video_id != g.video_id || p.frame_idx != g.frame_idx {
            return Err(Error::Alignment(format!(
                "record {i}: predictions at {:?}/{} but ground truth at {:?}/{}",
                p.video_id, p.frame_idx, g.video_id, g.frame_idx
            )));
        }
    }
    if preds.len() != gts.len() {
        let (which, rec) = if preds.len() > gts.len() {
            (
                "predictions",
                (
                    preds[gts.len()].video_id.as_str(),
                    preds[gts.len()].frame_idx,
                ),
            )
        } else {
            (
                "ground truth",
                (
                    gts[preds.len()].video_id.as_str(),
                    gts[preds.len()].frame_idx,
                ),
            )
        };
        return Err(Error::Alignment(format!(
            "{which} continue at {:?}/{} after the other stream ended",
            rec.0, rec.1
        )));
    }
    Ok(())
}

/// Matches aligned streams frame by frame. The registry is reset whenever
/// the video id changes; frames must already be in index order.
pub fn match_video(
    preds: &[FramePrediction],
    gts: &[FrameGroundTruth],
    config: &MatchConfig,
) -> Result<Vec<MatchResult>> {
    config.validate()?;
    check_alignment(preds, gts)?;
    let mut registry = TripletRegistry::new();
    let mut results = Vec::with_capacity(gts.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if i > 0 {
            let prev = &gts[i - 1];
            if prev.video_id != g.video_id {
                registry = TripletRegistry::new();
            } else if prev.frame_idx >= g.frame_idx {
                return Err(Error::Alignment(format!(
                    "video {:?}: frame {} follows frame {}",
                    g.video_id, g.frame_idx, prev.frame_idx
                )));
            }
        }
        results.push(match_frame(p, g, config, &mut registry)?);
    }
    Ok(results)
}

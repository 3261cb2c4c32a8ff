//! Weighted query × ground-truth matching costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_l1, giou, union_box, BBox};
use crate::schema_io::{ClassScores, FrameGroundTruth, FramePrediction, QueryPrediction};

/// Weights of the six matching terms and of the two box-distance components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_obj: f64,
    pub w_sub: f64,
    pub w_rel: f64,
    pub w_obj_box: f64,
    pub w_sub_box: f64,
    pub w_union_box: f64,
    pub box_l1_weight: f64,
    pub box_giou_weight: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_obj: 1.0,
            w_sub: 1.0,
            w_rel: 1.0,
            w_obj_box: 1.0,
            w_sub_box: 1.0,
            w_union_box: 1.0,
            box_l1_weight: 5.0,
            box_giou_weight: 2.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            w_obj: 0.0,
            w_sub: 0.0,
            w_rel: 0.0,
            w_obj_box: 0.0,
            w_sub_box: 0.0,
            w_union_box: 0.0,
            box_l1_weight: 0.0,
            box_giou_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_obj,
            self.w_sub,
            self.w_rel,
            self.w_obj_box,
            self.w_sub_box,
            self.w_union_box,
            self.box_l1_weight,
            self.box_giou_weight,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cost weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix; rows are predictions, columns ground-truth triplets.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged cost matrix".into()));
        }
        let n = rows.len();
        Self::from_vec(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "cost matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub(crate) fn add_to_row(&mut self, row: usize, amount: f64) {
        let cols = self.cols;
        for v in &mut self.values[row * cols..(row + 1) * cols] {
            *v += amount;
        }
    }

    /// Keeps the given columns, in order.
    pub(crate) fn select_cols(&self, cols: &[usize]) -> CostMatrix {
        let mut values = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            values.extend(cols.iter().map(|&c| row[c]));
        }
        CostMatrix {
            rows: self.rows,
            cols: cols.len(),
            values,
        }
    }
}

/// Negative probability of the ground-truth class.
pub fn class_cost(probs: &[f64], gt_class: u32) -> Result<f64> {
    probs.get(gt_class as usize).map(|p| -p).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "class {gt_class} out of range for a {}-way distribution",
            probs.len()
        ))
    })
}

/// `box_l1_weight * L1(cxcywh) + box_giou_weight * (1 - GIoU)`
pub fn box_cost(pred: &BBox, gt: &BBox, weights: &CostWeights) -> f64 {
    weights.box_l1_weight * box_l1(pred, gt) + weights.box_giou_weight * (1.0 - giou(pred, gt))
}

fn pair_cost(
    pred: &QueryPrediction,
    gt: &crate::schema_io::GtTriplet,
    weights: &CostWeights,
    context: &str,
) -> Result<f64> {
    let ClassScores::Full {
        subject,
        object,
        relation,
    } = &pred.scores
    else {
        return Err(Error::validation(
            context,
            format!(
                "query {} has top-1 scores; matching needs full distributions",
                pred.query
            ),
        ));
    };
    let wrap = |e: Error| Error::validation(context, e.to_string());
    let mut cost = weights.w_sub * class_cost(subject, gt.subject.class).map_err(wrap)?
        + weights.w_rel * class_cost(relation, gt.relation).map_err(wrap)?
        + weights.w_sub_box * box_cost(&pred.subject_box, &gt.subject.bbox, weights);
    if let Some(obj) = &gt.object {
        let pred_obj = pred.object_box.ok_or_else(|| {
            Error::validation(context, format!("query {} has no object box", pred.query))
        })?;
        let pred_union = pred
            .union_box
            .unwrap_or_else(|| union_box(&pred.subject_box, &pred_obj));
        let gt_union = union_box(&gt.subject.bbox, &obj.bbox);
        cost += weights.w_obj * class_cost(object, obj.class).map_err(wrap)?
            + weights.w_obj_box * box_cost(&pred_obj, &obj.bbox, weights)
            + weights.w_union_box * box_cost(&pred_union, &gt_union, weights);
    }
    Ok(cost)
}

/// Builds `C[i, j]` for prediction `i` (in the frame's prediction order) and
/// ground-truth triplet `j`. Objectless triplets contribute no object-class,
/// object-box or union-box terms.
pub fn build_cost_matrix(
    preds: &FramePrediction,
    gt: &FrameGroundTruth,
    weights: &CostWeights,
) -> Result<CostMatrix> {
    let context = format!("video {:?} frame {}", gt.video_id, gt.frame_idx);
    let (rows, cols) = (preds.predictions.len(), gt.triplets.len());
    if cols > rows {
        return Err(Error::Infeasible {
            context,
            gt: cols,
            queries: rows,
        });
    }
    let mut values = Vec::with_capacity(rows * cols);
    for p in &preds.predictions {
        for t in &gt.triplets {
            values.push(pair_cost(p, t, weights, &context)?);
        }
    }
    CostMatrix::from_vec(rows, cols, values)
}

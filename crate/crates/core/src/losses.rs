//! Reference values for every training-loss term, for parity checks against
//! external training code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_l1, giou, union_box, BBox};

/// Probabilities are clamped into `[SCORE_EPS, 1 - SCORE_EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_l: f64,
    pub lambda_o: f64,
    pub lambda_r: f64,
    pub lambda_cs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 2.0,
            lambda_l: 5.0,
            lambda_o: 1.0,
            lambda_r: 2.0,
            lambda_cs: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_g,
            self.lambda_l,
            self.lambda_o,
            self.lambda_r,
            self.lambda_cs,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub giou: f64,
    pub l1: f64,
    pub obj: f64,
    pub rel: f64,
    pub cs: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills `total` from the component terms.
    pub fn combine(giou: f64, l1: f64, obj: f64, rel: f64, cs: f64, w: &LossWeights) -> Self {
        let total = w.lambda_g * giou
            + w.lambda_l * l1
            + w.lambda_o * obj
            + w.lambda_r * rel
            + w.lambda_cs * cs;
        Self {
            giou,
            l1,
            obj,
            rel,
            cs,
            total,
        }
    }
}

pub fn giou_loss(pred: &BBox, gt: &BBox) -> f64 {
    1.0 - giou(pred, gt)
}

/// `-log softmax(logits)[gt_class]`, computed with a shifted log-sum-exp.
pub fn ce_loss(logits: &[f64], gt_class: usize) -> Result<f64> {
    let target = *logits.get(gt_class).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "class {gt_class} out of range for {} logits",
            logits.len()
        ))
    })?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok((lse - target).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    /// Number of scores that had to be clamped away from 0 or 1.
    pub clamped: usize,
}

/// Mean over classes of `-alpha * (1 - p_t)^gamma * ln(p_t)`, with `p_t = p`
/// for positive classes and `1 - p` otherwise.
pub fn focal_loss(scores: &[f64], targets: &[bool], alpha: f64, gamma: f64) -> Result<FocalLoss> {
    if scores.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if scores.is_empty() {
        return Ok(FocalLoss {
            value: 0.0,
            clamped: 0,
        });
    }
    let mut clamped = 0;
    let mut sum = 0.0;
    for (&p, &positive) in scores.iter().zip(targets) {
        let q = p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        if q != p {
            clamped += 1;
        }
        let pt = if positive { q } else { 1.0 - q };
        sum += -alpha * (1.0 - pt).powf(gamma) * pt.ln();
    }
    Ok(FocalLoss {
        value: sum / scores.len() as f64,
        clamped,
    })
}

/// A decoder feature vector with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature vector must be non-empty and finite".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine of vectors with dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Exponential running mean of features, one slot per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningClassMeans {
    momentum: f64,
    slots: Vec<Option<Vec<f64>>>,
}

impl RunningClassMeans {
    pub fn new(classes: usize, momentum: f64) -> Result<Self> {
        Self::from_slots(vec![None; classes], momentum)
    }

    pub fn from_slots(slots: Vec<Option<Vec<f64>>>, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "momentum {momentum} outside (0, 1)"
            )));
        }
        let dims: Vec<usize> = slots.iter().flatten().map(Vec::len).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::InvalidArgument(
                "class means differ in dimension".into(),
            ));
        }
        Ok(Self { momentum, slots })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn classes(&self) -> usize {
        self.slots.len()
    }

    pub fn mean(&self, class: usize) -> Option<&[f64]> {
        self.slots.get(class).and_then(|s| s.as_deref())
    }

    /// `mu <- m * mu + (1 - m) * v`, or `mu <- v` on the first observation.
    pub fn update(&mut self, class: usize, v: &FeatureVector) -> Result<()> {
        let classes = self.slots.len();
        let m = self.momentum;
        let dim = self.slots.iter().flatten().map(Vec::len).next();
        if dim.is_some_and(|d| d != v.0.len()) {
            return Err(Error::InvalidArgument(
                "feature dimension differs from the class means".into(),
            ));
        }
        let slot = self.slots.get_mut(class).ok_or_else(|| {
            Error::InvalidArgument(format!("class {class} out of range ({classes} classes)"))
        })?;
        match slot {
            Some(mu) => mu
                .iter_mut()
                .zip(v.values())
                .for_each(|(a, b)| *a = m * *a + (1.0 - m) * b),
            None => *slot = Some(v.0.clone()),
        }
        Ok(())
    }
}

/// Sign of the contrastive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsSign {
    /// `CS(v, mu_class) - mean CS(v, mu_other)`
    #[default]
    AsWritten,
    /// The negation, minimized by pulling `v` towards its own class mean.
    Flipped,
}

/// Cosine contrast of `v` against its class mean and the mean over the
/// other initialized class means.
pub fn contrastive_cs(
    v: &FeatureVector,
    class: usize,
    means: &RunningClassMeans,
    sign: CsSign,
) -> Result<f64> {
    if v.norm() == 0.0 {
        return Err(Error::InvalidArgument("zero-norm feature vector".into()));
    }
    let own = means
        .mean(class)
        .ok_or_else(|| Error::InvalidArgument(format!("class {class} has no running mean yet")))?;
    let same = cosine_similarity(v.values(), own)?;
    let others = (0..means.classes())
        .filter(|&c| c != class)
        .filter_map(|c| means.mean(c))
        .map(|mu| cosine_similarity(v.values(), mu))
        .collect::<Result<Vec<_>>>()?;
    if others.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no class other than {class} has a running mean"
        )));
    }
    let value = same - others.iter().sum::<f64>() / others.len() as f64;
    Ok(match sign {
        CsSign::AsWritten => value,
        CsSign::Flipped => -value,
    })
}

/// Network outputs of a query matched to a ground-truth triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedQuery {
    pub sub_logits: Vec<f64>,
    pub obj_logits: Vec<f64>,
    /// Per-relation scores in (0, 1).
    pub rel_scores: Vec<f64>,
    pub sub_box: BBox,
    #[serde(default)]
    pub obj_box: Option<BBox>,
    #[serde(default)]
    pub union_box: Option<BBox>,
    #[serde(default)]
    pub obj_feature: Option<FeatureVector>,
    #[serde(default)]
    pub rel_feature: Option<FeatureVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtTarget {
    pub sub_cls: usize,
    #[serde(default)]
    pub obj_cls: Option<usize>,
    pub rel: usize,
    pub sub_box: BBox,
    #[serde(default)]
    pub obj_box: Option<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: PredictedQuery,
    pub gt: GtTarget,
}

/// An unmatched query; both heads are supervised towards their last
/// (background) class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundQuery {
    pub sub_logits: Vec<f64>,
    pub obj_logits: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossInput {
    pub pairs: Vec<MatchedPair>,
    #[serde(default)]
    pub background: Vec<BackgroundQuery>,
}

/// Everything besides the pairs that the total loss depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub cs_sign: CsSign,
    pub momentum: f64,
    /// Running means per object class.
    pub object_means: Vec<Option<Vec<f64>>>,
    /// Running means per relation class.
    pub relation_means: Vec<Option<Vec<f64>>>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            cs_sign: CsSign::AsWritten,
            momentum: 0.9,
            object_means: Vec::new(),
            relation_means: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

fn box_terms(pred: &PredictedQuery, gt: &GtTarget, idx: usize) -> Result<(f64, f64)> {
    let mut g = giou_loss(&pred.sub_box, &gt.sub_box);
    let mut l = box_l1(&pred.sub_box, &gt.sub_box);
    if let Some(gt_obj) = &gt.obj_box {
        let pred_obj = pred.obj_box.ok_or_else(|| {
            Error::InvalidArgument(format!("pair {idx}: prediction lacks an object box"))
        })?;
        let pred_union = pred
            .union_box
            .unwrap_or_else(|| union_box(&pred.sub_box, &pred_obj));
        let gt_union = union_box(&gt.sub_box, gt_obj);
        g += giou_loss(&pred_obj, gt_obj) + giou_loss(&pred_union, &gt_union);
        l += box_l1(&pred_obj, gt_obj) + box_l1(&pred_union, &gt_union);
    }
    Ok((g, l))
}

/// Combined loss over matched pairs.
///
/// Box terms sum the subject, object and union components of a pair and
/// average over pairs. The classification term averages cross-entropy over
/// matched heads and background queries. Objectless targets (`obj_cls` and
/// `obj_box` absent) skip every object-related term.
pub fn total_loss(input: &LossInput, config: &LossConfig) -> Result<LossReport> {
    config.weights.validate()?;
    let mut diagnostics = Vec::new();
    let n = input.pairs.len();
    if n == 0 {
        diagnostics.push("no matched pairs; all terms are zero".to_owned());
        return Ok(LossReport {
            breakdown: LossBreakdown::default(),
            diagnostics,
        });
    }
    let object_means = RunningClassMeans::from_slots(config.object_means.clone(), config.momentum)?;
    let relation_means =
        RunningClassMeans::from_slots(config.relation_means.clone(), config.momentum)?;

    let (mut g_sum, mut l_sum, mut rel_sum) = (0.0, 0.0, 0.0);
    let (mut ce_sum, mut ce_count) = (0.0, 0usize);
    let mut cs_terms = Vec::new();
    let mut clamped = 0;
    for (i, MatchedPair { pred, gt }) in input.pairs.iter().enumerate() {
        if gt.obj_cls.is_some() != gt.obj_box.is_some() {
            return Err(Error::InvalidArgument(format!(
                "pair {i}: obj_cls and obj_box must be given together"
            )));
        }
        let (g, l) = box_terms(pred, gt, i)?;
        g_sum += g;
        l_sum += l;

        ce_sum += ce_loss(&pred.sub_logits, gt.sub_cls)?;
        ce_count += 1;
        if let Some(oc) = gt.obj_cls {
            ce_sum += ce_loss(&pred.obj_logits, oc)?;
            ce_count += 1;
        }

        let targets: Vec<bool> = (0..pred.rel_scores.len()).map(|c| c == gt.rel).collect();
        if gt.rel >= targets.len() {
            return Err(Error::InvalidArgument(format!(
                "pair {i}: relation {} out of range for {} scores",
                gt.rel,
                targets.len()
            )));
        }
        let focal = focal_loss(
            &pred.rel_scores,
            &targets,
            config.focal_alpha,
            config.focal_gamma,
        )?;
        clamped += focal.clamped;
        rel_sum += focal.value;

        let mut features = vec![(&pred.rel_feature, gt.rel, &relation_means, "relation")];
        if let Some(oc) = gt.obj_cls {
            features.push((&pred.obj_feature, oc, &object_means, "object"));
        }
        for (feature, class, means, what) in features {
            if let Some(v) = feature {
                match contrastive_cs(v, class, means, config.cs_sign) {
                    Ok(cs) => cs_terms.push(cs),
                    Err(e) => {
                        diagnostics.push(format!("pair {i}: {what} contrastive term skipped: {e}"))
                    }
                }
            }
        }
    }
    for (i, bg) in input.background.iter().enumerate() {
        let wrap = |e: Error| Error::InvalidArgument(format!("background {i}: {e}"));
        ce_sum += ce_loss(&bg.sub_logits, bg.sub_logits.len().saturating_sub(1)).map_err(wrap)?;
        ce_sum += ce_loss(&bg.obj_logits, bg.obj_logits.len().saturating_sub(1)).map_err(wrap)?;
        ce_count += 2;
    }
    if clamped > 0 {
        diagnostics.push(format!(
            "{clamped} relation scores clamped to [{SCORE_EPS}, 1 - {SCORE_EPS}]"
        ));
    }

    let nf = n as f64;
    let cs = if cs_terms.is_empty() {
        0.0
    } else {
        cs_terms.iter().sum::<f64>() / cs_terms.len() as f64
    };
    Ok(LossReport {
        breakdown: LossBreakdown::combine(
            g_sum / nf,
            l_sum / nf,
            ce_sum / ce_count as f64,
            rel_sum / nf,
            cs,
            &config.weights,
        ),
        diagnostics,
    })
}

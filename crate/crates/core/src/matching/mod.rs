//! Matching costs, optimal assignment and the hybrid one-to-one /
//! one-to-many set loss.

mod hungarian;

pub use hungarian::{brute_force_assign, hungarian_assign, Assignment, CostMatrix, BRUTE_FORCE_MAX_COLS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pad_target, Keypoint, Shape, ShapeKind};
use crate::model::{BranchVars, MatchCostKind, ModelConfig, PredictedShape, PredictionSet};
use crate::numeric::{focal_term, NumericError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("{cols} targets do not fit into {rows} prediction slots")]
    Capacity { rows: usize, cols: usize },
    #[error(
        "one-to-many branch needs K*|G| = {k}*{targets} = {} slots but T = {t}; raise T or lower K",
        k * targets
    )]
    OneToManyCapacity { k: usize, targets: usize, t: usize },
    #[error("brute-force assignment limited to {max} columns, got {cols}")]
    TooLarge { cols: usize, max: usize },
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Per-class binary focal loss of `probs` against the one-hot encoding of
/// `target`; [`ShapeKind::NoObject`] is the all-zero target.
pub fn focal_loss(probs: &[f64], target: ShapeKind, alpha: f64, gamma: f64) -> f64 {
    let positive = target.class_index();
    probs
        .iter()
        .enumerate()
        .map(|(c, &p)| focal_term(p, positive == Some(c), alpha, gamma))
        .sum()
}

/// Mean absolute coordinate difference of two index-aligned keypoint lists.
pub fn shape_loss(pred: &[Keypoint], target: &[Keypoint]) -> Result<f64, MatchError> {
    if pred.len() != target.len() {
        return Err(MatchError::Contract(format!(
            "shape_loss compares {} predicted keypoints with {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .flat_map(|(p, q)| [p.x - q.x, p.y - q.y])
        .map(f64::abs)
        .sum();
    Ok(s / (2 * pred.len()) as f64)
}

fn padded(target: &Shape, n: usize) -> Result<Vec<Keypoint>, MatchError> {
    if target.kind == ShapeKind::NoObject {
        return Err(MatchError::Contract("no-object shapes cannot be matching targets".into()));
    }
    pad_target(target, n).map_err(|e| MatchError::Contract(e.to_string()))
}

fn cost_from_parts(pred: &PredictedShape, target: &Shape, padded: &[Keypoint], config: &ModelConfig) -> Result<f64, MatchError> {
    let cls = match config.match_cost {
        MatchCostKind::NegFocal => -focal_loss(&pred.class_probs, target.kind, config.focal_alpha, config.focal_gamma),
        MatchCostKind::NegProb => {
            let c = target.kind.class_index().expect("real target");
            -pred.class_probs.get(c).copied().unwrap_or(0.0)
        }
    };
    Ok(cls + shape_loss(&pred.keypoints, padded)?)
}

/// Cost of explaining `target` with `pred`. The default form is the negated
/// focal loss of the target class plus the keypoint l1 against the target
/// stretched to the prediction's keypoint count.
pub fn match_cost(pred: &PredictedShape, target: &Shape, config: &ModelConfig) -> Result<f64, MatchError> {
    let p = padded(target, pred.keypoints.len())?;
    cost_from_parts(pred, target, &p, config)
}

/// Rows are prediction groups, columns are targets.
pub fn cost_matrix(preds: &PredictionSet, targets: &[Shape], config: &ModelConfig) -> Result<CostMatrix, MatchError> {
    let n = preds.groups.first().map_or(config.n, |g| g.keypoints.len());
    let padded: Vec<Vec<Keypoint>> = targets.iter().map(|t| padded(t, n)).collect::<Result<_, _>>()?;
    let mut data = Vec::with_capacity(preds.len() * targets.len());
    for g in &preds.groups {
        for (t, p) in targets.iter().zip(&padded) {
            data.push(cost_from_parts(g, t, p, config)?);
        }
    }
    CostMatrix::new(preds.len(), targets.len(), data)
}

/// Matches `targets` to prediction groups.
pub fn assign(preds: &PredictionSet, targets: &[Shape], config: &ModelConfig) -> Result<Assignment, MatchError> {
    if targets.len() > preds.len() {
        return Err(MatchError::Capacity {
            rows: preds.len(),
            cols: targets.len(),
        });
    }
    hungarian_assign(&cost_matrix(preds, targets, config)?)
}

fn check_assignment(rows: usize, targets: usize, sigma: &Assignment) -> Result<(), MatchError> {
    let mut seen = vec![false; rows];
    let ok = sigma.target_to_row.len() == targets
        && sigma
            .target_to_row
            .iter()
            .all(|&r| r < rows && !std::mem::replace(&mut seen[r], true));
    if ok {
        Ok(())
    } else {
        Err(MatchError::Contract(format!(
            "assignment {:?} is not an injection of {targets} targets into {rows} rows",
            sigma.target_to_row
        )))
    }
}

fn normalizer(targets: usize) -> f64 {
    1.0 / targets.max(1) as f64
}

/// `(classification, shape)` loss of one branch under a fixed assignment.
/// Every group gets a focal term (unmatched ones against no-object); only
/// matched groups get an l1 term. Both are divided by `max(1, |targets|)`.
pub fn hungarian_loss(
    preds: &PredictionSet,
    targets: &[Shape],
    sigma: &Assignment,
    config: &ModelConfig,
) -> Result<(f64, f64), MatchError> {
    check_assignment(preds.len(), targets.len(), sigma)?;
    let row_targets = sigma.row_targets(preds.len());
    let mut cls = 0.0;
    for (g, t) in preds.groups.iter().zip(&row_targets) {
        let kind = t.map_or(ShapeKind::NoObject, |t| targets[t].kind);
        cls += focal_loss(&g.class_probs, kind, config.focal_alpha, config.focal_gamma);
    }
    let mut shape = 0.0;
    for (t, &r) in sigma.target_to_row.iter().enumerate() {
        let g = &preds.groups[r];
        shape += shape_loss(&g.keypoints, &padded(&targets[t], g.keypoints.len())?)?;
    }
    let norm = normalizer(targets.len());
    Ok((cls * norm, shape * norm))
}

/// `k` copies of `targets`, copy-major.
pub fn one_to_many_targets(targets: &[Shape], k: usize, t: usize) -> Result<Vec<Shape>, MatchError> {
    if k == 0 {
        return Err(MatchError::Contract("one-to-many repetition K must be at least 1".into()));
    }
    if k * targets.len() > t {
        return Err(MatchError::OneToManyCapacity {
            k,
            targets: targets.len(),
            t,
        });
    }
    Ok((0..k).flat_map(|_| targets.iter().cloned()).collect())
}

/// Capacity check for a training sample with `targets` shapes.
pub fn check_capacity(targets: usize, config: &ModelConfig) -> Result<(), MatchError> {
    if targets > config.m {
        return Err(MatchError::Capacity {
            rows: config.m,
            cols: targets,
        });
    }
    if config.one_to_many_enabled() && config.k * targets > config.t {
        return Err(MatchError::OneToManyCapacity {
            k: config.k,
            targets,
            t: config.t,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Classification part summed over both branches.
    pub cls_loss: f64,
    /// Keypoint part summed over both branches.
    pub shape_loss: f64,
    pub one2one_loss: f64,
    pub one2many_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_parts(o2o: (f64, f64), o2m: (f64, f64)) -> Self {
        let one2one_loss = o2o.0 + o2o.1;
        let one2many_loss = o2m.0 + o2m.1;
        Self {
            cls_loss: o2o.0 + o2m.0,
            shape_loss: o2o.1 + o2m.1,
            one2one_loss,
            one2many_loss,
            total: one2one_loss + one2many_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.cls_loss, self.shape_loss, self.one2one_loss, self.one2many_loss, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Assignments used by both branches; `one2many` is `None` when K = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchAssignments {
    pub one2one: Assignment,
    pub one2many: Option<Assignment>,
}

/// Matches both branches and sums their Hungarian losses. With K = 0 the
/// one-to-many branch is left out and contributes 0.
pub fn total_loss(
    one2one: &PredictionSet,
    one2many: &PredictionSet,
    targets: &[Shape],
    config: &ModelConfig,
) -> Result<(LossBreakdown, BranchAssignments), MatchError> {
    check_capacity(targets.len(), config)?;
    let s1 = assign(one2one, targets, config)?;
    let o2o = hungarian_loss(one2one, targets, &s1, config)?;
    let (o2m, s2) = if config.one_to_many_enabled() {
        let rep = one_to_many_targets(targets, config.k, one2many.len())?;
        let s2 = assign(one2many, &rep, config)?;
        (hungarian_loss(one2many, &rep, &s2, config)?, Some(s2))
    } else {
        ((0.0, 0.0), None)
    };
    Ok((
        LossBreakdown::from_parts(o2o, o2m),
        BranchAssignments {
            one2one: s1,
            one2many: s2,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct TapeLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub assignments: BranchAssignments,
}

fn branch_loss_on_tape(
    tape: &mut Tape,
    branch: BranchVars,
    targets: &[Shape],
    sigma: &Assignment,
    config: &ModelConfig,
) -> Result<(Var, Var), MatchError> {
    let groups = tape.value(branch.probs).outer_len();
    let n = tape.value(branch.keypoints).last_dim() / 2;
    check_assignment(groups, targets.len(), sigma)?;
    let classes: Vec<Option<usize>> = sigma
        .row_targets(groups)
        .into_iter()
        .map(|t| t.and_then(|t| targets[t].kind.class_index()))
        .collect();
    let focal = tape.focal_loss(branch.probs, &classes, config.focal_alpha, config.focal_gamma)?;
    let mut rows = Vec::with_capacity(targets.len());
    for (t, &r) in sigma.target_to_row.iter().enumerate() {
        let flat = padded(&targets[t], n)?.iter().flat_map(|p| [p.x, p.y]).collect();
        rows.push((r, flat));
    }
    let l1 = tape.l1_rows(branch.keypoints, rows)?;
    let norm = normalizer(targets.len());
    Ok((tape.scale(focal, norm)?, tape.scale(l1, norm)?))
}

/// Differentiable form of [`total_loss`]. When `fixed` is given those
/// assignments are reused instead of re-matching. `one2many` may be `None`
/// only when K = 0.
pub fn total_loss_on_tape(
    tape: &mut Tape,
    one2one: BranchVars,
    one2many: Option<BranchVars>,
    targets: &[Shape],
    config: &ModelConfig,
    fixed: Option<&BranchAssignments>,
) -> Result<TapeLoss, MatchError> {
    check_capacity(targets.len(), config)?;
    let s1 = match fixed {
        Some(f) => f.one2one.clone(),
        None => assign(&one2one.predictions(tape), targets, config)?,
    };
    let (c1, l1) = branch_loss_on_tape(tape, one2one, targets, &s1, config)?;
    let o2o_vals = (tape.value(c1).data()[0], tape.value(l1).data()[0]);
    let one2one_var = tape.add(c1, l1)?;

    let (total, o2m_vals, s2) = if config.one_to_many_enabled() {
        let one2many = one2many
            .ok_or_else(|| MatchError::Contract("one-to-many outputs are required when K > 0".into()))?;
        let groups = tape.value(one2many.probs).outer_len();
        let rep = one_to_many_targets(targets, config.k, groups)?;
        let s2 = match fixed.and_then(|f| f.one2many.clone()) {
            Some(s) => s,
            None => assign(&one2many.predictions(tape), &rep, config)?,
        };
        let (c2, l2) = branch_loss_on_tape(tape, one2many, &rep, &s2, config)?;
        let vals = (tape.value(c2).data()[0], tape.value(l2).data()[0]);
        let one2many_var = tape.add(c2, l2)?;
        (tape.add(one2one_var, one2many_var)?, vals, Some(s2))
    } else {
        (one2one_var, (0.0, 0.0), None)
    };
    let breakdown = LossBreakdown::from_parts(o2o_vals, o2m_vals);
    Ok(TapeLoss {
        total,
        breakdown,
        assignments: BranchAssignments {
            one2one: s1,
            one2many: s2,
        },
    })
}

#[cfg(test)]
mod tests;

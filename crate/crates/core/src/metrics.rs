//! Shape-level evaluation: OKS-based line precision/recall/F1 and
//! matched-similarity scores for bars and pie sectors.

use serde::{Deserialize, Serialize};

use crate::geometry::{Keypoint, Shape, ShapeKind};
use crate::matching::{hungarian_assign, CostMatrix, MatchError};

pub const K_STRICT: f64 = 0.025;
pub const K_RELAXED: f64 = 0.05;
pub const OKS_THRESHOLD: f64 = 0.75;
pub const PIE_TAU: f64 = 0.1;
/// Lower bound on the OKS scale.
pub const MIN_OKS_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OksMode {
    Strict,
    Relaxed,
}

impl OksMode {
    pub fn k(self) -> f64 {
        match self {
            OksMode::Strict => K_STRICT,
            OksMode::Relaxed => K_RELAXED,
        }
    }
}

/// Mean over ground-truth points of the best Gaussian similarity to any
/// predicted point, with scale `s` = diagonal of the ground-truth bounding
/// box (at least [`MIN_OKS_SCALE`]).
pub fn oks(pred: &[Keypoint], gt: &[Keypoint], mode: OksMode) -> Result<f64, MatchError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MatchError::Contract("oks needs non-empty keypoint lists".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in gt {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let s = (x1 - x0).hypot(y1 - y0).max(MIN_OKS_SCALE);
    let k = mode.k();
    let denom = 2.0 * s * s * k * k;
    let total: f64 = gt
        .iter()
        .map(|g| {
            pred.iter()
                .map(|p| {
                    let d = p.distance(g);
                    (-(d * d) / denom).exp()
                })
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / gt.len() as f64)
}

/// Matching of `sim` rows to columns maximizing the total of `weight`;
/// returns `(row, col)` pairs.
fn max_weight_pairs(rows: usize, cols: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // the assignment solver wants at least as many rows as columns
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = CostMatrix::from_fn(r, c, |i, j| if transpose { -weight(j, i) } else { -weight(i, j) })
        .expect("finite similarities");
    let sigma = hungarian_assign(&cost).expect("rows >= cols");
    sigma
        .target_to_row
        .iter()
        .enumerate()
        .map(|(j, &i)| if transpose { (j, i) } else { (i, j) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrF1 {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineResult {
    pub scores: PrF1,
    pub true_positives: usize,
    pub predictions: usize,
    pub targets: usize,
}

/// Shape-level precision/recall/F1 of predicted lines. Lines are paired to
/// maximize the number of pairs with OKS at least `threshold`, ties broken
/// by total OKS; each such pair is a true positive. Both lists empty gives
/// 1 for every score.
pub fn line_prf1(pred: &[Shape], gt: &[Shape], mode: OksMode, threshold: f64) -> LineResult {
    let (np, ng) = (pred.len(), gt.len());
    let sim: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| {
            gt.iter()
                .map(|g| oks(&p.keypoints, &g.keypoints, mode).unwrap_or(0.0))
                .collect()
        })
        .collect();
    // a true positive outweighs any total of OKS values
    let scale = 1.0 / (np.min(ng) + 1) as f64;
    let pairs = max_weight_pairs(np, ng, |i, j| {
        let hit = if sim[i][j] >= threshold { 1.0 } else { 0.0 };
        hit + scale * sim[i][j]
    });
    let tp = pairs.iter().filter(|&&(i, j)| sim[i][j] >= threshold).count();
    let scores = if np == 0 && ng == 0 {
        PrF1::new(1.0, 1.0)
    } else {
        let ratio = |n: usize| if n == 0 { 0.0 } else { tp as f64 / n as f64 };
        PrF1::new(ratio(np), ratio(ng))
    };
    LineResult {
        scores,
        true_positives: tp,
        predictions: np,
        targets: ng,
    }
}

fn rect(s: &Shape) -> (f64, f64, f64, f64) {
    let (a, b) = (s.keypoints[0], s.keypoints[1]);
    (a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y))
}

/// Intersection over union of the axis-aligned rectangles spanned by two
/// bars; identical rectangles score 1 even when degenerate.
pub fn bar_iou(a: &Shape, b: &Shape) -> f64 {
    let (ra, rb) = (rect(a), rect(b));
    if ra == rb {
        return 1.0;
    }
    let iw = (ra.2.min(rb.2) - ra.0.max(rb.0)).max(0.0);
    let ih = (ra.3.min(rb.3) - ra.1.max(rb.1)).max(0.0);
    let inter = iw * ih;
    let area = |r: (f64, f64, f64, f64)| (r.2 - r.0) * (r.3 - r.1);
    let union = area(ra) + area(rb) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// `max(0, 1 - (|dcenter| + |dstart| + |dend|) / (3 tau))`.
pub fn sector_similarity(a: &Shape, b: &Shape) -> f64 {
    let d: f64 = a.keypoints.iter().zip(&b.keypoints).map(|(p, q)| p.distance(q)).sum();
    (1.0 - d / (3.0 * PIE_TAU)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub score: f64,
    /// Matched pairs with positive similarity.
    pub matched: usize,
    pub predictions: usize,
    pub targets: usize,
}

fn matched_score(pred: &[Shape], gt: &[Shape], sim: impl Fn(&Shape, &Shape) -> f64) -> ScoreResult {
    let s: Vec<Vec<f64>> = pred.iter().map(|p| gt.iter().map(|g| sim(p, g)).collect()).collect();
    let pairs = max_weight_pairs(pred.len(), gt.len(), |i, j| s[i][j]);
    let total = pairs.iter().fold(0.0, |acc, &(i, j)| acc + s[i][j]);
    let denom = pred.len().max(gt.len());
    ScoreResult {
        score: if denom == 0 { 1.0 } else { total / denom as f64 },
        matched: pairs.iter().filter(|&&(i, j)| s[i][j] > 0.0).count(),
        predictions: pred.len(),
        targets: gt.len(),
    }
}

/// Total IoU of the best bar pairing over `max(|pred|, |gt|)`.
pub fn bar_score(pred: &[Shape], gt: &[Shape]) -> ScoreResult {
    matched_score(pred, gt, bar_iou)
}

/// Total sector similarity of the best pairing over `max(|pred|, |gt|)`.
pub fn pie_score(pred: &[Shape], gt: &[Shape]) -> ScoreResult {
    matched_score(pred, gt, sector_similarity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub k_strict: f64,
    pub k_relaxed: f64,
    pub oks_threshold: f64,
    pub pie_tau: f64,
}

impl Default for MetricConstants {
    fn default() -> Self {
        Self {
            k_strict: K_STRICT,
            k_relaxed: K_RELAXED,
            oks_threshold: OKS_THRESHOLD,
            pie_tau: PIE_TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub sample: String,
    pub chart_kind: ShapeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_strict: Option<LineResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_relaxed: Option<LineResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_strict: Option<PrF1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line_relaxed: Option<PrF1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bar_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pie_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub constants: MetricConstants,
    pub aggregate: Aggregate,
    pub samples: Vec<SampleEval>,
}

/// One evaluated image: its chart kind, predictions and ground truth.
pub struct EvalInput<'a> {
    pub name: String,
    pub chart_kind: ShapeKind,
    pub predictions: &'a [Shape],
    pub targets: &'a [Shape],
}

fn of_kind(shapes: &[Shape], kind: ShapeKind) -> Vec<Shape> {
    shapes.iter().filter(|s| s.kind == kind).cloned().collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_prf1<'a>(entries: impl Iterator<Item = &'a LineResult> + Clone) -> Option<PrF1> {
    let p = mean(entries.clone().map(|e| e.scores.precision))?;
    let r = mean(entries.clone().map(|e| e.scores.recall))?;
    let f = mean(entries.map(|e| e.scores.f1))?;
    Some(PrF1 {
        precision: p,
        recall: r,
        f1: f,
    })
}

/// Scores every image against shapes of its own chart kind and averages
/// per metric over the images it applies to.
pub fn evaluate(inputs: &[EvalInput<'_>]) -> EvalReport {
    let samples: Vec<SampleEval> = inputs
        .iter()
        .map(|input| {
            let pred = of_kind(input.predictions, input.chart_kind);
            let gt = of_kind(input.targets, input.chart_kind);
            let mut eval = SampleEval {
                sample: input.name.clone(),
                chart_kind: input.chart_kind,
                line_strict: None,
                line_relaxed: None,
                score: None,
            };
            match input.chart_kind {
                ShapeKind::Line => {
                    eval.line_strict = Some(line_prf1(&pred, &gt, OksMode::Strict, OKS_THRESHOLD));
                    eval.line_relaxed = Some(line_prf1(&pred, &gt, OksMode::Relaxed, OKS_THRESHOLD));
                }
                ShapeKind::Bar => eval.score = Some(bar_score(&pred, &gt)),
                ShapeKind::Pie => eval.score = Some(pie_score(&pred, &gt)),
                ShapeKind::NoObject => {}
            }
            eval
        })
        .collect();
    let kind_scores = |k: ShapeKind| {
        mean(
            samples
                .iter()
                .filter(|s| s.chart_kind == k)
                .filter_map(|s| s.score.map(|r| r.score)),
        )
    };
    let aggregate = Aggregate {
        samples: samples.len(),
        line_strict: mean_prf1(samples.iter().filter_map(|s| s.line_strict.as_ref())),
        line_relaxed: mean_prf1(samples.iter().filter_map(|s| s.line_relaxed.as_ref())),
        bar_score: kind_scores(ShapeKind::Bar),
        pie_score: kind_scores(ShapeKind::Pie),
    };
    EvalReport {
        constants: MetricConstants::default(),
        aggregate,
        samples,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

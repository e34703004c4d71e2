use crate::geometry::{canonicalize, source_positions, Keypoint, Shape, ShapeKind};
use crate::numeric::Array;

use super::ModelConfig;

/// Consecutive line keypoints closer than this are merged.
pub const LINE_MERGE_DISTANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedShape {
    /// Per-class confidence in `[0, 1]`, in [`ShapeKind::CLASSES`] order.
    pub class_probs: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
}

/// Output of one decoder branch: one entry per query group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub groups: Vec<PredictedShape>,
}

impl PredictionSet {
    /// Builds a set from a `[groups, classes]` probability matrix and a
    /// `[groups, 2N]` keypoint matrix laid out as `x0, y0, x1, y1, ...`.
    pub fn from_arrays(probs: &Array, keypoints: &Array) -> Self {
        let groups = (0..probs.outer_len())
            .map(|g| PredictedShape {
                class_probs: probs.row(g).to_vec(),
                keypoints: keypoints
                    .row(g)
                    .chunks(2)
                    .map(|c| Keypoint::new(c[0], c[1]))
                    .collect(),
            })
            .collect();
        Self { groups }
    }

    /// Inverse of [`PredictionSet::from_arrays`].
    pub fn to_arrays(&self) -> (Array, Array) {
        let g = self.groups.len();
        let c = self.groups.first().map_or(0, |s| s.class_probs.len());
        let w = self.groups.first().map_or(0, |s| 2 * s.keypoints.len());
        let probs = self.groups.iter().flat_map(|s| s.class_probs.iter().copied()).collect();
        let kps = self
            .groups
            .iter()
            .flat_map(|s| s.keypoints.iter().flat_map(|p| [p.x, p.y]))
            .collect();
        (
            Array::new(vec![g, c], probs).expect("uniform class count"),
            Array::new(vec![g, w], kps).expect("uniform keypoint count"),
        )
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Turns confident groups into shapes. A group is kept when its best class
/// reaches `conf_threshold`; bars and pies read back the first copy of each
/// corner/center/endpoint, lines keep all keypoints sorted by x with
/// near-duplicates merged.
pub fn predict_shapes(pred: &PredictionSet, config: &ModelConfig) -> Vec<Shape> {
    let mut out = Vec::new();
    for group in &pred.groups {
        let Some((class, &conf)) = group
            .class_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            continue;
        };
        if conf < config.conf_threshold {
            continue;
        }
        let Some(kind) = ShapeKind::from_class_index(class) else { continue };
        let shape = match kind {
            ShapeKind::Bar | ShapeKind::Pie => {
                let picks = source_positions(kind.natural_keypoints(), group.keypoints.len());
                let raw: Vec<Keypoint> = picks.iter().map(|&i| group.keypoints[i]).collect();
                canonicalize(kind, &raw).ok()
            }
            ShapeKind::Line => {
                let sorted = canonicalize(kind, &group.keypoints).ok();
                sorted.and_then(|s| {
                    let merged = merge_close(&s.keypoints, LINE_MERGE_DISTANCE);
                    canonicalize(kind, &merged).ok()
                })
            }
            ShapeKind::NoObject => None,
        };
        out.extend(shape);
    }
    out
}

/// Collapses runs of consecutive points closer than `tol` into their mean.
fn merge_close(points: &[Keypoint], tol: f64) -> Vec<Keypoint> {
    let mut out = Vec::new();
    let mut cluster: Vec<Keypoint> = Vec::new();
    let flush = |cluster: &mut Vec<Keypoint>, out: &mut Vec<Keypoint>| {
        if !cluster.is_empty() {
            let n = cluster.len() as f64;
            let (sx, sy) = cluster.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
            out.push(Keypoint::new(sx / n, sy / n));
            cluster.clear();
        }
    };
    for p in points {
        if let Some(last) = cluster.last() {
            if last.distance(p) >= tol {
                flush(&mut cluster, &mut out);
            }
        }
        cluster.push(*p);
    }
    flush(&mut cluster, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::interpolate_duplicates;

    fn group(probs: [f64; 3], pts: &[(f64, f64)]) -> PredictedShape {
        PredictedShape {
            class_probs: probs.to_vec(),
            keypoints: pts.iter().copied().map(Keypoint::from).collect(),
        }
    }

    #[test]
    fn low_confidence_groups_are_dropped() {
        let cfg = ModelConfig::preset(ShapeKind::Bar);
        let pred = PredictionSet {
            groups: vec![group([0.2, 0.1, 0.49], &[(0.1, 0.1), (0.2, 0.2)]); 4],
        };
        assert!(predict_shapes(&pred, &cfg).is_empty());
    }

    #[test]
    fn confident_bar_maps_directly() {
        let cfg = ModelConfig::preset(ShapeKind::Bar);
        let pred = PredictionSet {
            groups: vec![
                group([0.9, 0.1, 0.1], &[(0.2, 0.1), (0.8, 0.9)]),
                group([0.1, 0.1, 0.1], &[(0.3, 0.3), (0.4, 0.4)]),
            ],
        };
        let shapes = predict_shapes(&pred, &cfg);
        assert_eq!(shapes.len(), 1);
        assert_eq!(shapes[0].kind, ShapeKind::Bar);
        assert_eq!(shapes[0].keypoints, vec![Keypoint::new(0.2, 0.1), Keypoint::new(0.8, 0.9)]);
    }

    #[test]
    fn duplicated_line_points_collapse() {
        let cfg = ModelConfig::preset(ShapeKind::Line);
        let src: Vec<Keypoint> = [(0.1, 0.5), (0.3, 0.2), (0.5, 0.6), (0.7, 0.3), (0.9, 0.8)]
            .into_iter()
            .map(Keypoint::from)
            .collect();
        let mut pts = interpolate_duplicates(&src, 14).unwrap();
        // jitter the copies well under the merge distance
        for (i, p) in pts.iter_mut().enumerate() {
            p.x += 0.001 * (i % 3) as f64;
        }
        let pred = PredictionSet {
            groups: vec![PredictedShape {
                class_probs: vec![0.0, 0.95, 0.0],
                keypoints: pts,
            }],
        };
        let shapes = predict_shapes(&pred, &cfg);
        assert_eq!(shapes.len(), 1);
        assert_eq!(shapes[0].keypoints.len(), 5);
    }

    #[test]
    fn padded_pie_reads_first_copies() {
        let mut cfg = ModelConfig::preset(ShapeKind::Pie);
        cfg.n = 5;
        let pts = [(0.5, 0.5), (0.5, 0.5), (0.9, 0.5), (0.9, 0.5), (0.5, 0.1)];
        let pred = PredictionSet {
            groups: vec![group([0.0, 0.0, 0.8], &pts)],
        };
        let shapes = predict_shapes(&pred, &cfg);
        assert_eq!(
            shapes[0].keypoints,
            vec![Keypoint::new(0.5, 0.5), Keypoint::new(0.9, 0.5), Keypoint::new(0.5, 0.1)]
        );
    }

    #[test]
    fn arrays_round_trip() {
        let pred = PredictionSet {
            groups: vec![
                group([0.9, 0.1, 0.2], &[(0.2, 0.1), (0.8, 0.9)]),
                group([0.3, 0.4, 0.5], &[(0.6, 0.7), (0.1, 0.3)]),
            ],
        };
        let (p, k) = pred.to_arrays();
        assert_eq!(p.shape(), &[2, 3]);
        assert_eq!(k.shape(), &[2, 4]);
        assert_eq!(PredictionSet::from_arrays(&p, &k), pred);
    }
}

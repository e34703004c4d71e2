//! Keypoint representations of chart data elements.
//!
//! Every data element is an ordered keypoint sequence in normalized image
//! coordinates (origin top-left, y grows downward):
//!
//! * bar: `[top-left, bottom-right]`
//! * pie sector: `[center, arc-start, arc-end]`, swept counterclockwise (as
//!   seen on screen) from start to end
//! * line: knee points sorted by ascending x

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid {kind:?} shape: {reason}")]
    InvalidShape { kind: ShapeKind, reason: String },
    #[error("target keypoint count {target} is smaller than the {source_count} source keypoints")]
    TargetTooSmall { target: usize, source_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Keypoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Bar,
    Line,
    Pie,
    /// The no-object class assigned to unmatched prediction groups.
    NoObject,
}

impl ShapeKind {
    /// The three real element kinds, in classification-head order.
    pub const CLASSES: [ShapeKind; 3] = [ShapeKind::Bar, ShapeKind::Line, ShapeKind::Pie];

    /// Index into the classification head, `None` for the no-object class.
    pub fn class_index(self) -> Option<usize> {
        match self {
            ShapeKind::Bar => Some(0),
            ShapeKind::Line => Some(1),
            ShapeKind::Pie => Some(2),
            ShapeKind::NoObject => None,
        }
    }

    pub fn from_class_index(index: usize) -> Option<ShapeKind> {
        Self::CLASSES.get(index).copied()
    }

    /// Keypoint count of a single element; lines report their minimum.
    pub fn natural_keypoints(self) -> usize {
        match self {
            ShapeKind::Bar => 2,
            ShapeKind::Line => 2,
            ShapeKind::Pie => 3,
            ShapeKind::NoObject => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Bar => "bar",
            ShapeKind::Line => "line",
            ShapeKind::Pie => "pie",
            ShapeKind::NoObject => "none",
        }
    }

    pub fn parse(name: &str) -> Option<ShapeKind> {
        match name {
            "bar" => Some(ShapeKind::Bar),
            "line" => Some(ShapeKind::Line),
            "pie" => Some(ShapeKind::Pie),
            _ => None,
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub keypoints: Vec<Keypoint>,
}

impl Shape {
    /// Axis-aligned area of a bar, `None` for other kinds.
    pub fn bar_area(&self) -> Option<f64> {
        match (self.kind, self.keypoints.as_slice()) {
            (ShapeKind::Bar, [a, b]) => Some((b.x - a.x) * (b.y - a.y)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartAnnotation {
    pub width: u32,
    pub height: u32,
    pub chart_kind: ShapeKind,
    pub shapes: Vec<Shape>,
}

impl ChartAnnotation {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.chart_kind == ShapeKind::NoObject {
            return Err(GeometryError::InvalidShape {
                kind: self.chart_kind,
                reason: "chart kind cannot be the no-object class".into(),
            });
        }
        for shape in &self.shapes {
            if shape.kind != self.chart_kind {
                return Err(GeometryError::InvalidShape {
                    kind: shape.kind,
                    reason: format!("shape kind differs from chart kind {}", self.chart_kind),
                });
            }
            let canonical = canonicalize(shape.kind, &shape.keypoints)?;
            if canonical.keypoints != shape.keypoints {
                return Err(GeometryError::InvalidShape {
                    kind: shape.kind,
                    reason: "keypoints are not in canonical order".into(),
                });
            }
        }
        Ok(())
    }
}

/// Orders raw keypoints into the canonical layout for `kind`.
///
/// Pie input is taken as `[center, start, end]` and kept in that order: any
/// start/end pair is a valid counterclockwise sweep, so reordering would
/// change which sector is described.
pub fn canonicalize(kind: ShapeKind, raw: &[Keypoint]) -> Result<Shape, GeometryError> {
    let invalid = |reason: String| GeometryError::InvalidShape { kind, reason };
    if let Some(p) = raw.iter().find(|p| !p.is_finite()) {
        return Err(invalid(format!("non-finite coordinate ({}, {})", p.x, p.y)));
    }
    let keypoints = match kind {
        ShapeKind::Bar => {
            let [a, b] = raw else {
                return Err(invalid(format!("expected 2 keypoints, got {}", raw.len())));
            };
            vec![
                Keypoint::new(a.x.min(b.x), a.y.min(b.y)),
                Keypoint::new(a.x.max(b.x), a.y.max(b.y)),
            ]
        }
        ShapeKind::Pie => {
            if raw.len() != 3 {
                return Err(invalid(format!("expected 3 keypoints, got {}", raw.len())));
            }
            raw.to_vec()
        }
        ShapeKind::Line => {
            if raw.len() < 2 {
                return Err(invalid(format!("expected at least 2 keypoints, got {}", raw.len())));
            }
            let mut points = raw.to_vec();
            points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
            points
        }
        ShapeKind::NoObject => return Err(invalid("no-object is not a drawable shape".into())),
    };
    Ok(Shape { kind, keypoints })
}

/// Signed cross product `(start - center) x (end - center)`. Negative values
/// mean the short way from start to end turns counterclockwise on screen.
pub fn sector_cross(center: Keypoint, start: Keypoint, end: Keypoint) -> f64 {
    (start.x - center.x) * (end.y - center.y) - (start.y - center.y) * (end.x - center.x)
}

/// Number of copies (including the original) each source point receives
/// when `source_count` points are stretched to `target`.
fn copies_per_source(source_count: usize, target: usize) -> impl Iterator<Item = usize> {
    let extra = target - source_count;
    let (base, rem) = (extra / source_count, extra % source_count);
    (0..source_count).map(move |i| 1 + base + usize::from(i < rem))
}

/// Stretches a keypoint sequence to exactly `target` points by inserting
/// copies of existing points right after their source.
///
/// The `target - len` duplicates are dealt round-robin starting at the first
/// point, so earlier points receive the extra copy when the count does not
/// divide evenly.
pub fn interpolate_duplicates(
    points: &[Keypoint],
    target: usize,
) -> Result<Vec<Keypoint>, GeometryError> {
    if target < points.len() || points.is_empty() {
        return Err(GeometryError::TargetTooSmall {
            target,
            source_count: points.len(),
        });
    }
    let mut out = Vec::with_capacity(target);
    for (point, copies) in points.iter().zip(copies_per_source(points.len(), target)) {
        out.extend(std::iter::repeat_n(*point, copies));
    }
    Ok(out)
}

/// Positions in an interpolated sequence of length `target` where each of
/// the `source_count` source points first appears.
pub fn source_positions(source_count: usize, target: usize) -> Vec<usize> {
    if source_count == 0 || target < source_count {
        return Vec::new();
    }
    copies_per_source(source_count, target)
        .scan(0, |pos, copies| {
            let first = *pos;
            *pos += copies;
            Some(first)
        })
        .collect()
}

/// Fixed-length regression target for a shape under an `n`-keypoint model.
pub fn pad_target(shape: &Shape, n: usize) -> Result<Vec<Keypoint>, GeometryError> {
    interpolate_duplicates(&shape.keypoints, n)
}

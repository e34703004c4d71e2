//! Deterministic synthetic bar, line and pie charts with exact keypoint
//! ground truth.
//!
//! Sample `index` of a [`GenSpec`] draws all of its randomness from a ChaCha
//! stream keyed by `(seed, index)`, so samples can be produced in any order
//! and any subset reproduces bit for bit.

mod raster;

pub use raster::{
    bresenham, ccw_sweep, paint_shape, pixel_span, rasterize_shape, Raster, Rgb, SectorGeometry, WHITE,
};

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cli::formats::{self, AnnotationFile, Manifest, ManifestEntry};
use crate::geometry::{canonicalize, ChartAnnotation, Keypoint, ShapeKind};

/// Distinct fill colors; the first `palette_size` are used.
pub const PALETTE: [Rgb; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

const AXIS_COLOR: Rgb = [64, 64, 64];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub chart_kind: ShapeKind,
    pub width: u32,
    pub height: u32,
    /// Bars, lines or pie sectors per chart, inclusive.
    pub shape_count: (usize, usize),
    /// Knee points per line, inclusive. Ignored for other kinds.
    pub keypoint_count: (usize, usize),
    pub seed: u64,
    pub draw_axes: bool,
    pub palette_size: usize,
    pub stroke_px: u32,
    /// Bar width as a fraction of its slot, inclusive range.
    pub bar_width_frac: (f64, f64),
    /// Smallest pie sector as a fraction of the circle.
    pub min_sector_fraction: f64,
    /// Donut hole radius as a fraction of the pie radius; 0 for a full pie.
    pub donut_hole: f64,
}

impl GenSpec {
    /// Default 64x64 spec for a chart kind.
    pub fn preset(chart_kind: ShapeKind, seed: u64) -> Self {
        let shape_count = match chart_kind {
            ShapeKind::Line => (1, 2),
            ShapeKind::Pie => (2, 5),
            _ => (2, 4),
        };
        Self {
            chart_kind,
            width: 64,
            height: 64,
            shape_count,
            keypoint_count: (2, 6),
            seed,
            draw_axes: true,
            palette_size: PALETTE.len(),
            stroke_px: 1,
            bar_width_frac: (0.45, 0.85),
            min_sector_fraction: 0.05,
            donut_hole: 0.0,
        }
    }

    fn plot_area(&self) -> PlotArea {
        PlotArea {
            left: 4,
            right: self.width as i64 - 3,
            top: 3,
            bottom: self.height as i64 - 5,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: String| Err(GenError::Spec(msg));
        if self.width < 32 || self.height < 32 {
            return bad(format!("canvas {}x{} is smaller than 32x32", self.width, self.height));
        }
        let (lo, hi) = self.shape_count;
        if lo == 0 || lo > hi {
            return bad(format!("shape_count range ({lo}, {hi}) is empty or starts at 0"));
        }
        let plot = self.plot_area();
        match self.chart_kind {
            ShapeKind::Bar => {
                if hi as i64 * 3 > plot.right - plot.left {
                    return bad(format!("{hi} bars do not fit in a {}px wide canvas", self.width));
                }
                let (a, b) = self.bar_width_frac;
                if !(a > 0.0 && a <= b && b <= 1.0) {
                    return bad(format!("bar_width_frac ({a}, {b}) must satisfy 0 < lo <= hi <= 1"));
                }
            }
            ShapeKind::Line => {
                if hi > 4 {
                    return bad(format!("at most 4 lines per chart, got {hi}"));
                }
                let (klo, khi) = self.keypoint_count;
                if klo < 2 || klo > khi {
                    return bad(format!("keypoint_count ({klo}, {khi}) must satisfy 2 <= lo <= hi"));
                }
                if khi as i64 * 2 > plot.right - plot.left {
                    return bad(format!("{khi} knee points do not fit in a {}px wide canvas", self.width));
                }
            }
            ShapeKind::Pie => {
                if lo < 2 || hi > 8 {
                    return bad(format!("pie sector range ({lo}, {hi}) must lie within 2..=8"));
                }
                if !(0.0..=1.0 / hi as f64).contains(&self.min_sector_fraction) {
                    return bad(format!(
                        "min_sector_fraction {} must lie in [0, 1/{hi}]",
                        self.min_sector_fraction
                    ));
                }
                if !(0.0..0.9).contains(&self.donut_hole) {
                    return bad(format!("donut_hole {} must lie in [0, 0.9)", self.donut_hole));
                }
            }
            ShapeKind::NoObject => return bad("chart kind cannot be the no-object class".into()),
        }
        if self.palette_size == 0 || self.palette_size > PALETTE.len() {
            return bad(format!("palette_size {} must lie in 1..={}", self.palette_size, PALETTE.len()));
        }
        if self.palette_size < hi {
            return bad(format!(
                "palette_size {} cannot give {hi} shapes distinct colors",
                self.palette_size
            ));
        }
        if self.stroke_px == 0 {
            return bad("stroke_px must be at least 1".into());
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Inclusive pixel bounds of the plotting region.
#[derive(Debug, Clone, Copy)]
struct PlotArea {
    left: i64,
    right: i64,
    top: i64,
    bottom: i64,
}

/// Draws one chart. Deterministic in `(spec, index)`.
pub fn generate(spec: &GenSpec, index: u64) -> Result<(Raster, ChartAnnotation), GenError> {
    spec.validate()?;
    let mut rng = spec.rng(index);
    let mut raster = Raster::new(spec.width, spec.height, WHITE);
    let plot = spec.plot_area();
    if spec.draw_axes && spec.chart_kind != ShapeKind::Pie {
        raster.fill_rect(plot.left - 1, plot.top, plot.left - 1, plot.bottom + 1, AXIS_COLOR);
        raster.fill_rect(plot.left - 1, plot.bottom + 1, plot.right, plot.bottom + 1, AXIS_COLOR);
    }
    let count = rng.random_range(spec.shape_count.0..=spec.shape_count.1);
    let mut colors: Vec<Rgb> = PALETTE[..spec.palette_size].to_vec();
    colors.shuffle(&mut rng);

    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut shapes = Vec::with_capacity(count);
    let mut inner_radius = 0.0;
    match spec.chart_kind {
        ShapeKind::Bar => {
            let span = (plot.right - plot.left + 1) as f64;
            let slot = span / count as f64;
            for i in 0..count {
                let slot_start = plot.left + (i as f64 * slot).floor() as i64;
                let slot_end = plot.left + ((i + 1) as f64 * slot).floor() as i64 - 1;
                let slot_len = slot_end - slot_start + 1;
                let lo = ((spec.bar_width_frac.0 * slot_len as f64).round() as i64).clamp(1, slot_len);
                let hi = ((spec.bar_width_frac.1 * slot_len as f64).round() as i64).clamp(lo, slot_len);
                let bar_w = rng.random_range(lo..=hi);
                let x0 = slot_start + rng.random_range(0..=slot_len - bar_w);
                let bar_h = rng.random_range(3..=plot.bottom - plot.top + 1);
                let y0 = plot.bottom - bar_h + 1;
                let corners = [
                    Keypoint::new(x0 as f64 / w, y0 as f64 / h),
                    Keypoint::new((x0 + bar_w) as f64 / w, (plot.bottom + 1) as f64 / h),
                ];
                shapes.push(canonicalize(ShapeKind::Bar, &corners).expect("bar corners are valid"));
            }
        }
        ShapeKind::Line => {
            let knees = rng.random_range(spec.keypoint_count.0..=spec.keypoint_count.1);
            let xs: Vec<i64> = (0..knees)
                .map(|j| {
                    let t = j as f64 / (knees - 1) as f64;
                    plot.left + (t * (plot.right - plot.left) as f64).round() as i64
                })
                .collect();
            for _ in 0..count {
                let points: Vec<Keypoint> = xs
                    .iter()
                    .map(|&x| {
                        let y = rng.random_range(plot.top..=plot.bottom);
                        Keypoint::new((x as f64 + 0.5) / w, (y as f64 + 0.5) / h)
                    })
                    .collect();
                shapes.push(canonicalize(ShapeKind::Line, &points).expect("line points are valid"));
            }
        }
        ShapeKind::Pie => {
            let min_side = w.min(h);
            let radius = rng.random_range(0.3..=0.42) * min_side;
            let jitter = 0.05 * min_side;
            let cx = w / 2.0 + rng.random_range(-jitter..=jitter);
            let cy = h / 2.0 + rng.random_range(-jitter..=jitter);
            inner_radius = spec.donut_hole * radius;
            let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let free = 1.0 - count as f64 * spec.min_sector_fraction;
            let mut angle = rng.random_range(0.0..TAU);
            let point_at = |a: f64| Keypoint::new((cx + radius * a.cos()) / w, (cy - radius * a.sin()) / h);
            let center = Keypoint::new(cx / w, cy / h);
            let first = point_at(angle);
            for (i, wgt) in weights.iter().enumerate() {
                let start = point_at(angle);
                angle += TAU * (spec.min_sector_fraction + free * wgt / total);
                // close the circle on the exact starting point
                let end = if i + 1 == count { first } else { point_at(angle) };
                shapes.push(canonicalize(ShapeKind::Pie, &[center, start, end]).expect("sector is valid"));
            }
        }
        ShapeKind::NoObject => unreachable!("rejected by validate"),
    }
    for (shape, color) in shapes.iter().zip(&colors) {
        paint_shape(&mut raster, shape, *color, spec.stroke_px, inner_radius);
    }
    let annotation = ChartAnnotation {
        width: spec.width,
        height: spec.height,
        chart_kind: spec.chart_kind,
        shapes,
    };
    Ok((raster, annotation))
}

/// Fraction of the full circle covered by each pie sector.
pub fn sector_fractions(annotation: &ChartAnnotation) -> Vec<f64> {
    annotation
        .shapes
        .iter()
        .filter_map(|s| SectorGeometry::from_shape(s, annotation.width, annotation.height))
        .map(|g| g.sweep / TAU)
        .collect()
}

fn sample_stem(index: u64) -> String {
    format!("sample_{index:05}")
}

/// Writes `count` samples (`sample_NNNNN.ppm` + `sample_NNNNN.json`) and a
/// `manifest.json` into `out_dir`.
pub fn write_dataset(spec: &GenSpec, count: usize, out_dir: &Path) -> Result<Manifest, GenError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| GenError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut samples = Vec::with_capacity(count);
    for index in 0..count as u64 {
        let (raster, annotation) = generate(spec, index)?;
        let stem = sample_stem(index);
        let image = format!("{stem}.ppm");
        let annotation_name = format!("{stem}.json");
        let image_path = out_dir.join(&image);
        formats::write_image(&image_path, &raster).map_err(|message| GenError::Encode {
            path: image_path.clone(),
            message,
        })?;
        let ann_path = out_dir.join(&annotation_name);
        let json = AnnotationFile::from(&annotation).to_json();
        std::fs::write(&ann_path, json).map_err(|source| GenError::Io { path: ann_path, source })?;
        samples.push(ManifestEntry {
            index,
            image,
            annotation: annotation_name,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        seed: spec.seed,
        samples,
    };
    let path = out_dir.join(formats::MANIFEST_NAME);
    std::fs::write(&path, manifest.to_json()).map_err(|source| GenError::Io { path, source })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sector_cross;

    #[test]
    fn fixed_bar_count_gives_that_many_bars() {
        let mut spec = GenSpec::preset(ShapeKind::Bar, 3);
        spec.shape_count = (3, 3);
        for index in 0..10 {
            let (_, ann) = generate(&spec, index).unwrap();
            assert_eq!(ann.shapes.len(), 3);
            assert!(ann.shapes.iter().all(|s| s.keypoints.len() == 2));
            ann.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [ShapeKind::Bar, ShapeKind::Line, ShapeKind::Pie] {
            let spec = GenSpec::preset(kind, 11);
            let (r1, a1) = generate(&spec, 4).unwrap();
            let (r2, a2) = generate(&spec, 4).unwrap();
            assert_eq!(r1.digest(), r2.digest());
            assert_eq!(a1, a2);
        }
    }

    #[test]
    fn pie_fractions_partition_the_circle() {
        let spec = GenSpec::preset(ShapeKind::Pie, 5);
        for index in 0..50 {
            let (_, ann) = generate(&spec, index).unwrap();
            let fractions = sector_fractions(&ann);
            assert_eq!(fractions.len(), ann.shapes.len());
            let total: f64 = fractions.iter().sum();
            assert!((total - 1.0).abs() <= 1e-9, "sum {total}");
            for s in &ann.shapes {
                let [c, a, b] = s.keypoints.as_slice() else { panic!() };
                assert!((c.distance(a) - c.distance(b)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn small_sectors_turn_counterclockwise() {
        let mut spec = GenSpec::preset(ShapeKind::Pie, 8);
        spec.shape_count = (5, 5);
        let (_, ann) = generate(&spec, 0).unwrap();
        for (s, f) in ann.shapes.iter().zip(sector_fractions(&ann)) {
            if f < 0.5 {
                let [c, a, b] = s.keypoints.as_slice() else { panic!() };
                assert!(sector_cross(*c, *a, *b) < 0.0);
            }
        }
    }

    #[test]
    fn bars_reproduce_their_pixels() {
        let spec = GenSpec::preset(ShapeKind::Bar, 21);
        for index in 0..30 {
            let (raster, ann) = generate(&spec, index).unwrap();
            for shape in &ann.shapes {
                let [a, b] = shape.keypoints.as_slice() else { panic!() };
                let (x0, x1) = pixel_span(a.x, b.x, raster.width());
                let (y0, y1) = pixel_span(a.y, b.y, raster.height());
                let color = raster.pixel(x0 as u32, y0 as u32);
                assert_ne!(color, WHITE);
                // every pixel in the span has the bar color, the columns
                // just outside do not
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        assert_eq!(raster.pixel(x as u32, y as u32), color);
                    }
                    if x0 > 0 {
                        assert_ne!(raster.pixel(x0 as u32 - 1, y as u32), color);
                    }
                    if (x1 as u32) + 1 < raster.width() {
                        assert_ne!(raster.pixel(x1 as u32 + 1, y as u32), color);
                    }
                }
                assert_ne!(raster.pixel(x0 as u32, y0 as u32 - 1), color);
            }
        }
    }

    #[test]
    fn keypoints_lie_on_canvas() {
        for kind in [ShapeKind::Bar, ShapeKind::Line, ShapeKind::Pie] {
            let spec = GenSpec::preset(kind, 2);
            for index in 0..30 {
                let (_, ann) = generate(&spec, index).unwrap();
                for p in ann.shapes.iter().flat_map(|s| &s.keypoints) {
                    assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y), "{p:?}");
                }
            }
        }
    }

    #[test]
    fn distinct_indices_give_distinct_rasters() {
        for kind in [ShapeKind::Bar, ShapeKind::Line, ShapeKind::Pie] {
            let spec = GenSpec::preset(kind, 77);
            let digests: std::collections::BTreeSet<String> =
                (0..100).map(|i| generate(&spec, i).unwrap().0.digest()).collect();
            assert!(digests.len() >= 99, "{kind}: {} distinct", digests.len());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = GenSpec::preset(ShapeKind::Bar, 0);
        spec.width = 16;
        assert!(matches!(generate(&spec, 0), Err(GenError::Spec(_))));
        let mut spec = GenSpec::preset(ShapeKind::Pie, 0);
        spec.shape_count = (1, 3);
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::preset(ShapeKind::Line, 0);
        spec.keypoint_count = (1, 4);
        assert!(spec.validate().is_err());
        let mut spec = GenSpec::preset(ShapeKind::Bar, 0);
        spec.palette_size = 2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn donut_leaves_center_blank() {
        let mut spec = GenSpec::preset(ShapeKind::Pie, 4);
        spec.donut_hole = 0.5;
        let (raster, ann) = generate(&spec, 0).unwrap();
        let c = ann.shapes[0].keypoints[0];
        let (x, y) = raster.to_pixel(c);
        assert_eq!(raster.pixel(x as u32, y as u32), WHITE);
    }
}

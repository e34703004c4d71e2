//! JSON schemas for annotations and dataset manifests, plus image I/O.

use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::chartgen::{GenSpec, Raster};
use crate::geometry::{canonicalize, ChartAnnotation, Keypoint, Shape, ShapeKind};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecord {
    pub kind: String,
    pub keypoints: Vec<[f64; 2]>,
}

/// On-disk form of a [`ChartAnnotation`]; coordinates are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub width: u32,
    pub height: u32,
    pub chart_kind: String,
    pub shapes: Vec<ShapeRecord>,
}

impl From<&ChartAnnotation> for AnnotationFile {
    fn from(a: &ChartAnnotation) -> Self {
        Self {
            width: a.width,
            height: a.height,
            chart_kind: a.chart_kind.name().to_string(),
            shapes: a
                .shapes
                .iter()
                .map(|s| ShapeRecord {
                    kind: s.kind.name().to_string(),
                    keypoints: s.keypoints.iter().map(|p| [p.x, p.y]).collect(),
                })
                .collect(),
        }
    }
}

impl AnnotationFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Converts and checks that every shape is a valid ground-truth shape.
    pub fn to_annotation(&self) -> Result<ChartAnnotation, String> {
        let annotation = self.to_annotation_unchecked()?;
        for shape in &annotation.shapes {
            canonicalize(shape.kind, &shape.keypoints).map_err(|e| e.to_string())?;
        }
        annotation.validate().map_err(|e| e.to_string())?;
        Ok(annotation)
    }

    /// Converts, checking only the kind names.
    pub fn to_annotation_unchecked(&self) -> Result<ChartAnnotation, String> {
        let kind = |name: &str| ShapeKind::parse(name).ok_or_else(|| format!("unknown shape kind {name:?}"));
        let shapes = self
            .shapes
            .iter()
            .map(|s| {
                Ok(Shape {
                    kind: kind(&s.kind)?,
                    keypoints: s.keypoints.iter().map(|[x, y]| Keypoint::new(*x, *y)).collect(),
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(ChartAnnotation {
            width: self.width,
            height: self.height,
            chart_kind: kind(&self.chart_kind)?,
            shapes,
        })
    }
}

pub fn read_annotation(path: &Path) -> Result<ChartAnnotation, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    AnnotationFile::from_json(&text)
        .and_then(|f| f.to_annotation())
        .map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_annotation(path: &Path, annotation: &ChartAnnotation) -> Result<(), String> {
    std::fs::write(path, AnnotationFile::from(annotation).to_json()).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: u64,
    pub image: String,
    pub annotation: String,
}

/// Index of a generated dataset, carrying the spec that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: GenSpec,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Writes binary PPM (P6), or PNG when the extension is `.png`.
pub fn write_image(path: &Path, raster: &Raster) -> Result<(), String> {
    let file = std::fs::File::create(path).map_err(|e| e.to_string())?;
    let out = BufWriter::new(file);
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let (w, h) = (raster.width(), raster.height());
    let result = if is_png {
        PngEncoder::new(out).write_image(raster.bytes(), w, h, ExtendedColorType::Rgb8)
    } else {
        PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(raster.bytes(), w, h, ExtendedColorType::Rgb8)
    };
    result.map_err(|e| e.to_string())
}

pub fn read_image(path: &Path) -> Result<Raster, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    Raster::from_bytes(w, h, img.into_raw()).ok_or_else(|| format!("{}: bad pixel buffer", path.display()))
}

//! SVG overlays of shapes on their chart image. Pie centers are drawn as
//! red circles, every other keypoint as a green circle.

use std::fmt::Write;

use base64::Engine;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::chartgen::Raster;
use crate::geometry::{Shape, ShapeKind};

pub const ENDPOINT_COLOR: &str = "#00c000";
pub const CENTER_COLOR: &str = "#ff0000";
const OUTLINE_COLOR: &str = "#0050ff";

fn png_data_uri(raster: &Raster) -> String {
    let mut png = Vec::new();
    PngEncoder::new(&mut png)
        .write_image(raster.bytes(), raster.width(), raster.height(), ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding");
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    )
}

/// Renders `shapes` (normalized coordinates) over `raster`.
pub fn render_svg(raster: &Raster, shapes: &[Shape]) -> String {
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let r = (w.min(h) / 64.0).max(1.0);
    let px = |x: f64, y: f64| (x * w, y * h);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<image x="0" y="0" width="{w}" height="{h}" href="{}"/>"#,
        png_data_uri(raster)
    );
    let circle = |svg: &mut String, (x, y): (f64, f64), color: &str| {
        let _ = writeln!(
            svg,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="{r:.3}" fill="{color}" fill-opacity="0.8"/>"#
        );
    };
    for shape in shapes {
        let points: Vec<(f64, f64)> = shape.keypoints.iter().map(|p| px(p.x, p.y)).collect();
        match shape.kind {
            ShapeKind::Bar if points.len() == 2 => {
                let (a, b) = (points[0], points[1]);
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="{OUTLINE_COLOR}" stroke-width="{:.3}"/>"#,
                    a.0.min(b.0),
                    a.1.min(b.1),
                    (a.0 - b.0).abs(),
                    (a.1 - b.1).abs(),
                    r / 2.0
                );
            }
            ShapeKind::Line => {
                let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{OUTLINE_COLOR}" stroke-width="{:.3}"/>"#,
                    path.join(" "),
                    r / 2.0
                );
            }
            _ => {}
        }
        for (i, &p) in points.iter().enumerate() {
            let color = if shape.kind == ShapeKind::Pie && i == 0 {
                CENTER_COLOR
            } else {
                ENDPOINT_COLOR
            };
            circle(&mut svg, p, color);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

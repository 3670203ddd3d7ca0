//! Static plot rendering to PNG: loss/metric curves and per-kind response
//! histograms. Axis ranges and the legend go into a JSON sidecar next to the
//! image (no font rendering here).

use std::path::Path;

use contrario_core::histogram::HistogramReport;
use contrario_core::pairing::PairingKind;
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::{Error, Result};

const W: u32 = 800;
const H: u32 = 500;
const MARGIN: u32 = 40;

/// Plot colors per pairing kind (matching the usual figure convention:
/// real-conditional yellow, generated-conditional blue, real-a-contrario
/// red, generated-a-contrario green).
pub fn kind_color(kind: PairingKind) -> [u8; 3] {
    match kind {
        PairingKind::RealConditional => [230, 190, 40],
        PairingKind::GeneratedConditional => [50, 90, 220],
        PairingKind::RealAContrario => [220, 60, 50],
        PairingKind::GeneratedAContrario => [60, 170, 80],
    }
}

pub struct Series {
    pub name: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    x_range: (f64, f64),
    y_range: (f64, f64),
    series: Vec<SidecarEntry<'a>>,
}

#[derive(Serialize)]
struct SidecarEntry<'a> {
    name: &'a str,
    color: [u8; 3],
}

fn draw_line(img: &mut RgbImage, x0: f32, y0: f32, x1: f32, y1: f32, color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = x0 + t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

fn frame(img: &mut RgbImage) {
    let (w, h) = (img.width(), img.height());
    for x in MARGIN..w - MARGIN {
        img.put_pixel(x, h - MARGIN, Rgb([0, 0, 0]));
        img.put_pixel(x, MARGIN, Rgb([200, 200, 200]));
    }
    for y in MARGIN..h - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
        img.put_pixel(w - MARGIN, y, Rgb([200, 200, 200]));
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Dataset(format!("writing {}: {e}", path.display())))
}

fn write_sidecar(path: &Path, sidecar: &Sidecar<'_>) -> Result<()> {
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::Serde(e.to_string()))?;
    let sidecar_path = path.with_extension("json");
    std::fs::write(&sidecar_path, json).map_err(|e| Error::io(&sidecar_path, e))
}

/// Render line series into `path` (PNG) with a `.json` sidecar describing
/// ranges and legend.
pub fn render_curves(series: &[Series], path: &Path) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Dataset("nothing to plot".into()));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    frame(&mut img);
    let span_x = (W - 2 * MARGIN) as f64;
    let span_y = (H - 2 * MARGIN) as f64;
    let px = |x: f64| (MARGIN as f64 + (x - x_min) / (x_max - x_min) * span_x) as f32;
    let py = |y: f64| (H as f64 - MARGIN as f64 - (y - y_min) / (y_max - y_min) * span_y) as f32;
    for s in series {
        for pair in s.points.windows(2) {
            draw_line(&mut img, px(pair[0].0), py(pair[0].1), px(pair[1].0), py(pair[1].1), s.color);
        }
    }
    save(&img, path)?;
    write_sidecar(
        path,
        &Sidecar {
            x_range: (x_min, x_max),
            y_range: (y_min, y_max),
            series: series
                .iter()
                .map(|s| SidecarEntry { name: &s.name, color: s.color })
                .collect(),
        },
    )
}

/// Render a shared-edge histogram report as per-kind step outlines.
pub fn render_histogram(report: &HistogramReport, path: &Path) -> Result<()> {
    let mut series = Vec::new();
    for kh in &report.kinds {
        let total: u64 = kh.counts.iter().sum();
        let mut points = Vec::new();
        for (i, &c) in kh.counts.iter().enumerate() {
            let density = c as f64 / total.max(1) as f64;
            points.push((report.edges[i], density));
            points.push((report.edges[i + 1], density));
        }
        series.push(Series {
            name: kh.kind.label().to_string(),
            color: kind_color(kh.kind),
            points,
        });
    }
    render_curves(&series, path)
}

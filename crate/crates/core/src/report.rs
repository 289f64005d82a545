//! Text tables, metric comparisons and pixmap images for scored layers.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::importance::{FeatureMapBatch, LayerImportance};
use crate::spectral::{energy_map, RealMatrix};
use crate::stats::spearman;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (`P5`).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    /// Binary PPM (`P6`).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }
}

/// Linear map of a non-negative matrix onto 0..=255, max value at 255.
pub fn to_gray(m: &RealMatrix) -> GrayImage {
    let max = m.data().iter().copied().fold(0.0, f64::max);
    let pixels = m
        .data()
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage {
        width: m.cols(),
        height: m.rows(),
        pixels,
    }
}

/// Batch-averaged centered spectral magnitude of one channel.
pub fn mean_energy_map(fm: &FeatureMapBatch, channel: usize) -> RealMatrix {
    let slices = fm.channel_slices(channel);
    let (h, w) = slices[0].dims();
    let mut acc = RealMatrix::zeros(h, w);
    for s in &slices {
        let e = energy_map(s);
        for r in 0..h {
            for c in 0..w {
                acc.set(r, c, acc.get(r, c) + e.get(r, c));
            }
        }
    }
    acc.scaled(1.0 / slices.len() as f64)
}

pub fn spectral_heatmap(fm: &FeatureMapBatch, channel: usize) -> GrayImage {
    to_gray(&mean_energy_map(fm, channel))
}

pub fn ranked_table(layer: &LayerImportance) -> String {
    let mut s = String::new();
    let beta = layer
        .beta
        .map_or_else(String::new, |b| format!(", beta {b}"));
    writeln!(
        s,
        "layer {} ({} metric{beta}, batch {}, {} channels)",
        layer.layer,
        layer.metric,
        layer.batch,
        layer.channels()
    )
    .unwrap();
    writeln!(s, "{:>6}  {:>8}  {:>22}", "rank", "channel", "score").unwrap();
    for (pos, &ch) in layer.order.iter().enumerate() {
        writeln!(s, "{:>6}  {:>8}  {:>22.17}", pos + 1, ch + 1, layer.scores[ch]).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerComparison {
    pub layer: String,
    pub spearman: Option<f64>,
}

/// Spearman correlation per layer between two score sets over the same
/// layers and channel counts.
pub fn compare_scores(a: &[LayerImportance], b: &[LayerImportance]) -> Result<Vec<LayerComparison>> {
    let ids = |s: &[LayerImportance]| s.iter().map(|l| l.layer.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::InvalidArgument(format!(
            "score files cover different layers: {:?} vs {:?}",
            ids(a),
            ids(b)
        )));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.channels() != y.channels() {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: {} vs {} channels",
                    x.layer,
                    x.channels(),
                    y.channels()
                )));
            }
            Ok(LayerComparison {
                layer: x.layer.clone(),
                spearman: spearman(&x.scores, &y.scores),
            })
        })
        .collect()
}

const PLOT_W: usize = 512;
const PLOT_H: usize = 256;
const MARGIN: usize = 16;
const FIRST_COLOR: [u8; 3] = [200, 40, 40];
const SECOND_COLOR: [u8; 3] = [40, 80, 200];

/// Two-series chart: channels on the x axis arranged by ascending score of
/// `a`, each series min-max normalized. `a` is drawn red, `b` blue.
pub fn comparison_chart(a: &LayerImportance, b: &LayerImportance) -> RgbImage {
    let mut img = RgbImage::filled(PLOT_W, PLOT_H, [255, 255, 255]);
    let (x0, y0) = (MARGIN as i64, (PLOT_H - MARGIN) as i64);
    let (x1, y1) = ((PLOT_W - MARGIN) as i64, MARGIN as i64);
    img.line((x0, y0), (x1, y0), [128, 128, 128]);
    img.line((x0, y0), (x0, y1), [128, 128, 128]);

    let mut by_a: Vec<usize> = a.order.clone();
    by_a.reverse();
    let n = by_a.len();
    let xpos = |k: usize| -> i64 {
        if n <= 1 {
            (x0 + x1) / 2
        } else {
            x0 + ((x1 - x0) as f64 * k as f64 / (n - 1) as f64).round() as i64
        }
    };
    for (series, color) in [(&a.scores, FIRST_COLOR), (&b.scores, SECOND_COLOR)] {
        let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ypos = |v: f64| -> i64 {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            y0 - ((y0 - y1) as f64 * t).round() as i64
        };
        let points: Vec<(i64, i64)> = by_a
            .iter()
            .enumerate()
            .map(|(k, &ch)| (xpos(k), ypos(series[ch])))
            .collect();
        for w in points.windows(2) {
            img.line(w[0], w[1], color);
        }
        for &(x, y) in &points {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    img.put(x + dx, y + dy, color);
                }
            }
        }
    }
    img
}

/// Safe file-name fragment for a layer id.
pub fn file_stem(layer: &str) -> String {
    let stem: String = layer
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if stem.is_empty() {
        "layer".into()
    } else {
        stem
    }
}

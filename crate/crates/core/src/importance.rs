//! Channel importance scoring.
//!
//! The energy-zone metric looks at the centered spectral magnitude of each
//! feature-map slice and measures the share of it that falls *outside* a
//! small square around the DC bin. Channels whose spectrum is spread out
//! score close to 1, channels whose energy sits at low frequencies score
//! close to 0. The numerical-rank score and the 70%-energy circle radius
//! are provided alongside for comparison.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::numerical_rank_with_epsilon;
use crate::spectral::{energy_map, for_each_half_column, magnitude, RealMatrix};

pub const DEFAULT_BETA: f64 = 0.25;

/// Energy fraction enclosed by the diagnostic circle.
pub const CIRCLE_ENERGY_FRACTION: f64 = 0.7;

/// Zone-size hyper-parameter, strictly inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Beta(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "beta must lie in (0, 1), got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Beta {
    fn default() -> Self {
        Beta(DEFAULT_BETA)
    }
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("beta {s:?} is not a number")))?;
        Beta::new(v)
    }
}

/// 1-based DC center of the shifted spectrum. Both parity branches land on
/// the 0-based index `n / 2`.
pub fn zone_center(height: usize, width: usize) -> (usize, usize) {
    let axis = |n: usize| if n.is_multiple_of(2) { n / 2 + 1 } else { n.div_ceil(2) };
    (axis(height), axis(width))
}

/// Chebyshev half-width of the energy zone.
pub fn zone_distance(height: usize, width: usize, beta: Beta) -> usize {
    ZoneGeometry::new(height, width, beta).distance
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZoneGeometry {
    pub height: usize,
    pub width: usize,
    /// 1-based `(x, y)`.
    pub center: (usize, usize),
    /// `(l_h, l_w)`: bins between the center and the last row / column.
    pub extent: (usize, usize),
    pub distance: usize,
    pub beta: Beta,
}

impl ZoneGeometry {
    pub fn new(height: usize, width: usize, beta: Beta) -> Self {
        let center = zone_center(height, width);
        let extent = (height - center.0, width - center.1);
        let distance = if center.0 == 1 || center.1 == 1 {
            0
        } else {
            let raw = beta.value() * extent.0.min(extent.1) as f64;
            // products such as 0.1 * 30 land a hair above the integer
            let nearest = raw.round();
            if (raw - nearest).abs() < 1e-9 {
                nearest as usize
            } else {
                raw.ceil() as usize
            }
        };
        Self {
            height,
            width,
            center,
            extent,
            distance,
            beta,
        }
    }

    /// 0-based center index into a shifted spectrum.
    pub fn center_index(&self) -> (usize, usize) {
        (self.center.0 - 1, self.center.1 - 1)
    }

    /// Side length of the square zone, `2d + 1`.
    pub fn side(&self) -> usize {
        2 * self.distance + 1
    }

    /// Sum of `energy` over the zone square.
    pub fn zone_sum(&self, energy: &RealMatrix) -> f64 {
        let (cr, cc) = self.center_index();
        let d = self.distance;
        let mut sum = 0.0;
        for r in cr - d..=cr + d {
            for c in cc - d..=cc + d {
                sum += energy.get(r, c);
            }
        }
        sum
    }

    /// Share of the slice's spectral magnitude outside the zone; 0 for an
    /// all-zero slice.
    ///
    /// Works on the stored half of the unshifted spectrum and equals
    /// `1 - zone_sum(energy_map(slice)) / sum(energy_map(slice))` up to
    /// summation order. Zone bins are visited in a fixed order, so nested
    /// zones give non-increasing ratios exactly.
    pub fn outside_ratio(&self, slice: &RealMatrix) -> f64 {
        debug_assert_eq!(slice.dims(), (self.height, self.width));
        let (h, w) = (self.height, self.width);
        let (cr, cc) = self.center_index();
        let d = self.distance;
        // shifted index s holds unshifted bin (s - n/2) mod n
        let zone_rows: Vec<usize> = (cr - d..=cr + d).map(|s| (s + h - h / 2) % h).collect();
        let mut in_zone_col = vec![false; w];
        for s in cc - d..=cc + d {
            in_zone_col[(s + w - w / 2) % w] = true;
        }

        let (mut total, mut zone) = (0.0, 0.0);
        for_each_half_column(slice, |c, column| {
            let mirror = (w - c) % w;
            let paired = mirror != c;
            let col_sum: f64 = column.iter().map(|&z| magnitude(z)).sum();
            total += if paired { 2.0 * col_sum } else { col_sum };
            if in_zone_col[c] {
                zone += zone_rows.iter().map(|&r| magnitude(column[r])).sum::<f64>();
            }
            if paired && in_zone_col[mirror] {
                zone += zone_rows
                    .iter()
                    .map(|&r| magnitude(column[(h - r) % h]))
                    .sum::<f64>();
            }
        });
        if total == 0.0 {
            return 0.0;
        }
        (1.0 - zone / total).clamp(0.0, 1.0)
    }
}

/// Feature maps of one layer, `batch x channels x height x width`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapBatch {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    epsilon: f64,
}

impl FeatureMapBatch {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let [batch, channels, height, width] = dims;
        if dims.contains(&0) {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {dims:?}"
            )));
        }
        let expected = batch * channels * height * width;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "feature map {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
            epsilon: f64::EPSILON,
        })
    }

    /// Records the machine epsilon of the precision the values came from;
    /// the rank metric scales its tolerance by it. Defaults to `f64::EPSILON`.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Builds a batch from `slices[b][j]`.
    pub fn from_slices(slices: &[Vec<RealMatrix>]) -> Result<Self> {
        let batch = slices.len();
        let channels = slices.first().map_or(0, Vec::len);
        let (height, width) = slices
            .first()
            .and_then(|s| s.first())
            .map_or((0, 0), RealMatrix::dims);
        let mut data = Vec::with_capacity(batch * channels * height * width);
        for (b, sample) in slices.iter().enumerate() {
            if sample.len() != channels {
                return Err(Error::Shape(format!(
                    "sample {b} has {} channels, expected {channels}",
                    sample.len()
                )));
            }
            for m in sample {
                if m.dims() != (height, width) {
                    return Err(Error::Shape(format!(
                        "sample {b} holds a {}x{} slice, expected {height}x{width}",
                        m.rows(),
                        m.cols()
                    )));
                }
                data.extend_from_slice(m.data());
            }
        }
        Self::new([batch, channels, height, width], data)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, sample: usize, channel: usize) -> RealMatrix {
        let len = self.height * self.width;
        let start = (sample * self.channels + channel) * len;
        RealMatrix::new(self.height, self.width, self.data[start..start + len].to_vec())
            .expect("slice of a validated batch")
    }

    /// All batch samples of one channel.
    pub fn channel_slices(&self, channel: usize) -> Vec<RealMatrix> {
        (0..self.batch).map(|b| self.slice(b, channel)).collect()
    }

    /// Keeps only the first `limit` samples.
    pub fn truncate_batch(&mut self, limit: usize) {
        if limit >= 1 && limit < self.batch {
            self.batch = limit;
            self.data
                .truncate(limit * self.channels * self.height * self.width);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Energy,
    Rank,
    Circle,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Energy => "energy",
            Metric::Rank => "rank",
            Metric::Circle => "circle",
        })
    }
}

/// Per-channel scores of one layer and the channel order they induce.
///
/// `order` holds 0-based channel indices, most important first. Energy
/// scores live in `[0, 1]`; rank scores are mean ranks in
/// `[0, min(H, W)]`; circle scores are mean radii in bins.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerImportance {
    pub layer: String,
    pub metric: Metric,
    pub beta: Option<f64>,
    pub batch: usize,
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl LayerImportance {
    pub fn new(metric: Metric, beta: Option<f64>, batch: usize, scores: Vec<f64>) -> Self {
        let order = sort_channels(&scores);
        Self {
            layer: String::new(),
            metric,
            beta,
            batch,
            scores,
            order,
        }
    }

    pub fn with_layer(mut self, layer: impl Into<String>) -> Self {
        self.layer = layer.into();
        self
    }

    pub fn channels(&self) -> usize {
        self.scores.len()
    }
}

/// Channel indices sorted by descending score; ties keep the lower index first.
pub fn sort_channels(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
    });
    order
}

fn check_same_dims(slices: &[RealMatrix]) -> Result<(usize, usize)> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Shape("no slices to score".into()))?
        .dims();
    if let Some(bad) = slices.iter().position(|s| s.dims() != first) {
        return Err(Error::Shape(format!(
            "slice {bad} is {}x{}, expected {}x{}",
            slices[bad].rows(),
            slices[bad].cols(),
            first.0,
            first.1
        )));
    }
    Ok(first)
}

/// Batch-averaged energy-zone ratio of one channel.
pub fn energy_zone_ratio(slices: &[RealMatrix], beta: Beta) -> Result<f64> {
    let (height, width) = check_same_dims(slices)?;
    let zone = ZoneGeometry::new(height, width, beta);
    let total: f64 = slices.iter().map(|s| zone.outside_ratio(s)).sum();
    Ok(total / slices.len() as f64)
}

pub fn layer_energy_scores(fm: &FeatureMapBatch, beta: Beta) -> Result<LayerImportance> {
    let scores = (0..fm.channels)
        .into_par_iter()
        .map(|j| energy_zone_ratio(&fm.channel_slices(j), beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerImportance::new(
        Metric::Energy,
        Some(beta.value()),
        fm.batch,
        scores,
    ))
}

/// Batch-averaged numerical rank per channel.
pub fn rank_score(fm: &FeatureMapBatch) -> Result<LayerImportance> {
    let scores = (0..fm.channels)
        .into_par_iter()
        .map(|j| {
            let mut sum = 0usize;
            for b in 0..fm.batch {
                sum += numerical_rank_with_epsilon(&fm.slice(b, j), fm.epsilon)?;
            }
            Ok(sum as f64 / fm.batch as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerImportance::new(Metric::Rank, None, fm.batch, scores))
}

/// Smallest radius (in bins, measured from the DC center of the shifted
/// spectrum) whose disc holds at least `fraction` of the total magnitude.
pub fn circle_radius(slice: &RealMatrix, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "energy fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let energy = energy_map(slice);
    let (height, width) = energy.dims();
    let (cr, cc) = (height / 2, width / 2);

    let mut bins: Vec<(usize, f64)> = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let dist_sq = r.abs_diff(cr).pow(2) + c.abs_diff(cc).pow(2);
            bins.push((dist_sq, energy.get(r, c)));
        }
    }
    bins.sort_by_key(|&(d, _)| d);

    // same summation order as the running sum, so fraction 1.0 is reachable
    let total: f64 = bins.iter().map(|&(_, e)| e).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let target = fraction * total;
    let mut acc = 0.0;
    let mut idx = 0;
    while idx < bins.len() {
        let dist_sq = bins[idx].0;
        while idx < bins.len() && bins[idx].0 == dist_sq {
            acc += bins[idx].1;
            idx += 1;
        }
        if acc >= target {
            return Ok((dist_sq as f64).sqrt());
        }
    }
    Ok((bins[bins.len() - 1].0 as f64).sqrt())
}

/// Batch-averaged 70%-energy circle radius per channel.
pub fn circle_scores(fm: &FeatureMapBatch, fraction: f64) -> Result<LayerImportance> {
    let scores = (0..fm.channels)
        .into_par_iter()
        .map(|j| {
            let mut sum = 0.0;
            for b in 0..fm.batch {
                sum += circle_radius(&fm.slice(b, j), fraction)?;
            }
            Ok(sum / fm.batch as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerImportance::new(Metric::Circle, None, fm.batch, scores))
}

/// Scores a layer with the requested metric.
pub fn score_layer(fm: &FeatureMapBatch, metric: Metric, beta: Beta) -> Result<LayerImportance> {
    match metric {
        Metric::Energy => layer_energy_scores(fm, beta),
        Metric::Rank => rank_score(fm),
        Metric::Circle => circle_scores(fm, CIRCLE_ENERGY_FRACTION),
    }
}

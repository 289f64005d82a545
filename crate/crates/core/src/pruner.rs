//! Keep/prune plans built from channel orderings, and their composition over
//! repeated pruning passes.
//!
//! Channel indices are 0-based here. Plans are canonical: every layer's
//! `keep` list is strictly ascending.

use log::warn;

use crate::error::{Error, Result};
use crate::importance::LayerImportance;
use crate::spectral::KernelTensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub layer: String,
    channels: usize,
    keep: Vec<usize>,
}

impl LayerPlan {
    pub fn new(layer: impl Into<String>, channels: usize, keep: Vec<usize>) -> Result<Self> {
        let layer = layer.into();
        if keep.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer}: plan keeps no channels"
            )));
        }
        if let Some(&bad) = keep.iter().find(|&&k| k >= channels) {
            return Err(Error::InvalidArgument(format!(
                "layer {layer}: channel {bad} out of range for {channels} channels"
            )));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "layer {layer}: keep list not strictly ascending"
            )));
        }
        Ok(Self {
            layer,
            channels,
            keep,
        })
    }

    pub fn keep_all(layer: impl Into<String>, channels: usize) -> Self {
        Self {
            layer: layer.into(),
            channels,
            keep: (0..channels).collect(),
        }
    }

    /// Channel count of the layer the plan applies to.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn keep(&self) -> &[usize] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrunePlan {
    pub layers: Vec<LayerPlan>,
}

impl PrunePlan {
    pub fn new(layers: Vec<LayerPlan>) -> Self {
        Self { layers }
    }

    pub fn layer(&self, id: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer == id)
    }
}

/// `max(1, round(ratio * channels))`.
pub fn keep_count_from_ratio(ratio: f64, channels: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(((ratio * channels as f64).round() as usize).clamp(1, channels))
}

/// Keeps the `keep_count` most important channels.
pub fn make_plan(importance: &LayerImportance, keep_count: usize) -> Result<LayerPlan> {
    let channels = importance.order.len();
    if keep_count == 0 || keep_count > channels {
        return Err(Error::InvalidArgument(format!(
            "layer {}: keep count {keep_count} outside 1..={channels}",
            importance.layer
        )));
    }
    let mut keep = importance.order[..keep_count].to_vec();
    keep.sort_unstable();
    LayerPlan::new(importance.layer.clone(), channels, keep)
}

/// Maps a second-pass plan, indexed over the survivors of `first`, back onto
/// the original channels.
pub fn compose_layer(first: &LayerPlan, second: &LayerPlan) -> Result<LayerPlan> {
    if first.layer != second.layer {
        return Err(Error::InvalidArgument(format!(
            "cannot compose plans for different layers {} and {}",
            first.layer, second.layer
        )));
    }
    if second.channels != first.kept() {
        return Err(Error::InvalidArgument(format!(
            "layer {}: second pass expects {} channels but first pass keeps {}",
            first.layer,
            second.channels,
            first.kept()
        )));
    }
    // second.keep is ascending and first.keep is ascending, so the image is too
    let keep = second.keep.iter().map(|&k| first.keep[k]).collect();
    LayerPlan::new(first.layer.clone(), first.channels, keep)
}

pub fn compose_plans(first: &PrunePlan, second: &PrunePlan) -> Result<PrunePlan> {
    if first.layers.len() != second.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "plans cover {} and {} layers",
            first.layers.len(),
            second.layers.len()
        )));
    }
    let layers = first
        .layers
        .iter()
        .zip(&second.layers)
        .map(|(a, b)| compose_layer(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrunePlan::new(layers))
}

/// Sub-kernel restricted to the given input and output channels.
pub fn apply_plan(kernel: &KernelTensor, in_keep: &[usize], out_keep: &[usize]) -> Result<KernelTensor> {
    let check = |keep: &[usize], limit: usize, side: &str| -> Result<()> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {side} channel selection")));
        }
        match keep.iter().find(|&&k| k >= limit) {
            Some(bad) => Err(Error::InvalidArgument(format!(
                "{side} channel {bad} out of range for {limit} channels"
            ))),
            None => Ok(()),
        }
    };
    check(in_keep, kernel.inputs(), "input")?;
    check(out_keep, kernel.outputs(), "output")?;
    Ok(KernelTensor::from_fn(
        kernel.size(),
        in_keep.len(),
        out_keep.len(),
        |u, v, i, j| kernel.get(u, v, in_keep[i], out_keep[j]),
    ))
}

/// Prunes a sequential stack of convolutions: layer `k` loses the output
/// channels dropped by plan layer `k` and the input channels dropped by plan
/// layer `k - 1`. The first layer keeps all of its inputs.
pub fn prune_chain(kernels: &[KernelTensor], plan: &PrunePlan) -> Result<Vec<KernelTensor>> {
    if kernels.len() != plan.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} kernels but plan covers {} layers",
            kernels.len(),
            plan.layers.len()
        )));
    }
    let mut out = Vec::with_capacity(kernels.len());
    let mut in_keep: Vec<usize> = (0..kernels.first().map_or(0, KernelTensor::inputs)).collect();
    for (kernel, layer) in kernels.iter().zip(&plan.layers) {
        if layer.channels != kernel.outputs() {
            return Err(Error::InvalidArgument(format!(
                "layer {}: plan covers {} channels, kernel has {}",
                layer.layer,
                layer.channels,
                kernel.outputs()
            )));
        }
        out.push(apply_plan(kernel, &in_keep, &layer.keep)?);
        in_keep = layer.keep.clone();
    }
    Ok(out)
}

/// Warnings for adjacent layers whose channel counts disagree, such as
/// residual blocks whose shortcut forces matching channel sets.
pub fn check_chain_consistency(kernels: &[KernelTensor], plan: &PrunePlan) -> Vec<String> {
    let mut warnings = Vec::new();
    for (k, pair) in kernels.windows(2).enumerate() {
        if pair[0].outputs() != pair[1].inputs() {
            warnings.push(format!(
                "layer {} emits {} channels but layer {} consumes {}",
                k,
                pair[0].outputs(),
                k + 1,
                pair[1].inputs()
            ));
        }
    }
    for (kernel, layer) in kernels.iter().zip(&plan.layers) {
        if layer.channels != kernel.outputs() {
            warnings.push(format!(
                "layer {} plan covers {} channels, kernel has {}",
                layer.layer,
                layer.channels,
                kernel.outputs()
            ));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    warnings
}

/// Shape of one stride-1 convolution producing `height x width` maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn params(&self) -> u64 {
        (self.kernel * self.kernel * self.inputs * self.outputs) as u64
    }

    /// Multiply-accumulates per sample.
    pub fn flops(&self) -> u64 {
        self.params() * (self.height * self.width) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostSummary {
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
}

impl CostSummary {
    pub fn params_reduction(&self) -> f64 {
        1.0 - self.params_after as f64 / self.params_before as f64
    }

    pub fn flops_reduction(&self) -> f64 {
        1.0 - self.flops_after as f64 / self.flops_before as f64
    }
}

/// Parameter and FLOP totals of a sequential stack before and after `plan`.
pub fn chain_cost(shapes: &[ConvShape], plan: &PrunePlan) -> Result<CostSummary> {
    if shapes.len() != plan.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} layer shapes but plan covers {} layers",
            shapes.len(),
            plan.layers.len()
        )));
    }
    let mut summary = CostSummary {
        params_before: 0,
        params_after: 0,
        flops_before: 0,
        flops_after: 0,
    };
    let mut inputs_after = shapes.first().map_or(0, |s| s.inputs);
    for (shape, layer) in shapes.iter().zip(&plan.layers) {
        let pruned = ConvShape {
            inputs: inputs_after,
            outputs: layer.kept(),
            ..*shape
        };
        summary.params_before += shape.params();
        summary.flops_before += shape.flops();
        summary.params_after += pruned.params();
        summary.flops_after += pruned.flops();
        inputs_after = layer.kept();
    }
    Ok(summary)
}

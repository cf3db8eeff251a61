//! Anomaly scoring: per-neighbor distance heatmaps, the certainty-weighted
//! score, and the final smoothed map at input resolution.

use crate::bank::MemoryBank;
use crate::descriptor::{EmbeddedGrid, PatchDescriptor};
use crate::imageops::{gaussian_blur, resize_bilinear};
use crate::patch::PatchGrid;
use crate::scalar::Real;
use crate::{CfaError, Result};

pub const DEFAULT_SIGMA: f64 = 4.0;

/// `maps[k][t]`: squared distance from patch `t` to its `(k+1)`-th nearest
/// center.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub height: usize,
    pub width: usize,
    pub maps: Vec<Vec<f64>>,
}

impl HeatmapStack {
    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn patch_count(&self) -> usize {
        self.height * self.width
    }

    fn check(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(CfaError::InvalidArgument("empty heatmap stack".into()));
        }
        if self.maps.iter().any(|m| m.len() != self.patch_count()) {
            return Err(CfaError::Shape("heatmap size differs from grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScoreMap {
    /// Grid resolution `(H, W)` of `raw`.
    pub grid: (usize, usize),
    /// Input resolution `(height, width)` of `upsampled` and `normalized`.
    pub resolution: (usize, usize),
    pub raw: Vec<f32>,
    /// Interpolated and smoothed, before normalization.
    pub upsampled: Vec<f32>,
    /// Per-sample min-max scaled `upsampled`, in `[0, 1]`.
    pub normalized: Vec<f32>,
    /// Maximum of `upsampled`.
    pub image_score: f64,
}

pub fn build_heatmaps<F: Real>(embedded: &EmbeddedGrid<F>, bank: &MemoryBank<F>, k: usize) -> Result<HeatmapStack> {
    let table = bank.knn_grid(embedded, k)?;
    let t_count = embedded.patch_count();
    let maps = (0..k)
        .map(|kk| (0..t_count).map(|t| table.distances_of(t)[kk].as_f64()).collect())
        .collect();
    Ok(HeatmapStack {
        height: embedded.height,
        width: embedded.width,
        maps,
    })
}

/// Minimum distance over the stack at each location.
pub fn naive_score(stack: &HeatmapStack) -> Result<Vec<f64>> {
    stack.check()?;
    Ok((0..stack.patch_count())
        .map(|t| stack.maps.iter().map(|m| m[t]).fold(f64::INFINITY, f64::min))
        .collect())
}

/// Softmin weights `exp(-d_k) / sum_i exp(-d_i)`, evaluated with the
/// minimum subtracted first.
pub fn softmin_weights(distances: &[f64]) -> Vec<f64> {
    let m = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = distances.iter().map(|&d| (-(d - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Naive score scaled by the softmin weight of the nearest center.
pub fn certainty_score(stack: &HeatmapStack) -> Result<Vec<f64>> {
    stack.check()?;
    Ok((0..stack.patch_count())
        .map(|t| {
            let s = stack.maps.iter().map(|m| m[t]).fold(f64::INFINITY, f64::min);
            let denom: f64 = stack.maps.iter().map(|m| (-(m[t] - s)).exp()).sum();
            s / denom
        })
        .collect())
}

/// Upsamples to `resolution`, blurs with a Gaussian of `sigma`, takes the
/// maximum as the image score and min-max normalizes.
pub fn finalize_map(
    raw: &[f64],
    grid: (usize, usize),
    resolution: (usize, usize),
    sigma: f64,
) -> Result<AnomalyScoreMap> {
    let (h, w) = grid;
    let (out_h, out_w) = resolution;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(CfaError::InvalidArgument(format!(
            "degenerate resolution {h}x{w} -> {out_h}x{out_w}"
        )));
    }
    if raw.len() != h * w {
        return Err(CfaError::Shape(format!("raw map of {} values for {h}x{w}", raw.len())));
    }
    if !(sigma > 0.0) {
        return Err(CfaError::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let up = resize_bilinear(raw, h, w, out_h, out_w);
    let blurred: Vec<f32> = gaussian_blur(&up, out_h, out_w, sigma)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let max = blurred.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = blurred.iter().copied().fold(f32::INFINITY, f32::min);
    let normalized = if max > min {
        let span = (max - min) as f64;
        blurred
            .iter()
            .map(|&v| (((v - min) as f64) / span).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.0; blurred.len()]
    };
    Ok(AnomalyScoreMap {
        grid,
        resolution,
        raw: raw.iter().map(|&v| v as f32).collect(),
        upsampled: blurred,
        normalized,
        image_score: max as f64,
    })
}

/// Full test-time path for one sample.
pub fn score_grid<F: Real>(
    grid: &PatchGrid,
    descriptor: &PatchDescriptor<F>,
    bank: &MemoryBank<F>,
    k: usize,
    resolution: (usize, usize),
    sigma: f64,
) -> Result<AnomalyScoreMap> {
    let embedded = descriptor.forward(grid)?;
    let stack = build_heatmaps(&embedded, bank, k)?;
    let raw = certainty_score(&stack)?;
    finalize_map(&raw, (grid.height(), grid.width()), resolution, sigma)
}

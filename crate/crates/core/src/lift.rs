//! Depth distributions and the depth-weighted features carried by frustum
//! points.
//!
//! The lifted feature of point `(n, h, w, d)` is
//! `probs(n, d, h, w) * features(n, ., h, w)`. It is never materialized as
//! an `NHWD x C` array; pooling backends compute it on the fly.

use rayon::prelude::*;

use crate::error::{BevError, Result};
use crate::tensor::Tensor;

/// Per-camera feature maps, shape `N x C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFeatureMap {
    values: Vec<f32>,
    n_cameras: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl CameraFeatureMap {
    pub fn new(
        n_cameras: usize,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let expected = n_cameras * channels * height * width;
        if values.len() != expected {
            return Err(BevError::validation(format!(
                "feature map {n_cameras}x{channels}x{height}x{width} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BevError::validation(format!("feature value {i} is not finite")));
        }
        Ok(Self {
            values,
            n_cameras,
            channels,
            height,
            width,
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [n, c, h, w] => Self::new(n, c, h, w, t.into_data()),
            _ => Err(BevError::validation(format!(
                "camera features must be 4-D (N, C, H, W), got shape {:?}",
                t.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.n_cameras, self.channels, self.height, self.width],
            self.values.clone(),
        )
        .expect("shape is consistent")
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.values[((n * self.channels + c) * self.height + h) * self.width + w]
    }

    /// Same values laid out `N x H x W x C`, so that the channel vector of a
    /// pixel is contiguous.
    pub fn to_pixel_major(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let c_len = self.channels;
        let mut out = vec![0.0f32; self.values.len()];
        if c_len == 0 {
            return out;
        }
        out.par_chunks_mut(hw * c_len)
            .zip(self.values.par_chunks(hw * c_len))
            .for_each(|(dst, src)| {
                for c in 0..c_len {
                    let plane = &src[c * hw..(c + 1) * hw];
                    for (pix, &v) in plane.iter().enumerate() {
                        dst[pix * c_len + c] = v;
                    }
                }
            });
        out
    }
}

/// Normalized per-pixel depth distributions, shape `N x D x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    probs: Vec<f32>,
    n_cameras: usize,
    depth_bins: usize,
    height: usize,
    width: usize,
}

impl DepthDistribution {
    /// Wraps already-normalized probabilities, checking that they are
    /// non-negative and sum to one per pixel within 1e-6.
    pub fn from_probs(
        n_cameras: usize,
        depth_bins: usize,
        height: usize,
        width: usize,
        probs: Vec<f32>,
    ) -> Result<Self> {
        let dist = Self::unchecked(n_cameras, depth_bins, height, width, probs)?;
        if let Some(i) = dist.probs.iter().position(|p| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(BevError::validation(format!(
                "probability {i} = {} outside [0, 1]",
                dist.probs[i]
            )));
        }
        let hw = height * width;
        for n in 0..n_cameras {
            for pix in 0..hw {
                let total: f64 = (0..depth_bins)
                    .map(|d| dist.probs[(n * depth_bins + d) * hw + pix] as f64)
                    .sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(BevError::validation(format!(
                        "depth distribution of camera {n} pixel {pix} sums to {total}"
                    )));
                }
            }
        }
        Ok(dist)
    }

    pub(crate) fn unchecked(
        n_cameras: usize,
        depth_bins: usize,
        height: usize,
        width: usize,
        probs: Vec<f32>,
    ) -> Result<Self> {
        let expected = n_cameras * depth_bins * height * width;
        if probs.len() != expected {
            return Err(BevError::validation(format!(
                "depth distribution {n_cameras}x{depth_bins}x{height}x{width} needs {expected} values, got {}",
                probs.len()
            )));
        }
        Ok(Self {
            probs,
            n_cameras,
            depth_bins,
            height,
            width,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }
    pub fn depth_bins(&self) -> usize {
        self.depth_bins
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    #[inline]
    pub(crate) fn get_unchecked_index(&self, n: usize, h: usize, w: usize, d: usize) -> f32 {
        self.probs[((n * self.depth_bins + d) * self.height + h) * self.width + w]
    }

    /// Depth weights in frustum point order, i.e. `out[point_index(n,h,w,d)]`.
    pub fn point_order_weights(&self) -> Vec<f32> {
        let (dn, hw) = (self.depth_bins, self.height * self.width);
        let mut out = vec![0.0f32; self.probs.len()];
        if out.is_empty() {
            return out;
        }
        out.par_chunks_mut(hw * dn)
            .zip(self.probs.par_chunks(hw * dn))
            .for_each(|(dst, src)| {
                for d in 0..dn {
                    for pix in 0..hw {
                        dst[pix * dn + d] = src[d * hw + pix];
                    }
                }
            });
        out
    }
}

/// Softmax over the depth axis of `N x D x H x W` logits, with
/// max-subtraction so large logits cannot overflow.
pub fn normalize_depth(logits: &Tensor) -> Result<DepthDistribution> {
    let [n_cameras, depth_bins, height, width] = *logits.shape() else {
        return Err(BevError::validation(format!(
            "depth logits must be 4-D (N, D, H, W), got shape {:?}",
            logits.shape()
        )));
    };
    if let Some(i) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(BevError::validation(format!("depth logit {i} is not finite")));
    }
    let hw = height * width;
    let block = depth_bins * hw;
    let mut probs = vec![0.0f32; logits.data().len()];
    if block > 0 {
        probs
            .par_chunks_mut(block)
            .zip(logits.data().par_chunks(block))
            .for_each(|(dst, src)| {
                let mut exps = vec![0.0f64; depth_bins];
                for pix in 0..hw {
                    let max = (0..depth_bins)
                        .map(|d| src[d * hw + pix])
                        .fold(f32::NEG_INFINITY, f32::max) as f64;
                    let mut total = 0.0f64;
                    for (d, e) in exps.iter_mut().enumerate() {
                        *e = (src[d * hw + pix] as f64 - max).exp();
                        total += *e;
                    }
                    for (d, e) in exps.iter().enumerate() {
                        dst[d * hw + pix] = (e / total) as f32;
                    }
                }
            });
    }
    DepthDistribution::unchecked(n_cameras, depth_bins, height, width, probs)
}

/// Weight of frustum point `(n, h, w, d)`: its depth probability.
pub fn point_weight(dist: &DepthDistribution, n: usize, h: usize, w: usize, d: usize) -> Result<f32> {
    for (axis, index, len) in [
        ("camera", n, dist.n_cameras),
        ("row", h, dist.height),
        ("column", w, dist.width),
        ("depth bin", d, dist.depth_bins),
    ] {
        if index >= len {
            return Err(BevError::Index { axis, index, len });
        }
    }
    Ok(dist.get_unchecked_index(n, h, w, d))
}

//! BEV pooling: reduce the depth-weighted camera features of every frustum
//! point into its BEV cell.
//!
//! Three interchangeable backends share one contract. For cell `g` and
//! channel `c` the output is the reducer applied to
//! `{ weight(p) * feature(p, c) : cell_of_point[p] == g }`, where the
//! per-point value is the `f64` product of two `f32` inputs (exact) and all
//! accumulation happens in `f64`. Empty cells are 0 for every reducer.
//!
//! - [`pool_naive`] scatters points in their original order; it is the
//!   reference the other two are checked against.
//! - [`pool_prefixsum`] reorders point values by the cached ranks, computes
//!   a running sum over all of them and subtracts at interval boundaries.
//! - [`pool_interval`] runs one independent reduction per interval of the
//!   cached ranks and writes exactly one output cell per channel.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bevgrid::{AssociationCache, BevGridSpec, OUT_OF_RANGE};
use crate::error::{BevError, Result};
use crate::lift::{CameraFeatureMap, DepthDistribution};
use crate::tensor::Tensor;

/// Rows per block of the two-pass parallel scan. Fixed so the running sum
/// does not depend on the thread count.
const SCAN_BLOCK_ROWS: usize = 4096;

/// Upper bound on the running-sum buffer of one channel block.
const SCAN_BUFFER_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reducer {
    Sum,
    Mean,
    Max,
}

impl Reducer {
    pub fn name(self) -> &'static str {
        match self {
            Reducer::Sum => "sum",
            Reducer::Mean => "mean",
            Reducer::Max => "max",
        }
    }
}

impl fmt::Display for Reducer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reducer {
    type Err = BevError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Reducer::Sum),
            "mean" => Ok(Reducer::Mean),
            "max" => Ok(Reducer::Max),
            other => Err(BevError::config(format!(
                "unknown reducer `{other}` (expected sum, mean or max)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Naive,
    PrefixSum,
    Interval,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Naive, Backend::PrefixSum, Backend::Interval];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Naive => "naive",
            Backend::PrefixSum => "prefixsum",
            Backend::Interval => "interval",
        }
    }

    pub fn supports(self, reducer: Reducer) -> bool {
        !(self == Backend::PrefixSum && reducer == Reducer::Max)
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = BevError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Backend::Naive),
            "prefixsum" | "prefix-sum" | "cumsum" => Ok(Backend::PrefixSum),
            "interval" => Ok(Backend::Interval),
            other => Err(BevError::config(format!(
                "unknown backend `{other}` (expected naive, prefixsum or interval)"
            ))),
        }
    }
}

/// Dense `C x nx x ny` feature map over a BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeatureMap {
    values: Vec<f32>,
    grid: BevGridSpec,
    channels: usize,
}

impl BevFeatureMap {
    pub fn new(channels: usize, grid: BevGridSpec, values: Vec<f32>) -> Result<Self> {
        let expected = channels * grid.n_cells();
        if values.len() != expected {
            return Err(BevError::validation(format!(
                "BEV map {channels}x{}x{} needs {expected} values, got {}",
                grid.nx(),
                grid.ny(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BevError::validation(format!("BEV value {i} is not finite")));
        }
        Ok(Self {
            values,
            grid,
            channels,
        })
    }

    pub fn zeros(channels: usize, grid: BevGridSpec) -> Self {
        Self {
            values: vec![0.0; channels * grid.n_cells()],
            grid,
            channels,
        }
    }

    /// Reads a `[C, nx, ny]` tensor laid over `grid`.
    pub fn from_tensor(t: Tensor, grid: BevGridSpec) -> Result<Self> {
        match *t.shape() {
            [c, nx, ny] if nx == grid.nx() && ny == grid.ny() => Self::new(c, grid, t.into_data()),
            _ => Err(BevError::validation(format!(
                "expected BEV tensor [C, {}, {}], got shape {:?}",
                grid.nx(),
                grid.ny(),
                t.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.grid.nx(), self.grid.ny()],
            self.values.clone(),
        )
        .expect("shape is consistent")
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn grid(&self) -> &BevGridSpec {
        &self.grid
    }
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, c: usize, ix: usize, iy: usize) -> f32 {
        self.values[(c * self.grid.nx() + ix) * self.grid.ny() + iy]
    }

    /// Channel `c` as an `nx * ny` slice, ix-major.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.grid.n_cells();
        &self.values[c * n..(c + 1) * n]
    }

    /// Copy of channels `range`.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.channels {
            return Err(BevError::Index {
                axis: "channel",
                index: range.end,
                len: self.channels,
            });
        }
        let n = self.grid.n_cells();
        Ok(Self {
            values: self.values[range.start * n..range.end * n].to_vec(),
            grid: self.grid,
            channels: range.len(),
        })
    }

    /// Sum over all cells and channels in `f64`.
    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    pub(crate) fn from_parts_unchecked(channels: usize, grid: BevGridSpec, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), channels * grid.n_cells());
        Self {
            values,
            grid,
            channels,
        }
    }
}

/// Checks that the cache, grid and tensors describe the same rig.
fn check_inputs(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
    grid: &BevGridSpec,
) -> Result<()> {
    if cache.grid() != grid {
        return Err(BevError::StaleCache(format!(
            "cache was built for a {}x{} grid with cell size {}, pooling requested {}x{} with cell size {}",
            cache.grid().nx(),
            cache.grid().ny(),
            cache.grid().cell_size(),
            grid.nx(),
            grid.ny(),
            grid.cell_size()
        )));
    }
    let fr = cache.frustum();
    let want = (cache.n_cameras(), fr.height(), fr.width());
    let got = (features.n_cameras(), features.height(), features.width());
    if got != want {
        return Err(BevError::validation(format!(
            "features have (N, H, W) = {got:?}, cache expects {want:?}"
        )));
    }
    let got = (dist.n_cameras(), dist.depth_bins(), dist.height(), dist.width());
    let want = (cache.n_cameras(), fr.depth_bins(), fr.height(), fr.width());
    if got != want {
        return Err(BevError::validation(format!(
            "depth distribution has (N, D, H, W) = {got:?}, cache expects {want:?}"
        )));
    }
    Ok(())
}

/// Maps a frustum point index to (pixel index, depth-probability index).
#[derive(Clone, Copy)]
struct PointLayout {
    depth_bins: usize,
    pixels_per_camera: usize,
}

impl PointLayout {
    fn new(dist: &DepthDistribution) -> Self {
        Self {
            depth_bins: dist.depth_bins(),
            pixels_per_camera: dist.height() * dist.width(),
        }
    }

    #[inline]
    fn split(&self, point: usize) -> (usize, usize) {
        let d = point % self.depth_bins;
        let pixel = point / self.depth_bins;
        let n = pixel / self.pixels_per_camera;
        let hw = pixel % self.pixels_per_camera;
        (pixel, (n * self.depth_bins + d) * self.pixels_per_camera + hw)
    }
}

/// Scatter accumulator in `C x cells` layout.
pub(crate) struct ScatterAccumulator {
    reducer: Reducer,
    n_cells: usize,
    acc: Vec<f64>,
    counts: Vec<u64>,
}

impl ScatterAccumulator {
    pub(crate) fn new(reducer: Reducer, channels: usize, n_cells: usize) -> Self {
        let init = match reducer {
            Reducer::Max => f64::NEG_INFINITY,
            Reducer::Sum | Reducer::Mean => 0.0,
        };
        Self {
            reducer,
            n_cells,
            acc: vec![init; channels * n_cells],
            counts: vec![0; n_cells],
        }
    }

    /// Adds one point with per-channel values `values`.
    #[inline]
    pub(crate) fn add(&mut self, cell: usize, values: impl Iterator<Item = f64>) {
        self.counts[cell] += 1;
        for (c, v) in values.enumerate() {
            let slot = &mut self.acc[c * self.n_cells + cell];
            match self.reducer {
                Reducer::Max => *slot = slot.max(v),
                Reducer::Sum | Reducer::Mean => *slot += v,
            }
        }
    }

    pub(crate) fn finish(self) -> Vec<f32> {
        let Self {
            reducer,
            n_cells,
            acc,
            counts,
        } = self;
        acc.iter()
            .enumerate()
            .map(|(i, &v)| {
                let count = counts[i % n_cells.max(1)];
                if count == 0 {
                    return 0.0;
                }
                match reducer {
                    Reducer::Sum | Reducer::Max => v as f32,
                    Reducer::Mean => (v / count as f64) as f32,
                }
            })
            .collect()
    }
}

/// Reference scatter over all points in their original order.
pub fn pool_naive(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
    grid: &BevGridSpec,
    reducer: Reducer,
) -> Result<BevFeatureMap> {
    check_inputs(features, dist, cache, grid)?;
    let channels = features.channels();
    let fr = cache.frustum();
    let cells = cache.cell_of_point();
    let mut acc = ScatterAccumulator::new(reducer, channels, grid.n_cells());
    let mut p = 0;
    for n in 0..cache.n_cameras() {
        for h in 0..fr.height() {
            for w in 0..fr.width() {
                for d in 0..fr.depth_bins() {
                    let cell = cells[p];
                    p += 1;
                    if cell == OUT_OF_RANGE {
                        continue;
                    }
                    let weight = dist.get_unchecked_index(n, h, w, d) as f64;
                    acc.add(
                        cell as usize,
                        (0..channels).map(|c| weight * features.get(n, c, h, w) as f64),
                    );
                }
            }
        }
    }
    Ok(BevFeatureMap::from_parts_unchecked(channels, *grid, acc.finish()))
}

/// Running-sum baseline: reorder point values by rank, take the inclusive
/// prefix sum over every point and subtract at interval boundaries.
///
/// Every partial sum is written to memory, including the ones no output
/// reads. Channels are processed in blocks so the running-sum buffer stays
/// under a fixed size; each channel's result is independent of the block
/// width.
pub fn pool_prefixsum(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
    grid: &BevGridSpec,
    reducer: Reducer,
) -> Result<BevFeatureMap> {
    if reducer == Reducer::Max {
        return Err(BevError::UnsupportedReducer {
            backend: Backend::PrefixSum.name(),
            reducer: reducer.name(),
        });
    }
    check_inputs(features, dist, cache, grid)?;
    let channels = features.channels();
    let n_cells = grid.n_cells();
    let mut out = vec![0.0f32; channels * n_cells];
    let ranks = cache.ranks();
    if channels == 0 || ranks.is_empty() {
        return Ok(BevFeatureMap::from_parts_unchecked(channels, *grid, out));
    }

    let pixel_major = features.to_pixel_major();
    let layout = PointLayout::new(dist);
    let probs = dist.probs();
    let block = (SCAN_BUFFER_BYTES / (ranks.len() * 8)).clamp(1, channels);
    let mut runsum = vec![0.0f64; ranks.len() * block];

    for c0 in (0..channels).step_by(block) {
        let cb = block.min(channels - c0);
        let buf = &mut runsum[..ranks.len() * cb];

        // reorder
        buf.par_chunks_mut(cb)
            .zip(ranks.par_iter())
            .for_each(|(row, &p)| {
                let (pixel, widx) = layout.split(p as usize);
                let weight = probs[widx] as f64;
                let feat = &pixel_major[pixel * channels + c0..pixel * channels + c0 + cb];
                for (dst, &f) in row.iter_mut().zip(feat) {
                    *dst = weight * f as f64;
                }
            });

        inclusive_scan_rows(buf, cb);

        // boundary subtraction
        for i in 0..cache.n_intervals() {
            let range = cache.interval(i);
            let cell = cache.interval_cells()[i] as usize;
            let end = &buf[(range.end - 1) * cb..range.end * cb];
            let count = range.len() as f64;
            for c in 0..cb {
                let before = if range.start == 0 {
                    0.0
                } else {
                    buf[(range.start - 1) * cb + c]
                };
                let mut v = end[c] - before;
                if reducer == Reducer::Mean {
                    v /= count;
                }
                out[(c0 + c) * n_cells + cell] = v as f32;
            }
        }
    }
    Ok(BevFeatureMap::from_parts_unchecked(channels, *grid, out))
}

/// In-place inclusive scan down the rows of a row-major `rows x width`
/// buffer, using a deterministic blocked two-pass scheme.
fn inclusive_scan_rows(buf: &mut [f64], width: usize) {
    let block_len = SCAN_BLOCK_ROWS * width;
    let totals: Vec<Vec<f64>> = buf
        .par_chunks_mut(block_len)
        .map(|chunk| {
            let mut run = vec![0.0f64; width];
            for row in chunk.chunks_exact_mut(width) {
                for (r, v) in run.iter_mut().zip(row.iter_mut()) {
                    *r += *v;
                    *v = *r;
                }
            }
            run
        })
        .collect();
    let mut offsets = Vec::with_capacity(totals.len());
    let mut carry = vec![0.0f64; width];
    for t in &totals {
        offsets.push(carry.clone());
        for (c, v) in carry.iter_mut().zip(t) {
            *c += v;
        }
    }
    buf.par_chunks_mut(block_len)
        .zip(offsets.par_iter())
        .skip(1)
        .for_each(|(chunk, offset)| {
            for row in chunk.chunks_exact_mut(width) {
                for (v, o) in row.iter_mut().zip(offset) {
                    *v += o;
                }
            }
        });
}

/// Interval reduction: one independent job per cached interval.
///
/// Each job walks its slice of `ranks` in order, accumulates in `f64` and
/// produces one value per channel for its cell. No partial sums are kept
/// and jobs never communicate, so the result is bit-identical for any
/// number of worker threads.
pub fn pool_interval(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
    grid: &BevGridSpec,
    reducer: Reducer,
) -> Result<BevFeatureMap> {
    check_inputs(features, dist, cache, grid)?;
    let channels = features.channels();
    let n_cells = grid.n_cells();
    let mut out = vec![0.0f32; channels * n_cells];
    if channels == 0 || cache.n_intervals() == 0 {
        return Ok(BevFeatureMap::from_parts_unchecked(channels, *grid, out));
    }

    let pixel_major = features.to_pixel_major();
    let layout = PointLayout::new(dist);
    let probs = dist.probs();
    let ranks = cache.ranks();

    let mut per_interval = vec![0.0f32; cache.n_intervals() * channels];
    per_interval
        .par_chunks_mut(channels)
        .enumerate()
        .for_each_init(
            || vec![0.0f64; channels],
            |acc, (i, dst)| {
                let range = cache.interval(i);
                let count = range.len();
                match reducer {
                    Reducer::Sum | Reducer::Mean => {
                        acc.fill(0.0);
                        for &p in &ranks[range] {
                            let (pixel, widx) = layout.split(p as usize);
                            let weight = probs[widx] as f64;
                            let feat = &pixel_major[pixel * channels..(pixel + 1) * channels];
                            for (a, &f) in acc.iter_mut().zip(feat) {
                                *a += weight * f as f64;
                            }
                        }
                        let scale = if reducer == Reducer::Mean {
                            1.0 / count as f64
                        } else {
                            1.0
                        };
                        for (d, a) in dst.iter_mut().zip(acc.iter()) {
                            *d = if reducer == Reducer::Mean {
                                (a * scale) as f32
                            } else {
                                *a as f32
                            };
                        }
                    }
                    Reducer::Max => {
                        acc.fill(f64::NEG_INFINITY);
                        for &p in &ranks[range] {
                            let (pixel, widx) = layout.split(p as usize);
                            let weight = probs[widx] as f64;
                            let feat = &pixel_major[pixel * channels..(pixel + 1) * channels];
                            for (a, &f) in acc.iter_mut().zip(feat) {
                                *a = a.max(weight * f as f64);
                            }
                        }
                        for (d, a) in dst.iter_mut().zip(acc.iter()) {
                            *d = *a as f32;
                        }
                    }
                }
            },
        );

    let cells = cache.interval_cells();
    out.par_chunks_mut(n_cells).enumerate().for_each(|(c, plane)| {
        for (i, &cell) in cells.iter().enumerate() {
            plane[cell as usize] = per_interval[i * channels + c];
        }
    });
    Ok(BevFeatureMap::from_parts_unchecked(channels, *grid, out))
}

/// Pools with the named backend.
pub fn pool(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
    grid: &BevGridSpec,
    reducer: Reducer,
    backend: Backend,
) -> Result<BevFeatureMap> {
    match backend {
        Backend::Naive => pool_naive(features, dist, cache, grid, reducer),
        Backend::PrefixSum => pool_prefixsum(features, dist, cache, grid, reducer),
        Backend::Interval => pool_interval(features, dist, cache, grid, reducer),
    }
}

/// Point-major sum of `weight * feature` over every in-range point, in
/// `f64`. This is the total mass a SUM pooling must preserve.
pub fn lifted_mass(
    features: &CameraFeatureMap,
    dist: &DepthDistribution,
    cache: &AssociationCache,
) -> f64 {
    let fr = cache.frustum();
    let cells = cache.cell_of_point();
    let mut total = 0.0f64;
    let mut p = 0;
    for n in 0..cache.n_cameras() {
        for h in 0..fr.height() {
            for w in 0..fr.width() {
                let pixel_sum: f64 = (0..features.channels())
                    .map(|c| features.get(n, c, h, w) as f64)
                    .sum();
                for d in 0..fr.depth_bins() {
                    if cells[p] != OUT_OF_RANGE {
                        total += dist.get_unchecked_index(n, h, w, d) as f64 * pixel_sum;
                    }
                    p += 1;
                }
            }
        }
    }
    total
}

/// Largest elementwise deviation between two maps, measured as
/// `|a - b| / max(1, |a|)`, with the flat index where it occurs.
pub fn max_relative_deviation(reference: &BevFeatureMap, other: &BevFeatureMap) -> Result<(f64, usize)> {
    if reference.grid() != other.grid() || reference.channels() != other.channels() {
        return Err(BevError::validation("maps have different shapes"));
    }
    Ok(reference
        .values()
        .iter()
        .zip(other.values())
        .enumerate()
        .map(|(i, (&a, &b))| ((a as f64 - b as f64).abs() / (a.abs() as f64).max(1.0), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best }))
}

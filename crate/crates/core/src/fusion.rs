//! LiDAR flattening, channel concatenation and bilinear resampling between
//! BEV grids.

use rayon::prelude::*;

use crate::bevgrid::BevGridSpec;
use crate::error::{BevError, Result};
use crate::pooling::{BevFeatureMap, Reducer};
use crate::tensor::Tensor;

/// LiDAR points as rows of `(x, y, z, intensity)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarPointCloud {
    points: Vec<[f32; 4]>,
}

impl LidarPointCloud {
    pub fn new(points: Vec<[f32; 4]>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(BevError::validation(format!("lidar point {i} is not finite")));
        }
        Ok(Self { points })
    }

    /// Reads an `M x 4` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [_, 4] => Self::new(
                t.data()
                    .chunks_exact(4)
                    .map(|r| [r[0], r[1], r[2], r[3]])
                    .collect(),
            ),
            _ => Err(BevError::validation(format!(
                "lidar tensor must be M x 4, got shape {:?}",
                t.shape()
            ))),
        }
    }

    pub fn points(&self) -> &[[f32; 4]] {
        &self.points
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of channels produced by [`lidar_to_bev`].
pub const LIDAR_CHANNELS: usize = 3;

/// Flattens a point cloud along z into per-cell pillar statistics:
/// channel 0 is the point count, channel 1 the reduced intensity and
/// channel 2 the reduced height. The reducer does not affect the count.
pub fn lidar_to_bev(cloud: &LidarPointCloud, grid: &BevGridSpec, reducer: Reducer) -> BevFeatureMap {
    let n_cells = grid.n_cells();
    let init = match reducer {
        Reducer::Max => f64::NEG_INFINITY,
        Reducer::Sum | Reducer::Mean => 0.0,
    };
    let mut counts = vec![0u64; n_cells];
    let mut intensity = vec![init; n_cells];
    let mut height = vec![init; n_cells];
    for p in cloud.points() {
        let pos = nalgebra::Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
        let Some(cell) = crate::bevgrid::quantize(grid, &pos) else {
            continue;
        };
        let cell = cell as usize;
        counts[cell] += 1;
        match reducer {
            Reducer::Max => {
                intensity[cell] = intensity[cell].max(p[3] as f64);
                height[cell] = height[cell].max(pos.z);
            }
            Reducer::Sum | Reducer::Mean => {
                intensity[cell] += p[3] as f64;
                height[cell] += pos.z;
            }
        }
    }
    let mut values = Vec::with_capacity(LIDAR_CHANNELS * n_cells);
    values.extend(counts.iter().map(|&c| c as f32));
    for channel in [&intensity, &height] {
        values.extend(channel.iter().zip(&counts).map(|(&v, &c)| match (c, reducer) {
            (0, _) => 0.0,
            (c, Reducer::Mean) => (v / c as f64) as f32,
            _ => v as f32,
        }));
    }
    BevFeatureMap::new(LIDAR_CHANNELS, *grid, values).expect("pillar statistics are finite")
}

/// Stacks `b`'s channels after `a`'s. Both maps must share one grid.
pub fn fuse_concat(a: &BevFeatureMap, b: &BevFeatureMap) -> Result<BevFeatureMap> {
    if a.grid() != b.grid() {
        return Err(BevError::validation(format!(
            "cannot concatenate BEV maps on different grids ({}x{} vs {}x{}); \
             resample one with grid_resample first",
            a.grid().nx(),
            a.grid().ny(),
            b.grid().nx(),
            b.grid().ny()
        )));
    }
    let mut values = Vec::with_capacity(a.values().len() + b.values().len());
    values.extend_from_slice(a.values());
    values.extend_from_slice(b.values());
    BevFeatureMap::new(a.channels() + b.channels(), *a.grid(), values)
}

/// Bilinear resampling of `src` onto `dst_grid`.
///
/// Each destination cell center (edge + r/2) is located among the source
/// cell centers and blended from its four neighbours. Between the outermost
/// source centers and the source extent the nearest edge cells are
/// repeated; destination centers outside the source extent get 0.
pub fn grid_resample(src: &BevFeatureMap, dst_grid: &BevGridSpec) -> BevFeatureMap {
    let sg = src.grid();
    let channels = src.channels();
    let (dnx, dny) = (dst_grid.nx(), dst_grid.ny());
    let samples: Vec<Option<Bilinear>> = (0..dnx * dny)
        .map(|cell| {
            let (x, y) = dst_grid.cell_center(cell / dny, cell % dny);
            Bilinear::locate(sg, x, y)
        })
        .collect();
    let mut values = vec![0.0f32; channels * dnx * dny];
    if channels > 0 && !samples.is_empty() {
        values
            .par_chunks_mut(dnx * dny)
            .enumerate()
            .for_each(|(c, plane)| {
                let s = src.channel(c);
                for (out, sample) in plane.iter_mut().zip(&samples) {
                    if let Some(b) = sample {
                        *out = b.apply(s, sg.ny()) as f32;
                    }
                }
            });
    }
    BevFeatureMap::new(channels, *dst_grid, values).expect("resampling finite input stays finite")
}

struct Bilinear {
    ix: [usize; 2],
    iy: [usize; 2],
    tx: f64,
    ty: f64,
}

impl Bilinear {
    fn locate(grid: &BevGridSpec, x: f64, y: f64) -> Option<Self> {
        let [x_min, x_max] = grid.x_range();
        let [y_min, y_max] = grid.y_range();
        if !(x >= x_min && x < x_max && y >= y_min && y < y_max) {
            return None;
        }
        let (ix, tx) = axis_neighbours((x - x_min) / grid.cell_size() - 0.5, grid.nx());
        let (iy, ty) = axis_neighbours((y - y_min) / grid.cell_size() - 0.5, grid.ny());
        Some(Self { ix, iy, tx, ty })
    }

    #[inline]
    fn apply(&self, plane: &[f32], ny: usize) -> f64 {
        let at = |i: usize, j: usize| plane[self.ix[i] * ny + self.iy[j]] as f64;
        let lo = at(0, 0) * (1.0 - self.ty) + at(0, 1) * self.ty;
        let hi = at(1, 0) * (1.0 - self.ty) + at(1, 1) * self.ty;
        lo * (1.0 - self.tx) + hi * self.tx
    }
}

/// Lower/upper neighbour indices and the blend factor for continuous index
/// `f` measured in cell-center units.
fn axis_neighbours(f: f64, n: usize) -> ([usize; 2], f64) {
    let last = (n - 1) as f64;
    let f = f.clamp(0.0, last);
    let lo = f.floor();
    let hi = (lo + 1.0).min(last);
    ([lo as usize, hi as usize], f - lo)
}

/// Stand-in for a learned BEV encoder applied to the fused map.
pub trait BevEncoder {
    fn encode(&self, fused: BevFeatureMap) -> BevFeatureMap;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoder;

impl BevEncoder for IdentityEncoder {
    fn encode(&self, fused: BevFeatureMap) -> BevFeatureMap {
        fused
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(channels: usize, grid: BevGridSpec, values: Vec<f32>) -> BevFeatureMap {
        BevFeatureMap::new(channels, grid, values).unwrap()
    }

    #[test]
    fn lidar_three_points_one_cell() {
        let grid = BevGridSpec::standard();
        let cloud = LidarPointCloud::new(vec![
            [0.1, 0.1, 0.0, 1.0],
            [0.1, 0.1, 1.0, 1.0],
            [0.1, 0.1, 2.0, 1.0],
        ])
        .unwrap();
        let bev = lidar_to_bev(&cloud, &grid, Reducer::Sum);
        assert_eq!(bev.channels(), 3);
        // (0.1 + 51.2) / 0.4 = 128.25 -> cell (128, 128)
        assert_eq!(
            (bev.get(0, 128, 128), bev.get(1, 128, 128), bev.get(2, 128, 128)),
            (3.0, 3.0, 3.0)
        );
        assert_eq!(bev.total(), 9.0);

        let mean = lidar_to_bev(&cloud, &grid, Reducer::Mean);
        assert_eq!((mean.get(0, 128, 128), mean.get(1, 128, 128), mean.get(2, 128, 128)), (3.0, 1.0, 1.0));
        let max = lidar_to_bev(&cloud, &grid, Reducer::Max);
        assert_eq!((max.get(0, 128, 128), max.get(2, 128, 128)), (3.0, 2.0));
        assert_eq!(max.get(2, 0, 0), 0.0);
    }

    #[test]
    fn lidar_empty_and_out_of_extent() {
        let grid = BevGridSpec::standard();
        let empty = lidar_to_bev(&LidarPointCloud::default(), &grid, Reducer::Sum);
        assert!(empty.values().iter().all(|v| *v == 0.0));
        let far = LidarPointCloud::new(vec![[80.0, 0.0, 0.0, 5.0], [0.0, 0.0, 15.0, 5.0]]).unwrap();
        assert_eq!(lidar_to_bev(&far, &grid, Reducer::Sum).total(), 0.0);
        assert!(LidarPointCloud::new(vec![[f32::NAN, 0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn lidar_count_channel_counts_in_range_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let grid = BevGridSpec::square(8.0, 0.5, [-2.0, 2.0]).unwrap();
        let pts: Vec<[f32; 4]> = (0..5000)
            .map(|_| {
                [
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.0..1.0),
                ]
            })
            .collect();
        let in_range = pts
            .iter()
            .filter(|p| {
                grid.quantize(&nalgebra::Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                    .is_some()
            })
            .count();
        let bev = lidar_to_bev(&LidarPointCloud::new(pts).unwrap(), &grid, Reducer::Max);
        let counted: f64 = bev.channel(0).iter().map(|&v| v as f64).sum();
        assert_eq!(counted, in_range as f64);
        assert!(bev.channel(0).iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn concat_examples() {
        let grid = BevGridSpec::square(1.0, 1.0, [-1.0, 1.0]).unwrap();
        let a = map(80, grid, (0..80 * 4).map(|v| v as f32).collect());
        let b = map(3, grid, (0..3 * 4).map(|v| -(v as f32)).collect());
        let fused = fuse_concat(&a, &b).unwrap();
        assert_eq!(fused.channels(), 83);
        assert_eq!(fused.slice_channels(0..80).unwrap(), a);
        assert_eq!(fused.slice_channels(80..83).unwrap(), b);

        let padded = fuse_concat(&a, &BevFeatureMap::zeros(2, grid)).unwrap();
        assert_eq!(padded.slice_channels(0..80).unwrap(), a);
        assert!(padded.values()[80 * 4..].iter().all(|v| *v == 0.0));

        let other = BevGridSpec::new([-1.0, 2.0], [-1.0, 1.0], [-1.0, 1.0], 1.0).unwrap();
        let err = fuse_concat(&a, &BevFeatureMap::zeros(3, other)).unwrap_err();
        assert!(err.to_string().contains("grid_resample"));
    }

    #[test]
    fn identity_encoder_passes_through() {
        let grid = BevGridSpec::square(1.0, 1.0, [-1.0, 1.0]).unwrap();
        let a = map(1, grid, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(IdentityEncoder.encode(a.clone()), a);
    }

    #[test]
    fn midpoint_of_two_by_two() {
        let src_grid = BevGridSpec::new([0.0, 2.0], [0.0, 2.0], [-1.0, 1.0], 1.0).unwrap();
        // values[ix][iy]: (0,0)=0 (0,1)=1 (1,0)=2 (1,1)=3
        let src = map(1, src_grid, vec![0.0, 1.0, 2.0, 3.0]);
        // a single destination cell centered on (1, 1)
        let dst_grid = BevGridSpec::new([0.5, 1.5], [0.5, 1.5], [-1.0, 1.0], 1.0).unwrap();
        let out = grid_resample(&src, &dst_grid);
        // independent scalar evaluation: each corner weighted 0.25
        let oracle = 0.25 * (0.0 + 1.0 + 2.0 + 3.0);
        assert_eq!(out.values(), &[oracle as f32]);
        assert_eq!(out.values(), &[1.5]);
    }

    #[test]
    fn outside_coverage_is_zero() {
        let src_grid = BevGridSpec::new([0.0, 2.0], [0.0, 2.0], [-1.0, 1.0], 1.0).unwrap();
        let src = map(1, src_grid, vec![5.0; 4]);
        let dst_grid = BevGridSpec::new([0.0, 4.0], [0.0, 2.0], [-1.0, 1.0], 1.0).unwrap();
        let out = grid_resample(&src, &dst_grid);
        assert_eq!(out.values(), &[5.0, 5.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    }

    prop_compose! {
        fn arb_grid()(
            x0 in -20i32..20, y0 in -20i32..20,
            nx in 1usize..24, ny in 1usize..24,
            r in prop::sample::select(vec![0.25f64, 0.4, 0.5, 1.0]),
        ) -> BevGridSpec {
            let (x0, y0) = (x0 as f64 * 0.5, y0 as f64 * 0.5);
            BevGridSpec::new([x0, x0 + nx as f64 * r], [y0, y0 + ny as f64 * r], [-1.0, 1.0], r).unwrap()
        }
    }

    proptest! {
        #[test]
        fn identity_resample(grid in arb_grid(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values = (0..2 * grid.n_cells()).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
            let src = map(2, grid, values);
            let out = grid_resample(&src, &grid);
            for (a, b) in src.values().iter().zip(out.values()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn constants_preserved(src_grid in arb_grid(), dst_grid in arb_grid(), value in -10.0f32..10.0) {
            let src = map(1, src_grid, vec![value; src_grid.n_cells()]);
            let out = grid_resample(&src, &dst_grid);
            for ix in 0..dst_grid.nx() {
                for iy in 0..dst_grid.ny() {
                    let (x, y) = dst_grid.cell_center(ix, iy);
                    let [x0, x1] = src_grid.x_range();
                    let [y0, y1] = src_grid.y_range();
                    let covered = x >= x0 && x < x1 && y >= y0 && y < y1;
                    let v = out.get(0, ix, iy);
                    if covered {
                        prop_assert!((v - value).abs() <= 1e-5 * value.abs().max(1.0));
                    } else {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }

        #[test]
        fn resample_is_linear(
            src_grid in arb_grid(), dst_grid in arb_grid(), seed in any::<u64>(),
            alpha in -3.0f32..3.0, beta in -3.0f32..3.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = src_grid.n_cells();
            let a: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let ra = grid_resample(&map(1, src_grid, a), &dst_grid);
            let rb = grid_resample(&map(1, src_grid, b), &dst_grid);
            let rm = grid_resample(&map(1, src_grid, mix), &dst_grid);
            for i in 0..dst_grid.n_cells() {
                let expect = alpha * ra.values()[i] + beta * rb.values()[i];
                prop_assert!((rm.values()[i] - expect).abs() <= 1e-5, "{} vs {}", rm.values()[i], expect);
            }
        }
    }
}

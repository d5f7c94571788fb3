//! BEV grid definition, point quantization and the precomputed association
//! cache.
//!
//! Camera geometry is fixed once the rig is calibrated, so every frustum
//! point's BEV cell, the sort order of points by cell and the boundaries of
//! each cell's run can be computed once and reused for every frame.

use std::hash::Hasher;
use std::io::{Read, Write};

use fnv::FnvHasher;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::counters;
use crate::error::{BevError, Result};
use crate::geometry::{generate_frustum, CameraCalibration, FrustumSpec};
use crate::lift::DepthDistribution;
use crate::tensor::ByteCursor;

/// Cell id stored for points that fall outside the grid.
pub const OUT_OF_RANGE: u32 = u32::MAX;

pub const CACHE_MAGIC: &[u8; 4] = b"BVPC";
pub const CACHE_VERSION: u16 = 1;

const EXTENT_TOL: f64 = 1e-9;

/// Metric extents and cell size of a BEV grid.
///
/// Cells are half-open: cell `ix` covers `[x_min + ix*r, x_min + (ix+1)*r)`
/// and the upper bound of each axis is exclusive. Flat cell ids are
/// ix-major, `ix * ny + iy`. The z range only decides whether a point is
/// kept; it never contributes to the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevGridSpec {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    z_min: f64,
    z_max: f64,
    cell_size: f64,
    nx: usize,
    ny: usize,
}

impl BevGridSpec {
    pub fn new(
        [x_min, x_max]: [f64; 2],
        [y_min, y_max]: [f64; 2],
        [z_min, z_max]: [f64; 2],
        cell_size: f64,
    ) -> Result<Self> {
        if [x_min, x_max, y_min, y_max, z_min, z_max, cell_size]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(BevError::config("grid bounds must be finite"));
        }
        if cell_size <= 0.0 {
            return Err(BevError::config(format!("cell size must be positive, got {cell_size}")));
        }
        if z_min >= z_max {
            return Err(BevError::config(format!("z range [{z_min}, {z_max}) is empty")));
        }
        let cells = |lo: f64, hi: f64, axis: &str| -> Result<usize> {
            let n = ((hi - lo) / cell_size).round();
            if n < 1.0 {
                return Err(BevError::config(format!("{axis} range [{lo}, {hi}) holds no cells")));
            }
            if ((hi - lo) - n * cell_size).abs() > EXTENT_TOL {
                return Err(BevError::config(format!(
                    "{axis} extent {} is not a multiple of cell size {cell_size}",
                    hi - lo
                )));
            }
            Ok(n as usize)
        };
        let nx = cells(x_min, x_max, "x")?;
        let ny = cells(y_min, y_max, "y")?;
        if nx.checked_mul(ny).is_none_or(|c| c >= OUT_OF_RANGE as usize) {
            return Err(BevError::config(format!("grid {nx}x{ny} has too many cells")));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            z_min,
            z_max,
            cell_size,
            nx,
            ny,
        })
    }

    /// Square grid `[-extent, extent)` in x and y.
    pub fn square(extent: f64, cell_size: f64, [z_min, z_max]: [f64; 2]) -> Result<Self> {
        Self::new([-extent, extent], [-extent, extent], [z_min, z_max], cell_size)
    }

    /// x, y in [-51.2, 51.2) at 0.4 m (256 x 256 cells), z in [-10, 10).
    pub fn standard() -> Self {
        Self::square(51.2, 0.4, [-10.0, 10.0]).expect("standard grid is valid")
    }

    pub fn x_range(&self) -> [f64; 2] {
        [self.x_min, self.x_max]
    }
    pub fn y_range(&self) -> [f64; 2] {
        [self.y_min, self.y_max]
    }
    pub fn z_range(&self) -> [f64; 2] {
        [self.z_min, self.z_max]
    }
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Metric center of cell `(ix, iy)`.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.cell_size,
            self.y_min + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    #[inline]
    pub fn quantize(&self, p: &Vector3<f64>) -> Option<u32> {
        if !(p.x >= self.x_min && p.x < self.x_max)
            || !(p.y >= self.y_min && p.y < self.y_max)
            || !(p.z >= self.z_min && p.z < self.z_max)
        {
            return None;
        }
        // The bound checks above are authoritative; the clamp absorbs floor
        // rounding just below an upper edge.
        let ix = (((p.x - self.x_min) / self.cell_size).floor() as usize).min(self.nx - 1);
        let iy = (((p.y - self.y_min) / self.cell_size).floor() as usize).min(self.ny - 1);
        Some((ix * self.ny + iy) as u32)
    }

    fn write_canonical(&self, h: &mut FnvHasher) {
        for v in [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.z_min,
            self.z_max,
            self.cell_size,
        ] {
            h.write(&v.to_le_bytes());
        }
    }
}

/// Cell id of `p`, or `None` when it falls outside the grid.
pub fn quantize(spec: &BevGridSpec, p: &Vector3<f64>) -> Option<u32> {
    counters::add_quantizations(1);
    spec.quantize(p)
}

/// 64-bit FNV-1a hash over the canonical little-endian bytes of the rig,
/// frustum and grid.
pub fn fingerprint(rig: &[CameraCalibration], frustum: &FrustumSpec, grid: &BevGridSpec) -> u64 {
    let mut h = FnvHasher::default();
    h.write(b"bevpool-association-v1");
    h.write(&(rig.len() as u64).to_le_bytes());
    for cam in rig {
        h.write(&cam.id().to_le_bytes());
        for v in [cam.fx(), cam.fy(), cam.cx(), cam.cy()] {
            h.write(&v.to_le_bytes());
        }
        for v in cam.rotation_row_major() {
            h.write(&v.to_le_bytes());
        }
        for v in cam.translation().iter() {
            h.write(&v.to_le_bytes());
        }
    }
    for v in [frustum.height(), frustum.width(), frustum.depth_bins()] {
        h.write(&(v as u64).to_le_bytes());
    }
    h.write(&frustum.depth_min().to_le_bytes());
    h.write(&frustum.depth_step().to_le_bytes());
    grid.write_canonical(&mut h);
    h.finish()
}

/// Points in cell-sorted order: the source pixel (camera-major `n*H*W + h*W
/// + w`) and depth weight of each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SortedPoints {
    pub pixels: Vec<u32>,
    pub weights: Vec<f32>,
}

/// Precomputed association between frustum points and BEV cells for one
/// (rig, frustum, grid) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationCache {
    cell_of_point: Vec<u32>,
    ranks: Vec<u32>,
    interval_starts: Vec<u32>,
    interval_cells: Vec<u32>,
    fingerprint: u64,
    frustum: FrustumSpec,
    n_cameras: usize,
    grid: BevGridSpec,
}

impl AssociationCache {
    /// Builds ranks and intervals from per-point cell ids.
    ///
    /// `cell_of_point` must have one entry per frustum point of an
    /// `n_cameras` rig, each either a valid cell id or [`OUT_OF_RANGE`].
    pub fn from_cell_ids(
        cell_of_point: Vec<u32>,
        fingerprint: u64,
        frustum: FrustumSpec,
        n_cameras: usize,
        grid: BevGridSpec,
    ) -> Result<Self> {
        let expected = n_cameras * frustum.points_per_camera();
        if cell_of_point.len() != expected {
            return Err(BevError::validation(format!(
                "expected {expected} cell ids, got {}",
                cell_of_point.len()
            )));
        }
        if expected >= OUT_OF_RANGE as usize {
            return Err(BevError::config(format!("{expected} points exceed u32 indexing")));
        }
        let n_cells = grid.n_cells() as u32;
        if let Some(p) = cell_of_point
            .iter()
            .position(|&c| c != OUT_OF_RANGE && c >= n_cells)
        {
            return Err(BevError::validation(format!(
                "point {p} has cell id {} but the grid has {n_cells} cells",
                cell_of_point[p]
            )));
        }

        // (cell, point) keys are unique, so an unstable sort yields the same
        // order as a stable sort by cell with ties broken by point index.
        let mut keys: Vec<u64> = cell_of_point
            .par_iter()
            .enumerate()
            .filter(|(_, &c)| c != OUT_OF_RANGE)
            .map(|(p, &c)| ((c as u64) << 32) | p as u64)
            .collect();
        keys.par_sort_unstable();

        let ranks: Vec<u32> = keys.par_iter().map(|&k| k as u32).collect();
        let mut interval_starts = Vec::new();
        let mut interval_cells = Vec::new();
        let mut prev = None;
        for (i, &k) in keys.iter().enumerate() {
            let cell = (k >> 32) as u32;
            if prev != Some(cell) {
                interval_starts.push(i as u32);
                interval_cells.push(cell);
                prev = Some(cell);
            }
        }

        Ok(Self {
            cell_of_point,
            ranks,
            interval_starts,
            interval_cells,
            fingerprint,
            frustum,
            n_cameras,
            grid,
        })
    }

    pub fn cell_of_point(&self) -> &[u32] {
        &self.cell_of_point
    }
    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }
    pub fn interval_starts(&self) -> &[u32] {
        &self.interval_starts
    }
    pub fn interval_cells(&self) -> &[u32] {
        &self.interval_cells
    }
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
    pub fn frustum(&self) -> &FrustumSpec {
        &self.frustum
    }
    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }
    pub fn grid(&self) -> &BevGridSpec {
        &self.grid
    }
    pub fn n_points(&self) -> usize {
        self.cell_of_point.len()
    }
    pub fn n_intervals(&self) -> usize {
        self.interval_starts.len()
    }

    /// Range of `ranks` covered by interval `i`.
    #[inline]
    pub fn interval(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.interval_starts[i] as usize;
        let end = self
            .interval_starts
            .get(i + 1)
            .map_or(self.ranks.len(), |&s| s as usize);
        start..end
    }

    /// Inference-time association: walks the cached ranks and gathers each
    /// sorted point's source pixel and depth weight. No projection,
    /// quantization or sorting happens here.
    pub fn reorder(&self, dist: &DepthDistribution) -> Result<SortedPoints> {
        let fr = &self.frustum;
        if (dist.n_cameras(), dist.depth_bins(), dist.height(), dist.width())
            != (self.n_cameras, fr.depth_bins(), fr.height(), fr.width())
        {
            return Err(BevError::validation(
                "depth distribution does not match the cached frustum",
            ));
        }
        let (depth_bins, hw) = (fr.depth_bins(), fr.height() * fr.width());
        let probs = dist.probs();
        let (pixels, weights) = self
            .ranks
            .par_iter()
            .map(|&p| {
                let p = p as usize;
                let pixel = p / depth_bins;
                let d = p % depth_bins;
                let (n, pix) = (pixel / hw, pixel % hw);
                (pixel as u32, probs[(n * depth_bins + d) * hw + pix])
            })
            .unzip();
        Ok(SortedPoints { pixels, weights })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&self.fingerprint.to_le_bytes())?;
        for array in [
            &self.cell_of_point,
            &self.ranks,
            &self.interval_starts,
            &self.interval_cells,
        ] {
            out.write_all(&(array.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(array.len() * 4);
            for v in array.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Loads a cache file and checks it against the current geometry.
    ///
    /// Returns [`BevError::StaleCache`] when the stored fingerprint does not
    /// match `(rig, frustum, grid)` and [`BevError::Parse`] when the file is
    /// malformed or its arrays are not the ones the geometry produces.
    pub fn read_from<R: Read>(
        mut input: R,
        rig: &[CameraCalibration],
        frustum: &FrustumSpec,
        grid: &BevGridSpec,
    ) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor::new(&bytes);
        let magic = cur.take(4, "magic")?;
        if magic != CACHE_MAGIC {
            return Err(cur.error(0, "magic", format!("expected \"BVPC\", found {magic:?}")));
        }
        let version = cur.u16("version")?;
        if version != CACHE_VERSION {
            return Err(cur.error(4, "version", format!("unsupported version {version}")));
        }
        let stored = cur.u64("fingerprint")?;
        let mut arrays = Vec::with_capacity(4);
        for name in ["cell_of_point", "ranks", "interval_starts", "interval_cells"] {
            let len = cur.u64(&format!("{name}.len"))? as usize;
            let raw = cur.take(len.saturating_mul(4), name)?;
            arrays.push(
                raw.chunks_exact(4)
                    .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect::<Vec<u32>>(),
            );
        }
        if cur.remaining() != 0 {
            return Err(cur.error(
                (bytes.len() - cur.remaining()) as u64,
                "interval_cells",
                format!("{} trailing bytes", cur.remaining()),
            ));
        }
        let current = fingerprint(rig, frustum, grid);
        if stored != current {
            return Err(BevError::StaleCache(format!(
                "file fingerprint {stored:016x} does not match current geometry {current:016x}"
            )));
        }
        let interval_cells = arrays.pop().unwrap();
        let interval_starts = arrays.pop().unwrap();
        let ranks = arrays.pop().unwrap();
        let cell_of_point = arrays.pop().unwrap();
        let rebuilt = Self::from_cell_ids(cell_of_point, stored, *frustum, rig.len(), *grid)
            .map_err(|e| BevError::Parse {
                field: "cell_of_point".into(),
                offset: Some(14),
                message: e.to_string(),
            })?;
        for (name, got, want) in [
            ("ranks", &ranks, &rebuilt.ranks),
            ("interval_starts", &interval_starts, &rebuilt.interval_starts),
            ("interval_cells", &interval_cells, &rebuilt.interval_cells),
        ] {
            if got != want {
                return Err(BevError::Parse {
                    field: name.into(),
                    offset: None,
                    message: "array is inconsistent with cell_of_point".into(),
                });
            }
        }
        Ok(rebuilt)
    }
}

/// Projects every frustum point of the rig, quantizes it and builds the
/// sorted association.
pub fn build_cache(
    rig: &[CameraCalibration],
    frustum: &FrustumSpec,
    grid: &BevGridSpec,
) -> Result<AssociationCache> {
    let points = generate_frustum(rig, frustum)?;
    let cells: Vec<u32> = points
        .coords()
        .par_iter()
        .map(|p| grid.quantize(p).unwrap_or(OUT_OF_RANGE))
        .collect();
    counters::add_quantizations(cells.len() as u64);
    AssociationCache::from_cell_ids(
        cells,
        fingerprint(rig, frustum, grid),
        *frustum,
        rig.len(),
        *grid,
    )
}

/// True iff `cache` was built for exactly this rig, frustum and grid.
pub fn validate_cache(
    cache: &AssociationCache,
    rig: &[CameraCalibration],
    frustum: &FrustumSpec,
    grid: &BevGridSpec,
) -> bool {
    cache.fingerprint == fingerprint(rig, frustum, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use std::collections::BTreeMap;

    fn one_cam_frustum(n_points: usize) -> FrustumSpec {
        FrustumSpec::new(1, 1, 1.0, 1.0, n_points).unwrap()
    }

    fn small_grid() -> BevGridSpec {
        BevGridSpec::new([0.0, 2.0], [0.0, 2.0], [-1.0, 1.0], 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        let g = BevGridSpec::standard();
        assert_eq!((g.nx(), g.ny()), (256, 256));
        assert!(BevGridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], 0.3).is_err());
        assert!(BevGridSpec::new([0.0, 1.0], [0.0, 1.0], [1.0, 1.0], 0.5).is_err());
        assert!(BevGridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], 0.0).is_err());
        assert!(BevGridSpec::new([1.0, 0.0], [0.0, 1.0], [0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn quantize_examples() {
        let g = BevGridSpec::standard();
        assert_eq!(quantize(&g, &Vector3::new(0.0, 0.0, 0.0)), Some(128 * 256 + 128));
        assert_eq!(quantize(&g, &Vector3::new(0.0, 0.0, 0.0)), Some(32896));
        assert_eq!(quantize(&g, &Vector3::new(51.2, 0.0, 0.0)), None);
        assert_eq!(quantize(&g, &Vector3::new(-51.2, -51.2, -10.0)), Some(0));
        assert_eq!(quantize(&g, &Vector3::new(0.0, 0.0, 10.0)), None);
        assert_eq!(quantize(&g, &Vector3::new(0.0, 0.0, f64::NAN)), None);
        // interior boundary belongs to the higher cell
        assert_eq!(quantize(&g, &Vector3::new(-50.8, -51.2, 0.0)), Some(256));
        let top = 51.2f64.next_down();
        assert_eq!(quantize(&g, &Vector3::new(top, top, 0.0)), Some(256 * 256 - 1));
    }

    #[test]
    fn ranks_and_intervals_from_example() {
        let cache = AssociationCache::from_cell_ids(
            vec![2, 0, 2, 1],
            0,
            one_cam_frustum(4),
            1,
            small_grid(),
        )
        .unwrap();
        assert_eq!(cache.ranks(), &[1, 3, 0, 2]);
        assert_eq!(cache.interval_starts(), &[0, 1, 2]);
        assert_eq!(cache.interval_cells(), &[0, 1, 2]);
        assert_eq!(cache.interval(2), 2..4);
    }

    #[test]
    fn all_out_of_range() {
        let cache = AssociationCache::from_cell_ids(
            vec![OUT_OF_RANGE; 5],
            0,
            one_cam_frustum(5),
            1,
            small_grid(),
        )
        .unwrap();
        assert!(cache.ranks().is_empty());
        assert_eq!(cache.n_intervals(), 0);
    }

    #[test]
    fn rejects_bad_cell_ids() {
        assert!(AssociationCache::from_cell_ids(vec![4], 0, one_cam_frustum(1), 1, small_grid()).is_err());
        assert!(AssociationCache::from_cell_ids(vec![0, 1], 0, one_cam_frustum(1), 1, small_grid()).is_err());
    }

    /// A camera 5 m above cell (3, 7) of a 1 m grid looking straight down:
    /// every depth bin of its single pixel lands in that cell.
    #[test]
    fn downward_camera_single_interval() {
        let grid = BevGridSpec::new([0.0, 10.0], [0.0, 10.0], [-10.0, 10.0], 1.0).unwrap();
        // camera z -> ego -z, camera x -> ego x, camera y -> ego -y
        let down = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let cam = CameraCalibration::new(0, 10.0, 10.0, 0.0, 0.0, down, Vector3::new(3.5, 7.5, 5.0))
            .unwrap();
        let frustum = FrustumSpec::new(1, 1, 0.5, 0.5, 12).unwrap();
        let cache = build_cache(std::slice::from_ref(&cam), &frustum, &grid).unwrap();

        let naive: Vec<Option<u32>> = (0..12)
            .map(|d| {
                let p = crate::geometry::unproject(&cam, 0.0, 0.0, frustum.depth_of_bin(d).unwrap());
                quantize(&grid, &p)
            })
            .collect();
        assert!(naive.iter().all(|c| *c == Some(3 * 10 + 7)));
        assert_eq!(cache.n_intervals(), 1);
        assert_eq!(cache.interval(0).len(), 12);
        assert_eq!(cache.interval_cells(), &[37]);
    }

    #[test]
    fn brute_force_grouping_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..10_000);
            let grid = small_grid();
            let cells: Vec<u32> = (0..n)
                .map(|_| if rng.gen_bool(0.2) { OUT_OF_RANGE } else { rng.gen_range(0..4) })
                .collect();
            let cache =
                AssociationCache::from_cell_ids(cells.clone(), 0, one_cam_frustum(n), 1, grid).unwrap();
            let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for (p, &c) in cells.iter().enumerate() {
                if c != OUT_OF_RANGE {
                    groups.entry(c).or_default().push(p as u32);
                }
            }
            assert_eq!(cache.n_intervals(), groups.len());
            for (i, (cell, members)) in groups.iter().enumerate() {
                assert_eq!(cache.interval_cells()[i], *cell);
                assert_eq!(&cache.ranks()[cache.interval(i)], members.as_slice());
            }
        }
    }

    #[test]
    fn cache_file_roundtrip_and_staleness() {
        let grid = BevGridSpec::new([-8.0, 8.0], [-8.0, 8.0], [-5.0, 5.0], 0.5).unwrap();
        // optical axis along ego +x
        let forward = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let cam = CameraCalibration::new(0, 4.0, 4.0, 4.0, 2.0, forward, Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        let frustum = FrustumSpec::new(4, 8, 1.0, 0.5, 10).unwrap();
        let rig = vec![cam];
        let cache = build_cache(&rig, &frustum, &grid).unwrap();
        assert!(!cache.ranks().is_empty());

        let bytes = cache.to_bytes();
        assert_eq!(&bytes[..4], b"BVPC");
        let back = AssociationCache::read_from(&bytes[..], &rig, &frustum, &grid).unwrap();
        assert_eq!(back, cache);

        let other = BevGridSpec::new([-8.0, 8.0], [-8.0, 8.0], [-5.0, 5.0], 0.25).unwrap();
        assert!(matches!(
            AssociationCache::read_from(&bytes[..], &rig, &frustum, &other),
            Err(BevError::StaleCache(_))
        ));
        assert!(matches!(
            AssociationCache::read_from(&bytes[..bytes.len() - 3], &rig, &frustum, &grid),
            Err(BevError::Parse { .. })
        ));

        // tamper with one rank
        let mut bad = bytes.clone();
        let ranks_at = 4 + 2 + 8 + 8 + cache.n_points() * 4 + 8;
        bad[ranks_at] ^= 1;
        assert!(matches!(
            AssociationCache::read_from(&bad[..], &rig, &frustum, &grid),
            Err(BevError::Parse { ref field, .. }) if field == "ranks"
        ));
    }

    #[test]
    fn validate_cache_detects_changes() {
        let grid = BevGridSpec::new([-8.0, 8.0], [-8.0, 8.0], [-5.0, 5.0], 0.5).unwrap();
        let cam = CameraCalibration::new(0, 4.0, 4.0, 4.0, 2.0, Matrix3::identity(), Vector3::zeros()).unwrap();
        let frustum = FrustumSpec::new(2, 2, 1.0, 0.5, 4).unwrap();
        let cache = build_cache(std::slice::from_ref(&cam), &frustum, &grid).unwrap();
        assert!(validate_cache(&cache, std::slice::from_ref(&cam), &frustum, &grid));

        let moved = CameraCalibration::new(
            0,
            4.0,
            4.0,
            4.0,
            2.0,
            Matrix3::identity(),
            Vector3::new(1e-3, 0.0, 0.0),
        )
        .unwrap();
        assert!(!validate_cache(&cache, &[moved], &frustum, &grid));
        let coarser = BevGridSpec::new([-8.0, 8.0], [-8.0, 8.0], [-5.0, 5.0], 1.0).unwrap();
        assert!(!validate_cache(&cache, std::slice::from_ref(&cam), &frustum, &coarser));
    }
}

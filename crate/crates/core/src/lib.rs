//! Exact camera-to-BEV view transformation on the CPU.
//!
//! Camera feature pixels are lifted along their rays at discrete depths,
//! weighted by a per-pixel depth distribution and pooled into a top-down
//! grid. Because the rig geometry is fixed, the point-to-cell association is
//! computed once ([`bevgrid::build_cache`]) and each frame only reorders
//! points by the cached ranks. Pooling then runs one independent reduction
//! per occupied cell ([`pooling::pool_interval`]); a running-sum baseline
//! ([`pooling::pool_prefixsum`]) and a naive scatter
//! ([`pooling::pool_naive`]) are kept for comparison and checking.
//!
//! ```
//! use bevpool::prelude::*;
//!
//! let spec = WorkloadSpec {
//!     n_cameras: 2,
//!     frustum: FrustumSpec::new(4, 8, 1.0, 1.0, 16).unwrap(),
//!     grid: BevGridSpec::square(16.0, 0.5, [-5.0, 5.0]).unwrap(),
//!     channels: 8,
//!     seed: 7,
//! };
//! let w = gen_workload(&spec).unwrap();
//! let cache = build_cache(&w.rig, &w.frustum, &w.grid).unwrap();
//! let dist = normalize_depth(&w.logits).unwrap();
//! let bev = pool(&w.features, &dist, &cache, &w.grid, Reducer::Sum, Backend::Interval).unwrap();
//! assert_eq!(bev.channels(), 8);
//! ```

pub mod bench;
pub mod bevgrid;
pub mod counters;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod lift;
pub mod pooling;
pub mod tensor;
pub mod workload;

pub use error::{BevError, Result};

pub mod prelude {
    pub use crate::bevgrid::{build_cache, quantize, validate_cache, AssociationCache, BevGridSpec, OUT_OF_RANGE};
    pub use crate::error::{BevError, Result};
    pub use crate::fusion::{fuse_concat, grid_resample, lidar_to_bev, LidarPointCloud};
    pub use crate::geometry::{
        depth_of_bin, generate_frustum, project, unproject, CameraCalibration, FrustumSpec, RigCalibration,
    };
    pub use crate::lift::{normalize_depth, point_weight, CameraFeatureMap, DepthDistribution};
    pub use crate::pooling::{pool, Backend, BevFeatureMap, Reducer};
    pub use crate::tensor::Tensor;
    pub use crate::workload::{gen_workload, Workload, WorkloadSpec};
}

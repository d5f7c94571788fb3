//! Seeded synthetic workloads: a surround-view rig plus random camera
//! features and depth logits standing in for network outputs.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bevgrid::BevGridSpec;
use crate::error::{BevError, Result};
use crate::geometry::{CameraCalibration, FrustumSpec, RigCalibration};
use crate::lift::CameraFeatureMap;
use crate::tensor::Tensor;

/// Camera mounting height above the ego origin, meters.
const MOUNT_HEIGHT: f64 = 1.5;
/// Horizontal offset of each camera from the ego origin, meters.
const MOUNT_RADIUS: f64 = 1.0;
/// Focal length as a fraction of feature-map width (about 64 degrees FoV).
const FOCAL_PER_WIDTH: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_cameras: usize,
    pub frustum: FrustumSpec,
    pub grid: BevGridSpec,
    pub channels: usize,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Six cameras, 32x88 feature maps, depth [1, 60) m at 0.5 m (118
    /// bins), 80 channels on the standard 256x256 grid.
    pub fn standard() -> Self {
        Self {
            n_cameras: 6,
            frustum: FrustumSpec::from_depth_range(32, 88, 1.0, 60.0, 0.5)
                .expect("standard frustum is valid"),
            grid: BevGridSpec::standard(),
            channels: 80,
            seed: 0,
        }
    }

    /// Same spec at a different feature-map resolution.
    pub fn with_resolution(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            frustum: FrustumSpec::new(
                height,
                width,
                self.frustum.depth_min(),
                self.frustum.depth_step(),
                self.frustum.depth_bins(),
            )?,
            ..self.clone()
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_cameras * self.frustum.points_per_camera()
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub rig: Vec<CameraCalibration>,
    pub frustum: FrustumSpec,
    pub grid: BevGridSpec,
    pub features: CameraFeatureMap,
    pub logits: Tensor,
}

impl Workload {
    pub fn calibration(&self) -> RigCalibration {
        RigCalibration {
            cameras: self.rig.clone(),
            frustum: self.frustum,
        }
    }
}

/// Cameras evenly spaced in yaw around the vehicle (60 degrees apart for
/// six), mounted at 1.5 m looking horizontally outward.
pub fn surround_rig(n_cameras: usize, frustum: &FrustumSpec) -> Result<Vec<CameraCalibration>> {
    if n_cameras == 0 {
        return Err(BevError::config("camera rig is empty"));
    }
    // camera z (forward) -> ego x, camera x (right) -> ego -y,
    // camera y (down) -> ego -z
    let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let f = FOCAL_PER_WIDTH * frustum.width() as f64;
    (0..n_cameras)
        .map(|k| {
            let yaw = TAU * k as f64 / n_cameras as f64;
            let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix() * base;
            let translation = Vector3::new(MOUNT_RADIUS * yaw.cos(), MOUNT_RADIUS * yaw.sin(), MOUNT_HEIGHT);
            CameraCalibration::new(
                k as u32,
                f,
                f,
                frustum.width() as f64 / 2.0,
                frustum.height() as f64 / 2.0,
                rotation,
                translation,
            )
        })
        .collect()
}

/// Builds the rig and draws features uniformly in [-1, 1] and depth logits
/// uniformly in [-3, 3] from a ChaCha8 stream seeded with `spec.seed`.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload> {
    let rig = surround_rig(spec.n_cameras, &spec.frustum)?;
    let fr = &spec.frustum;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_feat = spec.n_cameras * spec.channels * fr.height() * fr.width();
    let features: Vec<f32> = (0..n_feat).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    let n_logits = spec.n_cameras * fr.depth_bins() * fr.height() * fr.width();
    let logits: Vec<f32> = (0..n_logits).map(|_| rng.gen_range(-3.0f32..=3.0)).collect();
    Ok(Workload {
        rig,
        frustum: *fr,
        grid: spec.grid,
        features: CameraFeatureMap::new(spec.n_cameras, spec.channels, fr.height(), fr.width(), features)?,
        logits: Tensor::new(
            vec![spec.n_cameras, fr.depth_bins(), fr.height(), fr.width()],
            logits,
        )?,
    })
}

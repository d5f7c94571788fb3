//! Camera rig calibration, frustum point generation and pinhole
//! projection between pixel-depth and ego coordinates.
//!
//! Frame conventions, fixed for the whole crate:
//!
//! - camera frame: x right, y down, z forward (optical axis);
//! - ego frame: x forward, y left, z up;
//! - intrinsics are expressed at feature-map resolution, and feature pixel
//!   `(h, w)` sits at image coordinates `(u, v) = (w, h)` with no half-pixel
//!   offset;
//! - depth bin `d` has depth `d_min + d * step` (bin left edge).

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counters;
use crate::error::{BevError, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Intrinsics and camera-to-ego extrinsics of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    id: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraCalibration {
    /// Builds a calibration, checking that `fx, fy > 0`, all values are
    /// finite and `rotation` is a proper rotation (orthonormal, det +1).
    pub fn new(
        id: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite()) {
            return Err(BevError::config(format!("fx must be positive and finite, got {fx}")));
        }
        if !(fy > 0.0 && fy.is_finite()) {
            return Err(BevError::config(format!("fy must be positive and finite, got {fy}")));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(BevError::config("principal point must be finite"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(BevError::config("translation must be finite"));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            id,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        })
    }

    /// Convenience constructor taking a row-major rotation.
    pub fn from_row_major(
        id: u32,
        [fx, fy, cx, cy]: [f64; 4],
        rotation: [f64; 9],
        translation: [f64; 3],
    ) -> Result<Self> {
        Self::new(
            id,
            fx,
            fy,
            cx,
            cy,
            Matrix3::from_row_slice(&rotation),
            Vector3::from(translation),
        )
    }

    pub fn id(&self) -> u32 {
        self.id
    }
    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Rotation in row-major order.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
        ]
    }

    /// Camera center in the ego frame.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    #[inline]
    fn unproject_uncounted(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let p_cam = Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        );
        self.rotation * p_cam + self.translation
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(BevError::config("rotation must be finite"));
    }
    let residual = r.transpose() * r - Matrix3::identity();
    let worst = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if worst > ORTHONORMAL_TOL {
        return Err(BevError::config(format!(
            "rotation is not orthonormal (max |R^T R - I| = {worst:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(BevError::config(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Feature-map size and depth discretization of every camera in a rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumSpec {
    height: usize,
    width: usize,
    depth_min: f64,
    depth_step: f64,
    depth_bins: usize,
}

impl FrustumSpec {
    pub fn new(
        height: usize,
        width: usize,
        depth_min: f64,
        depth_step: f64,
        depth_bins: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 || depth_bins == 0 {
            return Err(BevError::config(format!(
                "frustum dimensions must be positive, got H={height} W={width} D={depth_bins}"
            )));
        }
        if !(depth_min > 0.0 && depth_min.is_finite()) {
            return Err(BevError::config(format!("d_min must be positive, got {depth_min}")));
        }
        if !(depth_step > 0.0 && depth_step.is_finite()) {
            return Err(BevError::config(format!("depth step must be positive, got {depth_step}")));
        }
        Ok(Self {
            height,
            width,
            depth_min,
            depth_step,
            depth_bins,
        })
    }

    /// Discretizes `[depth_min, depth_max]` with `step`, giving
    /// `round((depth_max - depth_min) / step)` bins.
    pub fn from_depth_range(
        height: usize,
        width: usize,
        depth_min: f64,
        depth_max: f64,
        step: f64,
    ) -> Result<Self> {
        let bins = ((depth_max - depth_min) / step).round();
        if bins.is_nan() || bins < 1.0 {
            return Err(BevError::config(format!(
                "depth range [{depth_min}, {depth_max}] with step {step} yields no bins"
            )));
        }
        Self::new(height, width, depth_min, step, bins as usize)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn depth_min(&self) -> f64 {
        self.depth_min
    }
    pub fn depth_step(&self) -> f64 {
        self.depth_step
    }
    pub fn depth_bins(&self) -> usize {
        self.depth_bins
    }

    /// Points generated per camera, `H * W * D`.
    pub fn points_per_camera(&self) -> usize {
        self.height * self.width * self.depth_bins
    }

    /// Linear index of frustum point `(n, h, w, d)`.
    #[inline]
    pub fn point_index(&self, n: usize, h: usize, w: usize, d: usize) -> usize {
        ((n * self.height + h) * self.width + w) * self.depth_bins + d
    }

    pub fn depth_of_bin(&self, d: usize) -> Result<f64> {
        if d >= self.depth_bins {
            return Err(BevError::Index {
                axis: "depth bin",
                index: d,
                len: self.depth_bins,
            });
        }
        Ok(self.depth_min + d as f64 * self.depth_step)
    }
}

/// Depth in meters of bin `d`.
pub fn depth_of_bin(spec: &FrustumSpec, d: usize) -> Result<f64> {
    spec.depth_of_bin(d)
}

/// Casts pixel `(u, v)` at `depth` meters along its ray into the ego frame.
pub fn unproject(calib: &CameraCalibration, u: f64, v: f64, depth: f64) -> Vector3<f64> {
    counters::add_projections(1);
    calib.unproject_uncounted(u, v, depth)
}

/// Inverse of [`unproject`]: returns `(u, v, depth)`.
pub fn project(calib: &CameraCalibration, p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let p_cam = calib.rotation.transpose() * (p - calib.translation);
    let depth = p_cam.z;
    if depth.is_nan() || depth <= 0.0 {
        return Err(BevError::BehindCamera { depth });
    }
    let u = calib.fx * p_cam.x / depth + calib.cx;
    let v = calib.fy * p_cam.y / depth + calib.cy;
    Ok((u, v, depth))
}

/// Ego-frame coordinates of every frustum point of a rig, laid out
/// camera-major, then row-major `(h, w)`, then by depth bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumPoints {
    coords: Vec<Vector3<f64>>,
    spec: FrustumSpec,
    n_cameras: usize,
}

impl FrustumPoints {
    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }
    pub fn len(&self) -> usize {
        self.coords.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }
    pub fn spec(&self) -> &FrustumSpec {
        &self.spec
    }
    pub fn get(&self, n: usize, h: usize, w: usize, d: usize) -> Vector3<f64> {
        self.coords[self.spec.point_index(n, h, w, d)]
    }
}

/// Unprojects every `(camera, h, w, d)` of the rig. Cameras are processed in
/// parallel; the result does not depend on the thread count.
pub fn generate_frustum(rig: &[CameraCalibration], spec: &FrustumSpec) -> Result<FrustumPoints> {
    if rig.is_empty() {
        return Err(BevError::config("camera rig is empty"));
    }
    let per_cam = spec.points_per_camera();
    let depths: Vec<f64> = (0..spec.depth_bins)
        .map(|d| spec.depth_min + d as f64 * spec.depth_step)
        .collect();
    let mut coords = vec![Vector3::zeros(); rig.len() * per_cam];
    coords
        .par_chunks_mut(per_cam)
        .zip(rig.par_iter())
        .for_each(|(block, calib)| {
            let mut i = 0;
            for h in 0..spec.height {
                for w in 0..spec.width {
                    for &depth in &depths {
                        block[i] = calib.unproject_uncounted(w as f64, h as f64, depth);
                        i += 1;
                    }
                }
            }
        });
    counters::add_projections(coords.len() as u64);
    Ok(FrustumPoints {
        coords,
        spec: *spec,
        n_cameras: rig.len(),
    })
}

/// A rig together with its shared frustum discretization, as stored in a
/// calibration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCalibration {
    pub cameras: Vec<CameraCalibration>,
    pub frustum: FrustumSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    cameras: Vec<CameraDoc>,
    frustum: FrustumDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    id: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrustumDoc {
    h: usize,
    w: usize,
    d_min: f64,
    d_step: f64,
    d_bins: usize,
}

impl RigCalibration {
    /// Parses a calibration JSON document. Errors carry the path of the
    /// offending field, e.g. `cameras[2].rotation`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: CalibrationDoc =
            serde_path_to_error::deserialize(de).map_err(|e| BevError::Parse {
                field: match e.path().to_string() {
                    p if p == "." => "<root>".to_string(),
                    p => p,
                },
                offset: None,
                message: e.inner().to_string(),
            })?;
        let invalid = |field: String, err: BevError| BevError::Parse {
            field,
            offset: None,
            message: err.to_string(),
        };
        let cameras = doc
            .cameras
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let field = |name: &str| format!("cameras[{i}].{name}");
                if c.fx.is_nan() || c.fx <= 0.0 {
                    return Err(invalid(field("fx"), BevError::config("must be positive")));
                }
                if c.fy.is_nan() || c.fy <= 0.0 {
                    return Err(invalid(field("fy"), BevError::config("must be positive")));
                }
                let rotation = Matrix3::from_row_slice(&c.rotation);
                check_rotation(&rotation).map_err(|e| invalid(field("rotation"), e))?;
                CameraCalibration::new(
                    c.id,
                    c.fx,
                    c.fy,
                    c.cx,
                    c.cy,
                    rotation,
                    Vector3::from(c.translation),
                )
                .map_err(|e| invalid(format!("cameras[{i}]"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        if cameras.is_empty() {
            return Err(invalid("cameras".into(), BevError::config("camera rig is empty")));
        }
        let f = &doc.frustum;
        let frustum = FrustumSpec::new(f.h, f.w, f.d_min, f.d_step, f.d_bins)
            .map_err(|e| invalid("frustum".into(), e))?;
        Ok(Self { cameras, frustum })
    }

    pub fn to_json(&self) -> String {
        let doc = CalibrationDoc {
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraDoc {
                    id: c.id,
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    rotation: c.rotation_row_major(),
                    translation: [c.translation.x, c.translation.y, c.translation.z],
                })
                .collect(),
            frustum: FrustumDoc {
                h: self.frustum.height,
                w: self.frustum.width,
                d_min: self.frustum.depth_min,
                d_step: self.frustum.depth_step,
                d_bins: self.frustum.depth_bins,
            },
        };
        serde_json::to_string_pretty(&doc).expect("calibration serializes")
    }
}

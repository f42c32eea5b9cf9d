//! Camera geometry, view datasets, neighbor selection, and view weights.

use crate::{Error, Result};
use nalgebra::{Matrix3, Vector2, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Positions closer than this are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// Axis-aligned world-space box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::InvalidArgument(format!(
                "bounds must have positive extent on all axes: min {min:?}, max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Calibrated pinhole camera: world-to-camera rotation, camera center,
/// focal length and principal point in pixels.
///
/// Camera axes: +x right, +y down, +z forward (into the scene).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: u32,
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub focal: f64,
    pub principal_point: Vector2<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(
        id: u32,
        rotation: Matrix3<f64>,
        position: Vector3<f64>,
        focal: f64,
        principal_point: Vector2<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if residual > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "camera {id}: rotation not orthonormal (|RᵀR−I| = {residual:.3e})"
            )));
        }
        if focal <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera {id}: focal must be positive, got {focal}"
            )));
        }
        let pp = principal_point;
        if pp.x < 0.0 || pp.y < 0.0 || pp.x > width as f64 || pp.y > height as f64 {
            return Err(Error::InvalidArgument(format!(
                "camera {id}: principal point ({}, {}) outside {width}×{height} image",
                pp.x, pp.y
            )));
        }
        Ok(Self { id, rotation, position, focal, principal_point, width, height })
    }

    /// Build a camera looking from `position` toward `target` with world up `+z`.
    pub fn look_at(
        id: u32,
        position: Vector3<f64>,
        target: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("look_at: position equals target".into()))?;
        let up = Vector3::new(0.0, 0.0, 1.0);
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("look_at: view direction parallel to up".into()))?;
        // Re-orthogonalize so RᵀR = I to machine precision.
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let pp = Vector2::new(width as f64 / 2.0, height as f64 / 2.0);
        Self::new(id, rotation, position, focal, pp, width, height)
    }

    /// Project a world point; returns continuous pixel coordinates and
    /// camera-space depth. Depth ≤ 0 flags a point behind the camera.
    pub fn project_point(&self, p: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let pc = self.rotation * (p - self.position);
        let z = pc.z;
        if z.abs() < f64::MIN_POSITIVE {
            return (Vector2::new(f64::NAN, f64::NAN), z);
        }
        let u = self.focal * pc.x / z + self.principal_point.x;
        let v = self.focal * pc.y / z + self.principal_point.y;
        (Vector2::new(u, v), z)
    }

    /// Lift a pixel at a given camera-space depth back to a world point.
    pub fn unproject_pixel(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if depth <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "unproject_pixel: depth must be positive, got {depth}"
            )));
        }
        let x = (pixel.x - self.principal_point.x) / self.focal * depth;
        let y = (pixel.y - self.principal_point.y) / self.focal * depth;
        let pc = Vector3::new(x, y, depth);
        Ok(self.rotation.transpose() * pc + self.position)
    }

    /// World-space ray through a continuous pixel coordinate.
    /// Returns `(origin, unit direction, z_scale)` where `z_scale` converts
    /// distance along the ray into camera-space depth.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
        let dir_cam = Vector3::new(
            (pixel.x - self.principal_point.x) / self.focal,
            (pixel.y - self.principal_point.y) / self.focal,
            1.0,
        );
        let dir_world = self.rotation.transpose() * dir_cam;
        let norm = dir_world.norm();
        (self.position, dir_world / norm, 1.0 / norm)
    }

    /// Camera forward axis (+z) in world space.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0)
    }
}

/// One training image with its masks and, once preprocessing has run,
/// its inpainted counterpart.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera_id: u32,
    pub rgb: Array3<f64>,
    pub inpainted_rgb: Option<Array3<f64>>,
    pub user_mask: Array2<bool>,
    pub object_mask: Option<Array2<bool>>,
    pub frame: usize,
    pub is_seed: bool,
}

impl TrainingView {
    pub fn height(&self) -> usize {
        self.rgb.dim().0
    }

    pub fn width(&self) -> usize {
        self.rgb.dim().1
    }
}

/// A complete multi-view (optionally multi-frame) capture plus edit inputs.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub cameras: Vec<CameraView>,
    pub views: Vec<TrainingView>,
    /// Camera ids of the seed views, in propagation order.
    pub seed_ids: Vec<u32>,
    pub frames: usize,
    pub prompt: String,
    pub bounds: Aabb,
    /// Cameras present in `cameras` but reserved for evaluation.
    pub holdout_camera_ids: Vec<u32>,
}

impl SceneDataset {
    pub fn camera(&self, id: u32) -> Result<&CameraView> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown camera id {id}")))
    }

    pub fn view(&self, camera_id: u32, frame: usize) -> Result<&TrainingView> {
        self.views
            .iter()
            .find(|v| v.camera_id == camera_id && v.frame == frame)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no view for camera {camera_id} frame {frame}"))
            })
    }

    pub fn view_mut(&mut self, camera_id: u32, frame: usize) -> Result<&mut TrainingView> {
        self.views
            .iter_mut()
            .find(|v| v.camera_id == camera_id && v.frame == frame)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("no view for camera {camera_id} frame {frame}"))
            })
    }

    /// Views of one frame, ordered by camera id.
    pub fn frame_views(&self, frame: usize) -> Vec<&TrainingView> {
        let mut vs: Vec<&TrainingView> = self.views.iter().filter(|v| v.frame == frame).collect();
        vs.sort_by_key(|v| v.camera_id);
        vs
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_ids.is_empty() {
            return Err(Error::InvalidArgument("scene has no seed views".into()));
        }
        for id in &self.seed_ids {
            if !self.views.iter().any(|v| v.camera_id == *id) {
                return Err(Error::InvalidArgument(format!(
                    "seed id {id} is not a view camera id"
                )));
            }
        }
        for f in 0..self.frames {
            if !self.views.iter().any(|v| v.frame == f) {
                return Err(Error::InvalidArgument(format!("frame {f} has no views")));
            }
        }
        for v in &self.views {
            if v.frame >= self.frames {
                return Err(Error::InvalidArgument(format!(
                    "view camera {} frame {} out of range (frames = {})",
                    v.camera_id, v.frame, self.frames
                )));
            }
            let cam = self.camera(v.camera_id)?;
            if v.rgb.dim() != (cam.height, cam.width, 3) {
                return Err(Error::InvalidArgument(format!(
                    "view camera {}: image {:?} does not match camera {}×{}",
                    v.camera_id,
                    v.rgb.dim(),
                    cam.height,
                    cam.width
                )));
            }
        }
        Ok(())
    }
}

/// The `min(n, |pool|)` cameras closest to `target`, ascending by Euclidean
/// center distance; ties broken by ascending camera id.
pub fn nearest_neighbors<'a>(
    target: &CameraView,
    pool: &[&'a CameraView],
    n: usize,
) -> Result<Vec<&'a CameraView>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("nearest_neighbors: empty pool".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("nearest_neighbors: n must be ≥ 1".into()));
    }
    let mut scored: Vec<(f64, &CameraView)> = pool
        .iter()
        .map(|c| ((c.position - target.position).norm(), *c))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().take(n).map(|(_, c)| c).collect())
}

/// Normalized inverse-distance weights for a set of neighbor cameras:
/// `wᵏ = (1/dᵏ) / Σₐ (1/dₐ)`. If a neighbor coincides with the target
/// (distance < 1e-9), all weight concentrates on the nearest such neighbor.
pub fn compute_view_weights(target: &CameraView, neighbors: &[&CameraView]) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument("compute_view_weights: empty neighbor list".into()));
    }
    let dists: Vec<f64> = neighbors
        .iter()
        .map(|c| (c.position - target.position).norm())
        .collect();
    let mut nearest_degenerate: Option<usize> = None;
    for (i, d) in dists.iter().enumerate() {
        if *d < COINCIDENT_EPS {
            match nearest_degenerate {
                Some(j) if dists[j] <= *d => {}
                _ => nearest_degenerate = Some(i),
            }
        }
    }
    if let Some(i) = nearest_degenerate {
        let mut w = vec![0.0; neighbors.len()];
        w[i] = 1.0;
        return Ok(w);
    }
    let inv: Vec<f64> = dists.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / total).collect())
}

// ---------------------------------------------------------------------------
// Scene description file
// ---------------------------------------------------------------------------

/// On-disk scene description. Key names are frozen by
/// `schemas/scene.schema.json`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub prompt: String,
    pub frames: usize,
    pub seed_ids: Vec<u32>,
    pub bounds: BoundsFile,
    pub cameras: Vec<CameraFile>,
    pub views: Vec<ViewFile>,
    #[serde(default)]
    pub holdout_camera_ids: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub id: u32,
    /// Row-major 3×3 world-to-camera rotation.
    pub rotation: [f64; 9],
    pub position: [f64; 3],
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewFile {
    pub camera_id: u32,
    pub frame: usize,
    /// Paths relative to the scene file's directory; 8-bit PNG.
    pub image: String,
    pub user_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_mask: Option<String>,
}

impl From<&CameraView> for CameraFile {
    fn from(c: &CameraView) -> Self {
        let r = &c.rotation;
        CameraFile {
            id: c.id,
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            position: [c.position.x, c.position.y, c.position.z],
            focal: c.focal,
            principal_point: [c.principal_point.x, c.principal_point.y],
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraFile {
    pub fn to_camera(&self) -> Result<CameraView> {
        let r = &self.rotation;
        CameraView::new(
            self.id,
            Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
            Vector3::new(self.position[0], self.position[1], self.position[2]),
            self.focal,
            Vector2::new(self.principal_point[0], self.principal_point[1]),
            self.width,
            self.height,
        )
    }
}

/// Load a scene description and its referenced images.
pub fn load_scene(path: &Path) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.version != 1 {
        return Err(Error::Format(format!("unsupported scene version {}", file.version)));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut cameras = Vec::with_capacity(file.cameras.len());
    for cf in &file.cameras {
        cameras.push(cf.to_camera()?);
    }

    let mut views = Vec::with_capacity(file.views.len());
    for vf in &file.views {
        let rgb = crate::imgio::load_rgb_png(&dir.join(&vf.image))?;
        let user_mask = crate::imgio::load_mask_png(&dir.join(&vf.user_mask))?;
        if user_mask.dim() != (rgb.dim().0, rgb.dim().1) {
            return Err(Error::Format(format!(
                "view camera {}: mask {:?} does not match image {:?}",
                vf.camera_id,
                user_mask.dim(),
                rgb.dim()
            )));
        }
        let object_mask = match &vf.object_mask {
            Some(p) => Some(crate::imgio::load_mask_png(&dir.join(p))?),
            None => None,
        };
        views.push(TrainingView {
            camera_id: vf.camera_id,
            rgb,
            inpainted_rgb: None,
            user_mask,
            object_mask,
            frame: vf.frame,
            is_seed: file.seed_ids.contains(&vf.camera_id),
        });
    }

    let bounds = Aabb::new(
        Vector3::from_column_slice(&file.bounds.min),
        Vector3::from_column_slice(&file.bounds.max),
    )?;
    let dataset = SceneDataset {
        cameras,
        views,
        seed_ids: file.seed_ids,
        frames: file.frames,
        prompt: file.prompt,
        bounds,
        holdout_camera_ids: file.holdout_camera_ids,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn identity_camera(id: u32) -> CameraView {
        CameraView::new(
            id,
            Matrix3::identity(),
            Vector3::zeros(),
            100.0,
            Vector2::new(50.0, 50.0),
            100,
            100,
        )
        .unwrap()
    }

    fn camera_at(id: u32, pos: [f64; 3]) -> CameraView {
        CameraView::new(
            id,
            Matrix3::identity(),
            Vector3::new(pos[0], pos[1], pos[2]),
            100.0,
            Vector2::new(50.0, 50.0),
            100,
            100,
        )
        .unwrap()
    }

    fn random_camera(rng: &mut impl Rng, id: u32) -> CameraView {
        let pos = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let target = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(3.0..4.0),
        );
        CameraView::look_at(id, pos, target, rng.random_range(50.0..200.0), 128, 96).unwrap()
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let cam = identity_camera(0);
        let (px, depth) = cam.project_point(&Vector3::new(0.0, 0.0, 1.0));
        assert_abs_diff_eq!(px.x, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.y, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(depth, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn off_axis_projection() {
        let cam = identity_camera(0);
        let (px, depth) = cam.project_point(&Vector3::new(0.1, 0.0, 1.0));
        assert_abs_diff_eq!(px.x, 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.y, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(depth, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unproject_principal_point() {
        let cam = identity_camera(0);
        let p = cam.unproject_pixel(&Vector2::new(50.0, 50.0), 2.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_rejects_nonpositive_depth() {
        let cam = identity_camera(0);
        assert!(cam.unproject_pixel(&Vector2::new(50.0, 50.0), 0.0).is_err());
        assert!(cam.unproject_pixel(&Vector2::new(50.0, 50.0), -1.0).is_err());
    }

    #[test]
    fn project_unproject_round_trip_1000_random() {
        let mut rng = crate::rng::derive_rng(42, &["scene", "roundtrip"]);
        for i in 0..1000 {
            let cam = random_camera(&mut rng, i);
            let q = Vector2::new(rng.random_range(0.0..128.0), rng.random_range(0.0..96.0));
            let d = rng.random_range(0.1..10.0);
            let p = cam.unproject_pixel(&q, d).unwrap();
            let (q2, d2) = cam.project_point(&p);
            assert!((q2 - q).norm() < 1e-6, "pixel err {} at case {i}", (q2 - q).norm());
            assert!((d2 - d).abs() < 1e-9, "depth err {} at case {i}", (d2 - d).abs());
        }
    }

    #[test]
    fn behind_camera_flagged_by_depth_sign() {
        let cam = identity_camera(0);
        let (_, depth) = cam.project_point(&Vector3::new(0.0, 0.0, -1.0));
        assert!(depth < 0.0);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        let err = CameraView::new(
            0,
            r,
            Vector3::zeros(),
            100.0,
            Vector2::new(50.0, 50.0),
            100,
            100,
        );
        assert!(err.is_err());
    }

    #[test]
    fn nearest_neighbors_sorted_by_distance() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(0, [3.0, 0.0, 0.0]);
        let b = camera_at(1, [1.0, 0.0, 0.0]);
        let c = camera_at(2, [2.0, 0.0, 0.0]);
        let pool = vec![&a, &b, &c];
        let picked = nearest_neighbors(&target, &pool, 2).unwrap();
        assert_eq!(picked.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn nearest_neighbors_tie_breaks_by_id() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(5, [1.0, 0.0, 0.0]);
        let b = camera_at(3, [0.0, 1.0, 0.0]);
        let pool = vec![&a, &b];
        let picked = nearest_neighbors(&target, &pool, 2).unwrap();
        assert_eq!(picked.iter().map(|c| c.id).collect::<Vec<_>>(), vec![3, 5]);
    }

    #[test]
    fn nearest_neighbors_n_larger_than_pool() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(0, [2.0, 0.0, 0.0]);
        let b = camera_at(1, [1.0, 0.0, 0.0]);
        let pool = vec![&a, &b];
        let picked = nearest_neighbors(&target, &pool, 5).unwrap();
        assert_eq!(picked.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn nearest_neighbors_empty_pool_errors() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        assert!(nearest_neighbors(&target, &[], 1).is_err());
    }

    #[test]
    fn weights_two_neighbors() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(0, [1.0, 0.0, 0.0]);
        let b = camera_at(1, [3.0, 0.0, 0.0]);
        let w = compute_view_weights(&target, &[&a, &b]).unwrap();
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn weights_three_neighbors() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(0, [1.0, 0.0, 0.0]);
        let b = camera_at(1, [2.0, 0.0, 0.0]);
        let c = camera_at(2, [4.0, 0.0, 0.0]);
        let w = compute_view_weights(&target, &[&a, &b, &c]).unwrap();
        assert_abs_diff_eq!(w[0], 4.0 / 7.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w[1], 2.0 / 7.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w[2], 1.0 / 7.0, epsilon = 1e-13);
    }

    #[test]
    fn weights_equidistant_uniform() {
        let target = camera_at(9, [0.0, 0.0, 0.0]);
        let a = camera_at(0, [1.0, 0.0, 0.0]);
        let b = camera_at(1, [0.0, 1.0, 0.0]);
        let c = camera_at(2, [0.0, 0.0, 1.0]);
        let d = camera_at(3, [-1.0, 0.0, 0.0]);
        let w = compute_view_weights(&target, &[&a, &b, &c, &d]).unwrap();
        for v in &w {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_degenerate_one_hot() {
        let target = camera_at(9, [1.0, 2.0, 3.0]);
        let a = camera_at(0, [5.0, 0.0, 0.0]);
        let b = camera_at(1, [1.0, 2.0, 3.0]);
        let w = compute_view_weights(&target, &[&a, &b]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }
}

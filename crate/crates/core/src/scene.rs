//! Frozen Gaussian scene, pinhole cameras and the GOIS container.
//!
//! GOIS layout (little-endian): magic `GOIS`, version `u32 = 1`, count `u64`,
//! feature_dim `u32`, reserved `u32 = 0`, followed by `count` records of
//! `centroid[3] quaternion[4] scale[3] opacity rgb[3] feature[feature_dim]`,
//! all `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const SCENE_MAGIC: &[u8; 4] = b"GOIS";
pub const SCENE_HEADER_BYTES: usize = 24;
pub const DEFAULT_FEATURE_DIM: usize = 10;

const QUAT_NORM_TOL: f64 = 1e-6;
const ROTATION_ORTHO_TOL: f64 = 1e-5;

/// One frozen 3D Gaussian plus its trainable low-dimensional semantic feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub centroid: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    /// Linear (not log) axis lengths.
    pub scale: [f32; 3],
    /// Post-activation opacity in `[0, 1]`.
    pub opacity: f32,
    pub rgb: [f32; 3],
    pub feature: Vec<f32>,
}

impl Gaussian {
    /// Bytes occupied by one record in a GOIS file.
    pub fn record_size(feature_dim: usize) -> usize {
        (14 + feature_dim) * 4
    }

    pub fn validate(&self, feature_dim: usize) -> std::result::Result<(), String> {
        let q = self.rotation.map(f64::from);
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !((norm - 1.0).abs() <= QUAT_NORM_TOL) {
            return Err(format!("quaternion norm {norm} is not 1"));
        }
        if self.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(format!("scale {:?} must be positive", self.scale));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if self.centroid.iter().chain(&self.rgb).any(|v| !v.is_finite()) {
            return Err("non-finite centroid or color".into());
        }
        if self.feature.len() != feature_dim {
            return Err(format!(
                "feature has {} components, expected {feature_dim}",
                self.feature.len()
            ));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err("non-finite feature".into());
        }
        Ok(())
    }

    /// Rotation matrix of the (normalized) quaternion, row-major.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [w, x, y, z] = self.rotation.map(f64::from);
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let r = self.rotation_matrix();
        let s = self.scale.map(f64::from);
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum();
            }
        }
        m
    }
}

/// An ordered list of Gaussians sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    feature_dim: usize,
}

impl Scene {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            feature_dim,
        }
    }

    pub fn from_gaussians(feature_dim: usize, gaussians: Vec<Gaussian>) -> Result<Self> {
        let scene = Self {
            gaussians,
            feature_dim,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        g.validate(self.feature_dim)
            .map_err(|reason| Error::InvalidRecord {
                index: self.gaussians.len(),
                reason,
            })?;
        self.gaussians.push(g);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (index, g) in self.gaussians.iter().enumerate() {
            g.validate(self.feature_dim)
                .map_err(|reason| Error::InvalidRecord { index, reason })?;
        }
        Ok(())
    }

    /// Features as a row-major `len × feature_dim` buffer in 64-bit.
    pub fn features_f64(&self) -> Vec<f64> {
        self.gaussians
            .iter()
            .flat_map(|g| g.feature.iter().map(|&v| f64::from(v)))
            .collect()
    }

    /// Overwrites all features from a row-major `len × feature_dim` buffer.
    pub fn set_features(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() * self.feature_dim {
            return Err(Error::Shape(format!(
                "feature buffer has {} values, scene needs {}",
                values.len(),
                self.len() * self.feature_dim
            )));
        }
        for (g, row) in self
            .gaussians
            .iter_mut()
            .zip(values.chunks_exact(self.feature_dim.max(1)))
        {
            for (dst, &src) in g.feature.iter_mut().zip(row) {
                *dst = src as f32;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(SCENE_MAGIC);
        w.u64(self.gaussians.len() as u64);
        w.u32(self.feature_dim as u32);
        w.u32(0);
        w.buf
            .reserve(self.gaussians.len() * Gaussian::record_size(self.feature_dim));
        for g in &self.gaussians {
            w.f32s(&g.centroid);
            w.f32s(&g.rotation);
            w.f32s(&g.scale);
            w.f32(g.opacity);
            w.f32s(&g.rgb);
            w.f32s(&g.feature);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("GOIS", bytes);
        r.header(SCENE_MAGIC)?;
        let count = r.u64()?;
        let feature_dim = r.u32()? as usize;
        let _reserved = r.u32()?;
        let record = Gaussian::record_size(feature_dim) as u64;
        r.expect_remaining(count.saturating_mul(record))?;
        let mut gaussians = Vec::with_capacity(count as usize);
        for index in 0..count as usize {
            let g = Gaussian {
                centroid: r.f32_array()?,
                rotation: r.f32_array()?,
                scale: r.f32_array()?,
                opacity: r.f32()?,
                rgb: r.f32_array()?,
                feature: r.f32_vec(feature_dim)?,
            };
            g.validate(feature_dim)
                .map_err(|reason| Error::InvalidRecord { index, reason })?;
            gaussians.push(g);
        }
        r.finish()?;
        Ok(Self {
            gaussians,
            feature_dim,
        })
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    Scene::from_bytes(&binio::read_file(path.as_ref())?)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &scene.to_bytes())
}

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// `(col, row)` has its center at image coordinates `(col, row)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rigid 4×4 transform, row-major.
    pub world_to_camera: [f64; 16],
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera width and height must be >= 1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid("camera focal lengths must be positive".into()));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Invalid("camera principal point not finite".into()));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if !((dot - expected).abs() <= ROTATION_ORTHO_TOL) {
                    return Err(Error::Invalid(
                        "world_to_camera rotation block is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.world_to_camera;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> [f64; 3] {
        let m = &self.world_to_camera;
        [m[3], m[7], m[11]]
    }

    pub fn world_to_cam_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    /// `fov_y` is the vertical field of view in radians.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        width: u32,
        height: u32,
        fov_y: f64,
    ) -> Result<Self> {
        let forward = normalize3(sub3(target, eye))
            .ok_or_else(|| Error::Invalid("camera eye equals target".into()))?;
        // Image y points down, so "down" is the negated up vector.
        let right = normalize3(cross3(forward, up))
            .ok_or_else(|| Error::Invalid("camera up is parallel to view direction".into()))?;
        let down = cross3(forward, right);
        let rows = [right, down, forward];
        let mut m = [0.0; 16];
        for (i, row) in rows.iter().enumerate() {
            m[i * 4] = row[0];
            m[i * 4 + 1] = row[1];
            m[i * 4 + 2] = row[2];
            m[i * 4 + 3] = -(row[0] * eye[0] + row[1] * eye[1] + row[2] * eye[2]);
        }
        m[15] = 1.0;
        let f = 0.5 * f64::from(height) / (0.5 * fov_y).tan();
        let cam = Camera {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * f64::from(width) - 0.5,
            cy: 0.5 * f64::from(height) - 0.5,
            world_to_camera: m,
        };
        cam.validate()?;
        Ok(cam)
    }
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera> {
    let cam: Camera = binio::read_json(path.as_ref())?;
    cam.validate()?;
    Ok(cam)
}

pub fn save_camera(cam: &Camera, path: impl AsRef<Path>) -> Result<()> {
    binio::write_json(path.as_ref(), cam)
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-12).then(|| a.map(|v| v / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_gaussian(dim: usize) -> Gaussian {
        Gaussian {
            centroid: [0.0, 0.0, 1.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [0.1; 3],
            opacity: 0.5,
            rgb: [0.2, 0.4, 0.6],
            feature: vec![0.25; dim],
        }
    }

    #[test]
    fn empty_scene_is_header_only() {
        let bytes = Scene::new(10).to_bytes();
        assert_eq!(bytes.len(), SCENE_HEADER_BYTES);
        assert_eq!(&bytes[..4], b"GOIS");
        let back = Scene::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.feature_dim(), 10);
    }

    #[test]
    fn single_gaussian_round_trip() {
        let mut s = Scene::new(10);
        s.push(unit_gaussian(10)).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), SCENE_HEADER_BYTES + Gaussian::record_size(10));
        let back = Scene::from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = Scene::new(4).to_bytes();
        bytes[..4].copy_from_slice(b"GOIF");
        let err = Scene::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("wrong container type"), "{err}");
    }

    #[test]
    fn truncation_is_rejected() {
        let mut s = Scene::new(3);
        s.push(unit_gaussian(3)).unwrap();
        s.push(unit_gaussian(3)).unwrap();
        let bytes = s.to_bytes();
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(
                Scene::from_bytes(&bytes[..cut]),
                Err(Error::Truncated { .. })
            ));
        }
    }

    #[test]
    fn invalid_record_reports_index() {
        let mut s = Scene::new(2);
        s.push(unit_gaussian(2)).unwrap();
        s.push(unit_gaussian(2)).unwrap();
        s.gaussians[1].opacity = 1.5;
        let err = Scene::from_bytes(&s.to_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { index: 1, .. }), "{err}");
        s.gaussians[1].opacity = 0.5;
        s.gaussians[1].rotation = [2.0, 0.0, 0.0, 0.0];
        assert!(matches!(
            Scene::from_bytes(&s.to_bytes()),
            Err(Error::InvalidRecord { index: 1, .. })
        ));
    }

    #[test]
    fn push_checks_feature_dim() {
        let mut s = Scene::new(4);
        assert!(s.push(unit_gaussian(3)).is_err());
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at([3.0, -2.0, 4.0], [0.5, 0.0, 0.0], [0.0, 0.0, 1.0], 64, 48, 0.8)
            .unwrap();
        let p = cam.world_to_cam_point([0.5, 0.0, 0.0]);
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
        // World up projects towards the top of the image (negative y).
        let above = cam.world_to_cam_point([0.5, 0.0, 1.0]);
        assert!(above[1] < 0.0);
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = Camera::look_at([0.0, -5.0, 3.0], [0.0; 3], [0.0, 0.0, 1.0], 32, 32, 0.7).unwrap();
        let text = serde_json::to_string(&cam).unwrap();
        assert!(text.contains("\"world_to_camera\""));
        let back: Camera = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn camera_rejects_non_rigid_rotation() {
        let mut cam =
            Camera::look_at([0.0, -5.0, 3.0], [0.0; 3], [0.0, 0.0, 1.0], 32, 32, 0.7).unwrap();
        cam.world_to_camera[0] *= 1.01;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn covariance_of_axis_aligned_gaussian() {
        let mut g = unit_gaussian(0);
        g.scale = [1.0, 2.0, 3.0];
        let c = g.covariance();
        assert!((c[0][0] - 1.0).abs() < 1e-12);
        assert!((c[1][1] - 4.0).abs() < 1e-12);
        assert!((c[2][2] - 9.0).abs() < 1e-12);
        assert!(c[0][1].abs() < 1e-12);
    }
}

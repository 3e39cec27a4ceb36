//! Coordinate-frame algebra shared by the data generator, the model and the
//! evaluator.
//!
//! Ego frame: x forward, y left, z up, origin at the radar phase center.
//! Azimuth grows counter-clockwise from +x. Camera frame: x right, y down,
//! z along the optical axis. Pixel coordinates are continuous, with the image
//! spanning `[0, W] x [0, H]` and pixel `(i, j)` centered at `(i + 0.5, j + 0.5)`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCoord {
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
}

impl PolarCoord {
    pub fn new(range_m: f64, azimuth_rad: f64, elevation_rad: f64) -> Result<Self> {
        let p = PolarCoord {
            range_m,
            azimuth_rad,
            elevation_rad,
        };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Config(format!("invalid polar coordinate {p:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.range_m >= 0.0
            && self.range_m.is_finite()
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.azimuth_rad)
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.elevation_rad)
    }
}

pub fn polar_to_cartesian(p: PolarCoord) -> [f64; 3] {
    let (se, ce) = p.elevation_rad.sin_cos();
    let (sa, ca) = p.azimuth_rad.sin_cos();
    [p.range_m * ce * ca, p.range_m * ce * sa, p.range_m * se]
}

/// Inverse of [`polar_to_cartesian`] for points in front of the sensor
/// (`x >= 0`); the origin has no direction and is rejected.
pub fn cartesian_to_polar(x: f64, y: f64, z: f64) -> Result<PolarCoord> {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    let ground = x.hypot(y);
    let elevation = z.atan2(ground);
    let azimuth = if ground == 0.0 { 0.0 } else { y.atan2(x) };
    Ok(PolarCoord {
        range_m: r,
        azimuth_rad: azimuth,
        elevation_rad: elevation,
    })
}

/// Pinhole camera with a rigid radar-to-camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraModelJson", into = "CameraModelJson")]
pub struct CameraModel {
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 4],
    /// (height_px, width_px)
    pub image_size: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct CameraModelJson {
    intrinsics: Vec<f64>,
    extrinsics: Vec<f64>,
    image_size: [usize; 2],
}

impl TryFrom<CameraModelJson> for CameraModel {
    type Error = Error;

    fn try_from(j: CameraModelJson) -> Result<Self> {
        if j.intrinsics.len() != 9 || j.extrinsics.len() != 16 {
            return Err(Error::Config(format!(
                "camera model needs 9 intrinsics and 16 extrinsics, got {} and {}",
                j.intrinsics.len(),
                j.extrinsics.len()
            )));
        }
        let mut k = [[0.0; 3]; 3];
        let mut t = [[0.0; 4]; 4];
        for (i, v) in j.intrinsics.iter().enumerate() {
            k[i / 3][i % 3] = *v;
        }
        for (i, v) in j.extrinsics.iter().enumerate() {
            t[i / 4][i % 4] = *v;
        }
        let cam = CameraModel {
            intrinsics: k,
            extrinsics: t,
            image_size: (j.image_size[0], j.image_size[1]),
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<CameraModel> for CameraModelJson {
    fn from(c: CameraModel) -> Self {
        CameraModelJson {
            intrinsics: c.intrinsics.iter().flatten().copied().collect(),
            extrinsics: c.extrinsics.iter().flatten().copied().collect(),
            image_size: [c.image_size.0, c.image_size.1],
        }
    }
}

impl CameraModel {
    /// Forward-looking camera mounted at `mount` (ego frame) with its optical
    /// axis along ego +x.
    pub fn forward_facing(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        mount: [f64; 3],
        image_size: (usize, usize),
    ) -> Self {
        // rows: camera axes expressed in ego coordinates
        let rot = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];
        let mut ext = [[0.0; 4]; 4];
        for i in 0..3 {
            ext[i][..3].copy_from_slice(&rot[i]);
            ext[i][3] = -(0..3).map(|j| rot[i][j] * mount[j]).sum::<f64>();
        }
        ext[3][3] = 1.0;
        CameraModel {
            intrinsics: [[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]],
            extrinsics: ext,
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(Error::Config("intrinsics must be upper-triangular".into()));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if k.iter().flatten().any(|v| !v.is_finite()) || k[2][2] == 0.0 {
            return Err(Error::Config("intrinsics must be finite with K[2][2] != 0".into()));
        }
        let t = &self.extrinsics;
        if t[3] != [0.0, 0.0, 0.0, 1.0] || t.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("extrinsics must be a finite rigid transform".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|m| t[i][m] * t[j][m]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::Config("extrinsic rotation is not orthonormal".into()));
                }
            }
        }
        let det = t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1])
            - t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0])
            + t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::Config("extrinsic rotation must have determinant +1".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Config("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn to_camera_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let t = &self.extrinsics;
        std::array::from_fn(|i| t[i][0] * p[0] + t[i][1] * p[1] + t[i][2] * p[2] + t[i][3])
    }

    /// Pinhole projection of a camera-frame point, without frustum checks.
    /// Returns `None` only for non-positive depth.
    pub fn project_camera_point(&self, pc: [f64; 3]) -> Option<(f64, f64)> {
        if pc[2] <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        let w = k[2][2] * pc[2];
        let u = (k[0][0] * pc[0] + k[0][1] * pc[1] + k[0][2] * pc[2]) / w;
        let v = (k[1][1] * pc[1] + k[1][2] * pc[2]) / w;
        Some((u, v))
    }

    /// Projects an ego-frame point to pixels; empty when behind the camera or
    /// outside the image.
    pub fn project_to_image(&self, point_radar: [f64; 3]) -> Option<(f64, f64)> {
        let (u, v) = self.project_camera_point(self.to_camera_frame(point_radar))?;
        let (h, w) = self.image_size;
        if (0.0..=w as f64).contains(&u) && (0.0..=h as f64).contains(&v) {
            Some((u, v))
        } else {
            None
        }
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[0][0]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[1][1]
    }
}

/// Radar BEV grid in polar coordinates plus the height segmentation used for
/// lifted queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub range_bounds_m: (f64, f64),
    pub azimuth_bounds_rad: (f64, f64),
    /// Height bounds (ego z) of the elevation segments.
    pub elevation_bounds_m: (f64, f64),
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_range == 0 || self.n_azimuth == 0 || self.n_elevation == 0 {
            return Err(Error::Config("grid counts must be >= 1".into()));
        }
        for (name, (lo, hi)) in [
            ("range", self.range_bounds_m),
            ("azimuth", self.azimuth_bounds_rad),
            ("elevation", self.elevation_bounds_m),
        ] {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "{name} bounds must be strictly increasing, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn range_step(&self) -> f64 {
        (self.range_bounds_m.1 - self.range_bounds_m.0) / self.n_range as f64
    }

    pub fn azimuth_step(&self) -> f64 {
        (self.azimuth_bounds_rad.1 - self.azimuth_bounds_rad.0) / self.n_azimuth as f64
    }

    pub fn elevation_step(&self) -> f64 {
        (self.elevation_bounds_m.1 - self.elevation_bounds_m.0) / self.n_elevation as f64
    }

    pub fn range_center(&self, i: usize) -> f64 {
        self.range_bounds_m.0 + (i as f64 + 0.5) * self.range_step()
    }

    pub fn azimuth_center(&self, j: usize) -> f64 {
        self.azimuth_bounds_rad.0 + (j as f64 + 0.5) * self.azimuth_step()
    }

    pub fn elevation_center(&self, e: usize) -> f64 {
        self.elevation_bounds_m.0 + (e as f64 + 0.5) * self.elevation_step()
    }

    /// Fractional (range, azimuth) bin coordinates of an ego BEV point;
    /// integer values are bin centers. Range is measured on the ground plane.
    pub fn bev_to_bins(&self, x: f64, y: f64) -> (f64, f64) {
        let rho = x.hypot(y);
        let az = y.atan2(x);
        (
            (rho - self.range_bounds_m.0) / self.range_step() - 0.5,
            (az - self.azimuth_bounds_rad.0) / self.azimuth_step() - 0.5,
        )
    }

    pub fn bins_to_bev(&self, range_bin: f64, azimuth_bin: f64) -> (f64, f64) {
        let rho = self.range_bounds_m.0 + (range_bin + 0.5) * self.range_step();
        let az = self.azimuth_bounds_rad.0 + (azimuth_bin + 0.5) * self.azimuth_step();
        (rho * az.cos(), rho * az.sin())
    }

    pub fn elevation_segment_of(&self, z: f64) -> f64 {
        (z - self.elevation_bounds_m.0) / self.elevation_step() - 0.5
    }

    pub fn n_bins(&self) -> usize {
        self.n_range * self.n_azimuth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub x_bounds_m: (f64, f64),
    pub y_bounds_m: (f64, f64),
    pub z_bounds_m: (f64, f64),
}

impl Default for RegionOfInterest {
    fn default() -> Self {
        RegionOfInterest {
            x_bounds_m: (0.0, 72.0),
            y_bounds_m: (-6.4, 6.4),
            z_bounds_m: (-2.0, 6.0),
        }
    }
}

impl RegionOfInterest {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.x_bounds_m, self.y_bounds_m, self.z_bounds_m] {
            if !(lo < hi) {
                return Err(Error::Config("ROI bounds must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p[0], self.x_bounds_m) && inside(p[1], self.y_bounds_m) && inside(p[2], self.z_bounds_m)
    }
}

/// Center-based, closed-interval ROI membership.
pub fn roi_contains(b: &Box3D, roi: &RegionOfInterest) -> bool {
    roi.contains_point(b.center)
}

/// Projected query anchors, laid out `(n_range, n_azimuth, n_elevation, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoints {
    pub shape: (usize, usize, usize),
    /// Normalized (u, v) in `[0, 1]^2`; zero where the mask is false.
    pub coords: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ReferencePoints {
    pub fn index(&self, r: usize, a: usize, e: usize) -> usize {
        (r * self.shape.1 + a) * self.shape.2 + e
    }

    pub fn get(&self, r: usize, a: usize, e: usize) -> Option<(f32, f32)> {
        let i = self.index(r, a, e);
        self.mask[i].then(|| (self.coords[2 * i], self.coords[2 * i + 1]))
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Bin-center anchors for every (range, azimuth, height segment) query,
/// projected into the camera and normalized by the image size.
pub fn reference_points(grid: &GridSpec, cam: &CameraModel) -> ReferencePoints {
    let (nr, na, ne) = (grid.n_range, grid.n_azimuth, grid.n_elevation);
    let mut coords = vec![0f32; nr * na * ne * 2];
    let mut mask = vec![false; nr * na * ne];
    let (h, w) = (cam.image_size.0 as f64, cam.image_size.1 as f64);
    for r in 0..nr {
        let rho = grid.range_center(r);
        for a in 0..na {
            let (sa, ca) = grid.azimuth_center(a).sin_cos();
            for e in 0..ne {
                let p = [rho * ca, rho * sa, grid.elevation_center(e)];
                let i = (r * na + a) * ne + e;
                if let Some((u, v)) = cam.project_to_image(p) {
                    coords[2 * i] = (u / w) as f32;
                    coords[2 * i + 1] = (v / h) as f32;
                    mask[i] = true;
                }
            }
        }
    }
    ReferencePoints {
        shape: (nr, na, ne),
        coords,
        mask,
    }
}

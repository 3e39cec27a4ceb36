//! Frames, synthetic scenes and the on-disk dataset layout.

mod format;
mod manifest;
mod synth;

pub use format::{read_frame, write_frame, FRAME_MAGIC};
pub use manifest::{dataset_manifest, write_manifest, ManifestEntry, MANIFEST_FILE};
pub use synth::{
    class_color, class_dimension_prior, generate_scene, generate_scene_detailed, ObjectTruth,
    OcclusionSpec, SceneParams,
};

use serde::{Deserialize, Serialize};

use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;

/// Dense row-major 3-axis array of `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array3 {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl Array3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Array3 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 3], v: f32) -> Self {
        Array3 {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values cannot fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Array3 { shape, data })
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f32 {
        let o = self.offset(i, j, k);
        &mut self.data[o]
    }

    pub fn bitwise_eq(&self, other: &Array3) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// The two dense radar inputs, in linear power.
///
/// `p_rad` is (range, azimuth, Doppler); `p_rae` is (range, azimuth, height).
#[derive(Debug, Clone, PartialEq)]
pub struct RadarProjections {
    pub p_rad: Array3,
    pub p_rae: Array3,
}

impl RadarProjections {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (&self.p_rad.shape, &self.p_rae.shape);
        if a[..2] != b[..2] {
            return Err(Error::Shape(format!(
                "RAD {a:?} and RAE {b:?} disagree on range/azimuth"
            )));
        }
        if a.iter().chain(b.iter()).any(|&d| d == 0) {
            return Err(Error::Shape("radar tensors must have non-zero extents".into()));
        }
        let bad = self
            .p_rad
            .data
            .iter()
            .chain(&self.p_rae.data)
            .any(|v| !(v.is_finite() && *v >= 0.0));
        if bad {
            return Err(Error::Shape("radar power must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub projections: RadarProjections,
    /// (H, W, 3) RGB in [0, 1].
    pub image: Array3,
    pub camera: CameraModel,
    pub boxes: Vec<Box3D>,
    pub condition_tag: String,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        self.projections.validate()?;
        let (h, w) = self.camera.image_size;
        if self.image.shape != [h, w, 3] {
            return Err(Error::Shape(format!(
                "image {:?} does not match camera image size ({h}, {w})",
                self.image.shape
            )));
        }
        Ok(())
    }

    /// Bitwise equality of every tensor payload plus exact metadata equality.
    pub fn bitwise_eq(&self, other: &Frame) -> bool {
        self.projections.p_rad.bitwise_eq(&other.projections.p_rad)
            && self.projections.p_rae.bitwise_eq(&other.projections.p_rae)
            && self.image.bitwise_eq(&other.image)
            && self.camera == other.camera
            && self.boxes == other.boxes
            && self.condition_tag == other.condition_tag
    }
}

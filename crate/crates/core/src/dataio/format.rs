//! Frame container: 8-byte magic, u64 little-endian header length, UTF-8 JSON
//! header, then the declared tensors as concatenated little-endian `f32`
//! payloads in header order. See `docs/format.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Array3, Frame, RadarProjections};
use crate::boxes::Box3D;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;

pub const FRAME_MAGIC: &[u8; 8] = b"RDFRAME1";
const FORMAT_VERSION: u32 = 1;
const TENSOR_ORDER: [&str; 3] = ["p_rad", "p_rae", "image"];

#[derive(Serialize, Deserialize)]
struct TensorDecl {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    tensors: Vec<TensorDecl>,
    boxes: Vec<Box3D>,
    camera: serde_json::Value,
    condition_tag: String,
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    frame.validate()?;
    let arrays = [
        &frame.projections.p_rad,
        &frame.projections.p_rae,
        &frame.image,
    ];
    let header = Header {
        version: FORMAT_VERSION,
        dtype: "f32le".into(),
        tensors: TENSOR_ORDER
            .iter()
            .zip(arrays)
            .map(|(name, a)| TensorDecl {
                name: name.to_string(),
                shape: a.shape.to_vec(),
            })
            .collect(),
        boxes: frame.boxes.clone(),
        camera: serde_json::to_value(&frame.camera)?,
        condition_tag: frame.condition_tag.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = arrays.iter().map(|a| a.data.len() * 4).sum();
    let mut buf = Vec::with_capacity(16 + json.len() + payload);
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for a in arrays {
        for v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<Frame> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let dimension = |reason: String| Error::Dimension {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != FRAME_MAGIC {
        return Err(malformed("missing frame magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| malformed(format!("header length {header_len} exceeds file size")))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| malformed(format!("header JSON: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {}", header.version)));
    }
    if header.dtype != "f32le" {
        return Err(malformed(format!("unsupported dtype '{}'", header.dtype)));
    }
    let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != TENSOR_ORDER {
        return Err(malformed(format!(
            "expected tensors {TENSOR_ORDER:?} in order, found {names:?}"
        )));
    }
    let mut shapes = [[0usize; 3]; 3];
    for (slot, t) in shapes.iter_mut().zip(&header.tensors) {
        if t.shape.len() != 3 {
            return Err(dimension(format!("{} must have 3 axes, has {}", t.name, t.shape.len())));
        }
        if let Some(axis) = t.shape.iter().position(|&d| d == 0) {
            return Err(dimension(format!("{} axis {axis} has zero extent", t.name)));
        }
        slot.copy_from_slice(&t.shape);
    }
    let [rad, rae, img] = shapes;
    if rad[..2] != rae[..2] {
        return Err(dimension(format!(
            "p_rad {rad:?} and p_rae {rae:?} disagree on range/azimuth"
        )));
    }
    let camera: CameraModel =
        serde_json::from_value(header.camera).map_err(|e| malformed(format!("camera: {e}")))?;
    if img != [camera.image_size.0, camera.image_size.1, 3] {
        return Err(dimension(format!(
            "image {img:?} does not match camera image size {:?}",
            camera.image_size
        )));
    }

    let counts: Vec<usize> = shapes
        .iter()
        .map(|s| s.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)))
        .collect::<Option<_>>()
        .ok_or_else(|| dimension("tensor size overflows".into()))?;
    let expected = counts.iter().sum::<usize>() * 4;
    let found = bytes.len() - header_end;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(malformed(format!(
            "{} trailing bytes after declared payload",
            found - expected
        )));
    }

    let mut cursor = header_end;
    let mut take = |shape: [usize; 3], n: usize| {
        let data = bytes[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 4 * n;
        Array3 { shape, data }
    };
    let p_rad = take(rad, counts[0]);
    let p_rae = take(rae, counts[1]);
    let image = take(img, counts[2]);
    Ok(Frame {
        projections: RadarProjections { p_rad, p_rae },
        image,
        camera,
        boxes: header.boxes,
        condition_tag: header.condition_tag,
    })
}

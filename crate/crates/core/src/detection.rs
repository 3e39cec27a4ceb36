//! Heatmap target rendering, peak decoding and the detection record format.

use std::io::{BufRead, Write};
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::boxes::{Box3D, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::model::head::{HeadOutput, N_REGRESSION};

/// Value of a unit-peak Gaussian `d` bins from its center.
pub fn gaussian_at(d_range: f64, d_azimuth: f64, sigma: f64) -> f64 {
    (-(d_range * d_range + d_azimuth * d_azimuth) / (2.0 * sigma * sigma)).exp()
}

/// Number of bins of a Gaussian stamped at a bin center whose value exceeds
/// `level`, counting every integer offset with `d² < 2σ² ln(1/level)`.
pub fn support_area(sigma: f64, level: f64) -> usize {
    let r2 = 2.0 * sigma * sigma * (1.0 / level).ln();
    let r = r2.sqrt().floor() as i64 + 1;
    let mut n = 0;
    for dr in -r..=r {
        for da in -r..=r {
            if ((dr * dr + da * da) as f64) < r2 {
                n += 1;
            }
        }
    }
    n
}

/// One frame's head outputs as dense arrays: heatmaps (5, R, A) and
/// regression (8, R, A), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub heatmaps: Vec<f32>,
    pub regression: Vec<f32>,
}

impl HeadMaps {
    pub fn zeros(n_range: usize, n_azimuth: usize) -> Self {
        let n = n_range * n_azimuth;
        HeadMaps {
            n_range,
            n_azimuth,
            heatmaps: vec![0.0; ObjectClass::COUNT * n],
            regression: vec![0.0; N_REGRESSION * n],
        }
    }

    fn bins(&self) -> usize {
        self.n_range * self.n_azimuth
    }

    pub fn heat(&self, class: usize, r: usize, a: usize) -> f32 {
        self.heatmaps[class * self.bins() + r * self.n_azimuth + a]
    }

    pub fn reg(&self, ch: usize, r: usize, a: usize) -> f32 {
        self.regression[ch * self.bins() + r * self.n_azimuth + a]
    }

    /// Splits a batched head output into per-frame maps.
    pub fn from_output(out: &HeadOutput) -> Result<Vec<HeadMaps>> {
        let (b, k, r, a) = out.heatmaps.dims4()?;
        if k != ObjectClass::COUNT || out.regression.dims() != [b, N_REGRESSION, r, a] {
            return Err(Error::Shape(format!(
                "head output {:?} / {:?}",
                out.heatmaps.dims(),
                out.regression.dims()
            )));
        }
        let h = out.heatmaps.to_dtype(DType::F32)?;
        let g = out.regression.to_dtype(DType::F32)?;
        (0..b)
            .map(|i| {
                Ok(HeadMaps {
                    n_range: r,
                    n_azimuth: a,
                    heatmaps: h.get(i)?.flatten_all()?.to_vec1()?,
                    regression: g.get(i)?.flatten_all()?.to_vec1()?,
                })
            })
            .collect()
    }
}

/// Training targets for one frame.
#[derive(Debug, Clone)]
pub struct TargetMaps {
    /// Heatmaps (5, R, A) and regression (8, R, A) in [`HeadMaps`] layout.
    pub maps: HeadMaps,
    /// (R, A); true at ground-truth center bins.
    pub mask: Vec<bool>,
    /// (linear bin index r * A + a, ground-truth box) per rendered box.
    pub centers: Vec<(usize, Box3D)>,
    /// Boxes whose center fell outside the grid.
    pub skipped: usize,
}

/// Stamps one Gaussian per box into its class channel (max-combined) and
/// writes regression targets at the nearest integer bin.
pub fn render_targets(boxes: &[Box3D], grid: &GridSpec, sigma: f64) -> Result<TargetMaps> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let (nr, na) = (grid.n_range, grid.n_azimuth);
    let n = nr * na;
    let mut maps = HeadMaps::zeros(nr, na);
    let mut mask = vec![false; n];
    let mut centers = Vec::new();
    let mut skipped = 0;
    let radius = (sigma * 6.0).ceil() as i64;
    for b in boxes {
        let (fr, fa) = grid.bev_to_bins(b.center[0], b.center[1]);
        let (ir, ia) = (fr.round(), fa.round());
        if !(ir >= 0.0 && ir < nr as f64 && ia >= 0.0 && ia < na as f64) {
            skipped += 1;
            continue;
        }
        let (ir, ia) = (ir as i64, ia as i64);
        let ch = b.class.index() * n;
        for r in (ir - radius).max(0)..=(ir + radius).min(nr as i64 - 1) {
            for a in (ia - radius).max(0)..=(ia + radius).min(na as i64 - 1) {
                let v = gaussian_at((r - ir) as f64, (a - ia) as f64, sigma) as f32;
                let slot = &mut maps.heatmaps[ch + r as usize * na + a as usize];
                *slot = slot.max(v);
            }
        }
        let idx = ir as usize * na + ia as usize;
        let (s, c) = b.yaw.sin_cos();
        let values = [
            fr - ir as f64,
            fa - ia as f64,
            b.center[2],
            b.dims[0].ln(),
            b.dims[1].ln(),
            b.dims[2].ln(),
            s,
            c,
        ];
        for (k, v) in values.iter().enumerate() {
            maps.regression[k * n + idx] = *v as f32;
        }
        mask[idx] = true;
        centers.push((idx, *b));
    }
    if skipped > 0 {
        log::warn!("{skipped} box(es) outside the grid were not rendered");
    }
    Ok(TargetMaps {
        maps,
        mask,
        centers,
        skipped,
    })
}

/// Box encoded by the regression channels at bin (r, a).
pub fn decode_bin(maps: &HeadMaps, grid: &GridSpec, class: ObjectClass, r: usize, a: usize, score: f64) -> Box3D {
    let reg = |k| maps.reg(k, r, a) as f64;
    let (x, y) = grid.bins_to_bev(r as f64 + reg(0), a as f64 + reg(1));
    Box3D::new(
        [x, y, reg(2)],
        [reg(3).exp(), reg(4).exp(), reg(5).exp()],
        reg(6).atan2(reg(7)),
        class,
    )
    .with_score(score)
}

/// Peak picking per class: a bin survives when no 3x3 neighbor is larger and
/// no equal neighbor has a lower linear index; survivors at or above
/// `score_threshold` are ranked by score and capped at `top_k` per class.
pub fn decode(maps: &HeadMaps, grid: &GridSpec, score_threshold: f64, top_k: usize) -> Vec<Box3D> {
    let (nr, na) = (maps.n_range, maps.n_azimuth);
    let mut out = Vec::new();
    for class in ObjectClass::ALL {
        let k = class.index();
        let mut peaks: Vec<(f32, usize)> = Vec::new();
        for r in 0..nr {
            for a in 0..na {
                let v = maps.heat(k, r, a);
                if !(v as f64 >= score_threshold) {
                    continue;
                }
                let idx = r * na + a;
                let mut keep = true;
                'nb: for nr_ in r.saturating_sub(1)..=(r + 1).min(nr - 1) {
                    for na_ in a.saturating_sub(1)..=(a + 1).min(na - 1) {
                        let j = nr_ * na + na_;
                        if j == idx {
                            continue;
                        }
                        let u = maps.heat(k, nr_, na_);
                        if u > v || (u == v && j < idx) {
                            keep = false;
                            break 'nb;
                        }
                    }
                }
                if keep {
                    peaks.push((v, idx));
                }
            }
        }
        peaks.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        peaks.truncate(top_k);
        for (v, idx) in peaks {
            out.push(decode_bin(maps, grid, class, idx / na, idx % na, v as f64));
        }
    }
    out
}

/// One line of the detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub class: ObjectClass,
    pub score: f64,
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl DetectionRecord {
    pub fn new(frame_id: &str, b: &Box3D) -> Self {
        DetectionRecord {
            frame_id: frame_id.to_string(),
            class: b.class,
            score: b.score,
            center: b.center,
            dims: b.dims,
            yaw: b.yaw,
        }
    }

    pub fn to_box(&self) -> Box3D {
        Box3D::new(self.center, self.dims, self.yaw, self.class).with_score(self.score)
    }
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Load(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Converts batched head tensors to decoded boxes per frame.
pub fn decode_batch(out: &HeadOutput, grid: &GridSpec, score_threshold: f64, top_k: usize) -> Result<Vec<Vec<Box3D>>> {
    Ok(HeadMaps::from_output(out)?
        .iter()
        .map(|m| decode(m, grid, score_threshold, top_k))
        .collect())
}

/// Dense (B, K, R, A) tensor from per-frame row-major arrays.
pub fn stack_maps(per_frame: &[&[f32]], dims: (usize, usize, usize), device: &candle_core::Device) -> Result<Tensor> {
    let (k, r, a) = dims;
    let mut data = Vec::with_capacity(per_frame.len() * k * r * a);
    for f in per_frame {
        if f.len() != k * r * a {
            return Err(Error::Shape(format!("map of {} values, expected {}", f.len(), k * r * a)));
        }
        data.extend_from_slice(f);
    }
    Ok(Tensor::from_vec(data, (per_frame.len(), k, r, a), device)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn grid() -> GridSpec {
        RunConfig::desk().grid
    }

    fn box_at_bins(g: &GridSpec, r: f64, a: f64, class: ObjectClass) -> Box3D {
        let (x, y) = g.bins_to_bev(r, a);
        Box3D::new([x, y, 0.5], [4.0, 1.8, 1.5], 0.3, class)
    }

    #[test]
    fn single_peak_and_neighbor_value() {
        let g = grid();
        let t = render_targets(&[box_at_bins(&g, 10.0, 7.0, ObjectClass::Sedan)], &g, 0.75).unwrap();
        assert_eq!(t.maps.heat(0, 10, 7), 1.0);
        let expect = (-1.0f64 / (2.0 * 0.75 * 0.75)).exp();
        assert!((t.maps.heat(0, 11, 7) as f64 - expect).abs() < 1e-7);
        assert!((expect - 0.4111).abs() < 1e-4);
        assert_eq!(t.mask.iter().filter(|m| **m).count(), 1);
    }

    #[test]
    fn two_boxes_give_two_unit_peaks() {
        let g = grid();
        let boxes = [
            box_at_bins(&g, 5.0, 3.0, ObjectClass::Pedestrian),
            box_at_bins(&g, 20.0, 12.0, ObjectClass::Pedestrian),
        ];
        let t = render_targets(&boxes, &g, 0.75).unwrap();
        assert_eq!(t.maps.heat(2, 5, 3), 1.0);
        assert_eq!(t.maps.heat(2, 20, 12), 1.0);
        assert!(t.maps.heatmaps.iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn wider_sigma_has_larger_support() {
        assert!(support_area(3.0, 0.1) > support_area(0.75, 0.1));
        assert_eq!(support_area(0.75, 0.1), 9);
    }

    #[test]
    fn empty_heatmap_decodes_to_nothing() {
        let g = grid();
        let m = HeadMaps::zeros(g.n_range, g.n_azimuth);
        assert!(decode(&m, &g, 0.3, 50).is_empty());
    }

    #[test]
    fn equal_adjacent_peaks_keep_one() {
        let g = grid();
        let mut m = HeadMaps::zeros(g.n_range, g.n_azimuth);
        m.heatmaps[3 * g.n_azimuth + 4] = 0.9;
        m.heatmaps[3 * g.n_azimuth + 5] = 0.9;
        let d = decode(&m, &g, 0.3, 50);
        assert_eq!(d.len(), 1);
        let (fr, fa) = g.bev_to_bins(d[0].center[0], d[0].center[1]);
        assert!((fr - 3.0).abs() < 1e-6 && (fa - 4.0).abs() < 1e-6);
    }

    #[test]
    fn outside_boxes_are_counted() {
        let g = grid();
        let b = Box3D::new([200.0, 0.0, 0.0], [1.0; 3], 0.0, ObjectClass::Sedan);
        let t = render_targets(&[b], &g, 0.75).unwrap();
        assert_eq!(t.skipped, 1);
        assert!(t.centers.is_empty());
    }

    #[test]
    fn detections_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let b = Box3D::new([1.0, 2.0, 0.0], [1.0, 2.0, 3.0], 0.1, ObjectClass::Bicycle).with_score(0.7);
        let recs = vec![DetectionRecord::new("f0", &b)];
        write_detections(&p, &recs).unwrap();
        assert_eq!(read_detections(&p).unwrap(), recs);
    }
}

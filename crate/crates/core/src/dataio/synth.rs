use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Array3, Frame, RadarProjections};
use crate::boxes::{Box3D, ObjectClass};
use crate::config::{OcclusionMode, RadarShape, RunConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::geometry::{roi_contains, CameraModel, GridSpec, RegionOfInterest};

const MAX_PLACEMENT_ATTEMPTS: usize = 500;
/// Doppler axis spans radial velocities in [-V, V] m/s.
const DOPPLER_WINDOW_MPS: f64 = 10.0;
/// Height above ground of the radar return when blobs carry no class cue.
const NEUTRAL_RETURN_HEIGHT_M: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionSpec {
    pub mode: OcclusionMode,
    pub rng_seed: u64,
}

impl OcclusionSpec {
    pub fn none() -> Self {
        OcclusionSpec {
            mode: OcclusionMode::None,
            rng_seed: 0,
        }
    }
}

/// Everything the generator needs besides the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Feature-resolution grid; separation constraints are measured in its bins.
    pub grid: GridSpec,
    pub radar: RadarShape,
    pub synth: SynthConfig,
    pub roi: RegionOfInterest,
}

impl SceneParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        SceneParams {
            grid: cfg.grid.clone(),
            radar: cfg.radar.clone(),
            synth: cfg.synth.clone(),
            roi: cfg.eval.roi,
        }
    }

    /// Grid at raw radar resolution, with the raw elevation axis spanning the
    /// same height bounds as the query segments.
    pub fn raw_grid(&self) -> GridSpec {
        GridSpec {
            n_range: self.radar.n_range_raw,
            n_azimuth: self.radar.n_azimuth_raw,
            n_elevation: self.radar.n_elevation_raw,
            ..self.grid.clone()
        }
    }
}

/// Generator-side record of each placed object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTruth {
    pub radial_velocity_mps: f64,
    /// Fractional raw-grid bins (range, azimuth, height).
    pub raw_bins: [f64; 3],
    pub doppler_bin: f64,
    /// Pixel center of the rendered rectangle.
    pub pixel_center: (f64, f64),
    /// Rendered rectangle (u0, v0, u1, v1) in pixels.
    pub pixel_rect: (f64, f64, f64, f64),
}

/// Nominal (length, width, height) per class, in meters.
pub fn class_dimension_prior(c: ObjectClass) -> [f64; 3] {
    match c {
        ObjectClass::Sedan => [4.5, 1.85, 1.5],
        ObjectClass::BusOrTruck => [9.0, 2.6, 3.2],
        ObjectClass::Pedestrian => [0.8, 0.8, 1.75],
        ObjectClass::Motorcycle => [2.1, 0.9, 1.5],
        ObjectClass::Bicycle => [1.8, 0.7, 1.6],
    }
}

pub fn class_color(c: ObjectClass) -> [f32; 3] {
    match c {
        ObjectClass::Sedan => [0.85, 0.15, 0.15],
        ObjectClass::BusOrTruck => [0.15, 0.3, 0.9],
        ObjectClass::Pedestrian => [0.1, 0.8, 0.2],
        ObjectClass::Motorcycle => [0.95, 0.85, 0.1],
        ObjectClass::Bicycle => [0.8, 0.2, 0.85],
    }
}

fn class_power(c: ObjectClass) -> f64 {
    match c {
        ObjectClass::Sedan => 30.0,
        ObjectClass::BusOrTruck => 60.0,
        ObjectClass::Pedestrian => 8.0,
        ObjectClass::Motorcycle => 12.0,
        ObjectClass::Bicycle => 10.0,
    }
}

pub fn generate_scene(
    rng_seed: u64,
    n_objects: usize,
    params: &SceneParams,
    cam: &CameraModel,
    occlusion: &OcclusionSpec,
) -> Result<Frame> {
    generate_scene_detailed(rng_seed, n_objects, params, cam, occlusion).map(|(f, _)| f)
}

/// Like [`generate_scene`], also returning the generator's per-object record.
pub fn generate_scene_detailed(
    rng_seed: u64,
    n_objects: usize,
    params: &SceneParams,
    cam: &CameraModel,
    occlusion: &OcclusionSpec,
) -> Result<(Frame, Vec<ObjectTruth>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let boxes = place_objects(&mut rng, rng_seed, n_objects, params, cam)?;
    let raw = params.raw_grid();

    let mut truths = Vec::with_capacity(boxes.len());
    let mut specs = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let v = rng.random_range(-DOPPLER_WINDOW_MPS..DOPPLER_WINDOW_MPS);
        let doppler_bin =
            (v + DOPPLER_WINDOW_MPS) / (2.0 * DOPPLER_WINDOW_MPS) * params.radar.n_doppler as f64 - 0.5;
        let (rb, ab) = raw.bev_to_bins(b.center[0], b.center[1]);
        let z = if params.synth.class_in_radar {
            b.center[2]
        } else {
            params.synth.placement.ground_z_m + NEUTRAL_RETURN_HEIGHT_M
        };
        let eb = raw.elevation_segment_of(z);
        let gain = rng.random_range(0.8..1.2);
        let blob = BlobShape::for_box(b, &raw, params.synth.class_in_radar, gain);
        specs.push((blob, [rb, ab, eb], doppler_bin));
        truths.push(ObjectTruth {
            radial_velocity_mps: v,
            raw_bins: [rb, ab, eb],
            doppler_bin,
            pixel_center: (0.0, 0.0),
            pixel_rect: (0.0, 0.0, 0.0, 0.0),
        });
    }

    let floor = params.synth.noise_floor;
    let shape_rad = [raw.n_range, raw.n_azimuth, params.radar.n_doppler];
    let shape_rae = [raw.n_range, raw.n_azimuth, params.radar.n_elevation_raw];
    let mut p_rad = noise_floor(&mut rng, shape_rad, floor);
    let mut p_rae = noise_floor(&mut rng, shape_rae, floor);
    for (blob, center, doppler) in &specs {
        blob.splat(&mut p_rad, [center[0], center[1], *doppler], blob.sigma_doppler);
        blob.splat(&mut p_rae, *center, blob.sigma_height);
    }

    let mut image = render_background(&mut rng, cam.image_size);
    // painter's order: far objects first
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let di = cam.to_camera_frame(boxes[i].center)[2];
        let dj = cam.to_camera_frame(boxes[j].center)[2];
        dj.total_cmp(&di)
    });
    for i in order {
        let (center, rect) = render_box(&mut image, &boxes[i], cam);
        truths[i].pixel_center = center;
        truths[i].pixel_rect = rect;
    }
    apply_occlusion(&mut image, occlusion);

    let frame = Frame {
        projections: RadarProjections { p_rad, p_rae },
        image,
        camera: cam.clone(),
        boxes,
        condition_tag: match occlusion.mode {
            OcclusionMode::None => "clear".to_string(),
            OcclusionMode::Partial => "partial".to_string(),
            OcclusionMode::Heavy => "heavy".to_string(),
            OcclusionMode::Full => "full".to_string(),
        },
    };
    Ok((frame, truths))
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    seed: u64,
    n_objects: usize,
    params: &SceneParams,
    cam: &CameraModel,
) -> Result<Vec<Box3D>> {
    let pl = &params.synth.placement;
    let grid = &params.grid;
    let mut boxes: Vec<Box3D> = Vec::with_capacity(n_objects);
    for k in 0..n_objects {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let class = ObjectClass::ALL[rng.random_range(0..ObjectClass::COUNT)];
            let prior = class_dimension_prior(class);
            let dims = prior.map(|d| d * rng.random_range(0.9..1.1));
            let x = rng.random_range(pl.x_bounds_m.0..pl.x_bounds_m.1);
            let y = rng.random_range(pl.y_bounds_m.0..pl.y_bounds_m.1);
            let yaw = rng.random_range(-PI..PI);
            let z = pl.ground_z_m + dims[2] / 2.0;
            let candidate = Box3D::new([x, y, z], dims, yaw, class);
            if acceptable(&candidate, &boxes, params, cam) {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(b) => boxes.push(b),
            None => {
                return Err(Error::Generation {
                    seed,
                    reason: format!(
                        "could not place object {} of {n_objects} after {MAX_PLACEMENT_ATTEMPTS} attempts \
                         (grid {}x{}, separation {} bins)",
                        k + 1,
                        grid.n_range,
                        grid.n_azimuth,
                        params.synth.min_separation_bins
                    ),
                })
            }
        }
    }
    Ok(boxes)
}

fn acceptable(b: &Box3D, placed: &[Box3D], params: &SceneParams, cam: &CameraModel) -> bool {
    let grid = &params.grid;
    if !roi_contains(b, &params.roi) || cam.project_to_image(b.center).is_none() {
        return false;
    }
    let (r, a) = grid.bev_to_bins(b.center[0], b.center[1]);
    let max_r = grid.n_range as f64 - 1.0;
    let max_a = grid.n_azimuth as f64 - 1.0;
    if !(0.0..=max_r).contains(&r) || !(0.0..=max_a).contains(&a) {
        return false;
    }
    placed.iter().all(|o| {
        let (ro, ao) = grid.bev_to_bins(o.center[0], o.center[1]);
        let cheb = (r.round() - ro.round()).abs().max((a.round() - ao.round()).abs());
        let dist = (b.center[0] - o.center[0]).hypot(b.center[1] - o.center[1]);
        let reach = b.dims[0].hypot(b.dims[1]) / 2.0 + o.dims[0].hypot(o.dims[1]) / 2.0;
        cheb >= params.synth.min_separation_bins && dist > reach
    })
}

/// Anisotropic Gaussian power blob, widths in raw bins.
struct BlobShape {
    power: f64,
    sigma_range: f64,
    sigma_azimuth: f64,
    sigma_doppler: f64,
    sigma_height: f64,
}

impl BlobShape {
    fn for_box(b: &Box3D, raw: &GridSpec, class_in_radar: bool, gain: f64) -> Self {
        if !class_in_radar {
            return BlobShape {
                power: 25.0 * gain,
                sigma_range: 0.8,
                sigma_azimuth: 0.8,
                sigma_doppler: 1.0,
                sigma_height: 0.8,
            };
        }
        // footprint extents along the radial and lateral directions
        let bearing = b.center[1].atan2(b.center[0]);
        let rel = b.yaw - bearing;
        let (sr, cr) = rel.sin_cos();
        let radial = (b.dims[0] * cr).abs() + (b.dims[1] * sr).abs();
        let lateral = (b.dims[0] * sr).abs() + (b.dims[1] * cr).abs();
        let rho = b.center[0].hypot(b.center[1]).max(1.0);
        BlobShape {
            power: class_power(b.class) * gain,
            sigma_range: (0.35 * radial / raw.range_step()).max(0.6),
            sigma_azimuth: (0.35 * lateral / (rho * raw.azimuth_step())).max(0.6),
            sigma_doppler: 1.0,
            sigma_height: (0.35 * b.dims[2] / raw.elevation_step()).max(0.6),
        }
    }

    fn splat(&self, t: &mut Array3, center: [f64; 3], sigma_third: f64) {
        let [n0, n1, n2] = t.shape;
        let sig = [self.sigma_range, self.sigma_azimuth, sigma_third];
        // 4 sigma support on each axis
        let span = |c: f64, s: f64, n: usize| {
            let lo = (c - 4.0 * s).floor().max(0.0) as usize;
            let hi = ((c + 4.0 * s).ceil() as isize).clamp(0, n as isize - 1) as usize;
            lo..=hi
        };
        for i in span(center[0], sig[0], n0) {
            let gi = gauss(i as f64 - center[0], sig[0]);
            for j in span(center[1], sig[1], n1) {
                let gj = gauss(j as f64 - center[1], sig[1]);
                for k in span(center[2], sig[2], n2) {
                    let gk = gauss(k as f64 - center[2], sig[2]);
                    *t.get_mut(i, j, k) += (self.power * gi * gj * gk) as f32;
                }
            }
        }
    }
}

fn gauss(d: f64, s: f64) -> f64 {
    (-d * d / (2.0 * s * s)).exp()
}

fn noise_floor(rng: &mut ChaCha8Rng, shape: [usize; 3], floor: f64) -> Array3 {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (floor * rng.random_range(0.5..1.5)) as f32)
        .collect();
    Array3 { shape, data }
}

fn render_background(rng: &mut ChaCha8Rng, (h, w): (usize, usize)) -> Array3 {
    let mut img = Array3::zeros([h, w, 3]);
    for i in 0..h {
        // sky above the horizon row, road below
        let t = i as f32 / h as f32;
        let base = if t < 0.5 { 0.62 - 0.1 * t } else { 0.42 - 0.08 * t };
        for j in 0..w {
            for c in 0..3 {
                let tint = [0.0, 0.01, 0.04][c] * (t < 0.5) as u8 as f32;
                *img.get_mut(i, j, c) = base + tint + rng.random_range(-0.03f32..0.03);
            }
        }
    }
    img
}

/// Fills a class-colored rectangle centered on the projected box center and
/// scaled by perspective. Returns the center and the rectangle in pixels.
fn render_box(
    img: &mut Array3,
    b: &Box3D,
    cam: &CameraModel,
) -> ((f64, f64), (f64, f64, f64, f64)) {
    let pc = cam.to_camera_frame(b.center);
    let (u, v) = cam
        .project_camera_point(pc)
        .expect("placement guarantees positive depth");
    let bearing = b.center[1].atan2(b.center[0]);
    let rel = b.yaw - bearing;
    let lateral = (b.dims[0] * rel.sin()).abs() + (b.dims[1] * rel.cos()).abs();
    let half_w = 0.5 * cam.fx() * lateral / pc[2];
    let half_h = 0.5 * cam.fy() * b.dims[2] / pc[2];
    let rect = (u - half_w, v - half_h, u + half_w, v + half_h);
    let [h, w, _] = img.shape;
    let color = class_color(b.class);
    let mut filled = false;
    let cols = pixel_span(rect.0, rect.2, w);
    let rows = pixel_span(rect.1, rect.3, h);
    for i in rows.clone() {
        for j in cols.clone() {
            for (c, value) in color.iter().enumerate() {
                *img.get_mut(i, j, c) = *value;
            }
            filled = true;
        }
    }
    if !filled {
        let (i, j) = ((v as usize).min(h - 1), (u as usize).min(w - 1));
        for (c, value) in color.iter().enumerate() {
            *img.get_mut(i, j, c) = *value;
        }
    }
    ((u, v), rect)
}

/// Pixels whose centers fall inside `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let first = (lo - 0.5).ceil().max(0.0) as usize;
    let last = ((hi - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
    first.min(last)..last
}

fn apply_occlusion(img: &mut Array3, spec: &OcclusionSpec) {
    let frac = spec.mode.area_fraction();
    if frac == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let [h, w, _] = img.shape;
    let rh = ((h as f64) * frac.sqrt()).round() as usize;
    let rw = ((w as f64) * frac.sqrt()).round() as usize;
    let top = rng.random_range(0..=h - rh);
    let left = rng.random_range(0..=w - rw);
    for i in top..top + rh {
        for j in left..left + rw {
            for c in 0..3 {
                *img.get_mut(i, j, c) = rng.random::<f32>();
            }
        }
    }
}

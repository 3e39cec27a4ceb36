//! Network assembly: radar backbone, camera branch (vision encoder, lift,
//! cross-attention, gated fusion) and detection head.

pub mod attention;
pub mod backbone;
pub mod fusion;
pub mod head;
pub mod lifting;
pub mod params;
pub mod vision;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;

use crate::boxes::Box3D;
use crate::config::RunConfig;
use crate::dataio::Frame;
use crate::detection::decode_batch;
use crate::error::{Error, Result};
use crate::geometry::{reference_points, GridSpec};

pub use attention::DeformableCrossAttention;
pub use backbone::RadarBackbone;
pub use fusion::GateNetwork;
pub use head::{DetectionHead, HeadOutput};
pub use lifting::ElevationWeighting;
pub use params::SeededParams;
pub use vision::{FpnUpsampler, VisionBackend, VisionRegistry};

/// Batched network inputs, NCHW.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    /// (B, Doppler, R_raw, A_raw), log(1 + power)
    pub p_rad: Tensor,
    /// (B, height, R_raw, A_raw), log(1 + power)
    pub p_rae: Tensor,
    /// (B, 3, H, W) in [0, 1]
    pub images: Tensor,
    /// (B, 2, E*R*A) normalized reference points, (E, R, A) order.
    pub ref_points: Tensor,
    /// (B, 1, E*R*A) u8 projection validity.
    pub ref_mask: Tensor,
}

fn channels_first(data: &[f32], shape: [usize; 3], device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, (shape[0], shape[1], shape[2]), device)?.permute((2, 0, 1))?)
}

impl ModelInputs {
    pub fn from_frames(frames: &[&Frame], grid: &GridSpec, dtype: DType, device: &Device) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut rad = Vec::new();
        let mut rae = Vec::new();
        let mut img = Vec::new();
        let mut pts = Vec::new();
        let mut mask = Vec::new();
        let (nr, na, ne) = (grid.n_range, grid.n_azimuth, grid.n_elevation);
        let n = nr * na * ne;
        for f in frames {
            rad.push(channels_first(&f.projections.p_rad.data, f.projections.p_rad.shape, device)?);
            rae.push(channels_first(&f.projections.p_rae.data, f.projections.p_rae.shape, device)?);
            img.push(channels_first(&f.image.data, f.image.shape, device)?);
            let rp = reference_points(grid, &f.camera);
            let mut coords = vec![0f32; 2 * n];
            let mut valid = vec![0u8; n];
            for e in 0..ne {
                for r in 0..nr {
                    for a in 0..na {
                        let src = (r * na + a) * ne + e;
                        let dst = (e * nr + r) * na + a;
                        coords[dst] = rp.coords[2 * src];
                        coords[n + dst] = rp.coords[2 * src + 1];
                        valid[dst] = rp.mask[src] as u8;
                    }
                }
            }
            pts.push(Tensor::from_vec(coords, (2, n), device)?);
            mask.push(Tensor::from_vec(valid, (1, n), device)?);
        }
        let stack = |v: &[Tensor]| -> Result<Tensor> { Ok(Tensor::stack(v, 0)?.to_dtype(dtype)?) };
        let compress = |t: Tensor| -> Result<Tensor> { Ok(t.relu()?.affine(1.0, 1.0)?.log()?) };
        Ok(ModelInputs {
            p_rad: compress(stack(&rad)?)?,
            p_rae: compress(stack(&rae)?)?,
            images: stack(&img)?,
            ref_points: stack(&pts)?,
            ref_mask: Tensor::stack(&mask, 0)?,
        })
    }
}

/// Intermediate maps of one forward pass.
pub struct ForwardOutput {
    pub head: HeadOutput,
    pub m_bev_rad: Tensor,
    pub m_bev_cam: Option<Tensor>,
    pub gamma: Option<Tensor>,
    pub elevation_weights: Option<Tensor>,
}

struct CameraBranch {
    vision: Box<dyn VisionBackend>,
    upsampler: FpnUpsampler,
    weighting: ElevationWeighting,
    attention: DeformableCrossAttention,
    gate: GateNetwork,
}

/// The full detector for one ablation mode. In radar-only mode the camera
/// branch is never built, so its parameters do not exist.
pub struct FusionDetector {
    backbone: RadarBackbone,
    camera: Option<CameraBranch>,
    head: DetectionHead,
    grid: GridSpec,
    params: SeededParams,
    dtype: DType,
    device: Device,
}

impl FusionDetector {
    pub fn new(cfg: &RunConfig, device: &Device) -> Result<Self> {
        Self::with_registry(cfg, &VisionRegistry::with_builtins(), DType::F32, device)
    }

    pub fn with_registry(cfg: &RunConfig, registry: &VisionRegistry, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let params = SeededParams::new(cfg.seed);
        let vb: VarBuilder = params.var_builder(dtype, device);
        let backbone = RadarBackbone::new(&cfg.backbone, &cfg.radar, vb.pp("backbone"))?;
        let ds = backbone.downsample();
        let feat = (cfg.radar.n_range_raw / ds, cfg.radar.n_azimuth_raw / ds);
        if feat != (cfg.grid.n_range, cfg.grid.n_azimuth) {
            return Err(Error::Config(format!(
                "backbone produces a {}x{} grid, grid spec is {}x{}",
                feat.0, feat.1, cfg.grid.n_range, cfg.grid.n_azimuth
            )));
        }
        let c = cfg.backbone.channels;
        let camera = if cfg.ablation_mode.uses_camera() {
            let vision = registry.create(cfg.active_vision_backend(), &cfg.vision, device, dtype)?;
            let upsampler = FpnUpsampler::new(vision.channels(), c, vb.pp("vision_up"))?;
            let e = cfg.grid.n_elevation;
            let weighting = if cfg.ablation_mode.learned_lift() {
                ElevationWeighting::Learned(lifting::ElevationMlp::new(
                    cfg.radar.n_elevation_raw,
                    cfg.lift.hidden,
                    e,
                    vb.pp("lift"),
                )?)
            } else {
                ElevationWeighting::Uniform { n_segments: e }
            };
            let attention = DeformableCrossAttention::new(c, &cfg.attention, vb.pp("xattn"))?;
            let gate = GateNetwork::new(c, cfg.fusion.gate, vb.pp("gate"))?;
            Some(CameraBranch {
                vision,
                upsampler,
                weighting,
                attention,
                gate,
            })
        } else {
            None
        };
        let head = DetectionHead::new(c, vb.pp("head"))?;
        Ok(FusionDetector {
            backbone,
            camera,
            head,
            grid: cfg.grid.clone(),
            params,
            dtype,
            device: device.clone(),
        })
    }

    pub fn params(&self) -> &SeededParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn uses_camera(&self) -> bool {
        self.camera.is_some()
    }

    pub fn inputs(&self, frames: &[&Frame]) -> Result<ModelInputs> {
        ModelInputs::from_frames(frames, &self.grid, self.dtype, &self.device)
    }

    pub fn forward(&self, x: &ModelInputs) -> Result<ForwardOutput> {
        let m_rad = self.backbone.forward(&x.p_rad, &x.p_rae)?;
        let Some(cam) = &self.camera else {
            return Ok(ForwardOutput {
                head: self.head.forward(&m_rad)?,
                m_bev_rad: m_rad,
                m_bev_cam: None,
                gamma: None,
                elevation_weights: None,
            });
        };
        let (_, _, rf, af) = m_rad.dims4()?;
        let pv = cam.upsampler.forward(&cam.vision.encode(&x.images)?)?;
        let w_e = cam.weighting.weights(&x.p_rae, (rf, af))?;
        let q3d = lifting::lift(&m_rad, &w_e)?;
        let q = cam.attention.forward(&q3d, &pv, &x.ref_points, &x.ref_mask)?;
        let m_cam = attention::collapse_elevation(&q)?;
        let (m_f, gamma) = cam.gate.forward(&m_rad, &m_cam)?;
        Ok(ForwardOutput {
            head: self.head.forward(&m_f)?,
            m_bev_rad: m_rad,
            m_bev_cam: Some(m_cam),
            gamma: Some(gamma),
            elevation_weights: Some(w_e),
        })
    }

    /// Decoded boxes per frame, evaluated `batch` frames at a time.
    pub fn detect(&self, frames: &[Frame], score_threshold: f64, top_k: usize, batch: usize) -> Result<Vec<Vec<Box3D>>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(batch.max(1)) {
            let refs: Vec<&Frame> = chunk.iter().collect();
            let fwd = self.forward(&self.inputs(&refs)?)?;
            out.extend(decode_batch(&fwd.head, &self.grid, score_threshold, top_k)?);
        }
        Ok(out)
    }
}

//! Perspective-view features: a frozen patch encoder chosen by name from a
//! registry, followed by a two-stage 2x upsampler.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{conv2d, Conv2d, Conv2dConfig, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::VisionConfig;
use crate::error::{Error, Result};

/// A frozen image encoder mapping (B, 3, H, W) to (B, C_vit, H/p, W/p).
pub trait VisionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn patch_size(&self) -> usize;
    fn channels(&self) -> usize;
    fn encode(&self, images: &Tensor) -> candle_core::Result<Tensor>;
}

pub type BackendFactory =
    Box<dyn Fn(&VisionConfig, &Device, DType) -> Result<Box<dyn VisionBackend>> + Send + Sync>;

/// Name -> constructor table for vision backends.
pub struct VisionRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for VisionRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl VisionRegistry {
    pub fn empty() -> Self {
        VisionRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `stub` (seeded random patch projection) and `external` (patch-embedding
    /// weights loaded from `vision.external_path`).
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("stub", |cfg, dev, dtype| {
            Ok(Box::new(StubPatchEncoder::new(cfg, dev, dtype)?) as Box<dyn VisionBackend>)
        });
        r.register("external", |cfg, dev, dtype| {
            let path = cfg.external_path.as_deref().ok_or_else(|| {
                Error::Config("vision backend 'external' needs vision.external_path".into())
            })?;
            Ok(Box::new(ExternalPatchEncoder::load(path, dev, dtype)?) as Box<dyn VisionBackend>)
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&VisionConfig, &Device, DType) -> Result<Box<dyn VisionBackend>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(
        &self,
        name: &str,
        cfg: &VisionConfig,
        device: &Device,
        dtype: DType,
    ) -> Result<Box<dyn VisionBackend>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown vision backend '{name}' (registered: {})",
                self.names().join(", ")
            ))
        })?;
        let backend = f(cfg, device, dtype)?;
        if backend.patch_size() != cfg.patch_size || backend.channels() != cfg.channels {
            return Err(Error::Config(format!(
                "backend '{name}' yields patch {} / {} channels, config expects {} / {}",
                backend.patch_size(),
                backend.channels(),
                cfg.patch_size,
                cfg.channels
            )));
        }
        Ok(backend)
    }
}

fn check_image(images: &Tensor, patch: usize) -> candle_core::Result<()> {
    let (_, c, h, w) = images.dims4()?;
    if c != 3 || h % patch != 0 || w % patch != 0 {
        candle_core::bail!(
            "image batch {:?} must be (B, 3, H, W) with H, W divisible by {patch}",
            images.dims()
        );
    }
    Ok(())
}

/// Frozen linear patch projection: each p x p x 3 patch is flattened and
/// multiplied by a fixed Gaussian matrix drawn from `vision.seed`.
pub struct StubPatchEncoder {
    weight: Tensor,
    patch: usize,
    channels: usize,
}

impl StubPatchEncoder {
    pub fn new(cfg: &VisionConfig, device: &Device, dtype: DType) -> Result<Self> {
        let p = cfg.patch_size;
        let fan_in = 3 * p * p;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let values: Vec<f64> = (0..cfg.channels * fan_in)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let weight = Tensor::from_vec(values, (cfg.channels, 3, p, p), device)?.to_dtype(dtype)?;
        Ok(StubPatchEncoder {
            weight,
            patch: p,
            channels: cfg.channels,
        })
    }
}

impl VisionBackend for StubPatchEncoder {
    fn name(&self) -> &str {
        "stub"
    }

    fn patch_size(&self) -> usize {
        self.patch
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, images: &Tensor) -> candle_core::Result<Tensor> {
        check_image(images, self.patch)?;
        let x = images.affine(2.0, -1.0)?;
        Ok(x.conv2d(&self.weight, 0, self.patch, 1, 1)?.detach())
    }
}

/// Patch-embedding encoder backed by externally supplied weights
/// (`patch_embed.weight` of shape (C_vit, 3, p, p), optional
/// `patch_embed.bias`) in a safetensors archive.
pub struct ExternalPatchEncoder {
    weight: Tensor,
    bias: Option<Tensor>,
    patch: usize,
    channels: usize,
}

impl ExternalPatchEncoder {
    pub fn load(path: &Path, device: &Device, dtype: DType) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, device)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let weight = tensors
            .get("patch_embed.weight")
            .ok_or_else(|| Error::Config(format!("{} lacks patch_embed.weight", path.display())))?
            .to_dtype(dtype)?
            .detach();
        let (c, three, ph, pw) = weight.dims4()?;
        if three != 3 || ph != pw {
            return Err(Error::Config(format!(
                "patch_embed.weight must be (C, 3, p, p), got {:?}",
                weight.dims()
            )));
        }
        let bias = match tensors.get("patch_embed.bias") {
            Some(b) if b.dims() == [c] => Some(b.to_dtype(dtype)?.detach()),
            Some(b) => {
                return Err(Error::Config(format!(
                    "patch_embed.bias must be ({c},), got {:?}",
                    b.dims()
                )))
            }
            None => None,
        };
        Ok(ExternalPatchEncoder {
            weight,
            bias,
            patch: ph,
            channels: c,
        })
    }
}

impl VisionBackend for ExternalPatchEncoder {
    fn name(&self) -> &str {
        "external"
    }

    fn patch_size(&self) -> usize {
        self.patch
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, images: &Tensor) -> candle_core::Result<Tensor> {
        check_image(images, self.patch)?;
        let x = images.affine(2.0, -1.0)?;
        let mut y = x.conv2d(&self.weight, 0, self.patch, 1, 1)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(&b.reshape((1, self.channels, 1, 1))?)?;
        }
        Ok(y.detach())
    }
}

/// (n_out x n_in) matrix of 2x bilinear upsampling with half-pixel centers,
/// clamped at the borders.
fn upsample_matrix(n: usize, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    let out = 2 * n;
    let mut m = vec![0f64; out * n];
    for o in 0..out {
        let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let w1 = src - i0 as f64;
        m[o * n + i0] += 1.0 - w1;
        m[o * n + i1] += w1;
    }
    Tensor::from_vec(m, (out, n), device)?.to_dtype(dtype)
}

/// Separable 2x bilinear upsampling of (B, C, H, W), expressed as two matrix
/// products so it stays differentiable.
pub fn upsample_bilinear_2x(x: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let uw = upsample_matrix(w, x.dtype(), x.device())?.t()?.contiguous()?;
    let uh = upsample_matrix(h, x.dtype(), x.device())?.t()?.contiguous()?;
    let y = x.contiguous()?.broadcast_matmul(&uw)?;
    let y = y.transpose(2, 3)?.contiguous()?.broadcast_matmul(&uh)?;
    y.transpose(2, 3)?.contiguous()
}

/// Two rounds of (bilinear 2x, 3x3 conv); the first conv reduces C_vit to C.
pub struct FpnUpsampler {
    reduce: Conv2d,
    refine: Conv2d,
}

impl FpnUpsampler {
    pub fn new(c_vit: usize, c_out: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        Ok(FpnUpsampler {
            reduce: conv2d(c_vit, c_out, 3, cfg, vb.pp("reduce"))?,
            refine: conv2d(c_out, c_out, 3, cfg, vb.pp("refine"))?,
        })
    }

    /// (B, C_vit, h, w) -> (B, C, 4h, 4w)
    pub fn forward(&self, patches: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.reduce.forward(&upsample_bilinear_2x(patches)?)?.relu()?;
        self.refine.forward(&upsample_bilinear_2x(&x)?)
    }
}

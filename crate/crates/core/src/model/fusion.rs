//! Gated residual fusion of the radar-only and camera-refined BEV maps.
//!
//! `M_f = Γ ⊙ M_rad + (1 − Γ) ⊙ M_cam`, with Γ = sigmoid(MLP(M_rad ⊕ M_cam))
//! evaluated per bin by two 1x1 convolutions.

use candle_core::{CpuStorage, CustomOp3, DType, Layout, Module, Shape, Tensor};
use candle_nn::{conv2d, init, Conv2d, Conv2dConfig, VarBuilder};

use crate::config::GateKind;
use crate::error::{Error, Result};

/// Gate logits are clipped to this magnitude so Γ stays strictly inside
/// (0, 1) in single precision.
pub const GATE_LOGIT_LIMIT: f64 = 15.0;

/// Elementwise `b + Γ (a − b)` clamped to `[min(a, b), max(a, b)]`, so the
/// result never leaves the interval spanned by its inputs after rounding.
/// Gradients: ∂/∂a = Γ, ∂/∂b = 1 − Γ, ∂/∂Γ = a − b.
struct GatedBlend;

fn blend<T: num_like::Float>(a: &[T], b: &[T], g: &[T]) -> Vec<T> {
    a.iter()
        .zip(b)
        .zip(g)
        .map(|((&a, &b), &g)| {
            let v = b + g * (a - b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
        .collect()
}

mod num_like {
    pub trait Float:
        Copy + PartialOrd + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<Output = Self>
    {
    }
    impl Float for f32 {}
    impl Float for f64 {}
}

fn contiguous_slice<'a, T>(data: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("gated blend expects contiguous inputs"),
    }
}

impl CustomOp3 for GatedBlend {
    fn name(&self) -> &'static str {
        "gated-blend"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        if l1.shape() != l2.shape() || l1.shape() != l3.shape() {
            candle_core::bail!("gated blend shape mismatch");
        }
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(a), CpuStorage::F32(b), CpuStorage::F32(g)) => CpuStorage::F32(blend(
                contiguous_slice(a, l1)?,
                contiguous_slice(b, l2)?,
                contiguous_slice(g, l3)?,
            )),
            (CpuStorage::F64(a), CpuStorage::F64(b), CpuStorage::F64(g)) => CpuStorage::F64(blend(
                contiguous_slice(a, l1)?,
                contiguous_slice(b, l2)?,
                contiguous_slice(g, l3)?,
            )),
            _ => candle_core::bail!("gated blend supports matching f32 or f64 inputs"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        a: &Tensor,
        b: &Tensor,
        g: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let da = grad.mul(g)?;
        let db = grad.mul(&g.affine(-1.0, 1.0)?)?;
        let dg = grad.mul(&(a - b)?)?;
        Ok((Some(da), Some(db), Some(dg)))
    }
}

/// `Γ ⊙ rad + (1 − Γ) ⊙ cam`, elementwise. `gamma` must match `rad` or be
/// broadcastable to it (a (B, 1, R, A) scalar gate).
pub fn fuse(rad: &Tensor, cam: &Tensor, gamma: &Tensor) -> Result<Tensor> {
    if rad.dims() != cam.dims() {
        return Err(Error::Shape(format!(
            "fuse: radar map {:?} vs camera map {:?}",
            rad.dims(),
            cam.dims()
        )));
    }
    let g = gamma
        .broadcast_as(rad.shape())
        .map_err(|_| Error::Shape(format!("fuse: gate {:?} vs maps {:?}", gamma.dims(), rad.dims())))?;
    if rad.dtype() != DType::F32 && rad.dtype() != DType::F64 {
        return Err(Error::Shape(format!("fuse: unsupported dtype {:?}", rad.dtype())));
    }
    let g = g.to_dtype(rad.dtype())?.contiguous()?;
    Ok(rad.contiguous()?.apply_op3(&cam.contiguous()?, &g, GatedBlend)?)
}

/// Two-layer gate MLP over concatenated maps; the output layer starts at zero
/// so the initial gate is exactly 0.5.
pub struct GateNetwork {
    hidden: Conv2d,
    out: Conv2d,
    channels: usize,
    kind: GateKind,
}

impl GateNetwork {
    pub fn new(channels: usize, kind: GateKind, vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig::default();
        let n_out = match kind {
            GateKind::PerChannel => channels,
            GateKind::Scalar => 1,
        };
        let out = Conv2d::new(
            vb.pp("out").get_with_hints((n_out, channels, 1, 1), "weight", init::ZERO)?,
            Some(vb.pp("out").get_with_hints(n_out, "bias", init::ZERO)?),
            cfg,
        );
        Ok(GateNetwork {
            hidden: conv2d(2 * channels, channels, 1, cfg, vb.pp("hidden"))?,
            out,
            channels,
            kind,
        })
    }

    pub fn kind(&self) -> GateKind {
        self.kind
    }

    /// Γ for (B, C, R, A) inputs: (B, C, R, A) per-channel or (B, 1, R, A)
    /// scalar.
    pub fn gate(&self, rad: &Tensor, cam: &Tensor) -> Result<Tensor> {
        if rad.dims() != cam.dims() || rad.rank() != 4 || rad.dim(1)? != self.channels {
            return Err(Error::Shape(format!(
                "gate expects two (B, {}, R, A) maps, got {:?} and {:?}",
                self.channels,
                rad.dims(),
                cam.dims()
            )));
        }
        let x = Tensor::cat(&[rad, cam], 1)?;
        let h = self.hidden.forward(&x)?.relu()?;
        let logits = self.out.forward(&h)?.clamp(-GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT)?;
        Ok(candle_nn::ops::sigmoid(&logits)?)
    }

    /// Gate and fuse in one step; returns (M_f, Γ).
    pub fn forward(&self, rad: &Tensor, cam: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = self.gate(rad, cam)?;
        Ok((fuse(rad, cam, &g)?, g))
    }
}

//! Center-point head: per-class heatmaps and box regression on the fused map.

use candle_core::{Module, Tensor};
use candle_nn::{conv2d, init, Conv2d, Conv2dConfig, VarBuilder};

use crate::boxes::ObjectClass;
use crate::error::{Error, Result};

/// Regression channels: (δ range bin, δ azimuth bin, z, log l, log w, log h,
/// sin yaw, cos yaw).
pub const N_REGRESSION: usize = 8;

/// Initial classification bias; sigmoid(-2.19) ≈ 0.1.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.19;

/// Head tensors, NCHW over the feature grid.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// (B, 5, R, A), sigmoid scores.
    pub heatmaps: Tensor,
    /// (B, 8, R, A), linear.
    pub regression: Tensor,
}

pub struct DetectionHead {
    cls_hidden: Conv2d,
    cls_out: Conv2d,
    reg_hidden: Conv2d,
    reg_out: Conv2d,
    channels: usize,
}

impl DetectionHead {
    pub fn new(channels: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let c3 = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let c1 = Conv2dConfig::default();
        let n_cls = ObjectClass::COUNT;
        let cls_vb = vb.pp("cls_out");
        let cls_out = Conv2d::new(
            cls_vb.get_with_hints(
                (n_cls, channels, 1, 1),
                "weight",
                init::Init::Randn {
                    mean: 0.0,
                    stdev: 0.01,
                },
            )?,
            Some(cls_vb.get_with_hints(n_cls, "bias", init::Init::Const(HEATMAP_PRIOR_BIAS))?),
            c1,
        );
        let reg_vb = vb.pp("reg_out");
        let reg_out = Conv2d::new(
            reg_vb.get_with_hints(
                (N_REGRESSION, channels, 1, 1),
                "weight",
                init::Init::Randn {
                    mean: 0.0,
                    stdev: 0.01,
                },
            )?,
            Some(reg_vb.get_with_hints(N_REGRESSION, "bias", init::Init::Const(0.0))?),
            c1,
        );
        Ok(DetectionHead {
            cls_hidden: conv2d(channels, channels, 3, c3, vb.pp("cls_hidden"))?,
            cls_out,
            reg_hidden: conv2d(channels, channels, 3, c3, vb.pp("reg_hidden"))?,
            reg_out,
            channels,
        })
    }

    /// Heatmap logits and regression, before the sigmoid.
    pub fn raw(&self, m_f: &Tensor) -> Result<(Tensor, Tensor)> {
        if m_f.rank() != 4 || m_f.dim(1)? != self.channels {
            return Err(Error::Shape(format!(
                "head expects (B, {}, R, A), got {:?}",
                self.channels,
                m_f.dims()
            )));
        }
        let logits = self.cls_out.forward(&self.cls_hidden.forward(m_f)?.relu()?)?;
        let reg = self.reg_out.forward(&self.reg_hidden.forward(m_f)?.relu()?)?;
        Ok((logits, reg))
    }

    pub fn forward(&self, m_f: &Tensor) -> Result<HeadOutput> {
        let (logits, regression) = self.raw(m_f)?;
        Ok(HeadOutput {
            heatmaps: candle_nn::ops::sigmoid(&logits)?,
            regression,
        })
    }
}

//! Elevation-weighted query lifting.
//!
//! Each BEV bin's feature vector is replicated into E height segments and
//! scaled by that bin's elevation distribution, so summing over segments
//! recovers the BEV map.

use candle_core::{DType, Module, Tensor};
use candle_nn::{conv2d, init, Conv2d, Conv2dConfig, VarBuilder};

use crate::error::{Error, Result};

/// Per-bin MLP over the log-compressed RAE height profile, evaluated as 1x1
/// convolutions. The output layer starts at zero (uniform distribution).
pub struct ElevationMlp {
    l1: Conv2d,
    l2: Conv2d,
    out: Conv2d,
    n_segments: usize,
}

impl ElevationMlp {
    pub fn new(n_in: usize, hidden: usize, n_segments: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let cfg = Conv2dConfig::default();
        let ws = (n_segments, hidden, 1, 1);
        let out = Conv2d::new(
            vb.pp("out").get_with_hints(ws, "weight", init::ZERO)?,
            Some(vb.pp("out").get_with_hints(n_segments, "bias", init::ZERO)?),
            cfg,
        );
        Ok(ElevationMlp {
            l1: conv2d(n_in, hidden, 1, cfg, vb.pp("l1"))?,
            l2: conv2d(hidden, hidden, 1, cfg, vb.pp("l2"))?,
            out,
            n_segments,
        })
    }

    pub fn logits(&self, profile: &Tensor) -> candle_core::Result<Tensor> {
        let x = self.l1.forward(profile)?.relu()?;
        let x = self.l2.forward(&x)?.relu()?;
        self.out.forward(&x)
    }
}

/// Source of W_e.
pub enum ElevationWeighting {
    Learned(ElevationMlp),
    /// Frozen 1/E everywhere.
    Uniform { n_segments: usize },
}

impl ElevationWeighting {
    pub fn n_segments(&self) -> usize {
        match self {
            ElevationWeighting::Learned(m) => m.n_segments,
            ElevationWeighting::Uniform { n_segments } => *n_segments,
        }
    }

    /// W_e as (B, E, R_f, A_f); every fiber over E sums to one.
    ///
    /// `p_rae` is raw linear power (B, H_raw, R_raw, A_raw); range and azimuth
    /// are average-pooled to the feature grid first.
    pub fn weights(&self, p_rae: &Tensor, feature_grid: (usize, usize)) -> Result<Tensor> {
        let (b, _, rr, ar) = p_rae.dims4()?;
        let (rf, af) = feature_grid;
        if rf == 0 || af == 0 || rr % rf != 0 || ar % af != 0 {
            return Err(Error::Shape(format!(
                "RAE grid {rr}x{ar} does not pool onto feature grid {rf}x{af}"
            )));
        }
        match self {
            ElevationWeighting::Uniform { n_segments } => {
                let e = *n_segments;
                Ok(Tensor::full(1.0 / e as f64, (b, e, rf, af), p_rae.device())?
                    .to_dtype(p_rae.dtype())?)
            }
            ElevationWeighting::Learned(mlp) => {
                let profile = (p_rae + 1.0)?.log()?;
                let pooled = if (rr, ar) == (rf, af) {
                    profile
                } else {
                    profile.avg_pool2d((rr / rf, ar / af))?
                };
                let logits = mlp.logits(&pooled)?;
                Ok(candle_nn::ops::softmax(&logits, 1)?)
            }
        }
    }
}

/// M_Q3D[b, c, e, r, a] = M_BEV,Rad[b, c, r, a] * W_e[b, e, r, a].
///
/// `m_bev` is (B, C, R, A) and `w_e` is (B, E, R, A); the result is
/// (B, C, E, R, A). One weight fiber per bin is shared by every channel.
pub fn lift(m_bev: &Tensor, w_e: &Tensor) -> Result<Tensor> {
    let (b, _, r, a) = m_bev.dims4()?;
    let (bw, _, rw, aw) = w_e.dims4()?;
    if (b, r, a) != (bw, rw, aw) {
        return Err(Error::Shape(format!(
            "lift: BEV map {:?} and weights {:?} disagree on batch/range/azimuth",
            m_bev.dims(),
            w_e.dims()
        )));
    }
    Ok(m_bev.unsqueeze(2)?.broadcast_mul(&w_e.unsqueeze(1)?)?)
}

/// Weights as a plain (B, E, R, A) vector view for inspection.
pub fn weights_to_vec(w: &Tensor) -> Result<Vec<f32>> {
    Ok(w.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
}

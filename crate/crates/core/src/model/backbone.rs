//! Dual-encoder radar backbone.
//!
//! The Doppler and height axes enter as input channels of 2D convolutions over
//! range x azimuth; each projection has its own encoder producing C/2 channels,
//! the two streams are concatenated and refined by a residual trunk.

use candle_core::{Module, Tensor, D};
use candle_nn::{conv2d, Conv2d, Conv2dConfig, VarBuilder};

use crate::config::{BackboneConfig, RadarShape};
use crate::error::{Error, Result};

/// `log1p` compression followed by per-sample standardization over all
/// non-batch axes. Input and output are (B, K, R, A).
pub fn normalize_power(x: &Tensor) -> candle_core::Result<Tensor> {
    let y = (x + 1.0)?.log()?;
    let (b, k, r, a) = y.dims4()?;
    let flat = y.reshape((b, k * r * a))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let out = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
    out.reshape((b, k, r, a))
}

fn conv3(cin: usize, cout: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Conv2d> {
    conv2d(
        cin,
        cout,
        3,
        Conv2dConfig {
            padding: 1,
            stride,
            ..Default::default()
        },
        vb,
    )
}

/// Single-projection encoder: stride-2 stem convolutions, then one refinement
/// convolution at feature resolution.
pub struct RadarEncoder {
    stem: Vec<Conv2d>,
    refine: Conv2d,
}

impl RadarEncoder {
    pub fn new(in_channels: usize, out_channels: usize, stages: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let mut stem = Vec::with_capacity(stages);
        let mut cin = in_channels;
        for i in 0..stages {
            stem.push(conv3(cin, out_channels, 2, vb.pp(format!("stem{i}")))?);
            cin = out_channels;
        }
        let refine = conv3(cin, out_channels, 1, vb.pp("refine"))?;
        Ok(RadarEncoder { stem, refine })
    }

    /// (B, K, R_raw, A_raw) linear power -> (B, C/2, R_f, A_f).
    pub fn forward(&self, power: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = normalize_power(power)?;
        for conv in &self.stem {
            x = conv.forward(&x)?.relu()?;
        }
        self.refine.forward(&x)?.relu()
    }
}

struct ResidualBlock {
    a: Conv2d,
    b: Conv2d,
}

impl ResidualBlock {
    fn new(c: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(ResidualBlock {
            a: conv3(c, c, 1, vb.pp("a"))?,
            b: conv3(c, c, 1, vb.pp("b"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = self.b.forward(&self.a.forward(x)?.relu()?)?;
        (x + y)?.relu()
    }
}

pub struct RadarBackbone {
    rad: RadarEncoder,
    rae: RadarEncoder,
    trunk: Vec<ResidualBlock>,
    downsample: usize,
    radar: RadarShape,
}

impl RadarBackbone {
    pub fn new(cfg: &BackboneConfig, radar: &RadarShape, vb: VarBuilder) -> Result<Self> {
        if cfg.channels % 2 != 0 {
            return Err(Error::Config("backbone channels must be even".into()));
        }
        let ds = cfg.downsample();
        if radar.n_range_raw % ds != 0 || radar.n_azimuth_raw % ds != 0 {
            return Err(Error::Config(format!(
                "raw grid {}x{} not divisible by downsample {ds}",
                radar.n_range_raw, radar.n_azimuth_raw
            )));
        }
        let half = cfg.channels / 2;
        let rad = RadarEncoder::new(radar.n_doppler, half, cfg.stem_stages, vb.pp("rad"))?;
        let rae = RadarEncoder::new(radar.n_elevation_raw, half, cfg.stem_stages, vb.pp("rae"))?;
        let trunk = (0..cfg.trunk_blocks)
            .map(|i| ResidualBlock::new(cfg.channels, vb.pp(format!("trunk{i}"))))
            .collect::<candle_core::Result<_>>()?;
        Ok(RadarBackbone {
            rad,
            rae,
            trunk,
            downsample: ds,
            radar: radar.clone(),
        })
    }

    fn check_input(&self, t: &Tensor, depth: usize, what: &str) -> Result<()> {
        let dims = t.dims();
        let want = [depth, self.radar.n_range_raw, self.radar.n_azimuth_raw];
        if dims.len() != 4 || dims[1..] != want {
            return Err(Error::Shape(format!(
                "{what} expects (B, {}, {}, {}), got {dims:?}",
                want[0], want[1], want[2]
            )));
        }
        Ok(())
    }

    /// (B, Doppler, R_raw, A_raw) -> (B, C/2, R_f, A_f)
    pub fn encode_rad(&self, p_rad: &Tensor) -> Result<Tensor> {
        self.check_input(p_rad, self.radar.n_doppler, "encode_rad")?;
        Ok(self.rad.forward(p_rad)?)
    }

    /// (B, height, R_raw, A_raw) -> (B, C/2, R_f, A_f)
    pub fn encode_rae(&self, p_rae: &Tensor) -> Result<Tensor> {
        self.check_input(p_rae, self.radar.n_elevation_raw, "encode_rae")?;
        Ok(self.rae.forward(p_rae)?)
    }

    /// Concatenates two encoder streams (order matters) and applies the trunk.
    pub fn fuse_streams(&self, first: &Tensor, second: &Tensor) -> Result<Tensor> {
        if first.dims() != second.dims() {
            return Err(Error::Shape(format!(
                "encoder outputs differ: {:?} vs {:?}",
                first.dims(),
                second.dims()
            )));
        }
        let mut x = Tensor::cat(&[first, second], 1)?;
        for block in &self.trunk {
            x = block.forward(&x)?;
        }
        Ok(x)
    }

    /// M_BEV,Rad as (B, C, R_f, A_f).
    pub fn forward(&self, p_rad: &Tensor, p_rae: &Tensor) -> Result<Tensor> {
        let a = self.encode_rad(p_rad)?;
        let b = self.encode_rae(p_rae)?;
        self.fuse_streams(&a, &b)
    }

    pub fn downsample(&self) -> usize {
        self.downsample
    }
}

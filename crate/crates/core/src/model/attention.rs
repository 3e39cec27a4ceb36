//! Deformable cross-attention from lifted radar queries onto the
//! perspective-view feature map.
//!
//! Every (segment, range, azimuth) query owns one projected reference point.
//! A linear head predicts `n_points` bounded offsets and attention logits per
//! head. Features are bilinearly sampled at reference + offset, combined with
//! softmax weights, projected, and added back to the query. Queries whose
//! reference point falls outside the camera frustum pass through untouched.

use candle_core::{DType, Tensor, D};
use candle_nn::{init, VarBuilder};

use crate::config::DeformAttnConfig;
use crate::error::{Error, Result};

/// Samples `pv` (B, C, H, W) at normalized points `pts` (B, 2, M) holding
/// (u, v) in image-relative coordinates. Feature cell `(i, j)` is centered at
/// `((j + 0.5) / W, (i + 0.5) / H)`; samples outside the grid read zeros.
/// Returns (B, C, M). Differentiable in both `pv` and `pts`.
pub fn bilinear_sample(pv: &Tensor, pts: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = pv.dims4()?;
    let (bp, two, m) = pts.dims3()?;
    if bp != b || two != 2 {
        candle_core::bail!("points {:?} do not match feature map {:?}", pts.dims(), pv.dims());
    }
    let x = pts.narrow(1, 0, 1)?.affine(w as f64, -0.5)?;
    let y = pts.narrow(1, 1, 1)?.affine(h as f64, -0.5)?;
    let x0 = x.detach().floor()?;
    let y0 = y.detach().floor()?;
    let fx = (&x - &x0)?;
    let fy = (&y - &y0)?;
    let gx = fx.affine(-1.0, 1.0)?;
    let gy = fy.affine(-1.0, 1.0)?;
    let flat = pv.reshape((b, c, h * w))?;

    let mut out: Option<Tensor> = None;
    for (dx, dy, wx, wy) in [(0.0, 0.0, &gx, &gy), (1.0, 0.0, &fx, &gy), (0.0, 1.0, &gx, &fy), (1.0, 1.0, &fx, &fy)] {
        let xc = (&x0 + dx)?;
        let yc = (&y0 + dy)?;
        let inside = xc
            .ge(0.0)?
            .mul(&xc.le((w - 1) as f64)?)?
            .mul(&yc.ge(0.0)?)?
            .mul(&yc.le((h - 1) as f64)?)?;
        let weight = (wx * wy)?.mul(&inside.to_dtype(pv.dtype())?)?;
        let idx = (yc.clamp(0.0, (h - 1) as f64)? * w as f64)?
            .add(&xc.clamp(0.0, (w - 1) as f64)?)?
            .to_dtype(DType::U32)?;
        let idx = idx.broadcast_as((b, c, m))?.contiguous()?;
        let feat = flat.gather(&idx, 2)?;
        let term = feat.broadcast_mul(&weight)?;
        out = Some(match out {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok(out.expect("four corners"))
}

/// [`bilinear_sample`] with a (B, 1, M) validity mask (u8); masked-out samples
/// are exactly zero.
pub fn bilinear_sample_masked(pv: &Tensor, pts: &Tensor, mask: &Tensor) -> candle_core::Result<Tensor> {
    let s = bilinear_sample(pv, pts)?;
    let zeros = s.zeros_like()?;
    mask.broadcast_as(s.shape())?.where_cond(&s, &zeros)
}

/// Output of the offset/attention head for one layer.
pub struct OffsetPrediction {
    /// (B, heads, points, 2, N), bounded by `offset_scale`.
    pub offsets: Tensor,
    /// (B, heads, points, N) pre-softmax logits.
    pub logits: Tensor,
}

struct DeformLayer {
    offset_w: Tensor,
    offset_b: Tensor,
    attn_w: Tensor,
    attn_b: Tensor,
    out_w: Tensor,
    out_b: Option<Tensor>,
}

impl DeformLayer {
    fn new(c: usize, cfg: &DeformAttnConfig, bias: bool, vb: VarBuilder) -> candle_core::Result<Self> {
        let hp = cfg.n_heads * cfg.n_points;
        Ok(DeformLayer {
            offset_w: vb.get_with_hints((hp * 2, c), "offset.weight", init::ZERO)?,
            offset_b: vb.get_with_hints(hp * 2, "offset.bias", init::ZERO)?,
            attn_w: vb.get_with_hints((hp, c), "attn.weight", init::ZERO)?,
            attn_b: vb.get_with_hints(hp, "attn.bias", init::ZERO)?,
            out_w: vb.get_with_hints((c, c), "out.weight", init::ZERO)?,
            out_b: if bias {
                Some(vb.get_with_hints(c, "out.bias", init::ZERO)?)
            } else {
                None
            },
        })
    }
}

fn linear_over_queries(w: &Tensor, b: Option<&Tensor>, q: &Tensor) -> candle_core::Result<Tensor> {
    // q: (B, C, N) -> (B, O, N)
    let y = w.broadcast_left(q.dim(0)?)?.matmul(q)?;
    match b {
        Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1))?),
        None => Ok(y),
    }
}

pub struct DeformableCrossAttention {
    layers: Vec<DeformLayer>,
    cfg: DeformAttnConfig,
    channels: usize,
}

impl DeformableCrossAttention {
    pub fn new(channels: usize, cfg: &DeformAttnConfig, vb: VarBuilder) -> Result<Self> {
        Self::with_bias(channels, cfg, true, vb)
    }

    /// `out_bias = false` drops the output projection bias.
    pub fn with_bias(channels: usize, cfg: &DeformAttnConfig, out_bias: bool, vb: VarBuilder) -> Result<Self> {
        cfg.validate(channels)?;
        let layers = (0..cfg.n_layers)
            .map(|i| DeformLayer::new(channels, cfg, out_bias, vb.pp(format!("layer{i}"))))
            .collect::<candle_core::Result<_>>()?;
        Ok(DeformableCrossAttention {
            layers,
            cfg: cfg.clone(),
            channels,
        })
    }

    pub fn config(&self) -> &DeformAttnConfig {
        &self.cfg
    }

    /// Offsets and logits of layer `layer` for flattened queries (B, C, N).
    pub fn predict_offsets(&self, layer: usize, queries: &Tensor) -> Result<OffsetPrediction> {
        let l = self.layers.get(layer).ok_or_else(|| Error::Config(format!("no attention layer {layer}")))?;
        let (b, _, n) = queries.dims3()?;
        let (h, p) = (self.cfg.n_heads, self.cfg.n_points);
        let raw = linear_over_queries(&l.offset_w, Some(&l.offset_b), queries)?;
        let offsets = (raw.tanh()? * self.cfg.offset_scale)?.reshape((b, h, p, 2, n))?;
        let logits = linear_over_queries(&l.attn_w, Some(&l.attn_b), queries)?.reshape((b, h, p, n))?;
        Ok(OffsetPrediction { offsets, logits })
    }

    /// Aggregated, projected update for given offsets and weights; exposed so
    /// gradients with respect to the offsets can be checked in isolation.
    pub fn sample_and_aggregate(
        &self,
        layer: usize,
        pv: &Tensor,
        ref_points: &Tensor,
        offsets: &Tensor,
        weights: &Tensor,
    ) -> Result<Tensor> {
        let l = &self.layers[layer];
        let (b, h, p, _, n) = offsets.dims5()?;
        let ch = self.channels / h;
        let mut heads = Vec::with_capacity(h);
        for head in 0..h {
            // (B, P, 2, N) -> (B, 2, P*N)
            let pos = offsets
                .narrow(1, head, 1)?
                .squeeze(1)?
                .broadcast_add(&ref_points.unsqueeze(1)?)?
                .permute((0, 2, 1, 3))?
                .reshape((b, 2, p * n))?;
            let pv_h = pv.narrow(1, head * ch, ch)?;
            let sampled = bilinear_sample(&pv_h, &pos)?.reshape((b, ch, p, n))?;
            let w = weights.narrow(1, head, 1)?; // (B, 1, P, N)
            heads.push(sampled.broadcast_mul(&w)?.sum(2)?);
        }
        let agg = Tensor::cat(&heads, 1)?;
        Ok(linear_over_queries(&l.out_w, l.out_b.as_ref(), &agg)?)
    }

    /// Refines queries (B, C, E, R, A) against `pv` (B, C, H, W).
    ///
    /// `ref_points` is (B, 2, N) and `mask` (B, 1, N) as u8, with N = E*R*A
    /// flattened in (E, R, A) order.
    pub fn forward(&self, queries: &Tensor, pv: &Tensor, ref_points: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, c, e, r, a) = queries.dims5()?;
        let n = e * r * a;
        if c != self.channels || pv.dim(1)? != c {
            return Err(Error::Shape(format!(
                "attention expects {} channels, queries {:?}, pv {:?}",
                self.channels,
                queries.dims(),
                pv.dims()
            )));
        }
        if ref_points.dims() != [b, 2, n] || mask.dims() != [b, 1, n] {
            return Err(Error::Shape(format!(
                "reference points {:?} / mask {:?} do not match {n} queries",
                ref_points.dims(),
                mask.dims()
            )));
        }
        let mask_c = mask.broadcast_as((b, c, n))?;
        let mut q = queries.reshape((b, c, n))?;
        for layer in 0..self.layers.len() {
            let pred = self.predict_offsets(layer, &q)?;
            let weights = candle_nn::ops::softmax(&pred.logits, 2)?;
            let update = self.sample_and_aggregate(layer, pv, ref_points, &pred.offsets, &weights)?;
            q = mask_c.where_cond(&(&q + update)?, &q)?;
        }
        Ok(q.reshape((b, c, e, r, a))?)
    }
}

/// Mean over the segment axis: (B, C, E, R, A) -> (B, C, R, A).
pub fn collapse_elevation(q: &Tensor) -> Result<Tensor> {
    if q.rank() != 5 {
        return Err(Error::Shape(format!("expected a 5-d query map, got {:?}", q.dims())));
    }
    Ok(q.mean(2)?)
}

/// Aggregation weights for the given logits; each (head, query) sums to one.
pub fn attention_weights(logits: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(logits, 2)?)
}

/// Largest absolute entry, for offset-bound checks.
pub fn max_abs(t: &Tensor) -> Result<f64> {
    Ok(t.abs()?.flatten_all()?.max(D::Minus1)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

//! Training objective: penalty-reduced focal loss on heatmaps, a
//! Gaussian-Wasserstein loss on BEV boxes and smooth L1 on the remaining
//! regression channels.

use candle_core::{DType, Device, Tensor, D};
use serde::Serialize;

use crate::boxes::Box3D;
use crate::config::LossWeights;
use crate::detection::TargetMaps;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::model::head::{HeadOutput, N_REGRESSION};

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
pub const FOCAL_EPS: f64 = 1e-6;
/// Floor applied to box dimensions before building covariances.
pub const MIN_DIM: f64 = 1e-6;

/// Penalty-reduced focal loss, normalized by the number of target peaks
/// (entries equal to 1, at least one). `pred` and `target` share any shape.
pub fn focal_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "focal loss: pred {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let p = pred.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS)?;
    let t = target.to_dtype(p.dtype())?;
    let pos = t.ge(1.0)?.to_dtype(p.dtype())?;
    let neg = pos.affine(-1.0, 1.0)?;
    let one_m_p = p.affine(-1.0, 1.0)?;
    let pos_term = (one_m_p.powf(FOCAL_ALPHA as f64)? * p.log()?)?.mul(&pos)?;
    let penalty = t.affine(-1.0, 1.0)?.powf(FOCAL_BETA as f64)?;
    let neg_term = ((penalty * p.powf(FOCAL_ALPHA as f64)?)? * one_m_p.log()?)?.mul(&neg)?;
    let n_pos = pos.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.max(1.0);
    Ok(((pos_term + neg_term)?.sum_all()? * (-1.0 / n_pos))?)
}

/// Mean and covariance of the BEV footprint: mean = (x, y),
/// Σ = R(yaw) diag(l²/4, w²/4) R(yaw)ᵀ.
pub fn box_to_gaussian(b: &Box3D) -> ([f64; 2], [[f64; 2]; 2]) {
    let l = b.dims[0].max(MIN_DIM);
    let w = b.dims[1].max(MIN_DIM);
    let (s, c) = b.yaw.sin_cos();
    let (p, q) = (l * l / 4.0, w * w / 4.0);
    let xy = c * s * (p - q);
    (
        [b.center[0], b.center[1]],
        [[c * c * p + s * s * q, xy], [xy, s * s * p + c * c * q]],
    )
}

/// Squared 2-Wasserstein distance between the two boxes' Gaussians.
pub fn gwd_distance_sq(a: &Box3D, b: &Box3D) -> f64 {
    let (m1, s1) = box_to_gaussian(a);
    let (m2, s2) = box_to_gaussian(b);
    let dm = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let tr1 = s1[0][0] + s1[1][1];
    let tr2 = s2[0][0] + s2[1][1];
    let det1 = s1[0][0] * s1[1][1] - s1[0][1] * s1[1][0];
    let det2 = s2[0][0] * s2[1][1] - s2[0][1] * s2[1][0];
    let tr12 = s1[0][0] * s2[0][0] + 2.0 * s1[0][1] * s2[0][1] + s1[1][1] * s2[1][1];
    let cross = (tr12 + 2.0 * (det1 * det2).max(0.0).sqrt()).max(0.0).sqrt();
    (dm + tr1 + tr2 - 2.0 * cross).max(0.0)
}

/// Normalized GWD loss `1 − 1/(τ + ln(1 + d²))`.
pub fn gwd_loss(a: &Box3D, b: &Box3D, tau: f64) -> f64 {
    1.0 - 1.0 / (tau + gwd_distance_sq(a, b).ln_1p())
}

/// BEV Gaussian parameters as tensors, one row per box.
pub struct GaussianBatch {
    /// (N, 2) centers.
    pub mean: Tensor,
    /// (N, 2) length and width.
    pub dims: Tensor,
    /// (N, 2) heading as (cos, sin), not necessarily normalized.
    pub heading: Tensor,
}

impl GaussianBatch {
    pub fn from_boxes(boxes: &[Box3D], dtype: DType, device: &Device) -> Result<Self> {
        let n = boxes.len();
        let mut m = Vec::with_capacity(2 * n);
        let mut d = Vec::with_capacity(2 * n);
        let mut h = Vec::with_capacity(2 * n);
        for b in boxes {
            m.extend([b.center[0], b.center[1]]);
            d.extend([b.dims[0], b.dims[1]]);
            h.extend([b.yaw.cos(), b.yaw.sin()]);
        }
        let t = |v: Vec<f64>| -> Result<Tensor> { Ok(Tensor::from_vec(v, (n, 2), device)?.to_dtype(dtype)?) };
        Ok(GaussianBatch {
            mean: t(m)?,
            dims: t(d)?,
            heading: t(h)?,
        })
    }

    /// (xx, xy, yy) covariance entries, each (N,).
    fn covariance(&self) -> Result<(Tensor, Tensor, Tensor)> {
        let dims = self.dims.clamp(MIN_DIM, f64::MAX)?;
        let quarter_sq = (dims.sqr()? * 0.25)?;
        let p = quarter_sq.narrow(1, 0, 1)?.squeeze(1)?;
        let q = quarter_sq.narrow(1, 1, 1)?.squeeze(1)?;
        let norm = (self.heading.sqr()?.sum(1)? + 1e-12)?.sqrt()?;
        let c = self.heading.narrow(1, 0, 1)?.squeeze(1)?.div(&norm)?;
        let s = self.heading.narrow(1, 1, 1)?.squeeze(1)?.div(&norm)?;
        let (c2, s2) = (c.sqr()?, s.sqr()?);
        let xx = ((&c2 * &p)? + (&s2 * &q)?)?;
        let yy = ((&s2 * &p)? + (&c2 * &q)?)?;
        let xy = ((c * s)? * (&p - &q)?)?;
        Ok((xx, xy, yy))
    }
}

/// Per-row squared Wasserstein distance, (N,).
pub fn gwd_distance_sq_tensor(a: &GaussianBatch, b: &GaussianBatch) -> Result<Tensor> {
    let dm = (&a.mean - &b.mean)?.sqr()?.sum(1)?;
    let (xx1, xy1, yy1) = a.covariance()?;
    let (xx2, xy2, yy2) = b.covariance()?;
    let tr1 = (&xx1 + &yy1)?;
    let tr2 = (&xx2 + &yy2)?;
    let det1 = ((&xx1 * &yy1)? - xy1.sqr()?)?;
    let det2 = ((&xx2 * &yy2)? - xy2.sqr()?)?;
    let tr12 = (((&xx1 * &xx2)? + ((&xy1 * &xy2)? * 2.0)?)? + (&yy1 * &yy2)?)?;
    let root_det = (det1 * det2)?.relu()?.sqrt()?;
    let cross = (tr12 + (root_det * 2.0)?)?.relu()?.sqrt()?;
    Ok(((dm + tr1)? + (tr2 - (cross * 2.0)?)?)?.relu()?)
}

/// Mean normalized GWD loss over rows; zero rows give 0.
pub fn gwd_loss_tensor(a: &GaussianBatch, b: &GaussianBatch, tau: f64) -> Result<Tensor> {
    let n = a.mean.dim(0)?;
    if n == 0 {
        return Ok(Tensor::zeros((), a.mean.dtype(), a.mean.device())?);
    }
    let d2 = gwd_distance_sq_tensor(a, b)?;
    let f = ((d2 + 1.0)?.log()? + tau)?.recip()?.affine(-1.0, 1.0)?;
    Ok(f.mean_all()?)
}

/// Huber loss with transition 1, averaged over masked elements (at least
/// one). `mask` broadcasts against `pred`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "smooth L1: pred {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let m = mask.to_dtype(pred.dtype())?.broadcast_as(pred.shape())?;
    let d = (pred - target)?.abs()?;
    let quad = d.lt(1.0)?;
    let per = quad.where_cond(&(d.sqr()? * 0.5)?, &(&d - 0.5)?)?;
    let count = m.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?.max(1.0);
    Ok(((per * m)?.sum_all()? / count)?)
}

/// Loss terms of one step.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub focal: Tensor,
    pub gwd: Tensor,
    pub l1: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValues {
    pub total: f64,
    pub focal: f64,
    pub gwd: f64,
    pub l1: f64,
}

impl LossBreakdown {
    pub fn values(&self) -> Result<LossValues> {
        let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossValues {
            total: f(&self.total)?,
            focal: f(&self.focal)?,
            gwd: f(&self.gwd)?,
            l1: f(&self.l1)?,
        })
    }
}

/// Dense target tensors for a batch: heatmaps (B, 5, R, A), regression
/// (B, 8, R, A) and foreground mask (B, 1, R, A).
pub fn target_tensors(targets: &[TargetMaps], dtype: DType, device: &Device) -> Result<(Tensor, Tensor, Tensor)> {
    let first = targets.first().ok_or_else(|| Error::Shape("empty target batch".into()))?;
    let (r, a) = (first.maps.n_range, first.maps.n_azimuth);
    let b = targets.len();
    let mut heat = Vec::with_capacity(b * 5 * r * a);
    let mut reg = Vec::with_capacity(b * N_REGRESSION * r * a);
    let mut mask = Vec::with_capacity(b * r * a);
    for t in targets {
        if (t.maps.n_range, t.maps.n_azimuth) != (r, a) {
            return Err(Error::Shape("targets rendered on different grids".into()));
        }
        heat.extend_from_slice(&t.maps.heatmaps);
        reg.extend_from_slice(&t.maps.regression);
        mask.extend(t.mask.iter().map(|&m| if m { 1f32 } else { 0.0 }));
    }
    Ok((
        Tensor::from_vec(heat, (b, 5, r, a), device)?.to_dtype(dtype)?,
        Tensor::from_vec(reg, (b, N_REGRESSION, r, a), device)?.to_dtype(dtype)?,
        Tensor::from_vec(mask, (b, 1, r, a), device)?.to_dtype(dtype)?,
    ))
}

/// Predicted BEV Gaussians decoded at every ground-truth center bin, paired
/// with the ground truth, in batch then render order.
pub fn matched_gaussians(
    regression: &Tensor,
    targets: &[TargetMaps],
    grid: &GridSpec,
) -> Result<(GaussianBatch, GaussianBatch)> {
    let (b, k, r, a) = regression.dims4()?;
    if k != N_REGRESSION || b != targets.len() {
        return Err(Error::Shape(format!(
            "regression {:?} for {} target maps",
            regression.dims(),
            targets.len()
        )));
    }
    let dtype = regression.dtype();
    let device = regression.device();
    let mut idx = Vec::new();
    let mut bins = Vec::new();
    let mut gts = Vec::new();
    for (bi, t) in targets.iter().enumerate() {
        for (lin, gt) in &t.centers {
            idx.push((bi * r * a + lin) as u32);
            bins.extend([(lin / a) as f64, (lin % a) as f64]);
            gts.push(*gt);
        }
    }
    let n = idx.len();
    let gt = GaussianBatch::from_boxes(&gts, dtype, device)?;
    if n == 0 {
        let empty = Tensor::zeros((0, 2), dtype, device)?;
        let pred = GaussianBatch {
            mean: empty.clone(),
            dims: empty.clone(),
            heading: empty,
        };
        return Ok((pred, gt));
    }
    let flat = regression.permute((0, 2, 3, 1))?.reshape((b * r * a, k))?;
    let rows = flat.index_select(&Tensor::from_vec(idx, n, device)?, 0)?;
    let bins = Tensor::from_vec(bins, (n, 2), device)?.to_dtype(dtype)?;
    let pos = (rows.narrow(1, 0, 2)? + bins)?;
    let rho = pos
        .narrow(1, 0, 1)?
        .affine(grid.range_step(), grid.range_bounds_m.0 + 0.5 * grid.range_step())?;
    let az = pos
        .narrow(1, 1, 1)?
        .affine(grid.azimuth_step(), grid.azimuth_bounds_rad.0 + 0.5 * grid.azimuth_step())?;
    let mean = Tensor::cat(&[(&rho * az.cos()?)?, (&rho * az.sin()?)?], 1)?;
    let dims = rows.narrow(1, 3, 2)?.exp()?;
    let heading = Tensor::cat(&[rows.narrow(1, 7, 1)?, rows.narrow(1, 6, 1)?], 1)?;
    Ok((GaussianBatch { mean, dims, heading }, gt))
}

/// `w_focal·focal + w_gwd·gwd + w_l1·l1` with the per-term values.
pub fn total_loss(
    out: &HeadOutput,
    targets: &[TargetMaps],
    grid: &GridSpec,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let dtype = out.heatmaps.dtype();
    let device = out.heatmaps.device();
    let (heat_t, reg_t, mask) = target_tensors(targets, dtype, device)?;
    let focal = focal_loss(&out.heatmaps, &heat_t)?;
    let (pred_g, gt_g) = matched_gaussians(&out.regression, targets, grid)?;
    let gwd = gwd_loss_tensor(&pred_g, &gt_g, weights.gwd_tau)?;
    let rest = N_REGRESSION - 2;
    let l1 = smooth_l1(
        &out.regression.narrow(1, 2, rest)?,
        &reg_t.narrow(1, 2, rest)?,
        &mask,
    )?;
    let total = (((&focal * weights.w_focal)? + (&gwd * weights.w_gwd)?)? + (&l1 * weights.w_l1)?)?;
    Ok(LossBreakdown { total, focal, gwd, l1 })
}

/// Largest absolute difference between two tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok((a - b)?
        .abs()?
        .flatten_all()?
        .max(D::Minus1)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?)
}

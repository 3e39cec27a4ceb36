//! Autograd against central finite differences, all in float64. Each case
//! returns the worst relative error over its probes.

use candle_core::{DType, Device, Tensor, Var};
use radfuse::config::DeformAttnConfig;
use radfuse::losses::{focal_loss, gwd_loss_tensor, GaussianBatch};
use radfuse::model::attention::DeformableCrossAttention;
use radfuse::model::lifting::{lift, ElevationMlp, ElevationWeighting};
use radfuse::model::SeededParams;
use rand::Rng;

use super::{gradient_check, rng, to_vec, uniform};

pub const STEP: f64 = 1e-6;

/// Overwrites every registered variable with uniform draws in [-scale, scale].
pub fn randomize(params: &SeededParams, scale: f64, seed: u64) {
    let mut r = rng(seed);
    for (_, v) in params.named_vars() {
        let dims = v.dims().to_vec();
        let t = (uniform(&mut r, &dims, -1.0, 1.0) * scale).unwrap().to_dtype(v.dtype()).unwrap();
        v.set(&t).unwrap();
    }
}

/// Lift of the BEV map with learned elevation weights: gradients with
/// respect to the BEV map and every MLP parameter.
pub fn lift_and_weights() -> f64 {
    let dev = Device::Cpu;
    let mut r = rng(1);
    let params = SeededParams::new(3);
    let vb = params.var_builder(DType::F64, &dev);
    let mlp = ElevationMlp::new(6, 8, 4, vb.pp("lift")).unwrap();
    randomize(&params, 0.5, 2);
    let weighting = ElevationWeighting::Learned(mlp);
    let m = Var::from_tensor(&uniform(&mut r, &[1, 3, 4, 2], -1.0, 1.0)).unwrap();
    let p_rae = uniform(&mut r, &[1, 6, 8, 4], 0.0, 5.0);
    let probe = uniform(&mut r, &[1, 3, 4, 4, 2], -1.0, 1.0);
    let loss = || {
        let w = weighting.weights(&p_rae, (4, 2)).unwrap();
        let q = lift(m.as_tensor(), &w).unwrap();
        (q * &probe).unwrap().sum_all().unwrap()
    };
    let mut worst = gradient_check(&m, &loss, 24, STEP, 5);
    for (_, v) in params.named_vars() {
        worst = worst.max(gradient_check(&v, &loss, 12, STEP, 6));
    }
    worst
}

/// Bilinear sampling and aggregation with respect to the sampling offsets;
/// every sample point sits 0.3..0.7 of a cell away from the grid nodes.
pub fn deformable_offsets() -> f64 {
    let dev = Device::Cpu;
    let mut r = rng(11);
    let cfg = DeformAttnConfig {
        n_points: 4,
        n_heads: 2,
        offset_scale: 0.1,
        n_layers: 1,
    };
    let c = 4;
    let params = SeededParams::new(4);
    let attn = DeformableCrossAttention::new(c, &cfg, params.var_builder(DType::F64, &dev)).unwrap();
    randomize(&params, 0.5, 7);
    let (hp, wp) = (6, 9);
    let pv = uniform(&mut r, &[1, c, hp, wp], -1.0, 1.0);
    let n = 5;
    let mut pts = Vec::new();
    for axis in [wp, hp] {
        for _ in 0..n {
            let cell = r.random_range(1..axis - 2) as f64;
            let frac = r.random_range(0.3..0.7);
            pts.push((cell + frac + 0.5) / axis as f64);
        }
    }
    let ref_points = Tensor::from_vec(pts, (1, 2, n), &dev).unwrap();
    // offsets below 0.004 keep each point within its cell
    let offsets = Var::from_tensor(&(uniform(&mut r, &[1, 2, 4, 2, n], -1.0, 1.0) * 0.004).unwrap()).unwrap();
    let weights = candle_nn::ops::softmax(&uniform(&mut r, &[1, 2, 4, n], -1.0, 1.0), 2).unwrap();
    let probe = uniform(&mut r, &[1, c, n], -1.0, 1.0);
    let loss = || {
        let upd = attn
            .sample_and_aggregate(0, &pv, &ref_points, offsets.as_tensor(), &weights)
            .unwrap();
        (upd * &probe).unwrap().sum_all().unwrap()
    };
    gradient_check(&offsets, &loss, 80, STEP, 3)
}

/// Normalized GWD loss with respect to mean, dims and heading.
pub fn gwd() -> f64 {
    let mut r = rng(21);
    let n = 6;
    let mean = Var::from_tensor(&uniform(&mut r, &[n, 2], -5.0, 5.0)).unwrap();
    let dims = Var::from_tensor(&uniform(&mut r, &[n, 2], 0.5, 4.0)).unwrap();
    let heading = Var::from_tensor(&uniform(&mut r, &[n, 2], -1.0, 1.0)).unwrap();
    let gt = GaussianBatch {
        mean: uniform(&mut r, &[n, 2], -5.0, 5.0),
        dims: uniform(&mut r, &[n, 2], 0.5, 4.0),
        heading: uniform(&mut r, &[n, 2], -1.0, 1.0),
    };
    let loss = || {
        let p = GaussianBatch {
            mean: mean.as_tensor().clone(),
            dims: dims.as_tensor().clone(),
            heading: heading.as_tensor().clone(),
        };
        gwd_loss_tensor(&p, &gt, 1.0).unwrap()
    };
    [&mean, &dims, &heading]
        .iter()
        .map(|v| gradient_check(v, &loss, 12, STEP, 9))
        .fold(0.0, f64::max)
}

/// Penalty-reduced focal loss with respect to the predicted heatmap.
pub fn focal() -> f64 {
    let mut r = rng(31);
    let pred = Var::from_tensor(&uniform(&mut r, &[2, 5, 6, 4], 0.05, 0.95)).unwrap();
    let mut t = to_vec(&uniform(&mut r, &[2 * 5 * 6 * 4], 0.0, 0.9));
    for i in [3, 50, 131] {
        t[i] = 1.0;
    }
    let target = Tensor::from_vec(t, (2, 5, 6, 4), &Device::Cpu).unwrap();
    let loss = || focal_loss(pred.as_tensor(), &target).unwrap();
    gradient_check(&pred, &loss, 60, STEP, 4)
}

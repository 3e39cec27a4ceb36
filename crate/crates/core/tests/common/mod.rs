#![allow(dead_code)]

pub mod grad_cases;
pub mod oracles;
pub mod scenes;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

/// Worst relative error between the autograd gradient of `loss` with respect
/// to `var` and central differences over `probes` randomly chosen entries.
/// Entries are compared relative to max(|analytic|, |numeric|), floored at
/// 1e-3 of the largest analytic entry so vanishing components are judged
/// against the gradient's scale.
pub fn gradient_check(var: &Var, loss: &dyn Fn() -> Tensor, probes: usize, h: f64, seed: u64) -> f64 {
    let l = loss();
    let grads = l.backward().unwrap();
    let analytic = to_vec(grads.get(var).expect("variable takes part in the loss"));
    let base = to_vec(var.as_tensor());
    let shape = var.shape().clone();
    let mut r = rng(seed);
    let mut worst = 0f64;
    let n = base.len();
    let gmax = analytic.iter().fold(0f64, |m, v| m.max(v.abs()));
    let idx: Vec<usize> = if probes >= n {
        (0..n).collect()
    } else {
        (0..probes).map(|_| r.random_range(0..n)).collect()
    };
    for i in idx {
        let mut plus = base.clone();
        plus[i] += h;
        var.set(&Tensor::from_vec(plus, shape.clone(), &Device::Cpu).unwrap()).unwrap();
        let fp = scalar(&loss());
        let mut minus = base.clone();
        minus[i] -= h;
        var.set(&Tensor::from_vec(minus, shape.clone(), &Device::Cpu).unwrap()).unwrap();
        let fm = scalar(&loss());
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-3 * gmax).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    var.set(&Tensor::from_vec(base, shape, &Device::Cpu).unwrap()).unwrap();
    worst
}

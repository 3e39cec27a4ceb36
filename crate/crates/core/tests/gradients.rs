mod common;

use candle_core::{DType, Device, Var};
use candle_nn::init::Init;
use common::grad_cases::{self, STEP};
use common::{gradient_check, rng, uniform};
use radfuse::boxes::{Box3D, ObjectClass};
use radfuse::config::{LossWeights, RunConfig};
use radfuse::detection::render_targets;
use radfuse::losses::total_loss;
use radfuse::model::head::HeadOutput;
use radfuse::model::SeededParams;

#[test]
fn lift_and_elevation_weights() {
    let err = grad_cases::lift_and_weights();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn deformable_sampling_offsets() {
    let err = grad_cases::deformable_offsets();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn gwd_loss_gradients() {
    let err = grad_cases::gwd();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn focal_loss_gradients() {
    let err = grad_cases::focal();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn total_loss_gradients_wrt_head_outputs() {
    let mut cfg = RunConfig::desk();
    cfg.grid.n_range = 8;
    cfg.grid.n_azimuth = 6;
    let g = &cfg.grid;
    let boxes: Vec<Box3D> = [(2.2, 1.9), (5.6, 3.7)]
        .iter()
        .map(|&(fr, fa)| {
            let (x, y) = g.bins_to_bev(fr, fa);
            Box3D::new([x, y, 0.3], [4.0, 1.8, 1.5], 0.7, ObjectClass::Sedan)
        })
        .collect();
    let targets = vec![render_targets(&boxes, g, 0.75).unwrap()];
    let mut r = rng(41);
    let heat = Var::from_tensor(&uniform(&mut r, &[1, 5, 8, 6], 0.05, 0.95)).unwrap();
    let reg = Var::from_tensor(&uniform(&mut r, &[1, 8, 8, 6], -0.5, 0.5)).unwrap();
    let weights = LossWeights::default();
    let loss = || {
        let out = HeadOutput {
            heatmaps: heat.as_tensor().clone(),
            regression: reg.as_tensor().clone(),
        };
        total_loss(&out, &targets, g, &weights).unwrap().total
    };
    assert!(gradient_check(&heat, &loss, 40, STEP, 1) < 1e-4);
    assert!(gradient_check(&reg, &loss, 384, STEP, 2) < 1e-4);
}

#[test]
fn var_builder_const_init_is_exact() {
    let p = SeededParams::new(0);
    let t = p
        .var_builder(DType::F64, &Device::Cpu)
        .get_with_hints(3, "b", Init::Const(-2.19))
        .unwrap();
    assert_eq!(common::to_vec(&t), vec![-2.19; 3]);
}

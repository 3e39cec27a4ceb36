//! Reference training loop: AdamW with cosine decay, seeded shuffling,
//! JSON-lines step log and safetensors checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{OptimizerConfig, RunConfig};
use crate::dataio::Frame;
use crate::detection::{render_targets, TargetMaps};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossValues};
use crate::model::FusionDetector;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.safetensors";

/// Learning rate after `step` of `total` steps, cosine-annealed from
/// `learning_rate` to `min_learning_rate`.
pub fn cosine_lr(opt: &OptimizerConfig, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return opt.learning_rate;
    }
    let t = (step as f64 / (total - 1) as f64).min(1.0);
    opt.min_learning_rate + 0.5 * (opt.learning_rate - opt.min_learning_rate) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Optimizer steps for `n_frames` under the configured epochs, batch size and
/// step cap.
pub fn total_steps(opt: &OptimizerConfig, n_frames: usize) -> usize {
    let per_epoch = n_frames.div_ceil(opt.batch_size.max(1));
    let steps = per_epoch * opt.epochs;
    opt.max_steps.map_or(steps, |m| steps.min(m))
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossValues,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub history: Vec<StepLog>,
    /// Lowest epoch-mean total loss.
    pub best_epoch_loss: f64,
}

struct Checkpoints {
    dir: Option<PathBuf>,
}

impl Checkpoints {
    fn save(&self, model: &FusionDetector, name: &str) -> Result<Option<PathBuf>> {
        match &self.dir {
            Some(d) => {
                let p = d.join(name);
                model.params().save(&p)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    }
}

/// Trains `model` in place on `frames`. With `out_dir`, writes the step log
/// and checkpoints there. A non-finite loss aborts before the update; the
/// weights of the previous step are saved as the last good checkpoint.
pub fn train(model: &FusionDetector, frames: &[Frame], cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainSummary> {
    if frames.is_empty() {
        return Err(Error::Config("no training frames".into()));
    }
    let opt_cfg = &cfg.optimizer;
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let ck = Checkpoints {
        dir: out_dir.map(Path::to_path_buf),
    };
    let mut log = match out_dir {
        Some(d) => {
            let p = d.join(LOG_FILE);
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };

    let targets: Vec<TargetMaps> = frames
        .iter()
        .map(|f| render_targets(&f.boxes, model.grid(), cfg.head.sigma))
        .collect::<Result<_>>()?;

    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: opt_cfg.learning_rate,
            weight_decay: opt_cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let total = total_steps(opt_cfg, frames.len());
    let batch = opt_cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::with_capacity(total);
    let mut best = f64::INFINITY;
    let mut step = 0;
    let mut epoch = 0;

    while step < total {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0;
        for chunk in order.chunks(batch) {
            if step >= total {
                break;
            }
            let lr = cosine_lr(opt_cfg, step, total);
            opt.set_learning_rate(lr);
            let fb: Vec<&Frame> = chunk.iter().map(|&i| &frames[i]).collect();
            let tb: Vec<TargetMaps> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let out = model.forward(&model.inputs(&fb)?)?;
            let loss = total_loss(&out.head, &tb, model.grid(), &cfg.loss)?;
            let values = loss.values()?;
            if !values.total.is_finite() {
                let saved = ck.save(model, LAST_GOOD_CHECKPOINT)?;
                return Err(Error::NonFiniteLoss {
                    step,
                    last_good: saved.map_or_else(|| "<not written>".to_string(), |p| p.display().to_string()),
                });
            }
            opt.backward_step(&loss.total)?;
            let entry = StepLog {
                step,
                epoch,
                lr,
                loss: values,
            };
            if let Some((w, p)) = log.as_mut() {
                serde_json::to_writer(&mut *w, &entry)?;
                w.write_all(b"\n").map_err(|e| Error::io(p.as_path(), e))?;
            }
            log::debug!("step {step} loss {:.5}", values.total);
            history.push(entry);
            epoch_sum += values.total;
            epoch_n += 1;
            step += 1;
        }
        let mean = epoch_sum / epoch_n.max(1) as f64;
        if mean < best {
            best = mean;
            ck.save(model, BEST_CHECKPOINT)?;
        }
        epoch += 1;
    }
    if let Some((w, p)) = log.as_mut() {
        w.flush().map_err(|e| Error::io(p.as_path(), e))?;
    }
    ck.save(model, FINAL_CHECKPOINT)?;
    ck.save(model, LAST_GOOD_CHECKPOINT)?;
    Ok(TrainSummary {
        steps: step,
        history,
        best_epoch_loss: best,
    })
}

use std::path::{Path, PathBuf};

use candle_core::Device;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radfuse::config::{AblationMode, ConditionSpec, RunConfig};
use radfuse::dataio::{
    dataset_manifest, generate_scene, read_frame, write_frame, write_manifest, Frame, ManifestEntry,
    OcclusionSpec, SceneParams,
};
use radfuse::detection::{read_detections, write_detections, DetectionRecord};
use radfuse::eval::{build_report, EvalFrame, EvalReport};
use radfuse::model::FusionDetector;
use radfuse::train::{train, TrainSummary};
use radfuse::{Error, Result};

use crate::plot;

/// Salt separating the condition-tag stream from per-frame scene seeds.
const CONDITION_STREAM: u64 = 0x636f_6e64_6974_696f;

/// Resolves the run configuration: the file (or the desk profile), then
/// `RADE_*` environment overrides, then command-line overrides.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, mode: Option<AblationMode>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut doc = serde_json::to_value(RunConfig::desk())?;
            radfuse::config::apply_env_overrides(&mut doc, std::env::vars())?;
            serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.ablation_mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Condition of each of `n` frames, drawn independently from the weighted
/// mix with a ChaCha8 stream seeded by `seed ^ CONDITION_STREAM`; one
/// uniform draw in [0, total weight) per frame, walked through the mix in
/// order.
pub fn draw_conditions(seed: u64, mix: &[ConditionSpec], n: usize) -> Result<Vec<ConditionSpec>> {
    let total: f64 = mix.iter().map(|c| c.weight).sum();
    if mix.is_empty() || !(total > 0.0) || mix.iter().any(|c| !(c.weight >= 0.0)) {
        return Err(Error::Config("condition mix needs non-negative weights with a positive sum".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CONDITION_STREAM);
    Ok((0..n)
        .map(|_| {
            let mut u = rng.random_range(0.0..total);
            for c in mix {
                if u < c.weight {
                    return c.clone();
                }
                u -= c.weight;
            }
            mix.iter().rev().find(|c| c.weight > 0.0).cloned().unwrap_or_else(|| mix[0].clone())
        })
        .collect())
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.rdf")
}

/// Generates one frame from its scene seed and condition.
pub fn synth_frame(cfg: &RunConfig, scene_seed: u64, cond: &ConditionSpec) -> Result<Frame> {
    let params = SceneParams::from_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let n_objects = rng.random_range(cfg.synth.min_objects..=cfg.synth.max_objects);
    let occ = OcclusionSpec {
        mode: cond.occlusion,
        rng_seed: scene_seed,
    };
    let mut frame = generate_scene(scene_seed, n_objects, &params, &cfg.camera, &occ)?;
    frame.condition_tag = cond.tag.clone();
    Ok(frame)
}

/// Frame `i` uses scene seed `cfg.seed + i`. Writes the frames and the
/// manifest into `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path, n_frames: usize) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let conds = draw_conditions(cfg.seed, &cfg.synth.condition_mix, n_frames)?;
    let mut entries = Vec::with_capacity(n_frames);
    for (i, cond) in conds.iter().enumerate() {
        let frame = synth_frame(cfg, cfg.seed.wrapping_add(i as u64), cond)?;
        let name = frame_file_name(i);
        write_frame(&frame, &out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(name),
            condition_tag: cond.tag.clone(),
        });
    }
    write_manifest(out_dir, &entries)?;
    Ok(entries)
}

/// Frames of a dataset directory in manifest order, with their ids and tags.
pub fn load_dataset(dir: &Path) -> Result<Vec<(ManifestEntry, Frame)>> {
    let entries = dataset_manifest(dir)?;
    if entries.is_empty() {
        return Err(Error::Load(format!("manifest in {} lists no frames", dir.display())));
    }
    entries
        .into_iter()
        .map(|e| {
            let f = read_frame(&e.path)?;
            Ok((e, f))
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, dataset_dir: &Path, out_dir: &Path) -> Result<TrainSummary> {
    let data = load_dataset(dataset_dir)?;
    let frames: Vec<Frame> = data.into_iter().map(|(_, f)| f).collect();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.save(&out_dir.join("config.json"))?;
    let model = FusionDetector::new(cfg, &Device::Cpu)?;
    train(&model, &frames, cfg, Some(out_dir))
}

fn detector(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<FusionDetector> {
    let model = FusionDetector::new(cfg, &Device::Cpu)?;
    if let Some(p) = checkpoint {
        model.params().load(p)?;
    }
    Ok(model)
}

pub fn detect_records(model: &FusionDetector, cfg: &RunConfig, ids: &[String], frames: &[Frame]) -> Result<Vec<DetectionRecord>> {
    let boxes = model.detect(frames, cfg.head.score_threshold, cfg.head.top_k, cfg.optimizer.batch_size)?;
    Ok(ids
        .iter()
        .zip(&boxes)
        .flat_map(|(id, bs)| bs.iter().map(move |b| DetectionRecord::new(id, b)))
        .collect())
}

/// Source of the detections that `cmd_eval` scores.
pub enum DetectionSource<'a> {
    Checkpoint(&'a Path),
    File(&'a Path),
}

/// Writes `detections.jsonl`, `report.json` and `report.txt` into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig, dataset_dir: &Path, source: DetectionSource, out_dir: &Path) -> Result<EvalReport> {
    let data = load_dataset(dataset_dir)?;
    let ids: Vec<String> = data.iter().map(|(e, _)| e.frame_id()).collect();
    let records = match source {
        DetectionSource::File(p) => read_detections(p)?,
        DetectionSource::Checkpoint(p) => {
            let model = detector(cfg, Some(p))?;
            let frames: Vec<Frame> = data.iter().map(|(_, f)| f.clone()).collect();
            detect_records(&model, cfg, &ids, &frames)?
        }
    };
    let gt: Vec<EvalFrame> = data
        .iter()
        .zip(&ids)
        .map(|((e, f), id)| EvalFrame {
            frame_id: id.clone(),
            condition: e.condition_tag.clone(),
            boxes: f.boxes.clone(),
        })
        .collect();
    let report = build_report(&records, &gt, &cfg.eval)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_detections(&out_dir.join("detections.jsonl"), &records)?;
    report.write(out_dir)?;
    Ok(report)
}

/// Runs one frame. Without a checkpoint the seeded initial weights are used.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    frame_path: &Path,
    out: &Path,
    plot_path: Option<&Path>,
) -> Result<Vec<DetectionRecord>> {
    let frame = read_frame(frame_path)?;
    let model = detector(cfg, checkpoint)?;
    let id = frame_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let records = detect_records(&model, cfg, &[id], std::slice::from_ref(&frame))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_detections(out, &records)?;
    if let Some(p) = plot_path {
        let preds: Vec<_> = records.iter().map(DetectionRecord::to_box).collect();
        plot::save_png(&plot::bev_overlay(&frame.boxes, &preds, &cfg.eval.roi, cfg.plot), p)?;
    }
    Ok(records)
}

/// Draws the selected PR curves; returns the (class, condition) pairs drawn.
pub fn cmd_plot_pr(
    report_path: &Path,
    out: &Path,
    classes: &[String],
    conditions: &[String],
) -> Result<Vec<(String, String)>> {
    let report = EvalReport::read(report_path)?;
    plot::pr_figure(&report, classes, conditions, out)
}
